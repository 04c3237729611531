//! Spatial autocorrelation on a periodic one-dimensional grid and the
//! 1/e-crossing length scale read off from it.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Mean spatial autocorrelation over a set of field snapshots.
///
/// For each snapshot the spatial mean is removed; the correlation at grid
/// separation `r` is the average over snapshots and grid points of
/// `f(i) f(i+r)` (periodic wrap), normalized by the separation-0 value.
/// Returns values for separations `0..=d/2`.
pub fn spatial_autocorrelation(snapshots: &[DVector<f64>]) -> Result<Vec<f64>> {
    if snapshots.is_empty() {
        return Err(Error::InsufficientSamples(
            "spatial autocorrelation needs at least one snapshot".into(),
        ));
    }
    let d = snapshots[0].len();
    if d < 2 {
        return Err(Error::Dimension(
            "spatial autocorrelation needs at least 2 grid points".into(),
        ));
    }
    let rmax = d / 2;
    let mut sums = vec![0.0_f64; rmax + 1];
    for snap in snapshots {
        if snap.len() != d {
            return Err(Error::Dimension("snapshot dimensions disagree".into()));
        }
        let mean = snap.mean();
        for (r, sum) in sums.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..d {
                acc += (snap[i] - mean) * (snap[(i + r) % d] - mean);
            }
            *sum += acc / d as f64;
        }
    }
    let c0 = sums[0] / snapshots.len() as f64;
    if c0 <= 0.0 {
        return Err(Error::DegenerateSeries(
            "zero spatial variance; correlation undefined".into(),
        ));
    }
    Ok(sums.iter().map(|s| s / snapshots.len() as f64 / c0).collect())
}

/// First crossing of `1/e` in the spatial correlation, linearly interpolated
/// between grid separations and returned in grid-spacing units. `None` when
/// the correlation never drops below `1/e` within half the domain.
pub fn e_folding_length(correlation: &[f64]) -> Option<f64> {
    let target = (-1.0_f64).exp();
    for r in 1..correlation.len() {
        let (a, b) = (correlation[r - 1], correlation[r]);
        if b <= target {
            let frac = if (a - b).abs() < f64::EPSILON {
                0.0
            } else {
                (a - target) / (a - b)
            };
            return Some((r - 1) as f64 + frac);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separation_zero_is_one() {
        let snap = DVector::from_fn(16, |i, _| (i as f64 * 0.9).sin());
        let corr = spatial_autocorrelation(&[snap]).unwrap();
        assert_eq!(corr[0], 1.0);
    }

    #[test]
    fn gaussian_field_recovers_its_length_scale() {
        // sample fields with covariance exp(-r^2 / 2 L^2) via its matrix
        // square root; the correlation crosses 1/e near r = L sqrt(2)
        use crate::covariance::{CovarianceSpec, Kernel, RealizedCovariance};
        use crate::rng::{stream, StreamDomain};
        let d = 64;
        let l = 5.0;
        let spec = CovarianceSpec::Isotropic {
            variance: 1.0,
            correlation_length: l,
            kernel: Kernel::Gaussian,
        };
        let cov = RealizedCovariance::from_matrix(spec.matrix(d, 1.0).unwrap()).unwrap();
        let mut rng = stream(31, StreamDomain::Diagnostics, 0);
        let snaps: Vec<_> = (0..400).map(|_| cov.sample(&mut rng)).collect();
        let corr = spatial_autocorrelation(&snaps).unwrap();
        let scale = e_folding_length(&corr).unwrap();
        let expected = l * 2.0_f64.sqrt();
        assert!(
            (scale - expected).abs() / expected < 0.2,
            "scale {scale}, expected {expected}"
        );
    }

    #[test]
    fn white_field_has_sub_gridpoint_scale() {
        use crate::rng::{stream, StreamDomain};
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = stream(32, StreamDomain::Diagnostics, 0);
        let snaps: Vec<_> = (0..200)
            .map(|_| DVector::from_fn(32, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let corr = spatial_autocorrelation(&snaps).unwrap();
        let scale = e_folding_length(&corr).unwrap();
        assert!(scale < 1.0, "scale {scale}");
    }

    #[test]
    fn broad_field_reports_no_crossing() {
        // constant-plus-tiny-tilt field: correlation stays near 1 everywhere
        let snaps: Vec<_> = (0..5)
            .map(|s| DVector::from_fn(16, |i, _| s as f64 + 1e-3 * (i as f64 * 0.01).sin()))
            .collect();
        let corr = spatial_autocorrelation(&snaps).unwrap();
        // the slow sin has essentially full-domain support at d=16
        if let Some(scale) = e_folding_length(&corr) {
            assert!(scale > 1.0);
        }
    }

    #[test]
    fn constant_snapshots_are_degenerate() {
        let snaps = vec![DVector::from_element(8, 2.0); 3];
        assert!(matches!(
            spatial_autocorrelation(&snaps),
            Err(Error::DegenerateSeries(_))
        ));
    }
}
