//! Departure and increment summary statistics over cycled records:
//! observation-space O-B / O-A moments, per-phase mean increments, and the
//! increment standard-deviation profile used for scheme comparisons.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::assimilation::AssimilationCycleRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartureStatistics {
    /// Mean O-B per observed component.
    pub mean_background: Vec<f64>,
    /// Mean O-A per observed component.
    pub mean_analysis: Vec<f64>,
    pub std_background: Vec<f64>,
    pub std_analysis: Vec<f64>,
    pub n_samples: usize,
}

/// Moments of the observation-space departures pooled over cycles (and over
/// observation times within the window, which share the statistics under
/// stationarity).
pub fn departure_statistics(records: &[AssimilationCycleRecord]) -> Result<DepartureStatistics> {
    let mut bg: Vec<Vec<f64>> = vec![];
    let mut an: Vec<Vec<f64>> = vec![];
    for record in records {
        for pair in &record.departures {
            if bg.is_empty() {
                bg = vec![vec![]; pair.background.len()];
                an = vec![vec![]; pair.background.len()];
            }
            if pair.background.len() != bg.len() {
                return Err(Error::Dimension("departure dimensions disagree".into()));
            }
            for (i, slot) in bg.iter_mut().enumerate() {
                slot.push(pair.background[i]);
            }
            for (i, slot) in an.iter_mut().enumerate() {
                slot.push(pair.analysis[i]);
            }
        }
    }
    let n = bg.first().map_or(0, |s| s.len());
    if n < 2 {
        return Err(Error::InsufficientSamples(format!(
            "departure statistics need at least 2 samples, got {n}"
        )));
    }
    fn moments(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
    let (mean_background, std_background): (Vec<_>, Vec<_>) =
        bg.iter().map(|s| moments(s)).unzip();
    let (mean_analysis, std_analysis): (Vec<_>, Vec<_>) = an.iter().map(|s| moments(s)).unzip();
    Ok(DepartureStatistics {
        mean_background,
        mean_analysis,
        std_background,
        std_analysis,
        n_samples: n,
    })
}

/// Mean analysis increment stratified by cycle phase modulo `period`.
/// Phase is taken from the recorded cycle index so that spin-up exclusion
/// does not shift the labeling.
pub fn mean_increment_by_phase(
    records: &[AssimilationCycleRecord],
    period: usize,
) -> Result<Vec<DVector<f64>>> {
    if period == 0 {
        return Err(Error::Config("phase period must be positive".into()));
    }
    if records.is_empty() {
        return Err(Error::InsufficientSamples("no records".into()));
    }
    let d = records[0].increment.len();
    let mut sums = vec![DVector::zeros(d); period];
    let mut counts = vec![0usize; period];
    for record in records {
        let phase = record.cycle_index % period;
        sums[phase] += &record.increment;
        counts[phase] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InsufficientSamples(
            "some phases have no records".into(),
        ));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s / c as f64)
        .collect())
}

/// Per-component standard deviation of the analysis increment over cycles.
pub fn increment_stddev_profile(records: &[AssimilationCycleRecord]) -> Result<DVector<f64>> {
    if records.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "stddev profile needs at least 2 records, got {}",
            records.len()
        )));
    }
    let d = records[0].increment.len();
    let mut mean = DVector::zeros(d);
    for r in records {
        mean += &r.increment;
    }
    mean /= records.len() as f64;
    let mut var = DVector::zeros(d);
    for r in records {
        let dev = &r.increment - &mean;
        var += dev.component_mul(&dev);
    }
    var /= records.len() as f64;
    Ok(var.map(f64::sqrt))
}

/// Relative change `100 (a - b) / b` per component, guarding tiny baselines.
pub fn percent_change(a: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.len() != b.len() {
        return Err(Error::Dimension("profile lengths disagree".into()));
    }
    if b.amin() <= 0.0 {
        return Err(Error::DegenerateSeries(
            "baseline profile has non-positive entries".into(),
        ));
    }
    Ok(DVector::from_fn(a.len(), |i, _| {
        100.0 * (a[i] - b[i]) / b[i]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assimilation::DeparturePair;
    use crate::dynamics::State;
    use approx::assert_relative_eq;

    fn record(cycle_index: usize, inc: Vec<f64>, departures: Vec<DeparturePair>) -> AssimilationCycleRecord {
        let d = inc.len();
        let increment = State::from_vec(inc);
        AssimilationCycleRecord {
            cycle_index,
            background: State::zeros(d),
            analysis: increment.clone(),
            increment,
            eta_analysis: State::zeros(d),
            eta_background: State::zeros(d),
            departures,
            solver_stats: None,
        }
    }

    #[test]
    fn departure_moments_by_hand() {
        let pairs = |b: f64, a: f64| DeparturePair {
            time_within_window: 0,
            background: DVector::from_vec(vec![b]),
            analysis: DVector::from_vec(vec![a]),
        };
        let records = vec![
            record(0, vec![0.0], vec![pairs(1.0, 0.5)]),
            record(1, vec![0.0], vec![pairs(3.0, 1.5)]),
        ];
        let stats = departure_statistics(&records).unwrap();
        assert_relative_eq!(stats.mean_background[0], 2.0);
        assert_relative_eq!(stats.mean_analysis[0], 1.0);
        assert_relative_eq!(stats.std_background[0], 1.0);
        assert_relative_eq!(stats.std_analysis[0], 0.5);
        assert_eq!(stats.n_samples, 2);
    }

    #[test]
    fn phase_means_respect_cycle_index() {
        let records = vec![
            record(0, vec![1.0], vec![]),
            record(1, vec![-1.0], vec![]),
            record(2, vec![3.0], vec![]),
            record(3, vec![-3.0], vec![]),
        ];
        let means = mean_increment_by_phase(&records, 2).unwrap();
        assert_relative_eq!(means[0][0], 2.0);
        assert_relative_eq!(means[1][0], -2.0);
        // dropping the first record (spin-up) must not shift phases
        let means = mean_increment_by_phase(&records[1..], 2).unwrap();
        assert_relative_eq!(means[0][0], 3.0);
        assert_relative_eq!(means[1][0], -2.0);
    }

    #[test]
    fn stddev_profile_by_hand() {
        let records = vec![record(0, vec![1.0, 0.0], vec![]), record(1, vec![3.0, 0.0], vec![])];
        let profile = increment_stddev_profile(&records).unwrap();
        assert_relative_eq!(profile[0], 1.0);
        assert_relative_eq!(profile[1], 0.0);
    }

    #[test]
    fn percent_change_guards_zero_baseline() {
        let a = DVector::from_vec(vec![1.1]);
        let b = DVector::from_vec(vec![0.0]);
        assert!(percent_change(&a, &b).is_err());
        let b = DVector::from_vec(vec![1.0]);
        assert_relative_eq!(percent_change(&a, &b).unwrap()[0], 10.0, epsilon = 1e-10);
    }

    #[test]
    fn missing_phase_rejected() {
        let records = vec![record(0, vec![1.0], vec![])];
        assert!(mean_increment_by_phase(&records, 2).is_err());
    }
}
