//! Covariance specifications on the periodic 1-D grid and their realization
//! as dense SPD matrices with factors for sampling and solving.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Gaussian,
    Soar,
}

/// Declarative covariance description; realized with [`CovarianceSpec::realize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    /// Diagonal covariance. Either a single variance applied to every
    /// component or an explicit per-component vector.
    Diagonal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variance: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variances: Option<Vec<f64>>,
    },
    /// Isotropic kernel on periodic grid distance; the realized matrix is
    /// symmetric circulant.
    Isotropic {
        variance: f64,
        correlation_length: f64,
        kernel: Kernel,
    },
}

impl CovarianceSpec {
    pub fn diagonal(variance: f64) -> Self {
        CovarianceSpec::Diagonal {
            variance: Some(variance),
            variances: None,
        }
    }

    pub fn diagonal_vec(variances: Vec<f64>) -> Self {
        CovarianceSpec::Diagonal {
            variance: None,
            variances: Some(variances),
        }
    }

    /// Build the dense matrix for dimension `dim` on a grid with spacing
    /// `spacing` (spacing only matters for isotropic kernels).
    pub fn matrix(&self, dim: usize, spacing: f64) -> Result<DMatrix<f64>> {
        match self {
            CovarianceSpec::Diagonal {
                variance,
                variances,
            } => {
                let vars: Vec<f64> = match (variance, variances) {
                    (Some(v), None) => vec![*v; dim],
                    (None, Some(vs)) => vs.clone(),
                    _ => {
                        return Err(Error::Config(
                            "diagonal covariance needs exactly one of `variance`/`variances`"
                                .into(),
                        ))
                    }
                };
                if vars.len() != dim {
                    return Err(Error::Dimension(format!(
                        "diagonal covariance has {} variances, state dimension is {}",
                        vars.len(),
                        dim
                    )));
                }
                if vars.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    return Err(Error::NotPsd("negative or non-finite variance".into()));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_vec(vars)))
            }
            CovarianceSpec::Isotropic {
                variance,
                correlation_length,
                kernel,
            } => {
                if *variance < 0.0 || !variance.is_finite() {
                    return Err(Error::NotPsd("negative or non-finite variance".into()));
                }
                if *correlation_length < 0.0 {
                    return Err(Error::Config("negative correlation length".into()));
                }
                // periodic summation of the flat-space kernel keeps the
                // circulant positive semidefinite on small domains, where the
                // naive wrapped-distance Gaussian is not; normalize so the
                // diagonal is exactly `variance`
                let l = *correlation_length;
                let domain = dim as f64 * spacing;
                let kern = |r: f64| match kernel {
                    Kernel::Gaussian => (-r * r / (2.0 * l * l)).exp(),
                    Kernel::Soar => (1.0 + r / l) * (-r / l).exp(),
                };
                let wraps = if l == 0.0 { 0 } else { (8.0 * l / domain).ceil() as i64 + 1 };
                let periodic = |sep: usize| -> f64 {
                    if l == 0.0 {
                        return if sep == 0 { 1.0 } else { 0.0 };
                    }
                    (-wraps..=wraps)
                        .map(|w| kern((sep as f64 * spacing + w as f64 * domain).abs()))
                        .sum()
                };
                let norm = periodic(0);
                let mut m = DMatrix::zeros(dim, dim);
                for i in 0..dim {
                    for j in 0..dim {
                        let sep = (i as i64 - j as i64).unsigned_abs() as usize;
                        let sep = sep.min(dim - sep);
                        m[(i, j)] = variance * periodic(sep) / norm;
                    }
                }
                // enforce exact symmetry against rounding in kernel evaluation
                let mt = m.transpose();
                Ok((&m + mt) * 0.5)
            }
        }
    }

    pub fn realize(&self, dim: usize, spacing: f64) -> Result<RealizedCovariance> {
        RealizedCovariance::from_matrix(self.matrix(dim, spacing)?)
    }
}

/// Dense covariance matrix together with a factor `F` (so samples are
/// `F z`, z standard normal) and, when SPD, a Cholesky for solving.
#[derive(Debug, Clone)]
pub struct RealizedCovariance {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl RealizedCovariance {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let sym = (&matrix + matrix.transpose()) * 0.5;
        if let Some(chol) = Cholesky::new(sym.clone()) {
            let factor = chol.l().clone_owned();
            return Ok(RealizedCovariance {
                matrix: sym,
                factor,
                chol: Some(chol),
            });
        }
        // PSD but singular (e.g. long-length-scale circulant kernels, zero
        // observation noise): fall back to a symmetric eigendecomposition.
        let eig = sym.clone().symmetric_eigen();
        let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let tol = -1e-10 * max_eig.max(1.0);
        if eig.eigenvalues.iter().any(|&l| l < tol) {
            return Err(Error::NotPsd(format!(
                "minimum eigenvalue {:.3e} below tolerance",
                eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
            )));
        }
        let sqrt_l = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
        );
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_l);
        Ok(RealizedCovariance {
            matrix: sym,
            factor,
            chol: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Draw one sample with this covariance (zero mean).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        &self.factor * z
    }

    /// Solve `C x = v`. Requires the matrix to be strictly SPD.
    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.chol {
            Some(chol) => Ok(chol.solve(v)),
            None => Err(Error::Singular(
                "covariance is singular; cannot apply its inverse".into(),
            )),
        }
    }

    /// `vᵀ C⁻¹ v`, the Mahalanobis quadratic form.
    pub fn quad_form(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(v.dot(&self.solve(v)?))
    }
}
