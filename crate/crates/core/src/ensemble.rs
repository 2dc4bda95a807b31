//! Ensemble containers and sample statistics.
//!
//! An [`Ensemble`] is a `D x E` matrix whose columns are members of a Monte
//! Carlo sample. All covariance estimates use the unbiased `1/(E-1)`
//! normalization, which is why construction requires `E >= 2`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Diagonal Gaussian sampling parameters.
///
/// `draw` output is fully determined by `(mean, std, seed)` and the pinned
/// RNG (`ChaCha8`) and normal sampler versions from the lockfile.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
    pub seed: u64,
}

impl GaussianSpec {
    pub fn new(mean: DVector<f64>, std: DVector<f64>, seed: u64) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Dimension {
                what: "gaussian std",
                expected: mean.len(),
                got: std.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) || std.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian spec".into()));
        }
        if std.iter().any(|&s| s < 0.0) {
            return Err(Error::Invalid {
                what: "gaussian std",
                why: "standard deviations must be nonnegative".into(),
            });
        }
        Ok(Self { mean, std, seed })
    }
}

/// A finite `D x E` sample matrix with `E >= 2` members as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    data: DMatrix<f64>,
}

impl Ensemble {
    /// Wraps a matrix whose columns are members.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() < 2 {
            return Err(Error::EnsembleSize { got: data.ncols() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble".into()));
        }
        Ok(Self { data })
    }

    /// Draws `members` i.i.d. samples from the diagonal Gaussian `spec`.
    ///
    /// Samples are generated member by member (column-major), so a given
    /// `(spec, members)` pair always produces the same matrix.
    pub fn draw(spec: &GaussianSpec, members: usize) -> Result<Self> {
        if members < 2 {
            return Err(Error::EnsembleSize { got: members });
        }
        let dim = spec.mean.len();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut data = DMatrix::zeros(dim, members);
        for e in 0..members {
            for i in 0..dim {
                let n: f64 = rng.sample(StandardNormal);
                data[(i, e)] = spec.mean[i] + spec.std[i] * n;
            }
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn members(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn member(&self, e: usize) -> DVector<f64> {
        self.data.column(e).into_owned()
    }

    /// Sample mean over members.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for col in self.data.column_iter() {
            m += col;
        }
        m / self.members() as f64
    }

    /// Member deviations from the sample mean; columns sum to zero.
    pub fn perturbations(&self) -> Ensemble {
        let mean = self.mean();
        let mut p = self.data.clone();
        for mut col in p.column_iter_mut() {
            col -= &mean;
        }
        Ensemble { data: p }
    }

    /// Unbiased sample covariance `P P^T / (E - 1)`.
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        let p = self.perturbations();
        let scale = 1.0 / (self.members() as f64 - 1.0);
        &p.data * p.data.transpose() * scale
    }

    /// Unbiased cross-covariance between `self` and `other`,
    /// `P_self P_other^T / (E - 1)`.
    pub fn cross_covariance(&self, other: &Ensemble) -> Result<DMatrix<f64>> {
        if self.members() != other.members() {
            return Err(Error::Dimension {
                what: "cross-covariance member count",
                expected: self.members(),
                got: other.members(),
            });
        }
        let a = self.perturbations();
        let b = other.perturbations();
        let scale = 1.0 / (self.members() as f64 - 1.0);
        Ok(&a.data * b.data.transpose() * scale)
    }

    /// Per-component sample standard deviation (unbiased variance).
    pub fn row_std(&self) -> DVector<f64> {
        let p = self.perturbations();
        let scale = 1.0 / (self.members() as f64 - 1.0);
        DVector::from_iterator(
            self.dim(),
            p.data
                .row_iter()
                .map(|r| (r.iter().map(|v| v * v).sum::<f64>() * scale).sqrt()),
        )
    }
}
