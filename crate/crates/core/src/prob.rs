//! Log-domain probability kernels: log-sum-exp, softmax and Gaussian
//! (mixture) log-densities.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Smallest variance any diagonal Gaussian head may emit.
pub const VARIANCE_FLOOR: f64 = 1e-6;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log Σ exp(vᵢ)` with max subtraction. All `-∞` input gives `-∞`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Argument("log_sum_exp of an empty vector".into()));
    }
    Ok(log_sum_exp_unchecked(v))
}

pub(crate) fn log_sum_exp_unchecked(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp_unchecked(v);
    v.iter().map(|&x| x - lse).collect()
}

/// `Σ_dims [−½ log(2π var) − (x−μ)² / (2 var)]` without argument checks.
pub fn diag_log_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&xi, &mi), &vi) in x.iter().zip(mean).zip(var) {
        let diff = xi - mi;
        acc += -0.5 * (LN_2PI + vi.ln()) - diff * diff / (2.0 * vi);
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() || mean.is_empty() {
            return shape_err(format!(
                "mean has length {}, variance has length {}",
                mean.len(),
                var.len()
            ));
        }
        if let Some(v) = var.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!(
                "variance {v} is not strictly positive"
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Domain("mean has non-finite entries".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return shape_err(format!(
                "point has dimension {}, Gaussian has {}",
                x.len(),
                self.dim()
            ));
        }
        Ok(diag_log_density(x, &self.mean, &self.var))
    }
}

/// Checked wrapper matching the diagonal log-density contract.
pub fn log_density_diag(x: &[f64], g: &DiagGaussian) -> Result<f64> {
    g.log_density(x)
}

/// Full-covariance Gaussian; the Cholesky factor is computed at construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawFullGaussian", into = "RawFullGaussian")]
pub struct FullGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

#[derive(Serialize, Deserialize)]
struct RawFullGaussian {
    mean: Vec<f64>,
    /// Row-major `d × d`.
    cov: Vec<f64>,
}

impl TryFrom<RawFullGaussian> for FullGaussian {
    type Error = Error;

    fn try_from(raw: RawFullGaussian) -> Result<Self> {
        let d = raw.mean.len();
        if raw.cov.len() != d * d {
            return shape_err(format!(
                "covariance has {} entries, expected {}",
                raw.cov.len(),
                d * d
            ));
        }
        FullGaussian::new(raw.mean, DMatrix::from_row_slice(d, d, &raw.cov))
    }
}

impl From<FullGaussian> for RawFullGaussian {
    fn from(g: FullGaussian) -> Self {
        let d = g.dim();
        let cov = (0..d * d).map(|i| g.cov[(i / d, i % d)]).collect();
        Self {
            mean: g.mean.iter().copied().collect(),
            cov,
        }
    }
}

impl PartialEq for FullGaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl FullGaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.shape() != (d, d) {
            return shape_err(format!(
                "mean of length {d} with covariance {:?}",
                cov.shape()
            ));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite Gaussian parameters".into()));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(Error::Domain(format!(
                "covariance is not symmetric (max deviation {asym:e})"
            )));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Domain("covariance is not positive definite".into()))?;
        let log_det = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
            chol,
            log_det,
        })
    }

    pub fn from_diag(g: &DiagGaussian) -> Self {
        let cov = DMatrix::from_diagonal(&DVector::from_column_slice(g.var()));
        Self::new(g.mean().to_vec(), cov).expect("diagonal Gaussian is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return shape_err(format!(
                "point has dimension {}, Gaussian has {}",
                x.len(),
                self.dim()
            ));
        }
        let diff = DVector::from_column_slice(x) - &self.mean;
        let l = self.chol.l_dirty();
        let z = l
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + self.log_det + z.norm_squared()))
    }

    /// Draws `mean + L z` with `z` standard normal.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let x = &self.mean + self.chol.l_dirty().lower_triangle() * z;
        x.iter().copied().collect()
    }
}

pub fn log_density_full(x: &[f64], g: &FullGaussian) -> Result<f64> {
    g.log_density(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Component {
    Diag(DiagGaussian),
    Full(FullGaussian),
}

impl Component {
    pub fn dim(&self) -> usize {
        match self {
            Component::Diag(g) => g.dim(),
            Component::Full(g) => g.dim(),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        match self {
            Component::Diag(g) => g.log_density(x),
            Component::Full(g) => g.log_density(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    log_weights: Vec<f64>,
    components: Vec<Component>,
}

impl MixtureParams {
    pub fn new(log_weights: Vec<f64>, components: Vec<Component>) -> Result<Self> {
        if log_weights.len() != components.len() || components.is_empty() {
            return shape_err(format!(
                "{} weights for {} components",
                log_weights.len(),
                components.len()
            ));
        }
        let total: f64 = log_weights.iter().map(|w| w.exp()).sum();
        if (total - 1.0).abs() >= 1e-12 {
            return Err(Error::Domain(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return shape_err("mixture components have different dimensions");
        }
        Ok(Self {
            log_weights,
            components,
        })
    }

    pub fn from_weights(weights: &[f64], components: Vec<Component>) -> Result<Self> {
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Domain("negative mixture weight".into()));
        }
        Self::new(weights.iter().map(|w| w.ln()).collect(), components)
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }
}

pub fn log_mixture_density(x: &[f64], mix: &MixtureParams) -> Result<f64> {
    let terms = mix
        .components
        .iter()
        .zip(&mix.log_weights)
        .map(|(c, &lw)| Ok(lw + c.log_density(x)?))
        .collect::<Result<Vec<f64>>>()?;
    log_sum_exp(&terms)
}
