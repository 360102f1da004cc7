use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::prob::{self, FullGaussian, VARIANCE_FLOOR};
use crate::tensor::{kernels, DenseTensor};

/// Mixture-density termination with diagonal covariances.
///
/// For a head input `h` (length `k`):
/// `β = softmax(V_β h + b_β)`, `M = V_μ ×₁ h + B_μ`,
/// `Σ = max(exp(V_σ ×₁ h + B_σ), floor)`, and the output density is
/// `Σ_j β_j N(x | M_j, diag(Σ_j))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagHead {
    /// `(m, k)`
    pub v_beta: DenseTensor,
    /// `(m)`
    pub b_beta: DenseTensor,
    /// `(k, m, d)`
    pub v_mu: DenseTensor,
    /// `(m, d)`
    pub b_mu: DenseTensor,
    /// `(k, m, d)`
    pub v_sigma: DenseTensor,
    /// `(m, d)`
    pub b_sigma: DenseTensor,
}

/// Per-component parameters the diagonal head emits for one head input.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub log_weights: Vec<f64>,
    /// `m × d`, row-major.
    pub means: Vec<f64>,
    /// `m × d`, row-major, floored.
    pub vars: Vec<f64>,
}

impl DiagHead {
    pub fn zeros(k: usize, m: usize, d: usize) -> Self {
        Self {
            v_beta: DenseTensor::zeros(&[m, k]),
            b_beta: DenseTensor::zeros(&[m]),
            v_mu: DenseTensor::zeros(&[k, m, d]),
            b_mu: DenseTensor::zeros(&[m, d]),
            v_sigma: DenseTensor::zeros(&[k, m, d]),
            b_sigma: DenseTensor::zeros(&[m, d]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.v_beta.shape()[1]
    }

    pub fn mixtures(&self) -> usize {
        self.v_beta.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.b_mu.shape()[1]
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let [m, k] = self.v_beta.shape()[..] else {
            return shape_err("v_beta must be (m, k)");
        };
        let Some(&d) = self.b_mu.shape().get(1) else {
            return shape_err("b_mu must be (m, d)");
        };
        let checks: [(&str, &DenseTensor, Vec<usize>); 5] = [
            ("b_beta", &self.b_beta, vec![m]),
            ("v_mu", &self.v_mu, vec![k, m, d]),
            ("b_mu", &self.b_mu, vec![m, d]),
            ("v_sigma", &self.v_sigma, vec![k, m, d]),
            ("b_sigma", &self.b_sigma, vec![m, d]),
        ];
        for (name, t, want) in checks {
            if t.shape() != want.as_slice() {
                return shape_err(format!(
                    "{name} has shape {:?}, expected {want:?}",
                    t.shape()
                ));
            }
        }
        Ok(())
    }

    pub fn outputs(&self, h: &[f64]) -> HeadOutput {
        let (m, k, d) = (self.mixtures(), self.input_dim(), self.output_dim());
        let mut logits = vec![0.0; m];
        kernels::mat_vec(self.v_beta.data(), h, m, k, &mut logits);
        for (l, b) in logits.iter_mut().zip(self.b_beta.data()) {
            *l += b;
        }
        let mut means = vec![0.0; m * d];
        kernels::vec_mat(h, self.v_mu.data(), k, m * d, &mut means);
        for (v, b) in means.iter_mut().zip(self.b_mu.data()) {
            *v += b;
        }
        let mut vars = vec![0.0; m * d];
        kernels::vec_mat(h, self.v_sigma.data(), k, m * d, &mut vars);
        for (v, b) in vars.iter_mut().zip(self.b_sigma.data()) {
            *v = (*v + b).exp().max(VARIANCE_FLOOR);
        }
        HeadOutput {
            log_weights: prob::log_softmax(&logits),
            means,
            vars,
        }
    }

    pub fn log_density(&self, x: &[f64], h: &[f64]) -> f64 {
        let d = self.output_dim();
        let out = self.outputs(h);
        let terms: Vec<f64> = out
            .log_weights
            .iter()
            .enumerate()
            .map(|(j, lw)| {
                lw + prob::diag_log_density(
                    x,
                    &out.means[j * d..(j + 1) * d],
                    &out.vars[j * d..(j + 1) * d],
                )
            })
            .collect();
        prob::log_sum_exp_unchecked(&terms)
    }
}

/// Mixture whose weights are the head input itself, with fixed full-covariance
/// components. Inputs must be nonnegative and sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMixtureHead {
    pub components: Vec<FullGaussian>,
}

impl StateMixtureHead {
    pub fn log_density(&self, x: &[f64], h: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(h)
            .map(|(c, &w)| {
                if w > 0.0 {
                    w.ln() + c.log_density(x).expect("dimension checked")
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        prob::log_sum_exp_unchecked(&terms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Diag(DiagHead),
    StateMixture(StateMixtureHead),
}

impl Head {
    pub fn input_dim(&self) -> usize {
        match self {
            Head::Diag(h) => h.input_dim(),
            Head::StateMixture(h) => h.components.len(),
        }
    }

    pub fn mixtures(&self) -> usize {
        match self {
            Head::Diag(h) => h.mixtures(),
            Head::StateMixture(h) => h.components.len(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Head::Diag(h) => h.output_dim(),
            Head::StateMixture(h) => h.components.first().map_or(0, |c| c.dim()),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Head::Diag(h) => h.validate(),
            Head::StateMixture(h) => {
                let Some(first) = h.components.first() else {
                    return shape_err("state-mixture head has no components");
                };
                if h.components.iter().any(|c| c.dim() != first.dim()) {
                    return shape_err("state-mixture components have different dimensions");
                }
                Ok(())
            }
        }
    }

    pub fn log_density(&self, x: &[f64], h: &[f64]) -> f64 {
        match self {
            Head::Diag(head) => head.log_density(x, h),
            Head::StateMixture(head) => head.log_density(x, h),
        }
    }
}
