//! Nonlinear continuous weighted automata with an RNADE-style mixture head.
//!
//! The hidden state evolves as `h_t = A ×₁ h_{t-1} ×₂ φ(x_t)` with
//! `φ(x) = tanh(xᵀW)`, and each observation is scored by a mixture density
//! whose parameters are affine in the (optionally remapped) previous state.

mod head;
mod linear;

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::ghmm::GaussianHmm;
use crate::tensor::{kernels, DenseTensor};

pub use head::{DiagHead, Head, HeadOutput, StateMixtureHead};
pub use linear::{linear_cwfa_apply, LinearCwfa};

pub const MODEL_FORMAT: &str = "rnade-ncwfa/1";

/// Feature map applied to each observation before it enters the transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// `tanh(xᵀW)` with `W` of shape `(d, d')`.
    Tanh { w: DenseTensor },
    /// Ignores the input. Used by the constructive models.
    Constant { input_dim: usize, value: Vec<f64> },
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Tanh { w } => w.shape()[0],
            FeatureMap::Constant { input_dim, .. } => *input_dim,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            FeatureMap::Tanh { w } => w.shape()[1],
            FeatureMap::Constant { value, .. } => value.len(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Tanh { w } => {
                let (d, dp) = (w.shape()[0], w.shape()[1]);
                let mut out = vec![0.0; dp];
                kernels::vec_mat(x, w.data(), d, dp, &mut out);
                out.iter_mut().for_each(|v| *v = v.tanh());
                out
            }
            FeatureMap::Constant { value, .. } => value.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FeatureMap::Tanh { w } if w.order() != 2 => {
                shape_err("feature weights must be (d, d')")
            }
            FeatureMap::Constant { input_dim, value } if *input_dim == 0 || value.is_empty() => {
                shape_err("constant feature map needs positive dimensions")
            }
            FeatureMap::Constant { value, .. } if value.iter().any(|v| !v.is_finite()) => Err(
                Error::Domain("constant feature map has non-finite entries".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Sizes used to initialize a trainable model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Hidden state size `k`.
    pub states: usize,
    /// Mixture components `m`.
    pub mixtures: usize,
    /// Observation dimension `d`.
    pub input_dim: usize,
    /// Feature dimension `d'`.
    pub feature_dim: usize,
}

impl ModelDims {
    /// `d' = d`.
    pub fn new(states: usize, mixtures: usize, input_dim: usize) -> Self {
        Self {
            states,
            mixtures,
            input_dim,
            feature_dim: input_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct RnadeNcwfa {
    alpha: Vec<f64>,
    /// `(R, d', R)`
    transition: DenseTensor,
    feature: FeatureMap,
    head: Head,
    /// `(R, k)`; maps automaton states into the head's input space.
    out_map: Option<DenseTensor>,
}

impl RnadeNcwfa {
    pub fn new(
        alpha: Vec<f64>,
        transition: DenseTensor,
        feature: FeatureMap,
        head: Head,
        out_map: Option<DenseTensor>,
    ) -> Result<Self> {
        let r = alpha.len();
        if r == 0 {
            return shape_err("alpha is empty");
        }
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("alpha has non-finite entries".into()));
        }
        feature.validate()?;
        head.validate()?;
        let dp = feature.feature_dim();
        if transition.shape() != [r, dp, r] {
            return shape_err(format!(
                "transition has shape {:?}, expected {:?}",
                transition.shape(),
                [r, dp, r]
            ));
        }
        let k = head.input_dim();
        match &out_map {
            Some(om) if om.shape() != [r, k] => {
                return shape_err(format!(
                    "out_map has shape {:?}, expected {:?}",
                    om.shape(),
                    [r, k]
                ));
            }
            None if r != k => {
                return shape_err(format!(
                    "state size {r} differs from head input {k} and no out_map is set"
                ));
            }
            _ => {}
        }
        if let Head::StateMixture(h) = &head {
            if h.components[0].dim() != feature.input_dim() {
                return shape_err("head output dimension differs from the input dimension");
            }
        } else if head.output_dim() != feature.input_dim() {
            return shape_err(format!(
                "head output dimension {} differs from input dimension {}",
                head.output_dim(),
                feature.input_dim()
            ));
        }
        Ok(Self {
            alpha,
            transition,
            feature,
            head,
            out_map,
        })
    }

    /// Trainable model with weights drawn from `N(0, 0.1²)`, `B_σ = 0` and `α = 1/k`.
    pub fn initialized<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        let ModelDims {
            states: k,
            mixtures: m,
            input_dim: d,
            feature_dim: dp,
        } = dims;
        if k == 0 || m == 0 || d == 0 || dp == 0 {
            return Err(Error::Argument(format!(
                "model dimensions must be positive: {dims:?}"
            )));
        }
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let mut draw = |shape: &[usize]| DenseTensor::from_fn(shape, |_| normal.sample(rng));
        let w = draw(&[d, dp]);
        let transition = draw(&[k, dp, k]);
        let head = DiagHead {
            v_beta: draw(&[m, k]),
            b_beta: draw(&[m]),
            v_mu: draw(&[k, m, d]),
            b_mu: draw(&[m, d]),
            v_sigma: draw(&[k, m, d]),
            b_sigma: DenseTensor::zeros(&[m, d]),
        };
        Self::new(
            vec![1.0 / k as f64; k],
            transition,
            FeatureMap::Tanh { w },
            Head::Diag(head),
            None,
        )
    }

    /// Embeds a Gaussian HMM: `α = m`, every transition slice equals `T`,
    /// the feature map is constant `1/k`, and the head mixes the emissions
    /// with the current state vector as weights.
    pub fn from_gaussian_hmm(hmm: &GaussianHmm) -> Self {
        let k = hmm.states();
        let trans = hmm.trans();
        let transition = DenseTensor::from_fn(&[k, k, k], |ix| trans[ix[0] * k + ix[2]]);
        let head = Head::StateMixture(StateMixtureHead {
            components: hmm.emissions().to_vec(),
        });
        let feature = FeatureMap::Constant {
            input_dim: hmm.dim(),
            value: vec![1.0 / k as f64; k],
        };
        Self::new(hmm.init().to_vec(), transition, feature, head, None)
            .expect("valid HMM gives a valid model")
    }

    /// Two-state model whose `i`-th conditional is `N(x | i, 1)`.
    pub fn shifting_construction() -> Self {
        let transition =
            DenseTensor::from_fn(
                &[2, 2, 2],
                |ix| if ix[0] == 1 && ix[2] == 0 { 0.0 } else { 1.0 },
            );
        let mut head = DiagHead::zeros(2, 1, 1);
        head.v_mu.data_mut()[1] = 1.0;
        let feature = FeatureMap::Constant {
            input_dim: 1,
            value: vec![0.5, 0.5],
        };
        Self::new(vec![1.0, 1.0], transition, feature, Head::Diag(head), None)
            .expect("fixed construction")
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn transition(&self) -> &DenseTensor {
        &self.transition
    }

    pub fn feature(&self) -> &FeatureMap {
        &self.feature
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn out_map(&self) -> Option<&DenseTensor> {
        self.out_map.as_ref()
    }

    /// Automaton state size (`R` when an out_map is present, else `k`).
    pub fn state_dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn input_dim(&self) -> usize {
        self.feature.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature.feature_dim()
    }

    pub fn feature_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.feature.apply(x))
    }

    pub fn step(&self, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if h_prev.len() != self.state_dim() {
            return shape_err(format!(
                "state has length {}, expected {}",
                h_prev.len(),
                self.state_dim()
            ));
        }
        self.check_input(x)?;
        Ok(self.step_unchecked(h_prev, x))
    }

    fn step_unchecked(&self, h_prev: &[f64], x: &[f64]) -> Vec<f64> {
        let r = self.state_dim();
        let phi = self.feature.apply(x);
        let mut out = vec![0.0; r];
        kernels::bilinear(
            self.transition.data(),
            h_prev,
            &phi,
            r,
            phi.len(),
            r,
            &mut out,
        );
        out
    }

    /// Applies the out_map, if any.
    pub fn head_input(&self, h: &[f64]) -> Vec<f64> {
        match &self.out_map {
            Some(om) => {
                let (r, k) = (om.shape()[0], om.shape()[1]);
                let mut out = vec![0.0; k];
                kernels::vec_mat(h, om.data(), r, k, &mut out);
                out
            }
            None => h.to_vec(),
        }
    }

    /// `log ξ(x, h)` where `h` is an automaton state.
    pub fn conditional_log_density(&self, x: &[f64], h_prev: &[f64]) -> Result<f64> {
        if h_prev.len() != self.state_dim() {
            return shape_err(format!(
                "state has length {}, expected {}",
                h_prev.len(),
                self.state_dim()
            ));
        }
        self.check_input(x)?;
        Ok(self.head.log_density(x, &self.head_input(h_prev)))
    }

    /// States `h_0 .. h_{n-1}`, i.e. the state each conditional is scored against.
    pub fn hidden_states<S: AsRef<[f64]>>(&self, seq: &[S]) -> Result<Vec<Vec<f64>>> {
        self.check_seq(seq)?;
        let mut states = Vec::with_capacity(seq.len());
        let mut h = self.alpha.clone();
        for x in seq {
            let next = self.step_unchecked(&h, x.as_ref());
            states.push(std::mem::replace(&mut h, next));
        }
        Ok(states)
    }

    pub fn sequence_log_density<S: AsRef<[f64]>>(&self, seq: &[S]) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::Argument("sequence is empty".into()));
        }
        self.check_seq(seq)?;
        let mut h = self.alpha.clone();
        let mut ll = 0.0;
        for (t, x) in seq.iter().enumerate() {
            let x = x.as_ref();
            ll += self.head.log_density(x, &self.head_input(&h));
            if t + 1 < seq.len() {
                h = self.step_unchecked(&h, x);
            }
        }
        Ok(ll)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return shape_err(format!(
                "input has dimension {}, expected {}",
                x.len(),
                self.input_dim()
            ));
        }
        Ok(())
    }

    fn check_seq<S: AsRef<[f64]>>(&self, seq: &[S]) -> Result<()> {
        for (t, x) in seq.iter().enumerate() {
            if x.as_ref().len() != self.input_dim() {
                return shape_err(format!(
                    "observation {t} has dimension {}, expected {}",
                    x.as_ref().len(),
                    self.input_dim()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RawDims {
    states: usize,
    feature_dim: usize,
    input_dim: usize,
    head_dim: usize,
    mixtures: usize,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    format: String,
    dims: RawDims,
    alpha: Vec<f64>,
    transition: DenseTensor,
    feature: FeatureMap,
    head: Head,
    #[serde(default)]
    out_map: Option<DenseTensor>,
}

impl TryFrom<RawModel> for RnadeNcwfa {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        if raw.format != MODEL_FORMAT {
            return Err(Error::Format(format!(
                "unknown model format {:?}, expected {MODEL_FORMAT:?}",
                raw.format
            )));
        }
        let model = RnadeNcwfa::new(
            raw.alpha,
            raw.transition,
            raw.feature,
            raw.head,
            raw.out_map,
        )?;
        let d = &raw.dims;
        let actual = (
            model.state_dim(),
            model.feature_dim(),
            model.input_dim(),
            model.head.input_dim(),
            model.head.mixtures(),
        );
        if actual != (d.states, d.feature_dim, d.input_dim, d.head_dim, d.mixtures) {
            return shape_err("declared dims disagree with parameter shapes");
        }
        Ok(model)
    }
}

impl From<RnadeNcwfa> for RawModel {
    fn from(m: RnadeNcwfa) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            dims: RawDims {
                states: m.state_dim(),
                feature_dim: m.feature_dim(),
                input_dim: m.input_dim(),
                head_dim: m.head.input_dim(),
                mixtures: m.head.mixtures(),
            },
            alpha: m.alpha,
            transition: m.transition,
            feature: m.feature,
            head: m.head,
            out_map: m.out_map,
        }
    }
}
