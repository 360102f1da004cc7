use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ncwfa::{DiagHead, FeatureMap, Head, RnadeNcwfa};
use crate::tensor::DenseTensor;

pub(crate) const SHARED: [&str; 8] = [
    "alpha", "w", "v_beta", "b_beta", "v_mu", "b_mu", "v_sigma", "b_sigma",
];

/// Named parameter tensors with gradient buffers of identical shapes.
///
/// A direct graph holds one `transition`; a Hankel graph holds private cores
/// `core/{l}/{i}` (`i = 1..=l`) for each train length `l`, or position-shared
/// cores `core/{i}` when tied. Both share `alpha` (the initial state `h₀`),
/// the feature weights `w` and the head.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGraph {
    names: Vec<String>,
    values: Vec<DenseTensor>,
    grads: Vec<Vec<f64>>,
    lengths: Vec<usize>,
    tied: bool,
}

fn trainable_parts(model: &RnadeNcwfa) -> Result<(&DenseTensor, &DiagHead)> {
    let (FeatureMap::Tanh { w }, Head::Diag(head)) = (model.feature(), model.head()) else {
        return Err(Error::Argument(
            "only tanh feature maps with a diagonal head are trainable".into(),
        ));
    };
    if model.out_map().is_some() {
        return Err(Error::Argument(
            "models with an out_map are not trainable".into(),
        ));
    }
    Ok((w, head))
}

impl ParamGraph {
    fn shared(model: &RnadeNcwfa) -> Result<Self> {
        let (w, head) = trainable_parts(model)?;
        let values = vec![
            DenseTensor::vector(model.alpha().to_vec()),
            w.clone(),
            head.v_beta.clone(),
            head.b_beta.clone(),
            head.v_mu.clone(),
            head.b_mu.clone(),
            head.v_sigma.clone(),
            head.b_sigma.clone(),
        ];
        let mut g = Self {
            names: SHARED.iter().map(|s| s.to_string()).collect(),
            values: Vec::new(),
            grads: Vec::new(),
            lengths: Vec::new(),
            tied: false,
        };
        for v in values {
            g.grads.push(vec![0.0; v.len()]);
            g.values.push(v);
        }
        Ok(g)
    }

    fn push(&mut self, name: String, value: DenseTensor) {
        self.names.push(name);
        self.grads.push(vec![0.0; value.len()]);
        self.values.push(value);
    }

    /// Parameters of a trainable model for direct likelihood training.
    pub fn direct(model: &RnadeNcwfa) -> Result<Self> {
        let mut g = Self::shared(model)?;
        g.push("transition".into(), model.transition().clone());
        Ok(g)
    }

    /// Shared parameters from `model` plus fresh `N(0, 0.1²)` cores for each
    /// length. With `tied`, trains share the core at each position.
    pub fn hankel<R: Rng + ?Sized>(
        model: &RnadeNcwfa,
        lengths: &[usize],
        tied: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut g = Self::shared(model)?;
        g.tied = tied;
        let shape = model.transition().shape().to_vec();
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        for &l in lengths {
            if l == 0 || g.lengths.contains(&l) {
                return Err(Error::Argument(format!(
                    "invalid or repeated train length {l}"
                )));
            }
            g.lengths.push(l);
            for i in 1..=l {
                let name = g.core_name(l, i);
                if g.index(&name).is_none() {
                    let core = DenseTensor::from_fn(&shape, |_| normal.sample(rng));
                    g.push(name, core);
                }
            }
        }
        Ok(g)
    }

    pub fn is_tied(&self) -> bool {
        self.tied
    }

    /// Name of core `i` (1-based) of the length-`l` train.
    pub fn core_name(&self, l: usize, i: usize) -> String {
        if self.tied {
            format!("core/{i}")
        } else {
            format!("core/{l}/{i}")
        }
    }

    /// Train lengths of a Hankel graph; empty for a direct graph.
    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseTensor> {
        self.index(name).map(move |i| &mut self.values[i])
    }

    pub fn grad(&self, name: &str) -> Option<&[f64]> {
        self.index(name).map(|i| self.grads[i].as_slice())
    }

    pub fn values(&self) -> &[DenseTensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [DenseTensor] {
        &mut self.values
    }

    pub fn grads(&self) -> &[Vec<f64>] {
        &self.grads
    }

    pub(crate) fn grads_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.grads
    }

    pub(crate) fn values_and_grads(&mut self) -> (&mut [DenseTensor], &[Vec<f64>]) {
        (&mut self.values, &self.grads)
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.data().iter().all(|x| x.is_finite()))
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    fn value(&self, name: &str) -> &DenseTensor {
        self.get(name).expect("shared parameter present")
    }

    pub fn feature(&self) -> FeatureMap {
        FeatureMap::Tanh {
            w: self.value("w").clone(),
        }
    }

    pub fn head(&self) -> DiagHead {
        DiagHead {
            v_beta: self.value("v_beta").clone(),
            b_beta: self.value("b_beta").clone(),
            v_mu: self.value("v_mu").clone(),
            b_mu: self.value("b_mu").clone(),
            v_sigma: self.value("v_sigma").clone(),
            b_sigma: self.value("b_sigma").clone(),
        }
    }

    pub fn alpha(&self) -> &[f64] {
        self.value("alpha").data()
    }

    /// Cores `1..=l` of the length-`l` train.
    pub fn cores(&self, l: usize) -> Option<Vec<&DenseTensor>> {
        if !self.lengths.contains(&l) {
            return None;
        }
        Some(
            (1..=l)
                .map(|i| self.get(&self.core_name(l, i)).expect("core present"))
                .collect(),
        )
    }

    /// Rebuilds the model of a direct graph.
    pub fn to_model(&self) -> Result<RnadeNcwfa> {
        let transition = self
            .get("transition")
            .ok_or_else(|| Error::Argument("graph has no transition tensor".into()))?;
        if !self.all_finite() {
            return Err(Error::Numerical("parameters are not finite".into()));
        }
        RnadeNcwfa::new(
            self.alpha().to_vec(),
            transition.clone(),
            self.feature(),
            Head::Diag(self.head()),
            None,
        )
    }
}
