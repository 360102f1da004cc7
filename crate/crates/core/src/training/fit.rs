use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
use super::loss::{direct_log_densities, hankel_log_densities, hankel_loss, loss_direct};
use super::params::ParamGraph;
use crate::error::{shape_err, Error, Result};
use crate::ncwfa::{ModelDims, RnadeNcwfa};
use crate::tensor::{kernels, DenseTensor, TtTrain};
use crate::Sequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Spectral rank `R`; `None` means `k`.
    pub rank: Option<usize>,
    pub states: usize,
    pub mixtures: usize,
    pub hankel_l: usize,
    /// Feature dimension `d'`; `None` means `d`.
    pub feature_dim: Option<usize>,
    pub clip_norm: f64,
    /// Share the Hankel core at each position across train lengths.
    pub tie_cores: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            max_epochs: 500,
            patience: 10,
            validation_fraction: 0.1,
            batch_size: 32,
            seed: 0,
            rank: None,
            states: 10,
            mixtures: 10,
            hankel_l: 3,
            feature_dim: None,
            clip_norm: 10.0,
            tie_cores: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 || self.states == 0 || self.mixtures == 0 || self.hankel_l == 0 {
            return bad("batch_size, states, mixtures and hankel_l must be positive");
        }
        if self.rank == Some(0) || self.feature_dim == Some(0) {
            return bad("rank and feature_dim must be positive");
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0 && self.eps > 0.0) {
            return bad("learning_rate, clip_norm and eps must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn dims(&self, input_dim: usize) -> ModelDims {
        ModelDims {
            states: self.states,
            mixtures: self.mixtures,
            input_dim,
            feature_dim: self.feature_dim.unwrap_or(input_dim),
        }
    }

    /// Train lengths `L, 2L, 2L+1`.
    pub fn hankel_lengths(&self) -> [usize; 3] {
        [self.hankel_l, 2 * self.hankel_l, 2 * self.hankel_l + 1]
    }
}

/// Per-sequence mean losses after one epoch. Epoch 0 is the initialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.records[self.best_epoch].val_loss
    }

    pub fn initial_val_loss(&self) -> f64 {
        self.records[0].val_loss
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HankelFit {
    /// Best-validation snapshot.
    pub params: ParamGraph,
    pub history: TrainHistory,
    pub l: usize,
}

#[derive(Clone, Debug)]
pub struct SgdFit {
    pub model: RnadeNcwfa,
    pub history: TrainHistory,
}

fn input_dim(sets: &[&[Sequence]]) -> Result<usize> {
    let d = sets
        .iter()
        .flat_map(|s| s.iter())
        .flat_map(|s| s.first())
        .map(|x| x.len())
        .next()
        .ok_or_else(|| Error::Argument("training data is empty".into()))?;
    if d == 0 {
        return shape_err("observations have dimension 0");
    }
    Ok(d)
}

/// Shuffles a copy of `data` and splits off the validation part.
fn split(
    data: &[Sequence],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Sequence>, Vec<Sequence>)> {
    if data.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 sequences to hold out validation data, got {}",
            data.len()
        )));
    }
    let mut all = data.to_vec();
    all.shuffle(rng);
    let n_val = ((data.len() as f64 * fraction).round() as usize).clamp(1, data.len() - 1);
    let train = all.split_off(n_val);
    Ok((train, all))
}

fn mean_nll(lls: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ll in lls {
        acc -= ll;
    }
    acc / lls.len() as f64
}

/// Epoch loop shared by both fitting routines. `step` runs one epoch of
/// updates and returns the summed training loss and sequence count; `val`
/// returns the per-sequence validation loss.
fn run_epochs(
    cfg: &TrainConfig,
    params: &mut ParamGraph,
    init_train: f64,
    mut step: impl FnMut(&mut ParamGraph, &mut AdamState, &mut ChaCha8Rng) -> Result<(f64, usize)>,
    val: impl Fn(&ParamGraph) -> Result<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamGraph, TrainHistory)> {
    let mut state = AdamState::for_params(params);
    let v0 = val(params)?;
    let mut records = vec![EpochRecord {
        epoch: 0,
        train_loss: init_train,
        val_loss: v0,
    }];
    let mut best = (v0, params.clone(), 0usize);
    if !v0.is_finite() {
        best.0 = f64::INFINITY;
    }
    let mut since = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let (total, n) = step(params, &mut state, rng)?;
        let v = if params.all_finite() {
            val(params)?
        } else {
            f64::NAN
        };
        records.push(EpochRecord {
            epoch,
            train_loss: total / n as f64,
            val_loss: v,
        });
        debug!("epoch {epoch}: train {:.6} val {v:.6}", total / n as f64);
        if v < best.0 {
            best = (v, params.clone(), epoch);
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience || !params.all_finite() {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    info!(
        "training finished after {} epochs, best epoch {} (val {:.6})",
        records.len() - 1,
        best.2,
        best.0
    );
    Ok((
        best.1,
        TrainHistory {
            records,
            best_epoch: best.2,
            stopped_early,
        },
    ))
}

fn update(params: &mut ParamGraph, state: &mut AdamState, cfg: &TrainConfig) {
    clip_grad_norm(params, cfg.clip_norm);
    adam_step(params, state, &cfg.adam());
}

/// Trains the three Hankel trains of lengths `L, 2L, 2L+1` with shared
/// feature map, head and `h₀`, cycling the lengths every epoch.
pub fn fit_hankel(datasets: [&[Sequence]; 3], cfg: &TrainConfig) -> Result<HankelFit> {
    cfg.validate()?;
    let lengths = cfg.hankel_lengths();
    for (set, &l) in datasets.iter().zip(&lengths) {
        if let Some(s) = set.iter().find(|s| s.len() != l) {
            return shape_err(format!(
                "dataset for length {l} contains a sequence of length {}",
                s.len()
            ));
        }
    }
    let d = input_dim(&datasets)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = RnadeNcwfa::initialized(cfg.dims(d), &mut rng)?;
    let mut params = ParamGraph::hankel(&model, &lengths, cfg.tie_cores, &mut rng)?;
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for set in datasets {
        let (t, v) = split(set, cfg.validation_fraction, &mut rng)?;
        train.push(t);
        valid.push(v);
    }
    let val = |p: &ParamGraph| -> Result<f64> {
        let mut lls = Vec::new();
        for (set, &l) in valid.iter().zip(&lengths) {
            lls.extend(hankel_log_densities(p, set, l)?);
        }
        Ok(mean_nll(&lls))
    };
    let mut init = Vec::new();
    for (set, &l) in train.iter().zip(&lengths) {
        init.extend(hankel_log_densities(&params, set, l)?);
    }
    let step =
        |p: &mut ParamGraph, st: &mut AdamState, rng: &mut ChaCha8Rng| -> Result<(f64, usize)> {
            let (mut total, mut n) = (0.0, 0);
            for (set, &l) in train.iter_mut().zip(&lengths) {
                set.shuffle(rng);
                for batch in set.chunks(cfg.batch_size) {
                    total += hankel_loss(p, batch, l)?;
                    n += batch.len();
                    update(p, st, cfg);
                }
            }
            Ok((total, n))
        };
    let (params, history) = run_epochs(cfg, &mut params, mean_nll(&init), step, val, &mut rng)?;
    Ok(HankelFit {
        params,
        history,
        l: cfg.hankel_l,
    })
}

impl HankelFit {
    /// Hankel trains for `L, 2L, 2L+1` in standard form (first core `h₀ ×₁ G₁`,
    /// no output core, so the trailing mode is the head's input).
    ///
    /// The last core of each train never enters its loss; it is filled from the
    /// same position of the next longer train, and the longest train reuses its
    /// second-to-last core.
    pub fn trains(&self) -> Result<[TtTrain; 3]> {
        let p = &self.params;
        let lengths = [self.l, 2 * self.l, 2 * self.l + 1];
        let mut cores: Vec<Vec<DenseTensor>> = lengths
            .iter()
            .map(|&l| {
                p.cores(l)
                    .expect("train present")
                    .into_iter()
                    .cloned()
                    .collect()
            })
            .collect();
        for t in 0..3 {
            let l = lengths[t];
            let fill = if t < 2 {
                cores[t + 1][l - 1].clone()
            } else if l >= 2 {
                cores[t][l - 2].clone()
            } else {
                continue;
            };
            cores[t][l - 1] = fill;
        }
        let alpha = p.alpha();
        let out: Vec<TtTrain> = cores
            .into_iter()
            .map(|mut cs| {
                let shape = cs[0].shape().to_vec();
                let (k, dp) = (shape[0], shape[1]);
                let mut first = vec![0.0; dp * k];
                kernels::vec_mat(alpha, cs[0].data(), k, dp * k, &mut first);
                cs[0] = DenseTensor::new(vec![dp, k], first)?;
                TtTrain::new(cs, None)
            })
            .collect::<Result<_>>()?;
        Ok(out.try_into().expect("three trains"))
    }
}

/// Trains a single model on mixed-length sequences through the recurrent
/// likelihood.
pub fn fit_sgd(dataset: &[Sequence], cfg: &TrainConfig) -> Result<SgdFit> {
    cfg.validate()?;
    let d = input_dim(&[dataset])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = RnadeNcwfa::initialized(cfg.dims(d), &mut rng)?;
    fit_sgd_from(&model, dataset, cfg, &mut rng)
}

/// As [`fit_sgd`] from a given starting model.
pub fn fit_sgd_from(
    model: &RnadeNcwfa,
    dataset: &[Sequence],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SgdFit> {
    cfg.validate()?;
    let mut params = ParamGraph::direct(model)?;
    let (mut train, valid) = split(dataset, cfg.validation_fraction, rng)?;
    let val = |p: &ParamGraph| Ok(mean_nll(&direct_log_densities(p, &valid)?));
    let init = mean_nll(&direct_log_densities(&params, &train)?);
    let step =
        |p: &mut ParamGraph, st: &mut AdamState, rng: &mut ChaCha8Rng| -> Result<(f64, usize)> {
            train.shuffle(rng);
            let mut total = 0.0;
            for batch in train.chunks(cfg.batch_size) {
                total += loss_direct(p, batch)?;
                update(p, st, cfg);
            }
            Ok((total, train.len()))
        };
    let (best, history) = run_epochs(cfg, &mut params, init, step, val, rng)?;
    Ok(SgdFit {
        model: best.to_model()?,
        history,
    })
}
