//! Hankel tensor trains and spectral recovery of automata from them.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::ncwfa::{FeatureMap, Head, LinearCwfa, RnadeNcwfa};
use crate::tensor::{
    mode_n_product, rank_factorize_with, DenseTensor, SplitConvention, TtTrain, DEFAULT_PINV_RTOL,
};
use crate::training::{fit_hankel, TrainConfig, TrainHistory};
use crate::Sequence;

/// Cap on `d^L · max(k, p)`, the size of the largest factor of an unfolding.
pub const UNFOLD_CAP: usize = 1_000_000;

/// Hankel trains of lengths `L`, `2L` and `2L+1` over a common mode dimension
/// and trailing output dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct HankelSet {
    l: usize,
    trains: [TtTrain; 3],
}

impl HankelSet {
    pub fn new(l: usize, h_l: TtTrain, h_2l: TtTrain, h_2l1: TtTrain) -> Result<Self> {
        if l == 0 {
            return Err(Error::Argument("basis length L must be at least 1".into()));
        }
        let trains = [h_l, h_2l, h_2l1];
        for (t, want) in trains.iter().zip([l, 2 * l, 2 * l + 1]) {
            if t.len() != want {
                return shape_err(format!(
                    "Hankel train has {} cores, expected {want}",
                    t.len()
                ));
            }
            if t.left().is_some() {
                return shape_err("Hankel trains must be in standard form");
            }
        }
        let (d, p) = (trains[0].mode_dim(), trains[0].out_dim());
        if trains.iter().any(|t| t.mode_dim() != d || t.out_dim() != p) {
            return shape_err("Hankel trains disagree on mode or output dimension");
        }
        Ok(Self { l, trains })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn h_l(&self) -> &TtTrain {
        &self.trains[0]
    }

    pub fn h_2l(&self) -> &TtTrain {
        &self.trains[1]
    }

    pub fn h_2l1(&self) -> &TtTrain {
        &self.trains[2]
    }

    pub fn mode_dim(&self) -> usize {
        self.trains[0].mode_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.trains[0].out_dim()
    }
}

fn chain(
    alpha: &[f64],
    transition: &DenseTensor,
    l: usize,
    output: Option<DenseTensor>,
) -> Result<TtTrain> {
    if l == 0 {
        return Err(Error::Argument("Hankel length must be at least 1".into()));
    }
    let [k, d, _] = transition.shape()[..] else {
        return shape_err(format!("transition has shape {:?}", transition.shape()));
    };
    let mut first = vec![0.0; d * k];
    crate::tensor::kernels::vec_mat(alpha, transition.data(), k, d * k, &mut first);
    let mut cores = vec![DenseTensor::new(vec![d, k], first)?];
    cores.extend(std::iter::repeat_n(transition.clone(), l - 1));
    TtTrain::new(cores, output)
}

/// Length-`l` Hankel train of a linear CWFA: `G₁ = A ×₁ α`, `G₂..G_l = A`,
/// output core `Ω`.
pub fn hankel_from_linear_cwfa(cwfa: &LinearCwfa, l: usize) -> Result<TtTrain> {
    chain(&cwfa.alpha, &cwfa.transition, l, Some(cwfa.omega.clone()))
}

pub fn hankel_set_from_linear_cwfa(cwfa: &LinearCwfa, l: usize) -> Result<HankelSet> {
    let t = |n| hankel_from_linear_cwfa(cwfa, n);
    HankelSet::new(l, t(l)?, t(2 * l)?, t(2 * l + 1)?)
}

/// Exact Hankel trains of a model's state recurrence over feature space. The
/// trailing mode is the head input: the model's out_map if it has one,
/// otherwise the state itself.
pub fn hankel_set_from_model(model: &RnadeNcwfa, l: usize) -> Result<HankelSet> {
    let t = |n| {
        chain(
            model.alpha(),
            model.transition(),
            n,
            model.out_map().cloned(),
        )
    };
    HankelSet::new(l, t(l)?, t(2 * l)?, t(2 * l + 1)?)
}

/// `(d^n × k)` matrix of the states after the first `n` cores.
fn prefix_matrix(t: &TtTrain, n: usize) -> Result<DMatrix<f64>> {
    let sub = TtTrain::new(t.cores()[..n].to_vec(), None)?;
    let dense = sub.to_dense_capped(UNFOLD_CAP)?;
    Ok(DMatrix::from_row_slice(
        dense.len() / t.rank(),
        t.rank(),
        dense.data(),
    ))
}

/// `(k × d^(len−from)·p)` matrix of the cores from `from` on, closed by the
/// output core.
fn suffix_matrix(t: &TtTrain, from: usize) -> Result<DMatrix<f64>> {
    let (k, d) = (t.rank(), t.mode_dim());
    let cores = &t.cores()[from..];
    if cores.is_empty() {
        return Ok(match t.output() {
            Some(o) => o.to_matrix()?,
            None => DMatrix::identity(k, k),
        });
    }
    let mut rows = Vec::with_capacity(k);
    for a in 0..k {
        let slice = cores[0].data()[a * d * k..(a + 1) * d * k].to_vec();
        let mut cs = vec![DenseTensor::new(vec![d, k], slice)?];
        cs.extend(cores[1..].iter().cloned());
        rows.push(
            TtTrain::new(cs, t.output().cloned())?
                .to_dense_capped(UNFOLD_CAP)?
                .into_data(),
        );
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_fn(k, cols, |i, j| rows[i][j]))
}

/// Parameters recovered from a [`HankelSet`], with the spectrum of the
/// `(L, L+1)` unfolding of `H_2L`.
#[derive(Clone, Debug)]
pub struct Recovery {
    pub alpha: Vec<f64>,
    /// `(R, d, R)`
    pub transition: DenseTensor,
    /// `(R, p)`
    pub omega: DenseTensor,
    pub singular_values: Vec<f64>,
    /// Singular values above `1e-10 · σ_max`.
    pub numerical_rank: usize,
}

impl Recovery {
    pub fn rank(&self) -> usize {
        self.alpha.len()
    }

    pub fn into_linear_cwfa(self) -> Result<LinearCwfa> {
        LinearCwfa::new(self.alpha, self.transition, self.omega)
    }

    /// Assembles a model whose out_map is the recovered `Ω`.
    pub fn into_model(self, feature: FeatureMap, head: Head) -> Result<RnadeNcwfa> {
        RnadeNcwfa::new(self.alpha, self.transition, feature, head, Some(self.omega))
    }
}

/// Rank-`rank` recovery: factor the `(L, L+1)` unfolding of `H_2L` as `P S`,
/// then `α = (S†)ᵀ vec(H_L)`, `Ω = P† H_L[(L,1)]` and
/// `A = H_2L+1[(L,1,L+1)] ×₁ P† ×₃ (S†)ᵀ`.
///
/// A rank above the numerical rank of the unfolding only logs a warning; the
/// truncated pseudoinverses give the surplus directions zero weight.
pub fn recover(h: &HankelSet, rank: usize, split: SplitConvention) -> Result<Recovery> {
    let l = h.l();
    let (d, p) = (h.mode_dim(), h.out_dim());
    let width = d
        .checked_pow(l as u32)
        .and_then(|n| n.checked_mul(p.max(h.h_2l().rank()).max(h.h_2l1().rank())));
    if width.is_none_or(|w| w > UNFOLD_CAP) {
        return Err(Error::Resource(format!(
            "unfolding factors for d = {d}, L = {l} exceed {UNFOLD_CAP} entries"
        )));
    }

    let m = prefix_matrix(h.h_2l(), l)? * suffix_matrix(h.h_2l(), l)?;
    let fac = rank_factorize_with(&m, rank, split)?;
    let numerical_rank = fac.numerical_rank(DEFAULT_PINV_RTOL);
    if numerical_rank < rank {
        warn!(
            "Hankel unfolding has numerical rank {numerical_rank}, below the requested rank {rank}"
        );
    }
    let p_pinv = fac.p_pinv(DEFAULT_PINV_RTOL);
    let s_pinv = fac.s_pinv(DEFAULT_PINV_RTOL);

    let h_l = h.h_l().to_dense_capped(UNFOLD_CAP)?;
    let vec_hl = DMatrix::from_row_slice(1, h_l.len(), h_l.data());
    let alpha: Vec<f64> = (vec_hl * &s_pinv).iter().copied().collect();
    let omega = &p_pinv * DMatrix::from_row_slice(h_l.len() / p, p, h_l.data());

    let t = h.h_2l1();
    let left = &p_pinv * prefix_matrix(t, l)?;
    let right = suffix_matrix(t, l + 1)? * &s_pinv;
    let mid = &t.cores()[l];
    let transition = mode_n_product(&mode_n_product(mid, &left, 0)?, &right.transpose(), 2)?;

    let omega = DenseTensor::from_matrix(&omega);
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(&alpha) || !finite(transition.data()) || !finite(omega.data()) {
        return Err(Error::Numerical(
            "spectral recovery produced non-finite parameters".into(),
        ));
    }
    Ok(Recovery {
        alpha,
        transition,
        omega,
        singular_values: fac.singular_values,
        numerical_rank,
    })
}

pub fn recover_linear_cwfa(h: &HankelSet, rank: usize) -> Result<LinearCwfa> {
    recover(h, rank, SplitConvention::default())?.into_linear_cwfa()
}

/// Recovers a model from trains whose trailing mode is the head input.
pub fn recover_model(
    h: &HankelSet,
    rank: usize,
    feature: FeatureMap,
    head: Head,
) -> Result<RnadeNcwfa> {
    recover(h, rank, SplitConvention::default())?.into_model(feature, head)
}

/// What the spectral step saw and did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub requested_rank: usize,
    /// Rank used, after clamping to the unfolding's smaller side.
    pub rank: usize,
    pub numerical_rank: usize,
    pub singular_values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SpectralFit {
    pub model: RnadeNcwfa,
    pub history: TrainHistory,
    pub report: SpectralReport,
}

/// Trains Hankel trains of lengths `L, 2L, 2L+1`, then recovers the automaton
/// and keeps the trained feature map and head.
///
/// The rank defaults to `k` and is clamped to `d'^L`, the row count of the
/// unfolding.
pub fn spectral_learn(datasets: [&[Sequence]; 3], cfg: &TrainConfig) -> Result<SpectralFit> {
    let fit = fit_hankel(datasets, cfg)?;
    let [a, b, c] = fit.trains()?;
    let set = HankelSet::new(fit.l, a, b, c)?;
    let requested = cfg.rank.unwrap_or(cfg.states);
    let rows = set
        .mode_dim()
        .checked_pow(set.l() as u32)
        .unwrap_or(usize::MAX);
    let rank = requested.min(rows);
    if rank < requested {
        warn!("rank {requested} exceeds the {rows} rows of the Hankel unfolding, using {rank}");
    }
    let rec = recover(&set, rank, SplitConvention::default())?;
    let report = SpectralReport {
        requested_rank: requested,
        rank,
        numerical_rank: rec.numerical_rank,
        singular_values: rec.singular_values.clone(),
    };
    let model = rec.into_model(fit.params.feature(), Head::Diag(fit.params.head()))?;
    Ok(SpectralFit {
        model,
        history: fit.history,
        report,
    })
}
