use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{draw_categorical, GaussianHmm};
use crate::error::{shape_err, Error, Result};
use crate::prob::FullGaussian;

/// Baum–Welch settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Added to every covariance diagonal in the M-step.
    pub cov_reg: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
            restarts: 3,
            cov_reg: 1e-6,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.tol > 0.0) || self.restarts == 0 || self.cov_reg < 0.0 {
            return Err(Error::Config(format!("invalid EM configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub hmm: GaussianHmm,
    pub log_likelihood: f64,
    /// Training log-likelihood after each M-step, one trace per restart.
    /// Entry 0 is the likelihood of the initialization.
    pub traces: Vec<Vec<f64>>,
    pub best_restart: usize,
}

pub fn em_fit(data: &[Vec<Vec<f64>>], k: usize, cfg: &EmConfig) -> Result<GaussianHmm> {
    Ok(em_fit_traced(data, k, cfg)?.hmm)
}

/// Fits a `k`-state Gaussian HMM by EM, keeping the best of `cfg.restarts` runs.
pub fn em_fit_traced(data: &[Vec<Vec<f64>>], k: usize, cfg: &EmConfig) -> Result<EmFit> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::Argument("EM needs at least one state".into()));
    }
    let points: Vec<&[f64]> = data.iter().flatten().map(|o| o.as_slice()).collect();
    if data.iter().any(|s| s.is_empty()) || points.is_empty() {
        return Err(Error::Argument(
            "EM needs a nonempty dataset of nonempty sequences".into(),
        ));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return shape_err("observations have inconsistent dimensions");
    }

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(GaussianHmm, f64, usize)> = None;
    let mut traces = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let (hmm, trace) = run_once(data, &points, k, cfg, &mut rng)?;
        let ll = *trace.last().expect("trace is never empty");
        if best.as_ref().is_none_or(|(_, b, _)| ll > *b) {
            best = Some((hmm, ll, restart));
        }
        traces.push(trace);
    }
    let (hmm, log_likelihood, best_restart) = best.expect("at least one restart");
    Ok(EmFit {
        hmm,
        log_likelihood,
        traces,
        best_restart,
    })
}

struct Stats {
    ll: f64,
    init: Vec<f64>,
    trans: Vec<f64>,
    /// Posterior state marginals per sequence, flattened `T × k`.
    gammas: Vec<Vec<f64>>,
}

fn run_once(
    data: &[Vec<Vec<f64>>],
    points: &[&[f64]],
    k: usize,
    cfg: &EmConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(GaussianHmm, Vec<f64>)> {
    let pooled = pooled_covariance(points, cfg.cov_reg);
    let mut hmm = initialize(points, k, &pooled, rng)?;
    let mut stats = e_step(&hmm, data);
    let mut trace = vec![stats.ll];
    for _ in 0..cfg.max_iters {
        hmm = m_step(&stats, data, points, k, cfg, &pooled, rng)?;
        let prev = stats.ll;
        stats = e_step(&hmm, data);
        trace.push(stats.ll);
        if (stats.ll - prev) < cfg.tol * prev.abs() {
            break;
        }
    }
    Ok((hmm, trace))
}

fn pooled_covariance(points: &[&[f64]], reg: f64) -> DMatrix<f64> {
    let d = points[0].len();
    let n = points.len() as f64;
    let mut mean = DVector::zeros(d);
    for p in points {
        mean += DVector::from_column_slice(p);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let diff = DVector::from_column_slice(p) - &mean;
        cov += &diff * diff.transpose();
    }
    cov /= n;
    // keep a usable scale even for degenerate pooled data
    cov + DMatrix::identity(d, d) * reg.max(1e-6)
}

/// k-means++ seeding followed by a few Lloyd iterations; uniform chain.
fn initialize(
    points: &[&[f64]],
    k: usize,
    pooled: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<GaussianHmm> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut best_d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best_d2.iter().sum();
        let idx = if total > 0.0 {
            let w: Vec<f64> = best_d2.iter().map(|v| v / total).collect();
            draw_categorical(&w, rng)
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx].to_vec();
        for (b, p) in best_d2.iter_mut().zip(points) {
            *b = b.min(dist2(p, &c));
        }
        centers.push(c);
    }
    let d = points[0].len();
    for _ in 0..10 {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let j = (0..k)
                .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                .expect("k >= 1");
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    let emissions = centers
        .into_iter()
        .map(|c| FullGaussian::new(c, pooled.clone()))
        .collect::<Result<Vec<_>>>()?;
    let uniform = vec![1.0 / k as f64; k];
    let init = normalized(&uniform);
    let trans = (0..k).flat_map(|_| normalized(&uniform)).collect();
    GaussianHmm::new(init, trans, emissions)
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    let mut out: Vec<f64> = v.iter().map(|x| x / total).collect();
    let err = 1.0 - out.iter().sum::<f64>();
    let imax = (0..out.len())
        .max_by(|&a, &b| out[a].total_cmp(&out[b]))
        .unwrap_or(0);
    out[imax] += err;
    out
}

/// Scaled forward–backward over every sequence.
fn e_step(hmm: &GaussianHmm, data: &[Vec<Vec<f64>>]) -> Stats {
    let k = hmm.states();
    let tr = hmm.trans();
    let mut stats = Stats {
        ll: 0.0,
        init: vec![0.0; k],
        trans: vec![0.0; k * k],
        gammas: Vec::with_capacity(data.len()),
    };
    for seq in data {
        let n = seq.len();
        let mut b = vec![0.0; n * k];
        let mut alpha = vec![0.0; n * k];
        let mut scale = vec![0.0; n];
        for (t, o) in seq.iter().enumerate() {
            let logb = hmm.emission_log_densities(o);
            let max = logb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for j in 0..k {
                b[t * k + j] = (logb[j] - max).exp();
            }
            stats.ll += max;
        }
        for t in 0..n {
            for j in 0..k {
                let prior = if t == 0 {
                    hmm.init()[j]
                } else {
                    (0..k).map(|i| alpha[(t - 1) * k + i] * tr[i * k + j]).sum()
                };
                alpha[t * k + j] = prior * b[t * k + j];
            }
            let c: f64 = alpha[t * k..(t + 1) * k]
                .iter()
                .sum::<f64>()
                .max(f64::MIN_POSITIVE);
            alpha[t * k..(t + 1) * k].iter_mut().for_each(|a| *a /= c);
            scale[t] = c;
            stats.ll += c.ln();
        }
        let mut beta = vec![1.0; n * k];
        for t in (0..n.saturating_sub(1)).rev() {
            for i in 0..k {
                beta[t * k + i] = (0..k)
                    .map(|j| tr[i * k + j] * b[(t + 1) * k + j] * beta[(t + 1) * k + j])
                    .sum::<f64>()
                    / scale[t + 1];
            }
        }
        let mut gamma = vec![0.0; n * k];
        for t in 0..n {
            let row = &mut gamma[t * k..(t + 1) * k];
            for j in 0..k {
                row[j] = alpha[t * k + j] * beta[t * k + j];
            }
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|g| *g /= s);
            }
        }
        for j in 0..k {
            stats.init[j] += gamma[j];
        }
        for t in 0..n.saturating_sub(1) {
            for i in 0..k {
                let a = alpha[t * k + i];
                for j in 0..k {
                    stats.trans[i * k + j] +=
                        a * tr[i * k + j] * b[(t + 1) * k + j] * beta[(t + 1) * k + j]
                            / scale[t + 1];
                }
            }
        }
        stats.gammas.push(gamma);
    }
    stats
}

fn m_step(
    stats: &Stats,
    data: &[Vec<Vec<f64>>],
    points: &[&[f64]],
    k: usize,
    cfg: &EmConfig,
    pooled: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<GaussianHmm> {
    let d = points[0].len();
    let init = normalized(&stats.init);
    let mut trans = Vec::with_capacity(k * k);
    for row in stats.trans.chunks(k) {
        if row.iter().sum::<f64>() > 0.0 {
            trans.extend(normalized(row));
        } else {
            trans.extend(vec![1.0 / k as f64; k]);
        }
    }

    let mut weight = vec![0.0; k];
    let mut means = vec![DVector::<f64>::zeros(d); k];
    for (seq, gamma) in data.iter().zip(&stats.gammas) {
        for (t, o) in seq.iter().enumerate() {
            let x = DVector::from_column_slice(o);
            for j in 0..k {
                let g = gamma[t * k + j];
                weight[j] += g;
                means[j] += &x * g;
            }
        }
    }
    let mut covs = vec![DMatrix::<f64>::zeros(d, d); k];
    for j in 0..k {
        if weight[j] > 1e-10 {
            means[j] /= weight[j];
        }
    }
    for (seq, gamma) in data.iter().zip(&stats.gammas) {
        for (t, o) in seq.iter().enumerate() {
            for j in 0..k {
                let diff = DVector::from_column_slice(o) - &means[j];
                covs[j] += &diff * diff.transpose() * gamma[t * k + j];
            }
        }
    }
    let mut emissions = Vec::with_capacity(k);
    for j in 0..k {
        let fitted = if weight[j] > 1e-10 {
            let mut cov = &covs[j] / weight[j] + DMatrix::identity(d, d) * cfg.cov_reg;
            cov = (&cov + cov.transpose()) * 0.5;
            FullGaussian::new(means[j].iter().copied().collect(), cov).ok()
        } else {
            None
        };
        let g = match fitted {
            Some(g) => g,
            // empty or collapsed state: re-seed from a random observation
            None => {
                let p = points[rng.random_range(0..points.len())];
                FullGaussian::new(p.to_vec(), pooled.clone())?
            }
        };
        emissions.push(g);
    }
    GaussianHmm::new(init, trans, emissions)
}
