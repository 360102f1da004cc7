//! Gaussian hidden Markov models: sampling, exact and factored sequence
//! densities, EM fitting and the time-shifting Gaussian reference density.

mod em;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::prob::{FullGaussian, LN_2PI};

pub use em::{em_fit, em_fit_traced, EmConfig, EmFit};

/// A k-state HMM with full-covariance Gaussian emissions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHmm", into = "RawHmm")]
pub struct GaussianHmm {
    init: Vec<f64>,
    /// Row-major `k × k`, rows sum to one.
    trans: Vec<f64>,
    emissions: Vec<FullGaussian>,
}

#[derive(Serialize, Deserialize)]
struct RawHmm {
    states: usize,
    dim: usize,
    init: Vec<f64>,
    trans: Vec<f64>,
    emissions: Vec<FullGaussian>,
}

impl TryFrom<RawHmm> for GaussianHmm {
    type Error = Error;

    fn try_from(raw: RawHmm) -> Result<Self> {
        let hmm = GaussianHmm::new(raw.init, raw.trans, raw.emissions)?;
        if hmm.states() != raw.states || hmm.dim() != raw.dim {
            return shape_err("declared HMM dimensions disagree with the stored arrays");
        }
        Ok(hmm)
    }
}

impl From<GaussianHmm> for RawHmm {
    fn from(h: GaussianHmm) -> Self {
        Self {
            states: h.states(),
            dim: h.dim(),
            init: h.init,
            trans: h.trans,
            emissions: h.emissions,
        }
    }
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::Domain(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl GaussianHmm {
    pub fn new(init: Vec<f64>, trans: Vec<f64>, emissions: Vec<FullGaussian>) -> Result<Self> {
        let k = init.len();
        if k == 0 || trans.len() != k * k || emissions.len() != k {
            return shape_err(format!(
                "HMM with {k} initial weights, {} transition entries and {} emissions",
                trans.len(),
                emissions.len()
            ));
        }
        check_simplex(&init, "initial distribution")?;
        for (i, row) in trans.chunks(k).enumerate() {
            check_simplex(row, &format!("transition row {i}"))?;
        }
        let d = emissions[0].dim();
        if emissions.iter().any(|e| e.dim() != d) {
            return shape_err("emissions have different dimensions");
        }
        Ok(Self {
            init,
            trans,
            emissions,
        })
    }

    /// Random HMM for synthetic experiments: flat-Dirichlet initial and
    /// transition rows, emission means `2·N(0, I)`, diagonal variances
    /// uniform in `[0.5, 1.5]`.
    pub fn random<R: Rng + ?Sized>(states: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if states == 0 || dim == 0 {
            return Err(Error::Argument(
                "HMM needs at least one state and one dimension".into(),
            ));
        }
        let init = flat_dirichlet(states, rng);
        let trans: Vec<f64> = (0..states)
            .flat_map(|_| flat_dirichlet(states, rng))
            .collect();
        let emissions = (0..states)
            .map(|_| {
                let mean: Vec<f64> = (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        2.0 * z
                    })
                    .collect();
                let var = DVector::from_fn(dim, |_, _| rng.random_range(0.5..1.5));
                FullGaussian::new(mean, DMatrix::from_diagonal(&var))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(init, trans, emissions)
    }

    pub fn states(&self) -> usize {
        self.init.len()
    }

    pub fn dim(&self) -> usize {
        self.emissions[0].dim()
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    /// Row-major transition matrix.
    pub fn trans(&self) -> &[f64] {
        &self.trans
    }

    pub fn trans_matrix(&self) -> DMatrix<f64> {
        let k = self.states();
        DMatrix::from_row_slice(k, k, &self.trans)
    }

    pub fn emissions(&self) -> &[FullGaussian] {
        &self.emissions
    }

    /// Samples observations and the hidden path.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        length: usize,
        rng: &mut R,
    ) -> (Vec<Vec<f64>>, Vec<usize>) {
        let k = self.states();
        let mut path = Vec::with_capacity(length);
        let mut obs = Vec::with_capacity(length);
        let mut state = draw_categorical(&self.init, rng);
        for t in 0..length {
            if t > 0 {
                state = draw_categorical(&self.trans[state * k..(state + 1) * k], rng);
            }
            path.push(state);
            obs.push(self.emissions[state].sample(rng));
        }
        (obs, path)
    }

    fn check_seq<S: AsRef<[f64]>>(&self, seq: &[S]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Argument("empty observation sequence".into()));
        }
        if let Some(t) = seq.iter().position(|o| o.as_ref().len() != self.dim()) {
            return shape_err(format!(
                "observation {t} has dimension {}, HMM emits dimension {}",
                seq[t].as_ref().len(),
                self.dim()
            ));
        }
        Ok(())
    }

    pub(crate) fn emission_log_densities(&self, o: &[f64]) -> Vec<f64> {
        self.emissions
            .iter()
            .map(|e| e.log_density(o).expect("dimension checked"))
            .collect()
    }

    /// Marginal log-density over hidden paths (scaled forward recursion).
    pub fn log_density_forward<S: AsRef<[f64]>>(&self, seq: &[S]) -> Result<f64> {
        self.check_seq(seq)?;
        let k = self.states();
        let mut alpha = self.init.clone();
        let mut pred = vec![0.0; k];
        let mut ll = 0.0;
        for (t, o) in seq.iter().enumerate() {
            if t > 0 {
                pred.fill(0.0);
                for (i, &a) in alpha.iter().enumerate() {
                    for (p, &tr) in pred.iter_mut().zip(&self.trans[i * k..(i + 1) * k]) {
                        *p += a * tr;
                    }
                }
                alpha.copy_from_slice(&pred);
            }
            let logb = self.emission_log_densities(o.as_ref());
            let max = logb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (a, lb) in alpha.iter_mut().zip(&logb) {
                *a *= (lb - max).exp();
            }
            let scale: f64 = alpha.iter().sum();
            if !(scale > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            alpha.iter_mut().for_each(|a| *a /= scale);
            ll += scale.ln() + max;
        }
        Ok(ll)
    }

    /// `Σᵢ log Σ_s (mᵀTⁱ⁻¹)_s N_s(oᵢ)`: each step mixes the emissions with the
    /// unconditioned state marginal. Equals the forward density only in
    /// degenerate cases such as a single state.
    pub fn log_density_factored<S: AsRef<[f64]>>(&self, seq: &[S]) -> Result<f64> {
        self.check_seq(seq)?;
        let k = self.states();
        let mut w = self.init.clone();
        let mut next = vec![0.0; k];
        let mut ll = 0.0;
        for (t, o) in seq.iter().enumerate() {
            if t > 0 {
                next.fill(0.0);
                for (i, &wi) in w.iter().enumerate() {
                    for (n, &tr) in next.iter_mut().zip(&self.trans[i * k..(i + 1) * k]) {
                        *n += wi * tr;
                    }
                }
                w.copy_from_slice(&next);
            }
            let terms: Vec<f64> = self
                .emission_log_densities(o.as_ref())
                .iter()
                .zip(&w)
                .map(|(lb, &wi)| {
                    if wi > 0.0 {
                        wi.ln() + lb
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            ll += crate::prob::log_sum_exp_unchecked(&terms);
        }
        Ok(ll)
    }
}

/// `Σᵢ log N(oᵢ | i, 1)` with time index `i` starting at 1.
pub fn shifting_hmm_log_density(seq: &[f64]) -> f64 {
    seq.iter()
        .enumerate()
        .map(|(i, &o)| {
            let diff = o - (i + 1) as f64;
            -0.5 * LN_2PI - 0.5 * diff * diff
        })
        .sum()
}

fn flat_dirichlet<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = g.iter().sum();
    let mut p: Vec<f64> = g.iter().map(|x| x / total).collect();
    // push the rounding error into the largest entry so the sum is 1 to ~1 ulp
    let err = 1.0 - p.iter().sum::<f64>();
    let imax = (0..k).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
    p[imax] += err;
    p
}

pub(crate) fn draw_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss1(m: f64, v: f64) -> FullGaussian {
        FullGaussian::new(vec![m], DMatrix::from_element(1, 1, v)).unwrap()
    }

    fn random_hmm_1d(k: usize, rng: &mut ChaCha8Rng) -> GaussianHmm {
        let init = flat_dirichlet(k, rng);
        let trans = (0..k).flat_map(|_| flat_dirichlet(k, rng)).collect();
        let em = (0..k)
            .map(|_| gauss1(rng.random_range(-2.0..2.0), rng.random_range(0.3..2.0)))
            .collect();
        GaussianHmm::new(init, trans, em).unwrap()
    }

    /// Sums path probability × emission product over every hidden path.
    fn enumerate_paths(hmm: &GaussianHmm, seq: &[Vec<f64>]) -> f64 {
        let k = hmm.states();
        let n = seq.len();
        let mut total = 0.0;
        for code in 0..k.pow(n as u32) {
            let path: Vec<usize> = (0..n)
                .map(|t| (code / k.pow((n - 1 - t) as u32)) % k)
                .collect();
            let mut p = hmm.init()[path[0]];
            for t in 1..n {
                p *= hmm.trans()[path[t - 1] * k + path[t]];
            }
            for t in 0..n {
                p *= hmm.emissions()[path[t]].log_density(&seq[t]).unwrap().exp();
            }
            total += p;
        }
        total.ln()
    }

    #[test]
    fn single_state_sampling_matches_emission() {
        let hmm = GaussianHmm::new(vec![1.0], vec![1.0], vec![gauss1(2.5, 0.5)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let (obs, path) = hmm.sample(100_000, &mut rng);
        assert!(path.iter().all(|&s| s == 0));
        let mean = obs.iter().map(|o| o[0]).sum::<f64>() / obs.len() as f64;
        assert!((mean - 2.5).abs() < 3.0 * 0.5f64.sqrt() / (obs.len() as f64).sqrt());
    }

    #[test]
    fn permutation_chain_follows_orbit() {
        let trans = vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let em = vec![gauss1(0.0, 1.0), gauss1(1.0, 1.0), gauss1(2.0, 1.0)];
        let hmm = GaussianHmm::new(vec![0.2, 0.3, 0.5], trans, em).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let (_, path) = hmm.sample(10, &mut rng);
            for w in path.windows(2) {
                assert_eq!(w[1], (w[0] + 1) % 3);
            }
        }
    }

    #[test]
    fn occupancy_matches_stationary_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let trans = vec![0.8, 0.15, 0.05, 0.2, 0.6, 0.2, 0.1, 0.3, 0.6];
        let em = vec![gauss1(0.0, 1.0), gauss1(1.0, 1.0), gauss1(2.0, 1.0)];
        // start in stationarity so every position has the same marginal
        let t = DMatrix::from_row_slice(3, 3, &trans);
        let eig: DVector<nalgebra::Complex<f64>> = t.transpose().complex_eigenvalues();
        assert!(eig.iter().any(|e| (e.re - 1.0).abs() < 1e-12));
        let mut pi = DVector::from_element(3, 1.0 / 3.0);
        for _ in 0..2000 {
            pi = t.transpose() * pi;
        }
        // the oracle: pi is the unit-eigenvalue eigenvector of Tᵀ
        assert!((t.transpose() * &pi - &pi).norm() < 1e-14);
        let init: Vec<f64> = pi.iter().copied().collect();
        let s: f64 = init.iter().sum();
        let init: Vec<f64> = init.iter().map(|v| v / s).collect();
        let hmm = GaussianHmm::new(init, trans, em).unwrap();
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            let (_, path) = hmm.sample(50, &mut rng);
            for s in path {
                counts[s] += 1;
            }
        }
        for (c, p) in counts.iter().zip(pi.iter()) {
            assert!((*c as f64 / (n * 50) as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn forward_base_case_is_init_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let hmm = random_hmm_1d(3, &mut rng);
        let o = vec![vec![0.4]];
        let comps = hmm
            .emissions()
            .iter()
            .map(|e| crate::prob::Component::Full(e.clone()))
            .collect();
        let mix = crate::prob::MixtureParams::from_weights(hmm.init(), comps).unwrap();
        let want = crate::prob::log_mixture_density(&o[0], &mix).unwrap();
        assert!((hmm.log_density_forward(&o).unwrap() - want).abs() < 1e-12);
        assert!((hmm.log_density_factored(&o).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..50 {
            let k = rng.random_range(1..=4);
            let n = rng.random_range(1..=4);
            let hmm = random_hmm_1d(k, &mut rng);
            let seq: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
            let want = enumerate_paths(&hmm, &seq);
            let got = hmm.log_density_forward(&seq).unwrap();
            assert!(((got - want) / want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn frozen_chain_closed_form() {
        let em = vec![gauss1(-1.0, 0.5), gauss1(1.5, 2.0)];
        let hmm = GaussianHmm::new(vec![0.3, 0.7], vec![1.0, 0.0, 0.0, 1.0], em).unwrap();
        let seq = vec![vec![0.2], vec![-0.7], vec![1.9]];
        let per_state: Vec<f64> = hmm
            .emissions()
            .iter()
            .map(|e| {
                seq.iter()
                    .map(|o| e.log_density(o).unwrap())
                    .sum::<f64>()
                    .exp()
            })
            .collect();
        let want = (0.3 * per_state[0] + 0.7 * per_state[1]).ln();
        assert!((hmm.log_density_forward(&seq).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn factored_matches_direct_formula_and_differs_from_forward() {
        let em = vec![gauss1(-1.0, 0.5), gauss1(2.0, 1.0)];
        let hmm = GaussianHmm::new(vec![0.6, 0.4], vec![0.9, 0.1, 0.3, 0.7], em).unwrap();
        let seq = vec![vec![-0.8], vec![1.7], vec![0.1]];
        // direct: weights m, mᵀT, mᵀT²
        let n = |m: f64, v: f64, x: f64| {
            (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
        };
        let w1 = [0.6, 0.4];
        let w2 = [0.6 * 0.9 + 0.4 * 0.3, 0.6 * 0.1 + 0.4 * 0.7];
        let w3 = [w2[0] * 0.9 + w2[1] * 0.3, w2[0] * 0.1 + w2[1] * 0.7];
        let want: f64 = [(w1, -0.8), (w2, 1.7), (w3, 0.1)]
            .iter()
            .map(|(w, x)| (w[0] * n(-1.0, 0.5, *x) + w[1] * n(2.0, 1.0, *x)).ln())
            .sum();
        let got = hmm.log_density_factored(&seq).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - hmm.log_density_forward(&seq).unwrap()).abs() > 1e-3);
    }

    #[test]
    fn single_state_factored_equals_forward() {
        let hmm = GaussianHmm::new(vec![1.0], vec![1.0], vec![gauss1(0.5, 1.3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for n in 1..20 {
            let (seq, _) = hmm.sample(n, &mut rng);
            let a = hmm.log_density_forward(&seq).unwrap();
            let b = hmm.log_density_factored(&seq).unwrap();
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let hmm = GaussianHmm::new(vec![1.0], vec![1.0], vec![gauss1(0.0, 1.0)]).unwrap();
        assert!(matches!(
            hmm.log_density_forward(&[vec![0.0, 1.0]]),
            Err(Error::Shape(_))
        ));
        let none: [Vec<f64>; 0] = [];
        assert!(hmm.log_density_forward(&none).is_err());
    }

    #[test]
    fn shifting_density_examples() {
        let c = -0.5 * LN_2PI;
        assert!((shifting_hmm_log_density(&[1.0]) - c).abs() < 1e-15);
        assert!((shifting_hmm_log_density(&[1.0, 2.0, 3.0]) - 3.0 * c).abs() < 1e-14);
        assert!((shifting_hmm_log_density(&[0.0, 0.0]) - (c - 0.5 + c - 2.0)).abs() < 1e-14);
    }

    #[test]
    fn random_hmm_is_valid_and_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let hmm = GaussianHmm::random(10, 2, &mut rng).unwrap();
        let json = serde_json::to_string(&hmm).unwrap();
        let back: GaussianHmm = serde_json::from_str(&json).unwrap();
        assert_eq!(back, hmm);
    }
}
