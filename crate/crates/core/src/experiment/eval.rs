use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::TestSet;
use crate::error::{Error, Result};
use crate::ghmm::GaussianHmm;
use crate::ncwfa::RnadeNcwfa;

/// Model name of the generator's own rows.
pub const GROUND_TRUTH: &str = "ground_truth";

/// Anything that assigns a log-density to a whole sequence.
pub trait SequenceDensity: Sync {
    fn log_density(&self, seq: &[Vec<f64>]) -> Result<f64>;
}

impl SequenceDensity for RnadeNcwfa {
    fn log_density(&self, seq: &[Vec<f64>]) -> Result<f64> {
        self.sequence_log_density(seq)
    }
}

impl SequenceDensity for GaussianHmm {
    fn log_density(&self, seq: &[Vec<f64>]) -> Result<f64> {
        self.log_density_forward(seq)
    }
}

/// A model file of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadedModel {
    Ncwfa(RnadeNcwfa),
    Hmm(GaussianHmm),
}

impl LoadedModel {
    pub fn to_json(&self) -> Result<String> {
        match self {
            LoadedModel::Ncwfa(m) => m.to_json(),
            LoadedModel::Hmm(h) => Ok(serde_json::to_string(h)?),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model_err = match RnadeNcwfa::from_json(text) {
            Ok(m) => return Ok(LoadedModel::Ncwfa(m)),
            Err(e) => e,
        };
        match serde_json::from_str::<GaussianHmm>(text) {
            Ok(h) => Ok(LoadedModel::Hmm(h)),
            Err(hmm_err) => Err(Error::Format(format!(
                "neither an automaton ({model_err}) nor a Gaussian HMM ({hmm_err})"
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

impl SequenceDensity for LoadedModel {
    fn log_density(&self, seq: &[Vec<f64>]) -> Result<f64> {
        match self {
            LoadedModel::Ncwfa(m) => m.log_density(seq),
            LoadedModel::Hmm(h) => h.log_density(seq),
        }
    }
}

/// Scores of one model at one test length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LengthScore {
    pub length: usize,
    pub mean_ll: f64,
    /// Mean over sequences of model minus ground-truth log-density.
    pub mean_ratio: f64,
    /// Sequences whose model log-density is not finite. They stay in the means.
    pub nonfinite: usize,
}

/// Ground-truth log-densities of every test sequence.
pub(crate) fn truth_scores(
    truth: &GaussianHmm,
    test: &TestSet,
) -> Result<BTreeMap<usize, Vec<f64>>> {
    test.iter()
        .map(|(&n, seqs)| {
            let lls = seqs
                .iter()
                .map(|s| truth.log_density_forward(s))
                .collect::<Result<Vec<_>>>()?;
            Ok((n, lls))
        })
        .collect()
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len() as f64;
    v.sum::<f64>() / n
}

pub(crate) fn score_against(
    model: &dyn SequenceDensity,
    test: &TestSet,
    truth_lls: &BTreeMap<usize, Vec<f64>>,
) -> Result<Vec<LengthScore>> {
    let mut out = Vec::with_capacity(test.len());
    for (&length, seqs) in test {
        if seqs.is_empty() {
            return Err(Error::Argument(format!(
                "test set of length {length} is empty"
            )));
        }
        let truth = &truth_lls[&length];
        let lls = seqs
            .iter()
            .map(|s| model.log_density(s))
            .collect::<Result<Vec<_>>>()?;
        out.push(LengthScore {
            length,
            mean_ll: mean(lls.iter().copied()),
            mean_ratio: mean(lls.iter().zip(truth).map(|(a, b)| a - b)),
            nonfinite: lls.iter().filter(|v| !v.is_finite()).count(),
        });
    }
    Ok(out)
}

/// Per-length mean log-density and mean log-ratio against `truth`.
pub fn score_model(
    model: &dyn SequenceDensity,
    test: &TestSet,
    truth: &GaussianHmm,
) -> Result<Vec<LengthScore>> {
    score_against(model, test, &truth_scores(truth, test)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub seed: Option<u64>,
    pub train_size: Option<usize>,
    pub noise_std: Option<f64>,
    pub test_length: usize,
    pub mean_log_likelihood: f64,
    /// Population standard deviation of `mean_log_likelihood` over the seeds
    /// of the same model, size, noise and length.
    pub std_over_seeds: f64,
    pub mean_log_ratio: f64,
    pub nonfinite: usize,
}

impl EvalRow {
    pub(crate) fn new(model: &str, cell: Option<(u64, usize, f64)>, s: &LengthScore) -> Self {
        Self {
            model: model.to_string(),
            seed: cell.map(|c| c.0),
            train_size: cell.map(|c| c.1),
            noise_std: cell.map(|c| c.2),
            test_length: s.length,
            mean_log_likelihood: s.mean_ll,
            std_over_seeds: 0.0,
            mean_log_ratio: s.mean_ratio,
            nonfinite: s.nonfinite,
        }
    }

    fn group(&self) -> (String, Option<usize>, Option<u64>, usize) {
        (
            self.model.clone(),
            self.train_size,
            self.noise_std.map(f64::to_bits),
            self.test_length,
        )
    }

    pub fn is_flagged(&self) -> bool {
        self.nonfinite > 0
            || !self.mean_log_likelihood.is_finite()
            || !self.mean_log_ratio.is_finite()
    }
}

/// A row of the seed-aggregated table, `mean (std)` over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub train_size: Option<usize>,
    pub noise_std: Option<f64>,
    pub test_length: usize,
    pub seeds: usize,
    pub log_likelihood: String,
    pub log_ratio: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = mean(v.iter().copied());
    let var = mean(v.iter().map(|x| (x - m) * (x - m)));
    (m, var.sqrt())
}

impl EvalReport {
    /// Fills `std_over_seeds` from the rows sharing model, size, noise and length.
    pub fn fill_seed_std(&mut self) {
        let mut groups: BTreeMap<_, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry(r.group())
                .or_default()
                .push(r.mean_log_likelihood);
        }
        for r in &mut self.rows {
            r.std_over_seeds = mean_std(&groups[&r.group()]).1;
        }
    }

    /// Rows aggregated over seeds, in order of first appearance.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut order = Vec::new();
        let mut groups: BTreeMap<_, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in &self.rows {
            let g = groups.entry(r.group()).or_insert_with(|| {
                order.push(r);
                Default::default()
            });
            g.0.push(r.mean_log_likelihood);
            g.1.push(r.mean_log_ratio);
        }
        order
            .into_iter()
            .map(|r| {
                let (lls, ratios) = &groups[&r.group()];
                let (m, s) = mean_std(lls);
                let (rm, rs) = mean_std(ratios);
                SummaryRow {
                    model: r.model.clone(),
                    train_size: r.train_size,
                    noise_std: r.noise_std,
                    test_length: r.test_length,
                    seeds: lls.len(),
                    log_likelihood: format!("{m:.2} ({s:.2})"),
                    log_ratio: format!("{rm:.2} ({rs:.2})"),
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.summary())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { rows })
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluates named models on a test set grouped by length. The report starts
/// with the ground truth scored against itself; its ratio is exactly zero.
/// Rows carry no seed, size or noise.
pub fn evaluate(
    models: &[(String, &dyn SequenceDensity)],
    test: &TestSet,
    truth: &GaussianHmm,
) -> Result<EvalReport> {
    let truth_lls = truth_scores(truth, test)?;
    let mut rows = Vec::new();
    let named = std::iter::once((GROUND_TRUTH, truth as &dyn SequenceDensity))
        .chain(models.iter().map(|(n, m)| (n.as_str(), *m)));
    for (name, model) in named {
        for s in score_against(model, test, &truth_lls)? {
            rows.push(EvalRow::new(name, None, &s));
        }
    }
    Ok(EvalReport { rows })
}
