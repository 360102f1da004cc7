use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKind};
use super::corpus::{cell_dir, generate_corpus, TestSet, TrainSplit};
use super::derive_seed;
use super::eval::{
    score_against, truth_scores, EvalReport, EvalRow, LengthScore, LoadedModel, GROUND_TRUTH,
};
use crate::error::{Error, Result};
use crate::ghmm::{em_fit_traced, EmConfig};
use crate::spectral::{spectral_learn, SpectralReport};
use crate::training::{fit_sgd, TrainConfig, TrainHistory};
use crate::Sequence;

/// Training size of the cell whose spec-vs-sgd comparison is flagged.
pub const TREND_SIZE: usize = 100;
pub const TREND_NOISE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub seed: u64,
    pub size: usize,
    pub noise: f64,
}

/// Training facts kept in the manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub epochs: Option<usize>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: Option<bool>,
    pub spectral: Option<SpectralReport>,
    pub em_log_likelihood: Option<f64>,
    pub em_iterations: Option<usize>,
}

impl FitInfo {
    fn from_history(h: &TrainHistory) -> Self {
        Self {
            epochs: Some(h.records.len() - 1),
            best_epoch: Some(h.best_epoch),
            best_val_loss: Some(h.best_val_loss()),
            stopped_early: Some(h.stopped_early),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fitted {
    pub model: LoadedModel,
    pub info: FitInfo,
    pub history: Option<TrainHistory>,
}

/// Fits one model kind. `sets` holds `(length, sequences)`; the Hankel model
/// needs lengths `L, 2L, 2L+1`, the other two pool every set. `seed` replaces
/// the configured initialization seed.
pub fn fit_model(
    kind: ModelKind,
    sets: &[(usize, Vec<Sequence>)],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Fitted> {
    let pooled = || -> Vec<Sequence> { sets.iter().flat_map(|(_, s)| s.iter().cloned()).collect() };
    match kind {
        ModelKind::Spec => {
            let train = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let find = |l: usize| {
                sets.iter()
                    .find(|(n, _)| *n == l)
                    .map(|(_, s)| s.as_slice())
                    .ok_or_else(|| Error::Argument(format!("no training sequences of length {l}")))
            };
            let [a, b, c] = train.hankel_lengths();
            let fit = spectral_learn([find(a)?, find(b)?, find(c)?], &train)?;
            let mut info = FitInfo::from_history(&fit.history);
            info.spectral = Some(fit.report);
            Ok(Fitted {
                model: LoadedModel::Ncwfa(fit.model),
                info,
                history: Some(fit.history),
            })
        }
        ModelKind::Sgd => {
            let train = TrainConfig {
                seed,
                ..cfg.sgd_config().clone()
            };
            let fit = fit_sgd(&pooled(), &train)?;
            Ok(Fitted {
                model: LoadedModel::Ncwfa(fit.model),
                info: FitInfo::from_history(&fit.history),
                history: Some(fit.history),
            })
        }
        ModelKind::Em => {
            let em = EmConfig {
                seed,
                ..cfg.em.clone()
            };
            let fit = em_fit_traced(&pooled(), cfg.train.states, &em)?;
            let info = FitInfo {
                em_log_likelihood: Some(fit.log_likelihood),
                em_iterations: Some(fit.traces[fit.best_restart].len() - 1),
                ..FitInfo::default()
            };
            Ok(Fitted {
                model: LoadedModel::Hmm(fit.hmm),
                info,
                history: None,
            })
        }
    }
}

/// One fitted (or failed) model of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub cell: CellKey,
    pub model: String,
    pub seconds: f64,
    /// Model file relative to the output directory.
    pub path: Option<String>,
    pub info: Option<FitInfo>,
    pub error: Option<String>,
}

/// Spec against sgd mean log-likelihood (averaged over seeds) at every test
/// length of one cell. `flag` is `PASS`, `TREND-MISS` or `NOT-EVALUATED`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub train_size: usize,
    pub noise_std: f64,
    pub test_lengths: Vec<usize>,
    pub spec: Vec<f64>,
    pub sgd: Vec<f64>,
    pub flag: String,
}

impl Trend {
    fn compute(report: &EvalReport, lengths: &[usize]) -> Self {
        let at = |model: &str, length: usize| {
            let v: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| {
                    r.model == model
                        && r.train_size == Some(TREND_SIZE)
                        && r.noise_std == Some(TREND_NOISE)
                        && r.test_length == length
                })
                .map(|r| r.mean_log_likelihood)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let spec: Option<Vec<f64>> = lengths.iter().map(|&n| at("spec", n)).collect();
        let sgd: Option<Vec<f64>> = lengths.iter().map(|&n| at("sgd", n)).collect();
        let flag = match (&spec, &sgd) {
            (Some(a), Some(b)) if a.iter().zip(b).all(|(x, y)| x >= y) => "PASS",
            (Some(_), Some(_)) => "TREND-MISS",
            _ => "NOT-EVALUATED",
        };
        Self {
            train_size: TREND_SIZE,
            noise_std: TREND_NOISE,
            test_lengths: lengths.to_vec(),
            spec: spec.unwrap_or_default(),
            sgd: sgd.unwrap_or_default(),
            flag: flag.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub threads: usize,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub report_rows: usize,
    /// Rows with a non-finite density.
    pub flagged_rows: usize,
    pub models: Vec<ModelRecord>,
    pub failures: Vec<String>,
    pub trend: Trend,
}

/// Worker count: `NCWFA_THREADS` if set, else the number of CPUs.
pub fn thread_count() -> Result<usize> {
    match std::env::var("NCWFA_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "NCWFA_THREADS must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

struct Job<'a> {
    split: &'a TrainSplit,
    kind: ModelKind,
}

impl Job<'_> {
    fn key(&self) -> CellKey {
        CellKey {
            seed: self.split.seed,
            size: self.split.size,
            noise: self.split.noise,
        }
    }

    fn init_seed(&self, cfg: &ExperimentConfig) -> u64 {
        let base = match self.kind {
            ModelKind::Spec => cfg.train.seed,
            ModelKind::Sgd => cfg.sgd_config().seed,
            ModelKind::Em => cfg.em.seed,
        };
        let s = self.split;
        derive_seed(
            base,
            &[s.seed, s.size as u64, s.noise.to_bits(), self.kind.tag()],
        )
    }

    fn run(
        &self,
        cfg: &ExperimentConfig,
        test: &TestSet,
        truth_lls: &BTreeMap<usize, Vec<f64>>,
        out: &Path,
    ) -> (ModelRecord, Option<Vec<LengthScore>>) {
        let start = Instant::now();
        let name = self.kind.name();
        let rel = cell_dir("models", self.split.seed, self.split.size, self.split.noise)
            .join(format!("{name}.json"));
        let attempt = || -> Result<(FitInfo, Vec<LengthScore>)> {
            let fitted = fit_model(self.kind, &self.split.sets, cfg, self.init_seed(cfg))?;
            let path = out.join(&rel);
            std::fs::create_dir_all(path.parent().expect("file has a parent"))?;
            fitted.model.save(&path)?;
            if let Some(h) = &fitted.history {
                h.write_csv(&path.with_file_name(format!("{name}_metrics.csv")))?;
            }
            let scores = score_against(&fitted.model, test, truth_lls)?;
            Ok((fitted.info, scores))
        };
        let result = attempt();
        let seconds = start.elapsed().as_secs_f64();
        let key = self.key();
        match result {
            Ok((info, scores)) => {
                info!(
                    "{name} seed {} size {} noise {}: {seconds:.1}s",
                    key.seed, key.size, key.noise
                );
                let record = ModelRecord {
                    cell: key,
                    model: name.to_string(),
                    seconds,
                    path: Some(rel.to_string_lossy().into_owned()),
                    info: Some(info),
                    error: None,
                };
                (record, Some(scores))
            }
            Err(e) => {
                warn!(
                    "{name} seed {} size {} noise {} failed: {e}",
                    key.seed, key.size, key.noise
                );
                let record = ModelRecord {
                    cell: key,
                    model: name.to_string(),
                    seconds,
                    path: None,
                    info: None,
                    error: Some(e.to_string()),
                };
                (record, None)
            }
        }
    }
}

/// Generates the corpus under `out/data`, fits every model of every
/// `(seed, size, noise)` cell, and writes `models/`, `report.csv`,
/// `summary.csv` and `manifest.json` under `out`.
///
/// A model that fails to fit is recorded in the manifest and its rows are
/// left out; the run continues. Rows are ordered ground truth first, then
/// cells in config order (seed, size, noise) with models in config order and
/// test lengths ascending.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<(EvalReport, Manifest)> {
    cfg.validate()?;
    let start = Instant::now();
    let started_unix_seconds = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let threads = thread_count()?;
    std::fs::create_dir_all(out)?;
    let corpus = generate_corpus(cfg, &out.join("data"))?;
    let truth_lls = truth_scores(&corpus.truth, &corpus.test)?;

    let jobs: Vec<Job> = corpus
        .train
        .iter()
        .flat_map(|split| cfg.models.iter().map(move |&kind| Job { split, kind }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Resource(format!("cannot start worker threads: {e}")))?;
    info!("{} fits on {threads} threads", jobs.len());
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|j| j.run(cfg, &corpus.test, &truth_lls, out))
            .collect()
    });

    let mut report = EvalReport::default();
    for s in score_against(&corpus.truth, &corpus.test, &truth_lls)? {
        report.rows.push(EvalRow::new(GROUND_TRUTH, None, &s));
    }
    let mut models = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (record, scores) in results {
        let c = record.cell;
        if let Some(scores) = scores {
            for s in &scores {
                report.rows.push(EvalRow::new(
                    &record.model,
                    Some((c.seed, c.size, c.noise)),
                    s,
                ));
            }
        }
        if let Some(e) = &record.error {
            failures.push(format!(
                "{} seed {} size {} noise {}: {e}",
                record.model, c.seed, c.size, c.noise
            ));
        }
        models.push(record);
    }
    report.fill_seed_std();
    report.write_csv(&out.join("report.csv"))?;
    report.write_summary_csv(&out.join("summary.csv"))?;

    let manifest = Manifest {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads,
        started_unix_seconds,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        report_rows: report.rows.len(),
        flagged_rows: report.rows.iter().filter(|r| r.is_flagged()).count(),
        models,
        failures,
        trend: Trend::compute(&report, &cfg.test_lengths),
    };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok((report, manifest))
}
