use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use ncwfa::experiment::{
    evaluate, fit_model, generate_corpus, load_config, read_length_dir, run_experiment,
    LoadedModel, ModelKind, SequenceDensity,
};
use ncwfa::ghmm::GaussianHmm;
use ncwfa::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ncwfa",
    version,
    about = "RNADE-NCWFA density estimation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Spec,
    Sgd,
    Em,
}

impl From<Method> for ModelKind {
    fn from(m: Method) -> Self {
        match m {
            Method::Spec => ModelKind::Spec,
            Method::Sgd => ModelKind::Sgd,
            Method::Em => ModelKind::Em,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample the generator HMM and write the train and test files.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model on a directory of len_*.jsonl files.
    Train {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score model files against the ground truth on a test directory.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline. The config may also be a previous run's manifest.json.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(
        || p.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load_config(&config)?;
            let corpus = generate_corpus(&cfg, &out)?;
            info!(
                "wrote {} test lengths and {} training cells to {}",
                corpus.test.len(),
                corpus.train.len(),
                out.display()
            );
        }
        Command::Train {
            method,
            config,
            data,
            out,
        } => {
            let cfg = load_config(&config)?;
            let kind = ModelKind::from(method);
            let sets: Vec<_> = read_length_dir(&data)?.into_iter().collect();
            let seed = match kind {
                ModelKind::Spec => cfg.train.seed,
                ModelKind::Sgd => cfg.sgd_config().seed,
                ModelKind::Em => cfg.em.seed,
            };
            let fitted = fit_model(kind, &sets, &cfg, seed)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            fitted.model.save(&out)?;
            if let Some(h) = &fitted.history {
                h.write_csv(&out.with_extension("metrics.csv"))?;
            }
            if let Some(r) = &fitted.info.spectral {
                info!(
                    "rank {} (requested {}), numerical rank {}",
                    r.rank, r.requested_rank, r.numerical_rank
                );
            }
            info!("saved {}", out.display());
        }
        Command::Eval {
            models,
            test,
            truth,
            out,
        } => {
            let truth: GaussianHmm = match LoadedModel::load(&truth)? {
                LoadedModel::Hmm(h) => h,
                LoadedModel::Ncwfa(_) => {
                    return Err(Error::Format(format!(
                        "{} is not a Gaussian HMM",
                        truth.display()
                    )))
                }
            };
            let test = read_length_dir(&test)?;
            let loaded = models
                .iter()
                .map(|p| Ok((stem(p), LoadedModel::load(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let named: Vec<(String, &dyn SequenceDensity)> = loaded
                .iter()
                .map(|(n, m)| (n.clone(), m as &dyn SequenceDensity))
                .collect();
            let report = evaluate(&named, &test, &truth)?;
            report.write_csv(&out)?;
            let flagged = report.rows.iter().filter(|r| r.is_flagged()).count();
            if flagged > 0 {
                log::warn!("{flagged} rows have non-finite densities");
            }
        }
        Command::Experiment { config, out } => {
            let cfg = load_config(&config)?;
            let (_, manifest) = run_experiment(&cfg, &out)?;
            info!(
                "{} rows in {:.1}s, trend {}",
                manifest.report_rows, manifest.wall_clock_seconds, manifest.trend.flag
            );
            if !manifest.failures.is_empty() {
                return Err(Error::Numerical(format!(
                    "{} fits failed, see {}",
                    manifest.failures.len(),
                    out.join("manifest.json").display()
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ncwfa: error: {e}");
            ExitCode::FAILURE
        }
    }
}
