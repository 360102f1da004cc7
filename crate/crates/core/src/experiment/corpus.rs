//! Dataset files: one JSON header line `{"d", "length", "seed"}` followed
//! by one sequence per line, each a list of length-`d` lists of floats.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::derive_seed;
use crate::error::{Error, Result};
use crate::ghmm::GaussianHmm;
use crate::Sequence;

const TEST_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHeader {
    pub d: usize,
    pub length: usize,
    pub seed: u64,
}

/// Test sequences keyed by length.
pub type TestSet = BTreeMap<usize, Vec<Sequence>>;

/// Training data of one `(seed, size, noise)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSplit {
    pub seed: u64,
    pub size: usize,
    pub noise: f64,
    /// `(length, sequences)` in increasing length.
    pub sets: Vec<(usize, Vec<Sequence>)>,
}

impl TrainSplit {
    /// Directory of this split relative to the corpus root.
    pub fn rel_dir(&self) -> PathBuf {
        cell_dir("train", self.seed, self.size, self.noise)
    }

    /// All training sequences, shortest length first.
    pub fn pooled(&self) -> Vec<Sequence> {
        self.sets
            .iter()
            .flat_map(|(_, s)| s.iter().cloned())
            .collect()
    }

    pub fn set(&self, length: usize) -> Option<&[Sequence]> {
        self.sets
            .iter()
            .find(|(l, _)| *l == length)
            .map(|(_, s)| s.as_slice())
    }
}

pub(crate) fn cell_dir(root: &str, seed: u64, size: usize, noise: f64) -> PathBuf {
    Path::new(root)
        .join(format!("seed_{seed}"))
        .join(format!("n_{size}"))
        .join(format!("noise_{noise}"))
}

fn len_file(length: usize) -> String {
    format!("len_{length}.jsonl")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub truth: GaussianHmm,
    pub test: TestSet,
    /// Cells in config order: seeds, then sizes, then noise levels.
    pub train: Vec<TrainSplit>,
}

/// Adds i.i.d. `N(0, std²)` noise to every coordinate. A zero `std` returns
/// the input unchanged.
pub fn add_noise<R: Rng + ?Sized>(
    clean: &[Sequence],
    std: f64,
    rng: &mut R,
) -> Result<Vec<Sequence>> {
    if std == 0.0 {
        return Ok(clean.to_vec());
    }
    let normal =
        Normal::new(0.0, std).map_err(|e| Error::Argument(format!("noise std {std}: {e}")))?;
    Ok(clean
        .iter()
        .map(|s| {
            s.iter()
                .map(|x| x.iter().map(|v| v + normal.sample(rng)).collect())
                .collect()
        })
        .collect())
}

impl Corpus {
    /// Samples the generator HMM. Every file comes from its own seeded
    /// stream, so the clean samples do not depend on the noise levels and a
    /// size-`n` split is the first `n` sequences of any larger one.
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let base = cfg.hmm.seed;
        let truth = GaussianHmm::random(
            cfg.hmm.states,
            cfg.hmm.dim,
            &mut ChaCha8Rng::seed_from_u64(base),
        )?;
        let sample = |n: usize, length: usize, seed: u64| -> Vec<Sequence> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| truth.sample(length, &mut rng).0).collect()
        };
        let test = cfg
            .test_lengths
            .iter()
            .map(|&n| {
                (
                    n,
                    sample(
                        cfg.test_size,
                        n,
                        derive_seed(base, &[TEST_STREAM, n as u64]),
                    ),
                )
            })
            .collect();

        let mut lengths = cfg.train.hankel_lengths().to_vec();
        lengths.dedup();
        let max_size = *cfg.train_sizes.iter().max().expect("validated nonempty");
        let mut train = Vec::new();
        for &seed in &cfg.seeds {
            let clean: Vec<Vec<Sequence>> = lengths
                .iter()
                .map(|&l| {
                    sample(
                        max_size,
                        l,
                        derive_seed(base, &[TRAIN_STREAM, seed, l as u64]),
                    )
                })
                .collect();
            for &size in &cfg.train_sizes {
                for &noise in &cfg.noise_stds {
                    let sets = lengths
                        .iter()
                        .zip(&clean)
                        .map(|(&l, c)| {
                            let key = [NOISE_STREAM, seed, size as u64, l as u64, noise.to_bits()];
                            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, &key));
                            Ok((l, add_noise(&c[..size], noise, &mut rng)?))
                        })
                        .collect::<Result<_>>()?;
                    train.push(TrainSplit {
                        seed,
                        size,
                        noise,
                        sets,
                    });
                }
            }
        }
        Ok(Self { truth, test, train })
    }

    pub fn split(&self, seed: u64, size: usize, noise: f64) -> Option<&TrainSplit> {
        self.train
            .iter()
            .find(|t| t.seed == seed && t.size == size && t.noise.to_bits() == noise.to_bits())
    }

    /// Writes `truth.json`, `test/len_{n}.jsonl` and
    /// `train/seed_{s}/n_{size}/noise_{std}/len_{l}.jsonl` under `dir`.
    pub fn write(&self, dir: &Path, hmm_seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("truth.json"),
            serde_json::to_string_pretty(&self.truth)?,
        )?;
        let d = self.truth.dim();
        for (&length, seqs) in &self.test {
            let header = FileHeader {
                d,
                length,
                seed: hmm_seed,
            };
            write_sequences(&dir.join("test").join(len_file(length)), &header, seqs)?;
        }
        for split in &self.train {
            for (length, seqs) in &split.sets {
                let header = FileHeader {
                    d,
                    length: *length,
                    seed: split.seed,
                };
                let path = dir.join(split.rel_dir()).join(len_file(*length));
                write_sequences(&path, &header, seqs)?;
            }
        }
        Ok(())
    }
}

/// Samples the corpus and writes it under `dir`.
pub fn generate_corpus(cfg: &ExperimentConfig, dir: &Path) -> Result<Corpus> {
    let corpus = Corpus::generate(cfg)?;
    corpus.write(dir, cfg.hmm.seed)?;
    Ok(corpus)
}

pub fn write_sequences(path: &Path, header: &FileHeader, seqs: &[Sequence]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for s in seqs {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one dataset file and checks every sequence against its header.
pub fn read_sequences(path: &Path) -> Result<(FileHeader, Vec<Sequence>)> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let fmt = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let first = lines
        .next()
        .ok_or_else(|| fmt("missing header line".into()))??;
    let header: FileHeader =
        serde_json::from_str(&first).map_err(|e| fmt(format!("bad header: {e}")))?;
    let mut seqs = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sequence =
            serde_json::from_str(&line).map_err(|e| fmt(format!("line {}: {e}", i + 2)))?;
        if s.len() != header.length || s.iter().any(|x| x.len() != header.d) {
            return Err(fmt(format!(
                "line {} does not match length {} and dimension {}",
                i + 2,
                header.length,
                header.d
            )));
        }
        seqs.push(s);
    }
    Ok((header, seqs))
}

/// Reads every `len_*.jsonl` file of a directory, keyed by length.
pub fn read_length_dir(dir: &Path) -> Result<BTreeMap<usize, Vec<Sequence>>> {
    let mut out = BTreeMap::new();
    let mut dim = None;
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if !(name.starts_with("len_") && name.ends_with(".jsonl")) {
            continue;
        }
        let (header, seqs) = read_sequences(&path)?;
        if *dim.get_or_insert(header.d) != header.d {
            return Err(Error::Format(format!(
                "{} mixes observation dimensions",
                dir.display()
            )));
        }
        if out.insert(header.length, seqs).is_some() {
            return Err(Error::Format(format!(
                "{} holds two files of length {}",
                dir.display(),
                header.length
            )));
        }
    }
    if out.is_empty() {
        return Err(Error::Format(format!(
            "{} contains no len_*.jsonl files",
            dir.display()
        )));
    }
    Ok(out)
}
