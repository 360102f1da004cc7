use serde::{Deserialize, Serialize};

use super::{kernels, DenseTensor};
use crate::error::{shape_err, Error, Result};

/// Default cap on the number of entries `to_dense` will materialize.
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

/// A fixed-rank tensor train.
///
/// Mode cores are stored as `(d, k)` for the first core and `(k, d, k)` for the
/// rest. An optional `(k, p)` output core closes the train. A train with no
/// mode cores contracts to its left boundary vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtTrain {
    left: Option<Vec<f64>>,
    cores: Vec<DenseTensor>,
    output: Option<DenseTensor>,
    rank: usize,
    mode_dim: usize,
}

impl TtTrain {
    pub fn new(cores: Vec<DenseTensor>, output: Option<DenseTensor>) -> Result<Self> {
        let Some(first) = cores.first() else {
            return shape_err(
                "a train without mode cores needs a left boundary; use TtTrain::boundary",
            );
        };
        let [mode_dim, rank] = first.shape()[..] else {
            return shape_err(format!(
                "first core must be (d, k), got {:?}",
                first.shape()
            ));
        };
        for (i, core) in cores.iter().enumerate().skip(1) {
            if core.shape() != [rank, mode_dim, rank] {
                return shape_err(format!(
                    "core {i} has shape {:?}, expected [{rank}, {mode_dim}, {rank}]",
                    core.shape()
                ));
            }
        }
        check_output(&output, rank)?;
        Ok(Self {
            left: None,
            cores,
            output,
            rank,
            mode_dim,
        })
    }

    /// A train with no mode cores, carrying only a left boundary vector.
    pub fn boundary(left: Vec<f64>, mode_dim: usize, output: Option<DenseTensor>) -> Result<Self> {
        let rank = left.len();
        if rank == 0 {
            return shape_err("left boundary vector is empty");
        }
        check_output(&output, rank)?;
        Ok(Self {
            left: Some(left),
            cores: Vec::new(),
            output,
            rank,
            mode_dim,
        })
    }

    pub fn with_left(mut self, left: Vec<f64>) -> Result<Self> {
        if left.len() != self.rank {
            return shape_err(format!(
                "left boundary has length {}, train rank is {}",
                left.len(),
                self.rank
            ));
        }
        self.left = Some(left);
        Ok(self)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn mode_dim(&self) -> usize {
        self.mode_dim
    }

    /// Number of mode cores.
    pub fn len(&self) -> usize {
        self.cores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cores.is_empty()
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn output(&self) -> Option<&DenseTensor> {
        self.output.as_ref()
    }

    pub fn left(&self) -> Option<&[f64]> {
        self.left.as_deref()
    }

    /// Trailing dimension of the train: `p` with an output core, `k` otherwise.
    pub fn out_dim(&self) -> usize {
        self.output.as_ref().map_or(self.rank, |o| o.shape()[1])
    }

    /// Contracts every mode core with the matching feature vector without
    /// materializing the dense tensor.
    pub fn contract_features<F: AsRef<[f64]>>(&self, features: &[F]) -> Result<Vec<f64>> {
        if features.len() != self.cores.len() {
            return shape_err(format!(
                "{} feature vectors supplied for a train with {} mode cores",
                features.len(),
                self.cores.len()
            ));
        }
        for (i, f) in features.iter().enumerate() {
            if f.as_ref().len() != self.mode_dim {
                return shape_err(format!(
                    "feature {i} has length {}, mode dimension is {}",
                    f.as_ref().len(),
                    self.mode_dim
                ));
            }
        }
        let k = self.rank;
        let mut state = match (self.cores.first(), &self.left) {
            (Some(first), _) => {
                let mut s = vec![0.0; k];
                kernels::vec_mat(features[0].as_ref(), first.data(), self.mode_dim, k, &mut s);
                s
            }
            (None, Some(left)) => left.clone(),
            (None, None) => return shape_err("empty train has no left boundary"),
        };
        let mut next = vec![0.0; k];
        for (core, f) in self.cores.iter().zip(features).skip(1) {
            kernels::bilinear(
                core.data(),
                &state,
                f.as_ref(),
                k,
                self.mode_dim,
                k,
                &mut next,
            );
            std::mem::swap(&mut state, &mut next);
        }
        Ok(self.apply_output(state))
    }

    fn apply_output(&self, state: Vec<f64>) -> Vec<f64> {
        match &self.output {
            Some(o) => {
                let p = o.shape()[1];
                let mut out = vec![0.0; p];
                kernels::vec_mat(&state, o.data(), self.rank, p, &mut out);
                out
            }
            None => state,
        }
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.to_dense_capped(DEFAULT_DENSE_CAP)
    }

    /// Expands the train into a dense tensor of shape `(d, …, d, out_dim)`.
    pub fn to_dense_capped(&self, cap: usize) -> Result<DenseTensor> {
        let d = self.mode_dim;
        let n_modes = self.cores.len();
        let total = d
            .checked_pow(n_modes as u32)
            .and_then(|r| r.checked_mul(self.out_dim().max(self.rank)))
            .ok_or_else(|| Error::Resource("dense expansion size overflows usize".into()))?;
        if total > cap {
            return Err(Error::Resource(format!(
                "dense expansion needs {total} entries, cap is {cap}"
            )));
        }
        let k = self.rank;
        // rows x k matrix of partial products, row-major
        let (mut rows, mut acc) = match (self.cores.first(), &self.left) {
            (Some(first), _) => (d, first.data().to_vec()),
            (None, Some(left)) => (1, left.clone()),
            (None, None) => return shape_err("empty train has no left boundary"),
        };
        for core in self.cores.iter().skip(1) {
            let mut next = vec![0.0; rows * d * k];
            let g = core.data();
            for r in 0..rows {
                let h = &acc[r * k..(r + 1) * k];
                for j in 0..d {
                    let dst = &mut next[(r * d + j) * k..(r * d + j + 1) * k];
                    for (a, &ha) in h.iter().enumerate() {
                        let src = &g[(a * d + j) * k..(a * d + j + 1) * k];
                        for (o, &x) in dst.iter_mut().zip(src) {
                            *o += ha * x;
                        }
                    }
                }
            }
            rows *= d;
            acc = next;
        }
        let (data, last) = match &self.output {
            Some(o) => {
                let p = o.shape()[1];
                let mut out = vec![0.0; rows * p];
                for r in 0..rows {
                    kernels::vec_mat(
                        &acc[r * k..(r + 1) * k],
                        o.data(),
                        k,
                        p,
                        &mut out[r * p..(r + 1) * p],
                    );
                }
                (out, p)
            }
            None => (acc, k),
        };
        let mut shape = vec![d; n_modes];
        shape.push(last);
        Ok(DenseTensor::from_parts(shape, data))
    }
}

fn check_output(output: &Option<DenseTensor>, rank: usize) -> Result<()> {
    if let Some(o) = output {
        if o.order() != 2 || o.shape()[0] != rank {
            return shape_err(format!(
                "output core must be ({rank}, p), got {:?}",
                o.shape()
            ));
        }
    }
    Ok(())
}
