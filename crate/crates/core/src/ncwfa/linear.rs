use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{kernels, DenseTensor};

/// Linear continuous WFA: `f(x_1..x_l) = (A ×₁ α ×₂ x_1)ᵀ (A ×₂ x_2) ⋯ (A ×₂ x_l) Ω`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearCwfa {
    pub alpha: Vec<f64>,
    /// `(k, d, k)`
    pub transition: DenseTensor,
    /// `(k, p)`
    pub omega: DenseTensor,
}

impl LinearCwfa {
    pub fn new(alpha: Vec<f64>, transition: DenseTensor, omega: DenseTensor) -> Result<Self> {
        let k = alpha.len();
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("alpha has non-finite entries".into()));
        }
        if transition.order() != 3 || transition.shape()[0] != k || transition.shape()[2] != k {
            return shape_err(format!(
                "transition has shape {:?} for {k} states",
                transition.shape()
            ));
        }
        if omega.order() != 2 || omega.shape()[0] != k {
            return shape_err(format!(
                "omega has shape {:?} for {k} states",
                omega.shape()
            ));
        }
        Ok(Self {
            alpha,
            transition,
            omega,
        })
    }

    pub fn states(&self) -> usize {
        self.alpha.len()
    }

    pub fn input_dim(&self) -> usize {
        self.transition.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.omega.shape()[1]
    }

    pub fn apply<S: AsRef<[f64]>>(&self, seq: &[S]) -> Result<Vec<f64>> {
        if seq.is_empty() {
            return Err(Error::Argument("sequence is empty".into()));
        }
        let (k, d, p) = (self.states(), self.input_dim(), self.output_dim());
        let mut h = self.alpha.clone();
        let mut next = vec![0.0; k];
        for (t, x) in seq.iter().enumerate() {
            let x = x.as_ref();
            if x.len() != d {
                return shape_err(format!(
                    "observation {t} has dimension {}, expected {d}",
                    x.len()
                ));
            }
            kernels::bilinear(self.transition.data(), &h, x, k, d, k, &mut next);
            std::mem::swap(&mut h, &mut next);
        }
        let mut out = vec![0.0; p];
        kernels::vec_mat(&h, self.omega.data(), k, p, &mut out);
        Ok(out)
    }
}

pub fn linear_cwfa_apply<S: AsRef<[f64]>>(cwfa: &LinearCwfa, seq: &[S]) -> Result<Vec<f64>> {
    cwfa.apply(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::mode_n_vector_product;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cwfa(seed: u64, k: usize, d: usize, p: usize) -> LinearCwfa {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shape: &[usize]| DenseTensor::from_fn(shape, |_| r.random_range(-1.0..1.0));
        let t = draw(&[k, d, k]);
        let o = draw(&[k, p]);
        let a = draw(&[k]).into_data();
        LinearCwfa::new(a, t, o).unwrap()
    }

    #[test]
    fn single_input_is_linear() {
        let k = 3;
        let t = DenseTensor::from_fn(&[k, 1, k], |ix| if ix[0] == ix[2] { 1.0 } else { 0.0 });
        let omega = DenseTensor::new(vec![k, 2], vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0]).unwrap();
        let cwfa = LinearCwfa::new(vec![0.5, 1.0, -2.0], t, omega).unwrap();
        let base = [0.5 - 1.0 - 6.0, 1.0 + 0.5];
        for c in [0.0, 1.0, -3.5, 7.25] {
            let got = linear_cwfa_apply(&cwfa, &[[c]]).unwrap();
            for (g, b) in got.iter().zip(&base) {
                assert!((g - c * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_matrix_chain() {
        let cwfa = random_cwfa(1, 4, 3, 2);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let seq: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let mut row = DMatrix::from_row_slice(1, 4, &cwfa.alpha);
        for x in &seq {
            let slice = mode_n_vector_product(&cwfa.transition, x, 1).unwrap();
            row *= slice.to_matrix().unwrap();
        }
        let want = row * cwfa.omega.to_matrix().unwrap();
        let got = DVector::from_vec(cwfa.apply(&seq).unwrap());
        assert!((want.transpose() - got).abs().max() < 1e-12);
    }

    #[test]
    fn multilinear_in_each_position() {
        let cwfa = random_cwfa(3, 3, 2, 1);
        let seq = vec![
            vec![0.3, -0.1],
            vec![1.0, 0.4],
            vec![-0.7, 0.2],
            vec![0.5, 0.5],
        ];
        let base = cwfa.apply(&seq).unwrap()[0];
        for t in 0..seq.len() {
            let mut scaled = seq.clone();
            scaled[t].iter_mut().for_each(|v| *v *= -2.5);
            let got = cwfa.apply(&scaled).unwrap()[0];
            assert!((got + 2.5 * base).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let cwfa = random_cwfa(4, 2, 2, 1);
        assert!(cwfa.apply(&[vec![1.0]]).is_err());
        assert!(cwfa.apply::<Vec<f64>>(&[]).is_err());
        assert!(LinearCwfa::new(vec![1.0], cwfa.transition.clone(), cwfa.omega.clone()).is_err());
    }
}
