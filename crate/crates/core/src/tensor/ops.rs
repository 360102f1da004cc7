use nalgebra::DMatrix;

use super::DenseTensor;
use crate::error::{shape_err, Error, Result};

/// Splits a shape around `mode` into (outer, mode size, inner) element counts.
fn split_at_mode(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let outer = shape[..mode].iter().product();
    let inner = shape[mode + 1..].iter().product();
    (outer, shape[mode], inner)
}

fn check_mode(t: &DenseTensor, mode: usize) -> Result<()> {
    if mode >= t.order() {
        return shape_err(format!(
            "mode {mode} out of range for tensor of order {}",
            t.order()
        ));
    }
    Ok(())
}

/// Mode-`mode` matrix product `T ×ₙ M` (modes are 0-based).
///
/// The result replaces dimension `mode` by `M.nrows()` and satisfies
/// `unfold_mode(Y, n) == M · unfold_mode(T, n)`.
pub fn mode_n_product(t: &DenseTensor, m: &DMatrix<f64>, mode: usize) -> Result<DenseTensor> {
    check_mode(t, mode)?;
    let (outer, dn, inner) = split_at_mode(t.shape(), mode);
    if m.ncols() != dn {
        return shape_err(format!(
            "mode {mode}: matrix has {} columns but the tensor dimension is {dn}",
            m.ncols()
        ));
    }
    let rows = m.nrows();
    let src = t.data();
    let mut out = vec![0.0; outer * rows * inner];
    for o in 0..outer {
        for r in 0..rows {
            let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
            for j in 0..dn {
                let coef = m[(r, j)];
                let s = &src[(o * dn + j) * inner..(o * dn + j + 1) * inner];
                for (d, &x) in dst.iter_mut().zip(s) {
                    *d += coef * x;
                }
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape[mode] = rows;
    Ok(DenseTensor::from_parts(shape, out))
}

/// Mode-`mode` vector product `T •ₙ v`; the contracted mode is removed.
pub fn mode_n_vector_product(t: &DenseTensor, v: &[f64], mode: usize) -> Result<DenseTensor> {
    let row = DMatrix::from_row_slice(1, v.len(), v);
    let y = mode_n_product(t, &row, mode)?;
    let mut shape = y.shape().to_vec();
    shape.remove(mode);
    Ok(DenseTensor::from_parts(shape, y.into_data()))
}

/// Classical mode-`mode` matricization: the mode fibers become columns.
///
/// Columns are ordered by the remaining indices in row-major order.
pub fn unfold_mode(t: &DenseTensor, mode: usize) -> Result<DMatrix<f64>> {
    check_mode(t, mode)?;
    let (outer, dn, inner) = split_at_mode(t.shape(), mode);
    let src = t.data();
    Ok(DMatrix::from_fn(dn, outer * inner, |j, col| {
        let (o, i) = (col / inner, col % inner);
        src[(o * dn + j) * inner + i]
    }))
}

/// Group sizes for a reshaping of a tensor into a lower-order tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping(Vec<usize>);

impl Grouping {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Shape(format!(
                "grouping {sizes:?} must be a nonempty list of positive sizes"
            )));
        }
        Ok(Self(sizes))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    /// The shape the grouping produces when applied to `shape`.
    pub fn grouped_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        if self.order() != shape.len() {
            return shape_err(format!(
                "grouping {:?} covers {} modes but the tensor has order {}",
                self.0,
                self.order(),
                shape.len()
            ));
        }
        let mut start = 0;
        Ok(self
            .0
            .iter()
            .map(|&g| {
                let p = shape[start..start + g].iter().product();
                start += g;
                p
            })
            .collect())
    }
}

/// Reshapes `t` into the tensor whose modes are the consecutive groups of `g`.
///
/// Under row-major linearization this never moves data, so the inverse
/// reshape restores `t` bit for bit.
pub fn matricize(t: &DenseTensor, g: &Grouping) -> Result<DenseTensor> {
    let shape = g.grouped_shape(t.shape())?;
    t.clone().reshape(shape)
}

/// Two-group matricization returned as a matrix.
pub fn matricize_matrix(t: &DenseTensor, rows_modes: usize) -> Result<DMatrix<f64>> {
    if rows_modes == 0 || rows_modes >= t.order() {
        return shape_err(format!(
            "row group of {rows_modes} modes invalid for a tensor of order {}",
            t.order()
        ));
    }
    let g = Grouping::new(vec![rows_modes, t.order() - rows_modes])?;
    matricize(t, &g)?.to_matrix()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Triple-loop reference for an order-3 tensor.
    fn loop_mode_product(t: &DenseTensor, m: &DMatrix<f64>, mode: usize) -> DenseTensor {
        let s = t.shape();
        let mut shape = s.to_vec();
        shape[mode] = m.nrows();
        DenseTensor::from_fn(&shape, |ix| {
            let mut acc = 0.0;
            for j in 0..s[mode] {
                let mut src = ix.to_vec();
                src[mode] = j;
                acc += m[(ix[mode], j)] * t.get(&src).unwrap();
            }
            acc
        })
    }

    #[test]
    fn identity_product_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor(&[2, 3, 2], &mut rng);
        let y = mode_n_product(&t, &DMatrix::identity(3, 3), 1).unwrap();
        assert_eq!(y, t);
    }

    #[test]
    fn product_composition_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_tensor(&[2, 3, 2], &mut rng);
        let a = random_matrix(3, 3, &mut rng);
        let b = random_matrix(3, 3, &mut rng);
        let lhs = mode_n_product(&mode_n_product(&t, &a, 1).unwrap(), &b, 1).unwrap();
        let rhs = mode_n_product(&t, &(&b * &a), 1).unwrap();
        let oracle = loop_mode_product(&loop_mode_product(&t, &a, 1), &b, 1);
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        assert!(lhs.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn vector_product_reduces_order() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = mode_n_vector_product(&t, &[1.0, 1.0], 0).unwrap();
        assert_eq!(y.shape(), &[2]);
        assert_eq!(y.data(), &[4.0, 6.0]);
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let oracle = loop_mode_product(&t, &m, 0);
        assert_eq!(oracle.data(), y.data());
    }

    #[test]
    fn matricization_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&[2, 3, 4], &mut rng);
        for mode in 0..3 {
            let m = random_matrix(5, t.shape()[mode], &mut rng);
            let y = mode_n_product(&t, &m, mode).unwrap();
            let lhs = unfold_mode(&y, mode).unwrap();
            let rhs = &m * unfold_mode(&t, mode).unwrap();
            assert!((lhs - rhs).abs().max() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_names_mode() {
        let t = DenseTensor::zeros(&[2, 3]);
        let err = mode_n_product(&t, &DMatrix::identity(2, 2), 1).unwrap_err();
        assert!(err.to_string().contains("mode 1"), "{err}");
        assert!(mode_n_product(&t, &DMatrix::identity(2, 2), 2).is_err());
    }

    #[test]
    fn grouping_1_2_index_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_tensor(&[2, 3, 4], &mut rng);
        let m = matricize_matrix(&t, 1).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (2, 12));
        for i in 0..2 {
            for j1 in 0..3 {
                for j2 in 0..4 {
                    assert_eq!(m[(i, j1 * 4 + j2)], t.get(&[i, j1, j2]).unwrap());
                }
            }
        }
    }

    #[test]
    fn full_grouping_is_vectorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_tensor(&[2, 3, 2], &mut rng);
        let v = matricize(&t, &Grouping::new(vec![3]).unwrap()).unwrap();
        assert_eq!(v.shape(), &[12]);
        let back = v.reshape(vec![2, 3, 2]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rank_one_unfolding_has_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.random_range(0.5..1.5)).collect())
            .collect();
        let t = DenseTensor::from_fn(&[2, 2, 2, 2], |ix| {
            ix.iter().zip(&vs).map(|(&i, v)| v[i]).product()
        });
        let m = matricize_matrix(&t, 2).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (4, 4));
        let sv = m.singular_values();
        let mut sorted: Vec<f64> = sv.iter().copied().collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(sorted[0] > 0.1);
        assert!(sorted[1..].iter().all(|&s| s < 1e-12 * sorted[0]));
    }

    #[test]
    fn invalid_grouping_rejected() {
        let t = DenseTensor::zeros(&[2, 3, 2]);
        assert!(matricize(&t, &Grouping::new(vec![1, 1]).unwrap()).is_err());
        assert!(Grouping::new(vec![1, 0]).is_err());
        assert!(matricize_matrix(&t, 3).is_err());
    }
}
