use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values below `DEFAULT_PINV_RTOL · σ_max` count as zero in pseudoinverses.
pub const DEFAULT_PINV_RTOL: f64 = 1e-10;

/// Where the singular values go when splitting `M ≈ P S`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SplitConvention {
    /// `P = U Σ`, `S = Vᵀ`.
    #[default]
    ScaleLeft,
    /// `P = U`, `S = Σ Vᵀ`.
    ScaleRight,
}

/// Rank-`R` factorization `M ≈ P S` from a truncated SVD.
#[derive(Clone, Debug)]
pub struct RankFactorization {
    pub p: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Full singular spectrum of `M`, descending.
    pub singular_values: Vec<f64>,
    /// `‖M − P S‖_F`.
    pub residual: f64,
    split: SplitConvention,
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v: DMatrix<f64>,
}

pub fn rank_factorize(m: &DMatrix<f64>, rank: usize) -> Result<RankFactorization> {
    rank_factorize_with(m, rank, SplitConvention::default())
}

pub fn rank_factorize_with(
    m: &DMatrix<f64>,
    rank: usize,
    split: SplitConvention,
) -> Result<RankFactorization> {
    let (n, cols) = m.shape();
    if rank == 0 || rank > n.min(cols) {
        return Err(Error::Argument(format!(
            "rank {rank} invalid for a {n}x{cols} matrix"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    // nalgebra's implicit-shift SVD can return a wrong decomposition for
    // rank-deficient products, so the decomposition comes from faer and the
    // full reconstruction is checked.
    let fm = faer::Mat::<f64>::from_fn(n, cols, |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("singular value decomposition failed: {e:?}")))?;
    let q = n.min(cols);
    let sv = svd.S().column_vector();
    let u = DMatrix::from_fn(n, q, |i, j| svd.U()[(i, j)]);
    let v_t = DMatrix::from_fn(q, cols, |i, j| svd.V()[(j, i)]);
    let sigma_full = DVector::from_fn(q, |i, _| sv[i]);
    let full_err = (&u * DMatrix::from_diagonal(&sigma_full) * &v_t - m).norm();
    if !(full_err <= 1e-10 * m.norm().max(f64::MIN_POSITIVE)) {
        return Err(Error::Numerical(format!(
            "singular value decomposition is inaccurate (reconstruction error {full_err:e})"
        )));
    }
    let singular_values: Vec<f64> = sigma_full.iter().copied().collect();
    let u = u.columns(0, rank).into_owned();
    let sigma = DVector::from_iterator(rank, singular_values.iter().take(rank).copied());
    let v = v_t.rows(0, rank).transpose();
    let (p, s) = match split {
        SplitConvention::ScaleLeft => (scale_columns(&u, &sigma), v.transpose()),
        SplitConvention::ScaleRight => (u.clone(), scale_columns(&v, &sigma).transpose()),
    };
    let residual = (m - &p * &s).norm();
    Ok(RankFactorization {
        p,
        s,
        singular_values,
        residual,
        split,
        u,
        sigma,
        v,
    })
}

fn scale_columns(m: &DMatrix<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, &s) in out.column_iter_mut().zip(scale.iter()) {
        col *= s;
    }
    out
}

impl RankFactorization {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Number of singular values above `rtol · σ_max`.
    pub fn numerical_rank(&self, rtol: f64) -> usize {
        let max = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .filter(|&&s| s > rtol * max)
            .count()
    }

    fn inv_sigma(&self, rtol: f64) -> DVector<f64> {
        let cutoff = rtol * self.singular_values.first().copied().unwrap_or(0.0);
        self.sigma.map(|s| if s > cutoff { 1.0 / s } else { 0.0 })
    }

    /// `P†` (`R × n`) computed from the retained singular triplets.
    pub fn p_pinv(&self, rtol: f64) -> DMatrix<f64> {
        match self.split {
            SplitConvention::ScaleLeft => scale_columns(&self.u, &self.inv_sigma(rtol)).transpose(),
            SplitConvention::ScaleRight => self.u.transpose(),
        }
    }

    /// `S†` (`m × R`) computed from the retained singular triplets.
    pub fn s_pinv(&self, rtol: f64) -> DMatrix<f64> {
        match self.split {
            SplitConvention::ScaleLeft => self.v.clone(),
            SplitConvention::ScaleRight => scale_columns(&self.v, &self.inv_sigma(rtol)),
        }
    }
}
