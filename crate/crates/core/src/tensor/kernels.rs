//! Flat-slice contraction kernels shared by model evaluation and the gradient tape.
//!
//! Both paths call these exact loops so forward values agree bit for bit.

/// `out = vᵀ M` for a row-major `rows × cols` matrix.
pub fn vec_mat(v: &[f64], m: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(v.len(), rows);
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(out.len(), cols);
    out.fill(0.0);
    for (r, &vr) in v.iter().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        for (o, &x) in out.iter_mut().zip(row) {
            *o += vr * x;
        }
    }
}

/// `out = M v` for a row-major `rows × cols` matrix.
pub fn mat_vec(m: &[f64], v: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(v.len(), cols);
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(out.len(), rows);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (&x, &y) in row.iter().zip(v) {
            acc += x * y;
        }
        *o = acc;
    }
}

/// `out[c] = Σ_{i,j} u[i] w[j] T[i,j,c]` for a row-major `a × b × c` tensor,
/// i.e. `T ×₁ u ×₂ w`.
pub fn bilinear(t: &[f64], u: &[f64], w: &[f64], a: usize, b: usize, c: usize, out: &mut [f64]) {
    debug_assert_eq!(t.len(), a * b * c);
    debug_assert_eq!(u.len(), a);
    debug_assert_eq!(w.len(), b);
    debug_assert_eq!(out.len(), c);
    out.fill(0.0);
    for (i, &ui) in u.iter().enumerate() {
        for (j, &wj) in w.iter().enumerate() {
            let s = ui * wj;
            let base = (i * b + j) * c;
            for (o, &x) in out.iter_mut().zip(&t[base..base + c]) {
                *o += s * x;
            }
        }
    }
}
