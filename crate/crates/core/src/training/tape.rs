//! Reverse-mode tape over vector-valued nodes.
//!
//! Every node's value and gradient live in two flat arenas, so a tape can be
//! cleared and reused without reallocating. Forward values are produced by the
//! same kernels the model evaluation uses.

use crate::prob;
use crate::tensor::kernels;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    /// `vᵀM`
    VecMat(Var, Var),
    /// `Mv`
    MatVec(Var, Var),
    /// `T ×₁ u ×₂ w`
    Bilinear(Var, Var, Var),
    Add(Var, Var),
    Tanh(Var),
    LogSoftmax(Var),
    ExpFloor(Var, f64),
    /// Per-component diagonal Gaussian log-densities of a fixed point.
    DiagLogDensity {
        x: Var,
        means: Var,
        vars: Var,
    },
    LogSumExp(Var),
    /// Scalar sum over `args[start..start + len]`.
    Sum(usize, usize),
    Neg(Var),
}

#[derive(Clone, Copy, Debug)]
struct Node {
    start: usize,
    len: usize,
    op: Op,
}

#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    grads: Vec<f64>,
    args: Vec<Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.grads.clear();
        self.args.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = self.nodes[v.0];
        &self.values[n.start..n.start + n.len]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Gradient of the last `backward` output with respect to `v`.
    pub fn grad(&self, v: Var) -> &[f64] {
        let n = self.nodes[v.0];
        &self.grads[n.start..n.start + n.len]
    }

    fn size(&self, v: Var) -> usize {
        self.nodes[v.0].len
    }

    /// Appends a node of `len` entries and fills it with `f(previous values, out)`.
    fn push(&mut self, len: usize, op: Op, f: impl FnOnce(&Self, &[f64], &mut [f64])) -> Var {
        let start = self.values.len();
        self.values.resize(start + len, 0.0);
        let mut out = std::mem::take(&mut self.values);
        {
            let (prev, tail) = out.split_at_mut(start);
            f(self, prev, tail);
        }
        self.values = out;
        self.nodes.push(Node { start, len, op });
        Var(self.nodes.len() - 1)
    }

    fn slice<'a>(&self, prev: &'a [f64], v: Var) -> &'a [f64] {
        let n = self.nodes[v.0];
        &prev[n.start..n.start + n.len]
    }

    pub fn leaf(&mut self, data: &[f64]) -> Var {
        self.push(data.len(), Op::Leaf, |_, _, out| out.copy_from_slice(data))
    }

    pub fn vec_mat(&mut self, v: Var, m: Var) -> Var {
        let rows = self.size(v);
        let cols = self.size(m) / rows;
        self.push(cols, Op::VecMat(v, m), |t, prev, out| {
            kernels::vec_mat(t.slice(prev, v), t.slice(prev, m), rows, cols, out)
        })
    }

    pub fn mat_vec(&mut self, m: Var, v: Var) -> Var {
        let cols = self.size(v);
        let rows = self.size(m) / cols;
        self.push(rows, Op::MatVec(m, v), |t, prev, out| {
            kernels::mat_vec(t.slice(prev, m), t.slice(prev, v), rows, cols, out)
        })
    }

    pub fn bilinear(&mut self, tensor: Var, u: Var, w: Var) -> Var {
        let (a, b) = (self.size(u), self.size(w));
        let c = self.size(tensor) / (a * b);
        self.push(c, Op::Bilinear(tensor, u, w), |t, prev, out| {
            kernels::bilinear(
                t.slice(prev, tensor),
                t.slice(prev, u),
                t.slice(prev, w),
                a,
                b,
                c,
                out,
            )
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.size(a), self.size(b));
        self.push(self.size(a), Op::Add(a, b), |t, prev, out| {
            for ((o, x), y) in out.iter_mut().zip(t.slice(prev, a)).zip(t.slice(prev, b)) {
                *o = x + y;
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(self.size(a), Op::Tanh(a), |t, prev, out| {
            for (o, x) in out.iter_mut().zip(t.slice(prev, a)) {
                *o = x.tanh();
            }
        })
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        self.push(self.size(a), Op::LogSoftmax(a), |t, prev, out| {
            out.copy_from_slice(&prob::log_softmax(t.slice(prev, a)))
        })
    }

    /// `max(exp(a), floor)` elementwise.
    pub fn exp_floor(&mut self, a: Var, floor: f64) -> Var {
        self.push(self.size(a), Op::ExpFloor(a, floor), |t, prev, out| {
            for (o, x) in out.iter_mut().zip(t.slice(prev, a)) {
                *o = x.exp().max(floor);
            }
        })
    }

    /// `out[j] = log N(x | means[j], diag(vars[j]))` for `m` row-major components.
    pub fn diag_log_density(&mut self, x: Var, means: Var, vars: Var) -> Var {
        let d = self.size(x);
        let m = self.size(means) / d;
        self.push(m, Op::DiagLogDensity { x, means, vars }, |t, prev, out| {
            let (xs, mu, var) = (t.slice(prev, x), t.slice(prev, means), t.slice(prev, vars));
            for (j, o) in out.iter_mut().enumerate() {
                *o = prob::diag_log_density(xs, &mu[j * d..(j + 1) * d], &var[j * d..(j + 1) * d]);
            }
        })
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        self.push(1, Op::LogSumExp(a), |t, prev, out| {
            out[0] = prob::log_sum_exp_unchecked(t.slice(prev, a))
        })
    }

    /// Sums scalar nodes left to right starting from `0.0`.
    pub fn sum(&mut self, items: &[Var]) -> Var {
        let start = self.args.len();
        self.args.extend_from_slice(items);
        self.push(1, Op::Sum(start, items.len()), |t, prev, out| {
            let mut acc = 0.0;
            for &v in items {
                acc += t.slice(prev, v)[0];
            }
            out[0] = acc;
        })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.push(self.size(a), Op::Neg(a), |t, prev, out| {
            for (o, x) in out.iter_mut().zip(t.slice(prev, a)) {
                *o = -x;
            }
        })
    }

    /// Back-propagates from the scalar node `out`, overwriting all gradients.
    pub fn backward(&mut self, out: Var) {
        assert_eq!(self.size(out), 1, "backward needs a scalar output");
        self.grads.clear();
        self.grads.resize(self.values.len(), 0.0);
        self.grads[self.nodes[out.0].start] = 1.0;
        let nodes = &self.nodes;
        let vals = &self.values;
        let args = &self.args;
        let at = |v: Var| {
            let n = nodes[v.0];
            n.start..n.start + n.len
        };
        for idx in (0..=out.0).rev() {
            let node = nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let (prev, cur) = self.grads.split_at_mut(node.start);
            let g = &cur[..node.len];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let y = &vals[node.start..node.start + node.len];
            match node.op {
                Op::Leaf => {}
                Op::VecMat(v, m) => {
                    let (rows, cols) = (nodes[v.0].len, node.len);
                    let (vv, mv) = (&vals[at(v)], &vals[at(m)]);
                    let (rv, rm) = (at(v), at(m));
                    for r in 0..rows {
                        let row = &mv[r * cols..(r + 1) * cols];
                        let mut acc = 0.0;
                        for (x, gc) in row.iter().zip(g) {
                            acc += x * gc;
                        }
                        prev[rv.start + r] += acc;
                        let dm = &mut prev[rm.start + r * cols..rm.start + (r + 1) * cols];
                        for (d, gc) in dm.iter_mut().zip(g) {
                            *d += vv[r] * gc;
                        }
                    }
                }
                Op::MatVec(m, v) => {
                    let (rows, cols) = (node.len, nodes[v.0].len);
                    let (vv, mv) = (&vals[at(v)], &vals[at(m)]);
                    let (rv, rm) = (at(v), at(m));
                    for r in 0..rows {
                        let gr = g[r];
                        let row = &mv[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            prev[rv.start + c] += row[c] * gr;
                            prev[rm.start + r * cols + c] += gr * vv[c];
                        }
                    }
                }
                Op::Bilinear(tn, u, w) => {
                    let (a, b, c) = (nodes[u.0].len, nodes[w.0].len, node.len);
                    let (tv, uv, wv) = (&vals[at(tn)], &vals[at(u)], &vals[at(w)]);
                    let (rt, ru, rw) = (at(tn), at(u), at(w));
                    for i in 0..a {
                        for j in 0..b {
                            let base = (i * b + j) * c;
                            let slab = &tv[base..base + c];
                            let mut dot = 0.0;
                            for (x, gc) in slab.iter().zip(g) {
                                dot += x * gc;
                            }
                            prev[ru.start + i] += wv[j] * dot;
                            prev[rw.start + j] += uv[i] * dot;
                            let s = uv[i] * wv[j];
                            let dt = &mut prev[rt.start + base..rt.start + base + c];
                            for (d, gc) in dt.iter_mut().zip(g) {
                                *d += s * gc;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (k, gk) in g.iter().enumerate() {
                        prev[at(a).start + k] += gk;
                        prev[at(b).start + k] += gk;
                    }
                }
                Op::Tanh(a) => {
                    for (k, (gk, yk)) in g.iter().zip(y).enumerate() {
                        prev[at(a).start + k] += gk * (1.0 - yk * yk);
                    }
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = g.iter().sum();
                    for (k, (gk, yk)) in g.iter().zip(y).enumerate() {
                        prev[at(a).start + k] += gk - yk.exp() * total;
                    }
                }
                Op::ExpFloor(a, floor) => {
                    let xs = &vals[at(a)];
                    for (k, (gk, xk)) in g.iter().zip(xs).enumerate() {
                        let e = xk.exp();
                        if e > floor {
                            prev[at(a).start + k] += gk * e;
                        }
                    }
                }
                Op::DiagLogDensity { x, means, vars } => {
                    let d = nodes[x.0].len;
                    let (xs, mu, var) = (&vals[at(x)], &vals[at(means)], &vals[at(vars)]);
                    let (rx, rm, rv) = (at(x), at(means), at(vars));
                    for (j, gj) in g.iter().enumerate() {
                        for c in 0..d {
                            let idx = j * d + c;
                            let diff = xs[c] - mu[idx];
                            let v = var[idx];
                            let dmu = gj * diff / v;
                            prev[rm.start + idx] += dmu;
                            prev[rx.start + c] -= dmu;
                            prev[rv.start + idx] += gj * (-0.5 / v + diff * diff / (2.0 * v * v));
                        }
                    }
                }
                Op::LogSumExp(a) => {
                    if y[0] != f64::NEG_INFINITY {
                        let xs = &vals[at(a)];
                        for (k, xk) in xs.iter().enumerate() {
                            prev[at(a).start + k] += g[0] * (xk - y[0]).exp();
                        }
                    }
                }
                Op::Sum(start, len) => {
                    for &v in &args[start..start + len] {
                        prev[at(v).start] += g[0];
                    }
                }
                Op::Neg(a) => {
                    for (k, gk) in g.iter().enumerate() {
                        prev[at(a).start + k] -= gk;
                    }
                }
            }
        }
    }
}
