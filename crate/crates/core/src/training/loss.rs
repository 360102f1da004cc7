use rayon::prelude::*;

use super::params::{ParamGraph, SHARED};
use super::tape::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::prob::VARIANCE_FLOOR;
use crate::Sequence;

/// Sequences per tape. Fixed so the gradient reduction order does not depend
/// on the number of worker threads.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Direct,
    Hankel(usize),
}

struct Leaves {
    alpha: Var,
    w: Var,
    v_beta: Var,
    b_beta: Var,
    v_mu: Var,
    b_mu: Var,
    v_sigma: Var,
    b_sigma: Var,
    /// Transition used at each step: one tensor repeated, or the train's cores.
    steps: Vec<Var>,
}

fn used_params(params: &ParamGraph, mode: Mode) -> Vec<usize> {
    let mut names: Vec<String> = SHARED.iter().map(|s| s.to_string()).collect();
    match mode {
        Mode::Direct => names.push("transition".into()),
        Mode::Hankel(l) => names.extend((1..=l).map(|i| params.core_name(l, i))),
    }
    names
        .iter()
        .map(|n| params.index(n).expect("parameter present"))
        .collect()
}

fn place(tape: &mut Tape, params: &ParamGraph, used: &[usize], mode: Mode) -> (Leaves, Vec<Var>) {
    let vars: Vec<Var> = used
        .iter()
        .map(|&i| tape.leaf(params.values()[i].data()))
        .collect();
    let steps = match mode {
        Mode::Direct => vec![vars[8]],
        Mode::Hankel(_) => vars[8..].to_vec(),
    };
    let leaves = Leaves {
        alpha: vars[0],
        w: vars[1],
        v_beta: vars[2],
        b_beta: vars[3],
        v_mu: vars[4],
        b_mu: vars[5],
        v_sigma: vars[6],
        b_sigma: vars[7],
        steps,
    };
    (leaves, vars)
}

fn head_log_density(tape: &mut Tape, p: &Leaves, x: Var, h: Var) -> Var {
    let logits = tape.mat_vec(p.v_beta, h);
    let logits = tape.add(logits, p.b_beta);
    let lw = tape.log_softmax(logits);
    let means = tape.vec_mat(h, p.v_mu);
    let means = tape.add(means, p.b_mu);
    let z = tape.vec_mat(h, p.v_sigma);
    let z = tape.add(z, p.b_sigma);
    let vars = tape.exp_floor(z, VARIANCE_FLOOR);
    let comps = tape.diag_log_density(x, means, vars);
    let terms = tape.add(lw, comps);
    tape.log_sum_exp(terms)
}

/// Chain-rule log-density of one sequence; `h₀ = alpha`, each later state is
/// one bilinear step.
fn sequence_log_density(tape: &mut Tape, p: &Leaves, seq: &Sequence) -> Var {
    let mut h = p.alpha;
    let mut terms = Vec::with_capacity(seq.len());
    for (t, x) in seq.iter().enumerate() {
        let xv = tape.leaf(x);
        terms.push(head_log_density(tape, p, xv, h));
        if t + 1 < seq.len() {
            let pre = tape.vec_mat(xv, p.w);
            let phi = tape.tanh(pre);
            let a = p.steps[t.min(p.steps.len() - 1)];
            h = tape.bilinear(a, h, phi);
        }
    }
    tape.sum(&terms)
}

struct ChunkResult {
    lls: Vec<f64>,
    grads: Vec<Vec<f64>>,
}

fn run_chunk(
    params: &ParamGraph,
    used: &[usize],
    mode: Mode,
    seqs: &[Sequence],
    backward: bool,
) -> ChunkResult {
    let mut tape = Tape::new();
    let (leaves, vars) = place(&mut tape, params, used, mode);
    let lls: Vec<Var> = seqs
        .iter()
        .map(|s| sequence_log_density(&mut tape, &leaves, s))
        .collect();
    let values: Vec<f64> = lls.iter().map(|&v| tape.scalar(v)).collect();
    let grads = if backward {
        let total = tape.sum(&lls);
        let loss = tape.neg(total);
        tape.backward(loss);
        vars.iter().map(|&v| tape.grad(v).to_vec()).collect()
    } else {
        Vec::new()
    };
    ChunkResult { lls: values, grads }
}

fn run(
    params: &ParamGraph,
    used: &[usize],
    batch: &[Sequence],
    mode: Mode,
    backward: bool,
) -> Vec<ChunkResult> {
    batch
        .par_chunks(CHUNK)
        .map(|c| run_chunk(params, used, mode, c, backward))
        .collect()
}

fn forward(params: &ParamGraph, batch: &[Sequence], mode: Mode) -> Vec<f64> {
    let used = used_params(params, mode);
    run(params, &used, batch, mode, false)
        .into_iter()
        .flat_map(|r| r.lls)
        .collect()
}

fn forward_backward(params: &mut ParamGraph, batch: &[Sequence], mode: Mode) -> Vec<f64> {
    let used = used_params(params, mode);
    let results = run(params, &used, batch, mode, true);
    params.zero_grad();
    let grads = params.grads_mut();
    for r in &results {
        for (&i, g) in used.iter().zip(&r.grads) {
            for (dst, src) in grads[i].iter_mut().zip(g) {
                *dst += src;
            }
        }
    }
    results.into_iter().flat_map(|r| r.lls).collect()
}

fn check_dims(params: &ParamGraph, batch: &[Sequence]) -> Result<()> {
    let d = params.get("w").expect("w present").shape()[0];
    for (i, seq) in batch.iter().enumerate() {
        if seq.is_empty() {
            return Err(Error::Argument(format!("sequence {i} is empty")));
        }
        if let Some(x) = seq.iter().find(|x| x.len() != d) {
            return shape_err(format!(
                "sequence {i} has an observation of dimension {}, expected {d}",
                x.len()
            ));
        }
    }
    Ok(())
}

fn check_hankel(params: &ParamGraph, batch: &[Sequence], l: usize) -> Result<()> {
    if !params.lengths().contains(&l) {
        return Err(Error::Argument(format!("no Hankel train of length {l}")));
    }
    if let Some((i, s)) = batch.iter().enumerate().find(|(_, s)| s.len() != l) {
        return shape_err(format!(
            "sequence {i} has length {}, expected l = {l}",
            s.len()
        ));
    }
    check_dims(params, batch)
}

fn negated_total(lls: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ll in lls {
        acc += ll;
    }
    -acc
}

/// Hankel loss for the length-`l` train: `−Σᵢ Σⱼ log ξ(x_j, h_{j−1})`, where
/// `h_{j−1}` contracts `h₀` with the first `j−1` cores. Overwrites the
/// gradient buffers.
pub fn hankel_loss(params: &mut ParamGraph, batch: &[Sequence], l: usize) -> Result<f64> {
    check_hankel(params, batch, l)?;
    let lls = forward_backward(params, batch, Mode::Hankel(l));
    Ok(negated_total(&lls))
}

/// Per-sequence log-densities under the length-`l` train, without gradients.
pub fn hankel_log_densities(params: &ParamGraph, batch: &[Sequence], l: usize) -> Result<Vec<f64>> {
    check_hankel(params, batch, l)?;
    Ok(forward(params, batch, Mode::Hankel(l)))
}

/// Negative log-likelihood through the recurrent model. Overwrites the
/// gradient buffers.
pub fn loss_direct(params: &mut ParamGraph, batch: &[Sequence]) -> Result<f64> {
    if params.index("transition").is_none() {
        return Err(Error::Argument(
            "loss_direct needs a direct parameter graph".into(),
        ));
    }
    check_dims(params, batch)?;
    let lls = forward_backward(params, batch, Mode::Direct);
    Ok(negated_total(&lls))
}

pub fn direct_log_densities(params: &ParamGraph, batch: &[Sequence]) -> Result<Vec<f64>> {
    if params.index("transition").is_none() {
        return Err(Error::Argument("graph has no transition tensor".into()));
    }
    check_dims(params, batch)?;
    Ok(forward(params, batch, Mode::Direct))
}
