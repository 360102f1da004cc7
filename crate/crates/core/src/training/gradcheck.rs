use super::params::ParamGraph;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Gradient scale, relative to the loss, below which central differences are
/// dominated by rounding.
pub const FD_RESOLUTION: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `(parameter name, relative error)` per tensor.
    pub groups: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.1).fold(0.0, f64::max)
    }

    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err() < rel_tol
    }
}

/// Compares the analytic gradients `loss` leaves in the buffers with central
/// differences of step [`FD_STEP`].
///
/// The error for a tensor is `max|a − n| / max(max|a|, max|n|, ρ·max(1, |L|))`
/// with `ρ = FD_RESOLUTION`: entries are judged against the scale of the whole
/// tensor, and a tensor whose gradients are too small for the differences to
/// resolve is judged against that resolution instead.
pub fn grad_check(
    mut loss: impl FnMut(&mut ParamGraph) -> Result<f64>,
    params: &mut ParamGraph,
) -> Result<GradCheckReport> {
    let base = loss(params)?;
    let floor = FD_RESOLUTION * base.abs().max(1.0);
    let analytic = params.grads().to_vec();
    let mut groups = Vec::new();
    for (i, name) in params.names().to_vec().into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for j in 0..analytic[i].len() {
            let orig = params.values()[i].data()[j];
            params.values_mut()[i].data_mut()[j] = orig + FD_STEP;
            let up = loss(params)?;
            params.values_mut()[i].data_mut()[j] = orig - FD_STEP;
            let down = loss(params)?;
            params.values_mut()[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[i][j];
            worst = worst.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        let rel = worst / scale.max(floor);
        groups.push((name, rel));
    }
    loss(params)?;
    Ok(GradCheckReport { groups })
}
