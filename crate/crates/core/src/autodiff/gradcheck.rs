//! Central finite-difference checks of analytic gradients.

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use crate::error::Result;

/// Denominator floor for the relative error, so entries whose true
/// gradient is ~0 are judged on absolute error `floor * rel`.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// One input to a gradient check.
#[derive(Debug, Clone)]
pub struct CheckInput {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl CheckInput {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Self {
        Self {
            shape: shape.to_vec(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub entries: usize,
    pub tolerance: f64,
    pub finite: bool,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.finite && self.max_rel_error < self.tolerance
    }
}

fn evaluate<F>(
    params: Option<&ParamStore>,
    build: &F,
    inputs: &[CheckInput],
    want_grads: bool,
) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Graph<'_>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = match params {
        Some(p) => Graph::with_params(p),
        None => Graph::new(),
    };
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|inp| g.variable(&inp.shape, inp.values.clone()))
        .collect::<Result<_>>()?;
    let out = build(&mut g, &ids)?;
    let loss = if g.value(out).len() == 1 { out } else { g.sum(out) };
    let value = g.scalar(loss);
    if !want_grads {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(loss)?;
    let per_input = ids
        .iter()
        .zip(inputs)
        .map(|(&id, inp)| {
            grads
                .get(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; inp.values.len()])
        })
        .collect();
    Ok((value, per_input))
}

/// Compares the analytic gradient of `sum(build(inputs))` against central
/// differences with the given step.
pub fn grad_check<F>(build: F, inputs: &[CheckInput], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, &[NodeId]) -> Result<NodeId>,
{
    grad_check_with_params(None, build, inputs, step, tolerance)
}

/// [`grad_check`] on graphs that may read fixed parameters from `params`.
pub fn grad_check_with_params<F>(
    params: Option<&ParamStore>,
    build: F,
    inputs: &[CheckInput],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, &[NodeId]) -> Result<NodeId>,
{
    let (_, analytic) = match evaluate(params, &build, inputs, true) {
        Ok(r) => r,
        Err(crate::Error::NonFinite(_)) => {
            return Ok(GradCheckReport {
                max_rel_error: f64::INFINITY,
                entries: 0,
                tolerance,
                finite: false,
            })
        }
        Err(e) => return Err(e),
    };
    let mut max_rel = 0.0f64;
    let mut finite = analytic.iter().flatten().all(|v| v.is_finite());
    let mut entries = 0;
    let mut perturbed = inputs.to_vec();
    for (k, inp) in inputs.iter().enumerate() {
        for i in 0..inp.values.len() {
            let orig = inp.values[i];
            perturbed[k].values[i] = orig + step;
            let (plus, _) = evaluate(params, &build, &perturbed, false)?;
            perturbed[k].values[i] = orig - step;
            let (minus, _) = evaluate(params, &build, &perturbed, false)?;
            perturbed[k].values[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[k][i];
            if !numeric.is_finite() || !a.is_finite() {
                finite = false;
                continue;
            }
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            max_rel = max_rel.max((a - numeric).abs() / denom);
            entries += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        entries,
        tolerance,
        finite,
    })
}
