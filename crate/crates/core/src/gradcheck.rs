//! Central-difference gradient verification.
//!
//! The harness is f64-only by construction (the signature does not admit
//! f32 programs); checks at f32 precision would be meaningless against the
//! tolerances used here.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Relative-error denominator floor; errors on gradients smaller than
    /// this are measured against the floor instead.
    pub denom_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, denom_floor: 1e-3 }
    }
}

#[derive(Debug)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub max_rel_err: f64,
    /// Smallest |relu input| observed on the nominal forward pass, if any
    /// relu ran. Callers can require this to exceed `10 * step` to apply
    /// the kink-exclusion rule.
    pub min_relu_input_abs: Option<f64>,
}

impl GradCheckReport {
    pub fn worst_param(&self) -> Option<&ParamReport> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compare backward-pass gradients of a scalar program against central
/// finite differences, per parameter element.
///
/// `build` must construct the same computation every call from the given
/// parameter leaves. `skip` marks elements excluded from the numeric check
/// (`(param name, element index, element value) -> bool`), e.g. points
/// within `10 * step` of a relu kink when the parameter feeds one directly.
pub fn grad_check<F>(
    mut build: F,
    params: &[(String, Tensor<f64>)],
    opts: &GradCheckOptions,
    skip: Option<&dyn Fn(&str, usize, f64) -> bool>,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    if params.is_empty() {
        return Err(Error::arg("grad_check needs at least one parameter"));
    }

    // Nominal pass: analytic gradients.
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = params
        .iter()
        .map(|(_, t)| graph.leaf(t.clone().with_grad()))
        .collect();
    let loss = build(&mut graph, &ids)?;
    if graph.value(loss).numel() != 1 {
        return Err(Error::arg("grad_check program must produce a scalar loss"));
    }
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| graph.grad(id).map(|g| g.to_vec()).unwrap_or_default())
        .collect();
    let min_relu_input_abs = graph.min_relu_input_abs();
    drop(graph);

    let mut work: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let eval = |work: &[Tensor<f64>], build: &mut F| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = work.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };

    let mut reports = Vec::with_capacity(params.len());
    let mut overall: f64 = 0.0;
    for (pi, (name, tensor)) in params.iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for j in 0..tensor.numel() {
            let orig = tensor.data()[j];
            if let Some(pred) = skip {
                if pred(name, j, orig) {
                    skipped += 1;
                    continue;
                }
            }
            work[pi].data_mut()[j] = orig + opts.step;
            let lp = eval(&work, &mut build)?;
            work[pi].data_mut()[j] = orig - opts.step;
            let lm = eval(&work, &mut build)?;
            work[pi].data_mut()[j] = orig;

            let numeric = (lp - lm) / (2.0 * opts.step);
            let a = analytic[pi].get(j).copied().unwrap_or(0.0);
            let denom = a.abs().max(numeric.abs()).max(opts.denom_floor);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
        overall = overall.max(max_rel);
        reports.push(ParamReport { name: name.clone(), max_rel_err: max_rel, checked, skipped });
    }

    Ok(GradCheckReport { params: reports, max_rel_err: overall, min_relu_input_abs })
}
