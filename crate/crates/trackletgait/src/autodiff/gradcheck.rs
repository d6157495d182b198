//! Central finite-difference verification of reverse-mode gradients.
//!
//! The checker rebuilds the forward graph from scratch for every perturbed
//! evaluation, so it exercises exactly the code paths used in training. All
//! checking runs in `f64`.

use super::{Graph, Mode, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Worst relative error across all checked coordinates.
    pub max_rel_err: f64,
    /// Number of coordinates compared.
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of a scalar-valued computation against
/// central finite differences `(f(p + eps) - f(p - eps)) / (2 eps)`,
/// coordinate by coordinate over every entry of `params`.
///
/// `build` must be a pure function of the bound parameter nodes: it receives
/// a fresh graph and the parameter node ids (in `params` order) and returns
/// the scalar loss node.
pub fn grad_check<F>(mode: Mode, params: &[Tensor<f64>], eps: f64, build: F) -> GradCheckReport
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new(mode);
        let ids: Vec<NodeId> = values.iter().enumerate().map(|(i, v)| g.param(i, v.clone())).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).item()
    };

    let mut g = Graph::new(mode);
    let ids: Vec<NodeId> = params.iter().enumerate().map(|(i, v)| g.param(i, v.clone())).collect();
    let loss = build(&mut g, &ids);
    assert_eq!(g.value(loss).numel(), 1, "grad_check expects a scalar loss");
    let grads = g.backward(loss, params.len());

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut coordinates = 0usize;

    for (pi, param) in params.iter().enumerate() {
        let analytic = grads.slot(pi);
        for j in 0..param.numel() {
            let original = param.data()[j];
            work[pi].data_mut()[j] = original + eps;
            let up = eval(&work);
            work[pi].data_mut()[j] = original - eps;
            let down = eval(&work);
            work[pi].data_mut()[j] = original;

            let fd = (up - down) / (2.0 * eps);
            let an = analytic.map_or(0.0, |t| t.data()[j]);
            let denom = fd.abs().max(an.abs()).max(1e-6);
            max_rel_err = max_rel_err.max((fd - an).abs() / denom);
            coordinates += 1;
        }
    }

    GradCheckReport { max_rel_err, coordinates }
}
