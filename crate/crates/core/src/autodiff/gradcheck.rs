//! Central finite-difference gradient checking at 64-bit precision.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of the backward rules it validates.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

/// Pass threshold on the maximum relative error.
pub const REL_TOLERANCE: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub n_checked: usize,
    /// [`Graph::kink_margin`] of the analytic pass.
    pub kink_margin: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOLERANCE
    }
}

/// Compare backpropagated gradients of `f` against central differences for
/// every element of every tensor in `params`. `f` must return a scalar.
pub fn check_gradients<Fw>(params: &[Tensor<f64>], f: Fw) -> Result<GradCheckReport>
where
    Fw: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let graph = Graph::<f64>::new();
    let vars: Vec<_> = params.iter().map(|p| graph.param(p.clone())).collect();
    let loss = f(&graph, &vars)?;
    graph.backward(loss)?;
    let kink_margin = graph.kink_margin();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| graph.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::<f64>::new();
        let vars: Vec<_> = probe.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&g, &vars)?;
        let v = out.value().data()[0];
        Ok(v)
    };

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        n_checked: 0,
        kink_margin,
    };
    for p in 0..params.len() {
        for i in 0..params[p].numel() {
            let orig = params[p].data()[i];
            probe[p].data_mut()[i] = orig + FD_STEP;
            let plus = eval(&probe)?;
            probe[p].data_mut()[i] = orig - FD_STEP;
            let minus = eval(&probe)?;
            probe[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic[p].data()[i], numeric);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (p, i);
            }
            report.n_checked += 1;
        }
    }
    Ok(report)
}
