use super::{AutodiffError, Graph, NodeId, Tensor};

/// Compares reverse-mode gradients of the scalar `f(x)` against central
/// differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
///
/// Returns the largest entrywise relative error, using
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator. `f` receives a
/// fresh graph and the node holding `x` on every call.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, AutodiffError>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(AutodiffError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let eval = |input: Tensor| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let id = g.constant(input);
        let out = f(&mut g, id)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let xid = g.leaf(x.clone());
    let out = f(&mut g, xid)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(xid)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
