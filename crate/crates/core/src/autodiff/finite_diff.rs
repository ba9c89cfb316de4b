//! Two-sided finite-difference gradients, used as an independent check on
//! [`Tape::backward`](super::Tape::backward).

use super::Tensor;

/// Central-difference gradient of `f` with respect to every entry of `params`.
pub fn central_difference<F>(f: &F, params: &[Tensor], eps: f64) -> Vec<Tensor>
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = Tensor::zeros(params[pi].shape());
        for k in 0..params[pi].numel() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + eps;
            let up = f(&work);
            work[pi].data_mut()[k] = orig - eps;
            let down = f(&work);
            work[pi].data_mut()[k] = orig;
            g.data_mut()[k] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// Largest entrywise `|a - b| / max(|a|, |b|, floor)` across the groups.
///
/// The floor keeps entries whose true gradient is ~0 from dominating through
/// finite-difference noise.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    const FLOOR: f64 = 1e-3;
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}
