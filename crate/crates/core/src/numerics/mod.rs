//! Dense tensors, reverse-mode autodiff, seeded sampling and gradient checking.

mod graph;
mod optim;
mod params;
mod rng;
mod tensor;

pub use graph::{row_log_softmax, row_softmax, sigmoid, softplus, Axis, Gradients, Graph, Var};
pub use optim::{Adam, AdamState};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use rng::SeededRng;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Reparameterized draw `mu + sqrt(var) * eps`, `eps ~ N(0, I)`.
pub fn gaussian_sample(mu: &Tensor, var: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
    check_variance(mu, var)?;
    let data = mu
        .data()
        .iter()
        .zip(var.data())
        .map(|(&m, &v)| m + v.sqrt() * rng.normal())
        .collect();
    Tensor::new(mu.dims().to_vec(), data)
}

/// Graph version of [`gaussian_sample`]; differentiable in `mu` and `var`.
pub fn gaussian_sample_var(g: &mut Graph<'_>, mu: Var, var: Var, rng: &mut SeededRng) -> Result<Var> {
    check_variance(g.value(mu), g.value(var))?;
    let mu_t = g.value(mu);
    let noise = Tensor::new(mu_t.dims().to_vec(), (0..mu_t.numel()).map(|_| rng.normal()).collect())?;
    let noise = g.constant(noise);
    let sd = g.sqrt(var);
    let scaled = g.mul(sd, noise)?;
    g.add(mu, scaled)
}

fn check_variance(mu: &Tensor, var: &Tensor) -> Result<()> {
    if mu.dims() != var.dims() {
        return Err(Error::shape("gaussian_sample", mu.dims(), var.dims()));
    }
    if let Some(v) = var.data().iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::Domain(format!("variance must be >= 0, got {v}")));
    }
    Ok(())
}

/// Max over coordinates of `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// `numeric` is the fourth-order central difference
/// `(f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h` at `theta` with step `eps`.
/// Its truncation error is `O(h^4)`, so a step near `1e-3` keeps both truncation
/// and cancellation error well below the tolerance even for gradients near `1e-8`.
pub fn check_gradient(
    mut eval: impl FnMut(&Tensor) -> Result<f64>,
    analytic: &Tensor,
    theta: &Tensor,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {eps}")));
    }
    if analytic.numel() != theta.numel() {
        return Err(Error::shape("grad_check", analytic.dims(), theta.dims()));
    }
    let mut probe = theta.clone();
    let mut worst = 0.0f64;
    for i in 0..theta.numel() {
        let x = theta.data()[i];
        let mut at = |offset: f64| -> Result<f64> {
            probe.data_mut()[i] = x + offset;
            finite(eval(&probe)?)
        };
        let (p1, m1, p2, m2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
        probe.data_mut()[i] = x;
        let numeric = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation(format!("objective is not finite: {v}")))
    }
}

/// Gradient check for a scalar function expressed as a graph over one input.
pub fn grad_check<F>(f: F, theta: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'_>, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.input(t.clone());
        let y = f(&mut g, x)?;
        g.value(y).item()
    };
    let mut g = Graph::new();
    let x = g.input(theta.clone());
    let y = f(&mut g, x)?;
    finite(g.value(y).item()?)?;
    let grads = g.backward(y)?;
    let analytic = grads
        .wrt(x)
        .cloned()
        .unwrap_or_else(|| Tensor::new(theta.dims().to_vec(), vec![0.0; theta.numel()]).unwrap());
    check_gradient(eval, &analytic, theta, eps)
}
