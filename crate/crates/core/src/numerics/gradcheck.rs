//! Central-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Module;

/// Compares the analytic gradient returned by `loss_fn` at `params` with
/// central differences of step `eps`.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match params");
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let (plus, _) = loss_fn(&x);
        x[i] = orig - eps;
        let (minus, _) = loss_fn(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Runs [`grad_check`] over every parameter of `module`.
///
/// `loss` must zero nothing itself: it runs forward and backward once,
/// returning the loss with gradients accumulated into the module.
pub fn check_module_gradients<M, F>(module: &mut M, mut loss: F, eps: f64) -> f64
where
    M: Module,
    F: FnMut(&mut M) -> f64,
{
    let flat: Vec<f64> = module
        .params()
        .iter()
        .flat_map(|(_, p)| p.value.as_slice().to_vec())
        .collect();
    let err = grad_check(
        |x| {
            load_flat(module, x);
            module.zero_grad();
            let l = loss(module);
            let g = module
                .params()
                .iter()
                .flat_map(|(_, p)| p.grad.as_slice().to_vec())
                .collect();
            (l, g)
        },
        &flat,
        eps,
    );
    load_flat(module, &flat);
    err
}

/// Adds uniform noise in `[-scale, scale]` to every parameter. Gradient
/// checks use it to move zero-initialised biases off ReLU kinks.
pub fn jitter_params<M: Module>(module: &mut M, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in module.params() {
        for v in p.value.as_mut_slice() {
            *v += rng.random_range(-scale..=scale);
        }
    }
}

fn load_flat<M: Module>(module: &mut M, x: &[f64]) {
    let mut off = 0;
    for (_, p) in module.params() {
        let n = p.value.len();
        p.value.as_mut_slice().copy_from_slice(&x[off..off + n]);
        off += n;
    }
}
