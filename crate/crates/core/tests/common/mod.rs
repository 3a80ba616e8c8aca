#![allow(dead_code)]

use daf3d_tensor::{ParamId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Denominator floor for relative errors, as a fraction of the larger of the
/// largest gradient component and the loss value. Entries whose true gradient
/// is zero (a bias feeding a single-channel normalization group) are then
/// compared against that scale instead of against their own
/// finite-difference round-off.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err_scaled(analytic: f64, numeric: f64, grad_scale: f64) -> f64 {
    let floor = (REL_FLOOR * grad_scale).max(f64::MIN_POSITIVE);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn max_abs(grads: &[Option<Tensor<f64>>]) -> f64 {
    grads.iter().flatten().flat_map(|g| g.data().iter()).fold(0.0, |m, &x| m.max(x.abs()))
}

pub struct GradReport {
    pub grad_scale: f64,
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// At least one entry per tensor, then uniform draws until `min_total`.
pub fn sample_entries(store: &ParamStore<f64>, min_total: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors: Vec<(ParamId, usize)> = store.iter().map(|(id, _, t)| (id, t.len())).collect();
    let mut out: Vec<(ParamId, usize)> = tensors.iter().map(|&(id, n)| (id, rng.random_range(0..n))).collect();
    while out.len() < min_total {
        let (id, n) = tensors[rng.random_range(0..tensors.len())];
        out.push((id, rng.random_range(0..n)));
    }
    out
}

/// Compares `analytic` gradients with central differences of `loss`.
pub fn check_params(
    store: &ParamStore<f64>,
    analytic: &[Option<Tensor<f64>>],
    entries: &[(ParamId, usize)],
    h: f64,
    loss: impl Fn(&ParamStore<f64>) -> f64,
) -> GradReport {
    let scale = max_abs(analytic).max(loss(store).abs());
    let mut report = GradReport { grad_scale: scale, checked: 0, max_rel: 0.0, worst: String::new() };
    for &(id, i) in entries {
        let mut s = store.clone();
        let x0 = s.get(id).data()[i];
        s.get_mut(id).data_mut()[i] = x0 + h;
        let up = loss(&s);
        s.get_mut(id).data_mut()[i] = x0 - h;
        let down = loss(&s);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[id.0].as_ref().map_or(0.0, |g| g.data()[i]);
        let r = rel_err_scaled(a, numeric, scale);
        report.checked += 1;
        if r > report.max_rel {
            report.max_rel = r;
            report.worst = format!("{}[{i}]: analytic {a:e}, numeric {numeric:e}", store.name(id));
        }
    }
    report
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}
