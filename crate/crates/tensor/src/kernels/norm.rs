//! Group normalization and PReLU.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GN_EPS: f64 = 1e-5;

/// Largest divisor of `channels` not exceeding `max_groups`.
pub fn group_count(channels: usize, max_groups: usize) -> usize {
    (1..=max_groups.min(channels).max(1)).rev().find(|g| channels.is_multiple_of(*g)).unwrap_or(1)
}

/// Per-(sample, group) statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GnStats<F> {
    pub mean: Vec<F>,
    pub rstd: Vec<F>,
}

fn check_affine<F: Scalar>(x: &Tensor<F>, gamma: &Tensor<F>, beta: &Tensor<F>, groups: usize) -> Result<[usize; 5]> {
    let d = x.dims5()?;
    let c = d[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err!("group norm affine shapes {:?}/{:?} vs {} channels", gamma.shape(), beta.shape(), c));
    }
    if groups == 0 || c % groups != 0 {
        return Err(shape_err!("{} channels not divisible into {} groups", c, groups));
    }
    Ok(d)
}

pub fn group_norm_forward<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    groups: usize,
) -> Result<(Tensor<F>, GnStats<F>)> {
    let [n, c, w, h, l] = check_affine(x, gamma, beta, groups)?;
    let s = w * h * l;
    let cpg = c / groups;
    let m = F::from_usize(cpg * s).unwrap();
    let eps = F::from_f64_lossy(GN_EPS);
    let mut y = Tensor::zeros(x.shape());
    let mut stats = GnStats { mean: Vec::with_capacity(n * groups), rstd: Vec::with_capacity(n * groups) };
    for b in 0..n {
        for g in 0..groups {
            let off = (b * c + g * cpg) * s;
            let block = &x.data()[off..off + cpg * s];
            let mean = block.iter().copied().sum::<F>() / m;
            let var = block.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / m;
            let rstd = (var + eps).sqrt().recip();
            stats.mean.push(mean);
            stats.rstd.push(rstd);
            for ci in 0..cpg {
                let ch = g * cpg + ci;
                let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
                let src = &block[ci * s..(ci + 1) * s];
                let dst = &mut y.data_mut()[off + ci * s..off + (ci + 1) * s];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = (v - mean) * rstd * ga + be;
                }
            }
        }
    }
    Ok((y, stats))
}

/// Returns `(gx, ggamma, gbeta)`.
pub fn group_norm_backward<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    gy: &Tensor<F>,
    stats: &GnStats<F>,
    groups: usize,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let [n, c, w, h, l] = x.dims5()?;
    let s = w * h * l;
    let cpg = c / groups;
    let m = F::from_usize(cpg * s).unwrap();
    let mut gx = Tensor::zeros(x.shape());
    let mut ggamma = Tensor::zeros(&[c]);
    let mut gbeta = Tensor::zeros(&[c]);
    for b in 0..n {
        for g in 0..groups {
            let idx = b * groups + g;
            let (mean, rstd) = (stats.mean[idx], stats.rstd[idx]);
            let off = (b * c + g * cpg) * s;
            // sums of dxhat and dxhat * xhat over the group
            let mut sum_d = F::zero();
            let mut sum_dx = F::zero();
            for ci in 0..cpg {
                let ch = g * cpg + ci;
                let ga = gamma.data()[ch];
                let mut gg = F::zero();
                let mut gb = F::zero();
                for i in off + ci * s..off + (ci + 1) * s {
                    let xhat = (x.data()[i] - mean) * rstd;
                    let dy = gy.data()[i];
                    gg += dy * xhat;
                    gb += dy;
                    let d = dy * ga;
                    sum_d += d;
                    sum_dx += d * xhat;
                }
                ggamma.data_mut()[ch] += gg;
                gbeta.data_mut()[ch] += gb;
            }
            let mean_d = sum_d / m;
            let mean_dx = sum_dx / m;
            for ci in 0..cpg {
                let ga = gamma.data()[g * cpg + ci];
                for i in off + ci * s..off + (ci + 1) * s {
                    let xhat = (x.data()[i] - mean) * rstd;
                    let d = gy.data()[i] * ga;
                    gx.data_mut()[i] = rstd * (d - mean_d - xhat * mean_dx);
                }
            }
        }
    }
    Ok((gx, ggamma, gbeta))
}

/// Channel-wise PReLU: `y = x` for `x > 0`, `alpha_c * x` otherwise.
pub fn prelu_forward<F: Scalar>(x: &Tensor<F>, alpha: &Tensor<F>) -> Result<Tensor<F>> {
    let [n, c, w, h, l] = x.dims5()?;
    if alpha.shape() != [c] {
        return Err(shape_err!("prelu slope shape {:?} vs {} channels", alpha.shape(), c));
    }
    let s = w * h * l;
    let mut y = x.clone();
    for b in 0..n {
        for ch in 0..c {
            let a = alpha.data()[ch];
            let off = (b * c + ch) * s;
            for v in &mut y.data_mut()[off..off + s] {
                if *v <= F::zero() {
                    *v *= a;
                }
            }
        }
    }
    Ok(y)
}

/// Returns `(gx, galpha)`.
pub fn prelu_backward<F: Scalar>(x: &Tensor<F>, alpha: &Tensor<F>, gy: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    let [n, c, w, h, l] = x.dims5()?;
    let s = w * h * l;
    let mut gx = gy.clone();
    let mut ga = Tensor::zeros(&[c]);
    for b in 0..n {
        for ch in 0..c {
            let a = alpha.data()[ch];
            let off = (b * c + ch) * s;
            let mut acc = F::zero();
            for i in off..off + s {
                let xv = x.data()[i];
                if xv <= F::zero() {
                    acc += gy.data()[i] * xv;
                    gx.data_mut()[i] = gy.data()[i] * a;
                }
            }
            ga.data_mut()[ch] += acc;
        }
    }
    Ok((gx, ga))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_count_clamps_and_divides() {
        assert_eq!(group_count(64, 32), 32);
        assert_eq!(group_count(16, 32), 16);
        assert_eq!(group_count(48, 32), 24);
        assert_eq!(group_count(1, 32), 1);
    }

    #[test]
    fn normalized_groups_have_zero_mean_unit_variance() {
        let x = Tensor::from_fn(&[1, 4, 3, 3, 2], |i| ((i * 37) % 11) as f64 - 3.0);
        let ones = Tensor::full(&[4], 1.0);
        let zeros = Tensor::zeros(&[4]);
        let (y, _) = group_norm_forward(&x, &ones, &zeros, 2).unwrap();
        for g in 0..2 {
            let block = &y.data()[g * 36..(g + 1) * 36];
            let mean: f64 = block.iter().sum::<f64>() / 36.0;
            let var: f64 = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 36.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn group_norm_backward_matches_finite_differences() {
        let x = Tensor::from_fn(&[2, 4, 2, 3, 2], |i| (i as f64 * 0.731).sin());
        let gamma = Tensor::from_fn(&[4], |i| 0.5 + i as f64 * 0.3);
        let beta = Tensor::from_fn(&[4], |i| i as f64 * 0.1);
        let gy = Tensor::from_fn(x.shape(), |i| (i as f64 * 1.37).cos());
        let loss = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
            let (y, _) = group_norm_forward(x, g, b, 2).unwrap();
            y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, stats) = group_norm_forward(&x, &gamma, &beta, 2).unwrap();
        let (gx, gg, gb) = group_norm_backward(&x, &gamma, &gy, &stats, 2).unwrap();
        let h = 1e-6;
        for i in [0, 5, 17, 30, 47] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp, &gamma, &beta) - loss(&xm, &gamma, &beta)) / (2.0 * h);
            assert!((fd - gx.data()[i]).abs() < 1e-7, "x[{i}] {fd} vs {}", gx.data()[i]);
        }
        for c in 0..4 {
            let mut p = gamma.clone();
            p.data_mut()[c] += h;
            let mut m = gamma.clone();
            m.data_mut()[c] -= h;
            let fd = (loss(&x, &p, &beta) - loss(&x, &m, &beta)) / (2.0 * h);
            assert!((fd - gg.data()[c]).abs() < 1e-7);
            let mut p = beta.clone();
            p.data_mut()[c] += h;
            let mut m = beta.clone();
            m.data_mut()[c] -= h;
            let fd = (loss(&x, &gamma, &p) - loss(&x, &gamma, &m)) / (2.0 * h);
            assert!((fd - gb.data()[c]).abs() < 1e-7);
        }
    }

    #[test]
    fn prelu_slopes_negative_part_only() {
        let x = Tensor::from_vec(&[1, 2, 1, 1, 2], vec![-2.0, 3.0, 1.0, -1.0]).unwrap();
        let a = Tensor::from_vec(&[2], vec![0.25, 0.5]).unwrap();
        let y = prelu_forward(&x, &a).unwrap();
        assert_eq!(y.data(), &[-0.5, 3.0, 1.0, -0.5]);
        let gy = Tensor::full(x.shape(), 1.0);
        let (gx, ga) = prelu_backward(&x, &a, &gy).unwrap();
        assert_eq!(gx.data(), &[0.25, 1.0, 1.0, 0.5]);
        assert_eq!(ga.data(), &[-2.0, -1.0]);
    }
}
