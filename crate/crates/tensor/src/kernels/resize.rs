//! Separable trilinear resampling to an exact target extent.
//!
//! Sample positions follow the half-pixel convention
//! `src = (dst + 0.5) * n_in / n_out - 0.5`, clamped to the valid range, so an
//! equal-size resize is the identity and constants are reproduced exactly.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Tap<F> {
    i0: usize,
    i1: usize,
    w0: F,
    w1: F,
}

fn taps<F: Scalar>(n_in: usize, n_out: usize) -> Vec<Tap<F>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let w1 = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            Tap { i0, i1, w0: F::from_f64_lossy(1.0 - w1), w1: F::from_f64_lossy(w1) }
        })
        .collect()
}

/// Resamples one axis of a `[outer, n, inner]` layout.
fn resample_axis<F: Scalar>(src: &[F], outer: usize, n_in: usize, inner: usize, n_out: usize) -> Vec<F> {
    let t = taps::<F>(n_in, n_out);
    let mut dst = vec![F::zero(); outer * n_out * inner];
    for o in 0..outer {
        let s = &src[o * n_in * inner..(o + 1) * n_in * inner];
        let d = &mut dst[o * n_out * inner..(o + 1) * n_out * inner];
        for (j, tap) in t.iter().enumerate() {
            let a = &s[tap.i0 * inner..(tap.i0 + 1) * inner];
            let b = &s[tap.i1 * inner..(tap.i1 + 1) * inner];
            for ((dv, &av), &bv) in d[j * inner..(j + 1) * inner].iter_mut().zip(a).zip(b) {
                *dv = tap.w0 * av + tap.w1 * bv;
            }
        }
    }
    dst
}

/// Transpose of [`resample_axis`].
fn resample_axis_adjoint<F: Scalar>(g: &[F], outer: usize, n_in: usize, inner: usize, n_out: usize) -> Vec<F> {
    let t = taps::<F>(n_in, n_out);
    let mut dst = vec![F::zero(); outer * n_in * inner];
    for o in 0..outer {
        let s = &g[o * n_out * inner..(o + 1) * n_out * inner];
        let d = &mut dst[o * n_in * inner..(o + 1) * n_in * inner];
        for (j, tap) in t.iter().enumerate() {
            for k in 0..inner {
                let v = s[j * inner + k];
                d[tap.i0 * inner + k] += tap.w0 * v;
                d[tap.i1 * inner + k] += tap.w1 * v;
            }
        }
    }
    dst
}

pub fn resize_forward<F: Scalar>(x: &Tensor<F>, target: [usize; 3]) -> Result<Tensor<F>> {
    let [n, c, w, h, l] = x.dims5()?;
    if target.contains(&0) {
        return Err(shape_err!("resize target {:?} has an empty axis", target));
    }
    if [w, h, l] == target {
        return Ok(x.clone());
    }
    let nc = n * c;
    let a = resample_axis(x.data(), nc * w * h, l, 1, target[2]);
    let b = resample_axis(&a, nc * w, h, target[2], target[1]);
    let d = resample_axis(&b, nc, w, target[1] * target[2], target[0]);
    Tensor::from_vec(&[n, c, target[0], target[1], target[2]], d)
}

pub fn resize_backward<F: Scalar>(input_shape: &[usize], gy: &Tensor<F>) -> Result<Tensor<F>> {
    let [n, c, w, h, l] = match input_shape {
        &[n, c, w, h, l] => [n, c, w, h, l],
        _ => return Err(shape_err!("resize input must be 5-d")),
    };
    let [_, _, tw, th, tl] = gy.dims5()?;
    if [w, h, l] == [tw, th, tl] {
        return Ok(gy.clone());
    }
    let nc = n * c;
    let d = resample_axis_adjoint(gy.data(), nc, w, th * tl, tw);
    let b = resample_axis_adjoint(&d, nc * w, h, tl, th);
    let a = resample_axis_adjoint(&b, nc * w * h, l, 1, tl);
    Tensor::from_vec(input_shape, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_constants() {
        let x = Tensor::from_fn(&[1, 2, 3, 4, 5], |i| i as f64);
        assert_eq!(resize_forward(&x, [3, 4, 5]).unwrap(), x);
        let c = Tensor::full(&[1, 1, 3, 2, 5], 1.75f64);
        let y = resize_forward(&c, [7, 9, 4]).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn doubling_matches_half_pixel_rule() {
        let x = Tensor::from_vec(&[1, 1, 1, 1, 2], vec![0.0f64, 4.0]).unwrap();
        let y = resize_forward(&x, [1, 1, 4]).unwrap();
        // src positions: -0.25 -> 0, 0.25, 0.75, 1.25 -> clamp to 1
        assert_eq!(y.data(), &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn backward_is_adjoint() {
        let x = Tensor::from_fn(&[1, 2, 4, 3, 5], |i| (i as f64 * 0.37).sin());
        let target = [9, 7, 2];
        let y = resize_forward(&x, target).unwrap();
        let gy = Tensor::from_fn(y.shape(), |i| (i as f64 * 0.91).cos());
        let gx = resize_backward(x.shape(), &gy).unwrap();
        let lhs: f64 = gy.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = gx.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
