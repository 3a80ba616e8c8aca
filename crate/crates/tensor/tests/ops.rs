//! Forward oracles and finite-difference gradients for every graph op.

use daf3d_tensor::{ConvGeom, Graph, ParamStore, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;


fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Checks leaf gradients of `<f(inputs), r>` against central differences
/// with step `h`.
fn check_op(inputs: &[Tensor<f64>], seed: u64, h: f64, f: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var) -> f64 {
    let store = ParamStore::<f64>::new();
    let eval = |xs: &[Tensor<f64>], grad: bool| {
        let mut g = if grad { Graph::new(&store) } else { Graph::inference(&store) };
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let y = f(&mut g, &vars);
        let r = random(g.shape(y), seed);
        let loss: f64 = g.value(y).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let grads = grad.then(|| {
            let gr = g.backward(vec![(y, r)]).unwrap();
            vars.iter().map(|&v| gr.leaf(v).cloned()).collect::<Vec<_>>()
        });
        (loss, grads)
    };
    let (_, grads) = eval(inputs, true);
    let grads = grads.unwrap();
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let step = (x.len() / 40).max(1);
        for i in (0..x.len()).step_by(step) {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += h;
            let up = eval(&xs, false).0;
            xs[k].data_mut()[i] -= 2.0 * h;
            let down = eval(&xs, false).0;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[k].as_ref().map_or(0.0, |t| t.data()[i]);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

/// Direct-loop convolution with zero padding.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, geom: &ConvGeom) -> Tensor<f64> {
    let [n, cin, iw, ih, il]: [usize; 5] = x.shape().try_into().unwrap();
    let [cout, cin_g, kw, kh, kl]: [usize; 5] = w.shape().try_into().unwrap();
    let out = geom.output_spatial([iw, ih, il]).unwrap();
    let cout_g = cout / geom.groups;
    let mut y = Tensor::zeros(&[n, cout, out[0], out[1], out[2]]);
    let ins = [iw, ih, il];
    for bi in 0..n {
        for co in 0..cout {
            let grp = co / cout_g;
            for o0 in 0..out[0] {
                for o1 in 0..out[1] {
                    for o2 in 0..out[2] {
                        let mut acc = b.data()[co];
                        for ci in 0..cin_g {
                            for (a0, a1, a2) in (0..kw).flat_map(|a| (0..kh).flat_map(move |c| (0..kl).map(move |d| (a, c, d)))) {
                                let o = [o0, o1, o2];
                                let a = [a0, a1, a2];
                                let mut p = [0usize; 3];
                                let mut valid = true;
                                for ax in 0..3 {
                                    let q = (o[ax] * geom.stride[ax] + a[ax] * geom.dilation[ax]) as i64 - geom.padding[ax] as i64;
                                    if q < 0 || q >= ins[ax] as i64 {
                                        valid = false;
                                    }
                                    p[ax] = q.max(0) as usize;
                                }
                                if valid {
                                    let xc = grp * cin_g + ci;
                                    let xi = (((bi * cin + xc) * iw + p[0]) * ih + p[1]) * il + p[2];
                                    let wi = (((co * cin_g + ci) * kw + a0) * kh + a1) * kl + a2;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        let yi = (((bi * cout + co) * out[0] + o0) * out[1] + o1) * out[2] + o2;
                        y.data_mut()[yi] = acc;
                    }
                }
            }
        }
    }
    y
}

fn geom_strategy() -> impl Strategy<Value = (ConvGeom, usize, usize, [usize; 3])> {
    (
        prop::sample::select(vec![1usize, 3]),
        prop::array::uniform3(1usize..=2),
        1usize..=2,
        prop::sample::select(vec![1usize, 2]),
        1usize..=2,
        1usize..=2,
        prop::array::uniform3(3usize..=6),
    )
        .prop_map(|(k, stride, dilation, groups, cin_m, cout_m, spatial)| {
            (ConvGeom::cube(k, stride, dilation, groups), cin_m * groups, cout_m * groups, spatial)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_matches_direct_loop((geom, cin, cout, s) in geom_strategy(), seed in 0u64..1000) {
        let x = random(&[2, cin, s[0], s[1], s[2]], seed);
        let w = random(&[cout, cin / geom.groups, geom.kernel[0], geom.kernel[1], geom.kernel[2]], seed + 1);
        let b = random(&[cout], seed + 2);
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv3d(xv, wv, Some(bv), geom).unwrap();
        prop_assert!(g.value(y).max_abs_diff(&conv_oracle(&x, &w, &b, &geom)) < 1e-12);
    }

    #[test]
    fn conv_gradients((geom, cin, cout, s) in geom_strategy(), seed in 0u64..1000) {
        let x = random(&[1, cin, s[0], s[1], s[2]], seed);
        let w = random(&[cout, cin / geom.groups, geom.kernel[0], geom.kernel[1], geom.kernel[2]], seed + 1);
        let b = random(&[cout], seed + 2);
        // The loss is linear in every single entry, so a large step is exact.
        let e = check_op(&[x, w, b], seed + 3, 0.5, |g, v| g.conv3d(v[0], v[1], Some(v[2]), geom).unwrap());
        prop_assert!(e < 1e-6, "relative error {e}");
    }

    #[test]
    fn resize_backward_is_adjoint(src in prop::array::uniform3(2usize..=6), dst in prop::array::uniform3(2usize..=9), seed in 0u64..1000) {
        // Resize is linear, so <R x, r> = <x, R^T r> up to round-off.
        let x = random(&[1, 2, src[0], src[1], src[2]], seed);
        let r = random(&[1, 2, dst[0], dst[1], dst[2]], seed + 1);
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let xv = g.leaf(x.clone());
        let y = g.resize(xv, dst).unwrap();
        let lhs: f64 = g.value(y).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let gx = g.backward(vec![(y, r)]).unwrap().leaf(xv).cloned().unwrap();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn resize_reproduces_constants(src in prop::array::uniform3(1usize..=6), dst in prop::array::uniform3(1usize..=9), c in -3.0f64..3.0) {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let x = g.constant(Tensor::full(&[1, 1, src[0], src[1], src[2]], c));
        let y = g.resize(x, dst).unwrap();
        prop_assert!(g.value(y).data().iter().all(|&v| (v - c).abs() < 1e-12));
    }
}

#[test]
fn resize_to_same_size_is_identity() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::inference(&store);
    let t = random(&[1, 3, 4, 5, 6], 1);
    let x = g.constant(t.clone());
    let y = g.resize(x, [4, 5, 6]).unwrap();
    assert_eq!(g.value(y).data(), t.data());
}

#[test]
fn group_norm_output_statistics_and_gradients() {
    let x = random(&[2, 4, 3, 3, 2], 10);
    let store = ParamStore::<f64>::new();
    let mut g = Graph::inference(&store);
    let (xv, ga, be) = (g.constant(x.clone()), g.constant(Tensor::full(&[4], 1.0)), g.constant(Tensor::zeros(&[4])));
    let y = g.group_norm(xv, ga, be, 2).unwrap();
    // Each (sample, group) block of 2 channels x 18 voxels has zero mean and unit variance.
    for block in g.value(y).data().chunks(36) {
        let mean = block.iter().sum::<f64>() / 36.0;
        let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 36.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
    let gamma = random(&[4], 11);
    let beta = random(&[4], 12);
    let e = check_op(&[x, gamma, beta], 13, 1e-6, |g, v| g.group_norm(v[0], v[1], v[2], 2).unwrap());
    assert!(e < 1e-5, "relative error {e}");
}

#[test]
fn prelu_sigmoid_scale_gradients() {
    let x = random(&[1, 3, 3, 3, 3], 20);
    let alpha = random(&[3], 21);
    assert!(check_op(&[x.clone(), alpha], 22, 1e-6, |g, v| g.prelu(v[0], v[1]).unwrap()) < 1e-6);
    assert!(check_op(std::slice::from_ref(&x), 23, 1e-6, |g, v| g.sigmoid(v[0])) < 1e-6);
    assert!(check_op(&[x], 24, 1e-6, |g, v| g.scale(v[0], -2.5)) < 1e-6);
}

#[test]
fn add_mul_concat_gradients() {
    let a = random(&[1, 3, 3, 2, 2], 30);
    let b = random(&[1, 3, 3, 2, 2], 31);
    let one = random(&[1, 1, 3, 2, 2], 32);
    let c = random(&[1, 2, 3, 2, 2], 33);
    assert!(check_op(&[a.clone(), b.clone()], 34, 1e-6, |g, v| g.add(v[0], v[1]).unwrap()) < 1e-6);
    assert!(check_op(&[a.clone(), b.clone()], 35, 1e-6, |g, v| g.mul(v[0], v[1]).unwrap()) < 1e-6);
    assert!(check_op(&[one, b.clone()], 36, 1e-6, |g, v| g.mul(v[0], v[1]).unwrap()) < 1e-6);
    assert!(check_op(&[a, b, c], 37, 1e-6, |g, v| g.concat(v).unwrap()) < 1e-6);
}
