//! Strided, dilated, grouped 3D convolution via tiled im2col + GEMM.

use crate::error::{shape_err, Result};
use crate::scalar::{MatMut, MatRef, Scalar};
use crate::tensor::Tensor;

/// Upper bound on the number of elements in one im2col tile.
const TILE_ELEMS: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub dilation: [usize; 3],
    pub groups: usize,
}

impl ConvGeom {
    /// Cubic kernel with "same"-style padding `dilation * (k / 2)`.
    pub fn cube(k: usize, stride: [usize; 3], dilation: usize, groups: usize) -> Self {
        let pad = dilation * (k / 2);
        Self {
            kernel: [k; 3],
            stride,
            padding: [pad; 3],
            dilation: [dilation; 3],
            groups,
        }
    }

    pub fn pointwise() -> Self {
        Self::cube(1, [1; 3], 1, 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.padding == [0; 3]
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Output extent along each spatial axis. With padding equal to
    /// `dilation * (k / 2)` and odd `k` this is `ceil(n / stride)`.
    pub fn output_spatial(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            if self.stride[a] == 0 || self.dilation[a] == 0 || self.kernel[a] == 0 {
                return Err(shape_err!("degenerate convolution geometry {:?}", self));
            }
            let span = self.dilation[a] * (self.kernel[a] - 1) + 1;
            let padded = input[a] + 2 * self.padding[a];
            if padded < span {
                return Err(shape_err!(
                    "axis {} of extent {} too small for kernel span {} with padding {}",
                    a,
                    input[a],
                    span,
                    self.padding[a]
                ));
            }
            out[a] = (padded - span) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

struct Plan {
    n: usize,
    cin: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    k: usize,
    ins: [usize; 3],
    outs: [usize; 3],
}

impl Plan {
    fn new<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, geom: &ConvGeom) -> Result<Self> {
        let [n, cin, iw, ih, il] = x.dims5()?;
        let [cout, cin_g, kw, kh, kl] = w.dims5()?;
        if [kw, kh, kl] != geom.kernel {
            return Err(shape_err!("weight kernel {:?} differs from geometry {:?}", [kw, kh, kl], geom.kernel));
        }
        if geom.groups == 0 || cin % geom.groups != 0 || cout % geom.groups != 0 {
            return Err(shape_err!("channels {}->{} not divisible into {} groups", cin, cout, geom.groups));
        }
        if cin / geom.groups != cin_g {
            return Err(shape_err!(
                "input has {} channels but weight expects {} per group x {} groups",
                cin,
                cin_g,
                geom.groups
            ));
        }
        let outs = geom.output_spatial([iw, ih, il])?;
        Ok(Self {
            n,
            cin,
            cout,
            cin_g,
            cout_g: cout / geom.groups,
            k: cin_g * geom.kernel_volume(),
            ins: [iw, ih, il],
            outs,
        })
    }

    fn in_vol(&self) -> usize {
        self.ins.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.outs.iter().product()
    }

    /// Number of output W-slabs per tile.
    fn tile_rows(&self) -> usize {
        let slab = self.outs[1] * self.outs[2];
        (TILE_ELEMS / (self.k * slab).max(1)).clamp(1, self.outs[0])
    }
}

/// Range of output indices `o` whose input tap `o*s + off - pad` lands in `[0, n)`.
fn valid_range(n_out: usize, n_in: usize, stride: usize, off: usize, pad: usize) -> (usize, usize) {
    // need o*s + off >= pad and o*s + off - pad <= n_in - 1
    let lo = if off >= pad { 0 } else { (pad - off).div_ceil(stride) };
    let hi = if n_in + pad <= off { 0 } else { ((n_in - 1 + pad - off) / stride + 1).min(n_out) };
    (lo.min(hi), hi)
}

/// Gathers the receptive fields of output W-slabs `[ow0, ow1)` into `col`
/// (`k` rows by `(ow1-ow0)*H'*L'` columns).
fn im2col<F: Scalar>(x: &[F], plan: &Plan, geom: &ConvGeom, ow0: usize, ow1: usize, col: &mut [F]) {
    let [_, ih, il] = plan.ins;
    let [_, oh, ol] = plan.outs;
    let cols = (ow1 - ow0) * oh * ol;
    let [kw, kh, kl] = geom.kernel;
    let plane = plan.in_vol();
    for ci in 0..plan.cin_g {
        let xc = &x[ci * plane..(ci + 1) * plane];
        for a in 0..kw {
            for b in 0..kh {
                for c in 0..kl {
                    let row = ((ci * kw + a) * kh + b) * kl + c;
                    let dst_row = &mut col[row * cols..(row + 1) * cols];
                    let (lw, hw) = valid_range(plan.outs[0], plan.ins[0], geom.stride[0], a * geom.dilation[0], geom.padding[0]);
                    let (lh, hh) = valid_range(oh, ih, geom.stride[1], b * geom.dilation[1], geom.padding[1]);
                    let (ll, hl) = valid_range(ol, il, geom.stride[2], c * geom.dilation[2], geom.padding[2]);
                    for ow in ow0..ow1 {
                        let base = (ow - ow0) * oh * ol;
                        let dst_w = &mut dst_row[base..base + oh * ol];
                        if ow < lw || ow >= hw {
                            dst_w.fill(F::zero());
                            continue;
                        }
                        let xw = ow * geom.stride[0] + a * geom.dilation[0] - geom.padding[0];
                        for y in 0..oh {
                            let dst = &mut dst_w[y * ol..(y + 1) * ol];
                            if y < lh || y >= hh || ll >= hl {
                                dst.fill(F::zero());
                                continue;
                            }
                            let xh = y * geom.stride[1] + b * geom.dilation[1] - geom.padding[1];
                            let src = &xc[(xw * ih + xh) * il..(xw * ih + xh + 1) * il];
                            dst[..ll].fill(F::zero());
                            dst[hl..].fill(F::zero());
                            let s = geom.stride[2];
                            let start = ll * s + c * geom.dilation[2] - geom.padding[2];
                            if s == 1 {
                                dst[ll..hl].copy_from_slice(&src[start..start + (hl - ll)]);
                            } else {
                                for (j, d) in dst[ll..hl].iter_mut().enumerate() {
                                    *d = src[start + j * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `col` back into `gx`.
fn col2im<F: Scalar>(col: &[F], plan: &Plan, geom: &ConvGeom, ow0: usize, ow1: usize, gx: &mut [F]) {
    let [_, ih, il] = plan.ins;
    let [_, oh, ol] = plan.outs;
    let cols = (ow1 - ow0) * oh * ol;
    let [kw, kh, kl] = geom.kernel;
    let plane = plan.in_vol();
    for ci in 0..plan.cin_g {
        let gxc = &mut gx[ci * plane..(ci + 1) * plane];
        for a in 0..kw {
            for b in 0..kh {
                for c in 0..kl {
                    let row = ((ci * kw + a) * kh + b) * kl + c;
                    let src_row = &col[row * cols..(row + 1) * cols];
                    let (lw, hw) = valid_range(plan.outs[0], plan.ins[0], geom.stride[0], a * geom.dilation[0], geom.padding[0]);
                    let (lh, hh) = valid_range(oh, ih, geom.stride[1], b * geom.dilation[1], geom.padding[1]);
                    let (ll, hl) = valid_range(ol, il, geom.stride[2], c * geom.dilation[2], geom.padding[2]);
                    if ll >= hl {
                        continue;
                    }
                    for ow in ow0.max(lw)..ow1.min(hw) {
                        let xw = ow * geom.stride[0] + a * geom.dilation[0] - geom.padding[0];
                        for y in lh..hh {
                            let xh = y * geom.stride[1] + b * geom.dilation[1] - geom.padding[1];
                            let src = &src_row[((ow - ow0) * oh + y) * ol..((ow - ow0) * oh + y + 1) * ol];
                            let dst = &mut gxc[(xw * ih + xh) * il..(xw * ih + xh + 1) * il];
                            let s = geom.stride[2];
                            let start = ll * s + c * geom.dilation[2] - geom.padding[2];
                            for (j, &v) in src[ll..hl].iter().enumerate() {
                                dst[start + j * s] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv3d_forward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    geom: &ConvGeom,
) -> Result<Tensor<F>> {
    let plan = Plan::new(x, w, geom)?;
    if let Some(b) = bias {
        if b.shape() != [plan.cout] {
            return Err(shape_err!("bias shape {:?} does not match {} output channels", b.shape(), plan.cout));
        }
    }
    let p = plan.out_vol();
    let s_in = plan.in_vol();
    let [ow_total, oh, ol] = plan.outs;
    let mut y = Tensor::zeros(&[plan.n, plan.cout, plan.outs[0], plan.outs[1], plan.outs[2]]);
    let tile = plan.tile_rows();
    let mut col = if geom.is_pointwise() { Vec::new() } else { vec![F::zero(); plan.k * tile * oh * ol] };
    let xd = x.data();
    let wd = w.data();
    let yd = y.data_mut();
    for n in 0..plan.n {
        for g in 0..geom.groups {
            let xg = &xd[(n * plan.cin + g * plan.cin_g) * s_in..(n * plan.cin + (g + 1) * plan.cin_g) * s_in];
            let wg = MatRef::row_major(&wd[g * plan.cout_g * plan.k..(g + 1) * plan.cout_g * plan.k], plan.cout_g, plan.k);
            let y_off = (n * plan.cout + g * plan.cout_g) * p;
            let yg = &mut yd[y_off..y_off + plan.cout_g * p];
            if geom.is_pointwise() {
                F::gemm(F::one(), wg, MatRef::row_major(xg, plan.k, p), F::zero(), MatMut::row_major(yg, plan.cout_g, p));
                continue;
            }
            let mut ow0 = 0;
            while ow0 < ow_total {
                let ow1 = (ow0 + tile).min(ow_total);
                let cols = (ow1 - ow0) * oh * ol;
                let buf = &mut col[..plan.k * cols];
                im2col(xg, &plan, geom, ow0, ow1, buf);
                let p0 = ow0 * oh * ol;
                let dst = MatMut { data: &mut yg[p0..], rows: plan.cout_g, cols, row_stride: p, col_stride: 1 };
                F::gemm(F::one(), wg, MatRef::row_major(buf, plan.k, cols), F::zero(), dst);
                ow0 = ow1;
            }
        }
        if let Some(b) = bias {
            for (co, &bv) in b.data().iter().enumerate() {
                let off = (n * plan.cout + co) * p;
                yd[off..off + p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(y)
}

/// Gradients of a convolution. Entries are `None` when not requested.
pub struct ConvGrads<F> {
    pub x: Option<Tensor<F>>,
    pub w: Option<Tensor<F>>,
    pub bias: Option<Tensor<F>>,
}

pub fn conv3d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    gy: &Tensor<F>,
    geom: &ConvGeom,
    need: [bool; 3],
) -> Result<ConvGrads<F>> {
    let plan = Plan::new(x, w, geom)?;
    let p = plan.out_vol();
    let s_in = plan.in_vol();
    let [ow_total, oh, ol] = plan.outs;
    if gy.shape() != [plan.n, plan.cout, plan.outs[0], plan.outs[1], plan.outs[2]] {
        return Err(shape_err!("output gradient shape {:?} mismatch", gy.shape()));
    }
    let [need_x, need_w, need_b] = need;
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape()));
    let gb = need_b.then(|| {
        let mut t = Tensor::zeros(&[plan.cout]);
        for n in 0..plan.n {
            for co in 0..plan.cout {
                t.data_mut()[co] += gy.channel(n, co).iter().copied().sum::<F>();
            }
        }
        t
    });
    if !(need_x || need_w) {
        return Ok(ConvGrads { x: gx, w: gw, bias: gb });
    }
    let tile = plan.tile_rows();
    let mut col = if geom.is_pointwise() { Vec::new() } else { vec![F::zero(); plan.k * tile * oh * ol] };
    let xd = x.data();
    let wd = w.data();
    let gyd = gy.data();
    for n in 0..plan.n {
        for g in 0..geom.groups {
            let x_range = (n * plan.cin + g * plan.cin_g) * s_in..(n * plan.cin + (g + 1) * plan.cin_g) * s_in;
            let xg = &xd[x_range.clone()];
            let w_range = g * plan.cout_g * plan.k..(g + 1) * plan.cout_g * plan.k;
            let wg = &wd[w_range.clone()];
            let y_off = (n * plan.cout + g * plan.cout_g) * p;
            let gyg = &gyd[y_off..y_off + plan.cout_g * p];
            if geom.is_pointwise() {
                if let Some(gw) = gw.as_mut() {
                    let dst = MatMut::row_major(&mut gw.data_mut()[w_range.clone()], plan.cout_g, plan.k);
                    F::gemm(F::one(), MatRef::row_major(gyg, plan.cout_g, p), MatRef::row_major_t(xg, plan.k, p), F::one(), dst);
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = MatMut::row_major(&mut gx.data_mut()[x_range.clone()], plan.k, p);
                    F::gemm(F::one(), MatRef::row_major_t(wg, plan.cout_g, plan.k), MatRef::row_major(gyg, plan.cout_g, p), F::one(), dst);
                }
                continue;
            }
            let mut ow0 = 0;
            while ow0 < ow_total {
                let ow1 = (ow0 + tile).min(ow_total);
                let cols = (ow1 - ow0) * oh * ol;
                let p0 = ow0 * oh * ol;
                let gy_tile = MatRef { data: &gyg[p0..], rows: plan.cout_g, cols, row_stride: p, col_stride: 1 };
                let buf = &mut col[..plan.k * cols];
                if let Some(gw) = gw.as_mut() {
                    im2col(xg, &plan, geom, ow0, ow1, buf);
                    let dst = MatMut::row_major(&mut gw.data_mut()[w_range.clone()], plan.cout_g, plan.k);
                    F::gemm(F::one(), gy_tile, MatRef::row_major_t(buf, plan.k, cols), F::one(), dst);
                }
                if let Some(gx) = gx.as_mut() {
                    F::gemm(
                        F::one(),
                        MatRef::row_major_t(wg, plan.cout_g, plan.k),
                        gy_tile,
                        F::zero(),
                        MatMut::row_major(buf, plan.k, cols),
                    );
                    col2im(buf, &plan, geom, ow0, ow1, &mut gx.data_mut()[x_range.clone()]);
                }
                ow0 = ow1;
            }
        }
    }
    Ok(ConvGrads { x: gx, w: gw, bias: gb })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution used as the reference.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, geom: &ConvGeom) -> Tensor<f64> {
        let [n, cin, iw, ih, il] = x.dims5().unwrap();
        let [cout, cin_g, kw, kh, kl] = w.dims5().unwrap();
        let [ow, oh, ol] = geom.output_spatial([iw, ih, il]).unwrap();
        let cout_g = cout / geom.groups;
        let mut y = Tensor::zeros(&[n, cout, ow, oh, ol]);
        let xi = |b: usize, c: usize, p: isize, q: isize, r: isize| -> f64 {
            if p < 0 || q < 0 || r < 0 || p >= iw as isize || q >= ih as isize || r >= il as isize {
                0.0
            } else {
                x.data()[(((b * cin + c) * iw + p as usize) * ih + q as usize) * il + r as usize]
            }
        };
        for bn in 0..n {
            for co in 0..cout {
                let g = co / cout_g;
                for o0 in 0..ow {
                    for o1 in 0..oh {
                        for o2 in 0..ol {
                            let mut s = b.map(|b| b.data()[co]).unwrap_or(0.0);
                            for ci in 0..cin_g {
                                for a in 0..kw {
                                    for bb in 0..kh {
                                        for c in 0..kl {
                                            let p = (o0 * geom.stride[0] + a * geom.dilation[0]) as isize - geom.padding[0] as isize;
                                            let q = (o1 * geom.stride[1] + bb * geom.dilation[1]) as isize - geom.padding[1] as isize;
                                            let r = (o2 * geom.stride[2] + c * geom.dilation[2]) as isize - geom.padding[2] as isize;
                                            let wv = w.data()[(((co * cin_g + ci) * kw + a) * kh + bb) * kl + c];
                                            s += wv * xi(bn, g * cin / geom.groups + ci, p, q, r);
                                        }
                                    }
                                }
                            }
                            y.data_mut()[(((bn * cout + co) * ow + o0) * oh + o1) * ol + o2] = s;
                        }
                    }
                }
            }
        }
        y
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn matches_naive_across_geometries() {
        let cases = [
            (ConvGeom::cube(3, [1, 1, 1], 1, 1), [1, 3, 5, 6, 4], 4),
            (ConvGeom::cube(3, [2, 2, 2], 1, 1), [2, 2, 7, 5, 6], 3),
            (ConvGeom::cube(3, [2, 2, 1], 1, 2), [1, 4, 9, 8, 5], 6),
            (ConvGeom::cube(3, [1, 1, 1], 2, 2), [1, 4, 6, 6, 6], 4),
            (ConvGeom::cube(3, [1, 1, 1], 6, 1), [1, 2, 4, 5, 3], 2),
            (ConvGeom::cube(1, [2, 2, 1], 1, 1), [1, 3, 5, 4, 3], 2),
            (ConvGeom::pointwise(), [2, 3, 3, 2, 4], 5),
        ];
        for (i, (geom, xs, cout)) in cases.iter().enumerate() {
            let x = pseudo(xs, i as u64);
            let cin_g = xs[1] / geom.groups;
            let w = pseudo(&[*cout, cin_g, geom.kernel[0], geom.kernel[1], geom.kernel[2]], 100 + i as u64);
            let b = pseudo(&[*cout], 200 + i as u64);
            let fast = conv3d_forward(&x, &w, Some(&b), geom).unwrap();
            let slow = naive(&x, &w, Some(&b), geom);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-12, "case {i}");
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <gy, conv(x)> is bilinear; its derivatives w.r.t. x and w are the
        // backward outputs, so checking <gx, dx> = <gy, conv(dx)> with bias-free
        // conv verifies the x-adjoint exactly, likewise for w.
        let cases = [
            (ConvGeom::cube(3, [2, 2, 1], 1, 2), [1, 4, 7, 6, 5], 4),
            (ConvGeom::cube(3, [1, 1, 1], 2, 1), [2, 2, 5, 5, 4], 3),
            (ConvGeom::cube(1, [2, 2, 2], 1, 1), [1, 3, 5, 5, 5], 2),
            (ConvGeom::pointwise(), [1, 3, 3, 3, 3], 2),
        ];
        for (i, (geom, xs, cout)) in cases.iter().enumerate() {
            let x = pseudo(xs, 10 + i as u64);
            let w = pseudo(&[*cout, xs[1] / geom.groups, geom.kernel[0], geom.kernel[1], geom.kernel[2]], 20 + i as u64);
            let y = conv3d_forward(&x, &w, None, geom).unwrap();
            let gy = pseudo(y.shape(), 30 + i as u64);
            let grads = conv3d_backward(&x, &w, &gy, geom, [true, true, true]).unwrap();
            let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
            let dx = pseudo(xs, 40 + i as u64);
            let lhs = dot(grads.x.as_ref().unwrap(), &dx);
            let rhs = dot(&gy, &conv3d_forward(&dx, &w, None, geom).unwrap());
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()), "x adjoint case {i}");
            let dw = pseudo(w.shape(), 50 + i as u64);
            let lhs = dot(grads.w.as_ref().unwrap(), &dw);
            let rhs = dot(&gy, &conv3d_forward(&x, &dw, None, geom).unwrap());
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()), "w adjoint case {i}");
            let gb = grads.bias.unwrap();
            for co in 0..*cout {
                let s: f64 = (0..xs[0]).map(|n| gy.channel(n, co).iter().sum::<f64>()).sum();
                assert!((gb.data()[co] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_padding_gives_ceil_division() {
        let g = ConvGeom::cube(3, [2, 2, 2], 1, 1);
        assert_eq!(g.output_spatial([170, 132, 80]).unwrap(), [85, 66, 40]);
        let g = ConvGeom::cube(3, [2, 2, 1], 1, 1);
        assert_eq!(g.output_spatial([85, 66, 40]).unwrap(), [43, 33, 40]);
        let g = ConvGeom::cube(1, [2, 2, 1], 1, 1);
        assert_eq!(g.output_spatial([43, 33, 40]).unwrap(), [22, 17, 40]);
    }
}
