//! Define-by-run tape. Each forward pass builds a fresh [`Graph`]; calling
//! [`Graph::backward`] walks it in reverse and returns parameter gradients.

use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::kernels::conv::{conv3d_backward, conv3d_forward, ConvGeom};
use crate::kernels::norm::{group_norm_backward, group_norm_forward, prelu_backward, prelu_forward};
use crate::kernels::resize::{resize_backward, resize_forward};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

pub struct BackwardCtx<'a, F> {
    pub inputs: Vec<&'a Tensor<F>>,
    pub output: &'a Tensor<F>,
    pub grad: &'a Tensor<F>,
    pub needs: Vec<bool>,
}

type BackwardFn<F> = Box<dyn Fn(&BackwardCtx<'_, F>) -> Result<Vec<Option<Tensor<F>>>>>;

struct Node<F> {
    value: Arc<Tensor<F>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<F>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Graph<'p, F: Scalar> {
    params: &'p ParamStore<F>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<F>>,
    grad_enabled: bool,
}

/// Result of [`Graph::backward`].
pub struct Gradients<F> {
    params: Vec<Option<Tensor<F>>>,
    leaves: Vec<(usize, Tensor<F>)>,
}

impl<F: Scalar> Gradients<F> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for an input leaf created with [`Graph::leaf`].
    pub fn leaf(&self, v: Var) -> Option<&Tensor<F>> {
        self.leaves.iter().find(|(i, _)| *i == v.0).map(|(_, t)| t)
    }

    pub fn into_params(self) -> Vec<Option<Tensor<F>>> {
        self.params
    }
}

fn add_into<F: Scalar>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'p, F: Scalar> Graph<'p, F> {
    /// Graph that records backward closures.
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self { params, param_vars: vec![None; params.len()], nodes: Vec::new(), grad_enabled: true }
    }

    /// Forward-only graph; no closures are stored.
    pub fn inference(params: &'p ParamStore<F>) -> Self {
        Self { grad_enabled: false, ..Self::new(params) }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn spatial(&self, v: Var) -> Result<[usize; 3]> {
        self.value(v).spatial()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Arc<Tensor<F>>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), backward: None, requires_grad, param });
        Var(self.nodes.len() - 1)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push_leaf(Arc::new(t), false, None)
    }

    /// Input leaf whose gradient is reported by [`Gradients::leaf`].
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        let rg = self.grad_enabled;
        self.push_leaf(Arc::new(t), rg, None)
    }

    /// Parameter leaf, created once per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let rg = self.grad_enabled;
        let v = self.push_leaf(self.params.shared(id), rg, Some(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    fn push(&mut self, value: Tensor<F>, parents: &[Var], backward: BackwardFn<F>) -> Var {
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = conv3d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        let has_bias = b.is_some();
        Ok(self.push(
            y,
            &parents,
            Box::new(move |ctx| {
                let need = [ctx.needs[0], ctx.needs[1], has_bias && ctx.needs[2]];
                let g = conv3d_backward(ctx.inputs[0], ctx.inputs[1], ctx.grad, &geom, need)?;
                let mut out = vec![g.x, g.w];
                if has_bias {
                    out.push(g.bias);
                }
                Ok(out)
            }),
        ))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (y, stats) = group_norm_forward(self.value(x), self.value(gamma), self.value(beta), groups)?;
        Ok(self.push(
            y,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let (gx, gg, gb) = group_norm_backward(ctx.inputs[0], ctx.inputs[1], ctx.grad, &stats, groups)?;
                Ok(vec![Some(gx), Some(gg), Some(gb)])
            }),
        ))
    }

    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let y = prelu_forward(self.value(x), self.value(alpha))?;
        Ok(self.push(
            y,
            &[x, alpha],
            Box::new(|ctx| {
                let (gx, ga) = prelu_backward(ctx.inputs[0], ctx.inputs[1], ctx.grad)?;
                Ok(vec![Some(gx), Some(ga)])
            }),
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| F::one() / (F::one() + (-v).exp()));
        self.push(
            y,
            &[x],
            Box::new(|ctx| {
                let mut g = ctx.grad.clone();
                for (gv, &y) in g.data_mut().iter_mut().zip(ctx.output.data()) {
                    *gv *= y * (F::one() - y);
                }
                Ok(vec![Some(g)])
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!("add: shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        Ok(self.push(y, &[a, b], Box::new(|ctx| Ok(vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]))))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let mut y = self.value(a).clone();
        y.scale(s);
        self.push(
            y,
            &[a],
            Box::new(move |ctx| {
                let mut g = ctx.grad.clone();
                g.scale(s);
                Ok(vec![Some(g)])
            }),
        )
    }

    /// Element-wise product. `a` may have a single channel, in which case it
    /// is broadcast across the channels of `b`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [an, ac, aw, ah, al] = self.value(a).dims5()?;
        let [bn, bc, bw, bh, bl] = self.value(b).dims5()?;
        if an != bn || [aw, ah, al] != [bw, bh, bl] || (ac != bc && ac != 1) {
            return Err(shape_err!("mul: shapes {:?} and {:?} are not compatible", self.shape(a), self.shape(b)));
        }
        let s = bw * bh * bl;
        let broadcast = ac != bc;
        let at = self.value(a);
        let bt = self.value(b);
        let mut y = bt.clone();
        for n in 0..bn {
            for c in 0..bc {
                let ai = if broadcast { n } else { n * bc + c };
                let off = (n * bc + c) * s;
                let av = &at.data()[ai * s..(ai + 1) * s];
                for (yv, &x) in y.data_mut()[off..off + s].iter_mut().zip(av) {
                    *yv *= x;
                }
            }
        }
        Ok(self.push(
            y,
            &[a, b],
            Box::new(move |ctx| {
                let (at, bt, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
                let ga = ctx.needs[0].then(|| {
                    let mut ga = Tensor::zeros(at.shape());
                    for n in 0..bn {
                        for c in 0..bc {
                            let ai = if broadcast { n } else { n * bc + c };
                            let off = (n * bc + c) * s;
                            let dst = &mut ga.data_mut()[ai * s..(ai + 1) * s];
                            for ((d, &gv), &bv) in dst.iter_mut().zip(&g.data()[off..off + s]).zip(&bt.data()[off..off + s]) {
                                *d += gv * bv;
                            }
                        }
                    }
                    ga
                });
                let gb = ctx.needs[1].then(|| {
                    let mut gb = g.clone();
                    for n in 0..bn {
                        for c in 0..bc {
                            let ai = if broadcast { n } else { n * bc + c };
                            let off = (n * bc + c) * s;
                            for (d, &av) in gb.data_mut()[off..off + s].iter_mut().zip(&at.data()[ai * s..(ai + 1) * s]) {
                                *d *= av;
                            }
                        }
                    }
                    gb
                });
                Ok(vec![ga, gb])
            }),
        ))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(shape_err!("concat of zero tensors"));
        }
        let [n, _, w, h, l] = self.value(xs[0]).dims5()?;
        let mut chans = Vec::with_capacity(xs.len());
        for &x in xs {
            let [xn, xc, xw, xh, xl] = self.value(x).dims5()?;
            if xn != n || [xw, xh, xl] != [w, h, l] {
                return Err(shape_err!("concat: shape {:?} does not match {:?}", self.shape(x), self.shape(xs[0])));
            }
            chans.push(xc);
        }
        let total: usize = chans.iter().sum();
        let s = w * h * l;
        let mut y = Tensor::zeros(&[n, total, w, h, l]);
        for b in 0..n {
            let mut c0 = 0;
            for (&x, &c) in xs.iter().zip(&chans) {
                let src = &self.value(x).data()[b * c * s..(b + 1) * c * s];
                y.data_mut()[(b * total + c0) * s..(b * total + c0 + c) * s].copy_from_slice(src);
                c0 += c;
            }
        }
        Ok(self.push(
            y,
            xs,
            Box::new(move |ctx| {
                let mut out = Vec::with_capacity(chans.len());
                let mut c0 = 0;
                for (i, &c) in chans.iter().enumerate() {
                    if ctx.needs[i] {
                        let mut g = Tensor::zeros(&[n, c, w, h, l]);
                        for b in 0..n {
                            g.data_mut()[b * c * s..(b + 1) * c * s]
                                .copy_from_slice(&ctx.grad.data()[(b * total + c0) * s..(b * total + c0 + c) * s]);
                        }
                        out.push(Some(g));
                    } else {
                        out.push(None);
                    }
                    c0 += c;
                }
                Ok(out)
            }),
        ))
    }

    /// Trilinear resize to an exact spatial extent; identity when the extent
    /// already matches.
    pub fn resize(&mut self, x: Var, target: [usize; 3]) -> Result<Var> {
        if self.spatial(x)? == target {
            return Ok(x);
        }
        let y = resize_forward(self.value(x), target)?;
        let in_shape = self.shape(x).to_vec();
        Ok(self.push(y, &[x], Box::new(move |ctx| Ok(vec![Some(resize_backward(&in_shape, ctx.grad)?)]))))
    }

    /// Reverse sweep seeded with `d(loss)/d(var)` for each `(var, grad)` pair.
    pub fn backward(&self, seeds: Vec<(Var, Tensor<F>)>) -> Result<Gradients<F>> {
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.shape(v) {
                return Err(shape_err!("seed gradient shape {:?} vs value {:?}", g.shape(), self.shape(v)));
            }
            if self.nodes[v.0].requires_grad {
                add_into(&mut grads[v.0], g);
            }
        }
        let mut out = Gradients { params: (0..self.params.len()).map(|_| None).collect(), leaves: Vec::new() };
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(pid) = node.param {
                out.params[pid.0] = Some(g);
                continue;
            }
            let Some(bw) = node.backward.as_ref() else {
                if node.parents.is_empty() {
                    out.leaves.push((i, g));
                }
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.parents.iter().map(|&p| &*self.nodes[p].value).collect(),
                output: &node.value,
                grad: &g,
                needs: node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect(),
            };
            let gin = bw(&ctx)?;
            for (&p, gp) in node.parents.iter().zip(gin) {
                if let Some(gp) = gp {
                    if self.nodes[p].requires_grad {
                        add_into(&mut grads[p], gp);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_parent_gradients_accumulate() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.leaf(Tensor::from_vec(&[1, 1, 1, 1, 2], vec![2.0, -3.0]).unwrap());
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let grads = g.backward(vec![(z, Tensor::full(&[1, 1, 1, 1, 2], 1.0))]).unwrap();
        assert_eq!(grads.leaf(x).unwrap().data(), &[5.0, -5.0]);
    }

    #[test]
    fn broadcast_mul_sums_over_channels() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let a = g.leaf(Tensor::from_vec(&[1, 1, 1, 1, 2], vec![2.0, 3.0]).unwrap());
        let b = g.leaf(Tensor::from_vec(&[1, 2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.mul(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 6.0, 6.0, 12.0]);
        let grads = g.backward(vec![(y, Tensor::full(&[1, 2, 1, 1, 2], 1.0))]).unwrap();
        assert_eq!(grads.leaf(a).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(grads.leaf(b).unwrap().data(), &[2.0, 3.0, 2.0, 3.0]);
    }

    #[test]
    fn inference_graph_stores_no_gradients() {
        let mut store = ParamStore::<f32>::new();
        let id = store.insert("w", Tensor::full(&[1, 1, 1, 1, 1], 2.0));
        let mut g = Graph::inference(&store);
        let w = g.param(id);
        let x = g.leaf(Tensor::full(&[1, 1, 1, 1, 1], 3.0));
        let y = g.mul(w, x).unwrap();
        let grads = g.backward(vec![(y, Tensor::full(&[1, 1, 1, 1, 1], 1.0))]).unwrap();
        assert!(grads.param(id).is_none());
    }
}
