//! Parameterized building blocks on top of the [`Graph`] ops.

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::kernels::conv::ConvGeom;
use crate::kernels::norm::group_count;
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Initial PReLU slope; also used as the Kaiming gain parameter.
pub const PRELU_INIT: f64 = 0.25;

/// Registers parameters under a dotted name prefix.
pub struct ParamBuilder<'a, F: Scalar> {
    store: &'a mut ParamStore<F>,
    rng: &'a mut dyn RngCore,
    prefix: String,
}

impl<'a, F: Scalar> ParamBuilder<'a, F> {
    pub fn new(store: &'a mut ParamStore<F>, rng: &'a mut dyn RngCore) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn sub(&mut self, name: impl AsRef<str>) -> ParamBuilder<'_, F> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        ParamBuilder { store: self.store, rng: self.rng, prefix }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let n = self.full_name(name);
        self.store.insert(n, Tensor::full(shape, F::from_f64_lossy(value)))
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| F::from_f64_lossy(dist.sample(rng)));
        let n = self.full_name(name);
        self.store.insert(n, t)
    }
}

#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv3d {
    /// Kaiming-normal weights (PReLU gain), zero bias.
    pub fn new<F: Scalar>(b: &mut ParamBuilder<'_, F>, cin: usize, cout: usize, geom: ConvGeom) -> Result<Self> {
        if !cin.is_multiple_of(geom.groups) || !cout.is_multiple_of(geom.groups) {
            return Err(shape_err!("conv {}->{} channels not divisible by {} groups", cin, cout, geom.groups));
        }
        let cin_g = cin / geom.groups;
        let fan_in = (cin_g * geom.kernel_volume()) as f64;
        let gain = (2.0 / (1.0 + PRELU_INIT * PRELU_INIT)).sqrt();
        let [kw, kh, kl] = geom.kernel;
        let weight = b.normal("weight", &[cout, cin_g, kw, kh, kl], gain / fan_in.sqrt());
        let bias = b.constant("bias", &[cout], 0.0);
        Ok(Self { weight, bias, geom, in_channels: cin, out_channels: cout })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv3d(x, w, Some(b), self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    /// Group count is the largest divisor of `channels` up to `max_groups`.
    pub fn new<F: Scalar>(b: &mut ParamBuilder<'_, F>, channels: usize, max_groups: usize) -> Self {
        Self {
            gamma: b.constant("gamma", &[channels], 1.0),
            beta: b.constant("beta", &[channels], 0.0),
            groups: group_count(channels, max_groups),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.group_norm(x, gamma, beta, self.groups)
    }
}

#[derive(Clone, Debug)]
pub struct PRelu {
    pub alpha: ParamId,
}

impl PRelu {
    pub fn new<F: Scalar>(b: &mut ParamBuilder<'_, F>, channels: usize) -> Self {
        Self { alpha: b.constant("alpha", &[channels], PRELU_INIT) }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let a = g.param(self.alpha);
        g.prelu(x, a)
    }
}

/// Convolution followed by group normalization and PReLU.
#[derive(Clone, Debug)]
pub struct ConvNormAct {
    pub conv: Conv3d,
    pub norm: GroupNorm,
    pub act: PRelu,
}

impl ConvNormAct {
    pub fn new<F: Scalar>(
        b: &mut ParamBuilder<'_, F>,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        max_groups: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv3d::new(&mut b.sub("conv"), cin, cout, geom)?,
            norm: GroupNorm::new(&mut b.sub("gn"), cout, max_groups),
            act: PRelu::new(&mut b.sub("act"), cout),
        })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = self.norm.forward(g, y)?;
        self.act.forward(g, y)
    }
}
