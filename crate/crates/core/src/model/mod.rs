//! The segmentation network: backbone, pyramid, attention, fusion heads.

pub mod attention;
pub mod backbone;
pub mod head;
pub mod pyramid;

use daf3d_tensor::{Graph, ParamBuilder, ParamStore, Scalar, Tensor, Var};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::seed;

pub use attention::{Attended, Attention, AttentionModule, Refined};
pub use backbone::{feature_extents, Backbone, Bottleneck};
pub use head::{predict_head, Aspp, Head, HeadOutputs, PREDICTION_PREFIX};
pub use pyramid::Pyramid;

/// Smallest admissible spatial extent of a network input.
pub const MIN_INPUT_EXTENT: usize = 8;

/// Graph handles of every intermediate a caller may want to inspect.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub input: Var,
    pub c: [Var; 4],
    pub p: [Var; 4],
    pub slf: [Var; 4],
    pub mlf: Var,
    pub attended: Attended,
    pub heads: HeadOutputs,
}

impl ForwardVars {
    /// The nine probability volumes: SLF 1-4, attentive 1-4, final.
    pub fn predictions(&self) -> [Var; 9] {
        let h = &self.heads;
        [h.slf[0], h.slf[1], h.slf[2], h.slf[3], h.att[0], h.att[1], h.att[2], h.att[3], h.final_pred]
    }
}

/// Nine probability volumes at the input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBundle<F> {
    pub slf: [Tensor<F>; 4],
    pub att: [Tensor<F>; 4],
    pub final_pred: Tensor<F>,
}

impl<F: Scalar> PredictionBundle<F> {
    pub fn from_graph(g: &Graph<'_, F>, v: &ForwardVars) -> Self {
        let t = |x: Var| g.value(x).clone();
        Self {
            slf: v.heads.slf.map(t),
            att: v.heads.att.map(t),
            final_pred: t(v.heads.final_pred),
        }
    }

    pub fn signals(&self) -> [&Tensor<F>; 9] {
        [
            &self.slf[0],
            &self.slf[1],
            &self.slf[2],
            &self.slf[3],
            &self.att[0],
            &self.att[1],
            &self.att[2],
            &self.att[3],
            &self.final_pred,
        ]
    }
}

pub fn check_input_extent(spatial: [usize; 3]) -> Result<()> {
    if spatial.iter().any(|&n| n < MIN_INPUT_EXTENT) {
        return Err(Error::Shape(format!(
            "input extent {:?} too small: each axis must be >= {}; W and H divisible by 8 and L by 2 give exact \
             feature scales, other sizes use ceil division",
            spatial, MIN_INPUT_EXTENT
        )));
    }
    Ok(())
}

/// Parameter-free description of the network; parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    pub backbone: Backbone,
    pub pyramid: Pyramid,
    pub attention: Attention,
    pub head: Head,
}

impl Network {
    pub fn build<F: Scalar>(config: &NetworkConfig, b: &mut ParamBuilder<'_, F>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            backbone: Backbone::new(&mut b.sub("backbone"), &config.backbone, config.gn_groups)?,
            pyramid: Pyramid::new(&mut b.sub("pyramid"), config)?,
            attention: Attention::new(&mut b.sub("attention"), config)?,
            head: Head::new(b, config)?,
        })
    }

    /// Runs the full network on `x` of shape (N, C, W, H, L).
    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<ForwardVars> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 5 || shape[1] != self.config.backbone.in_channels {
            return Err(Error::Shape(format!(
                "network input must be (N, {}, W, H, L), got {:?}",
                self.config.backbone.in_channels, shape
            )));
        }
        let out = g.spatial(x)?;
        check_input_extent(out)?;
        let c = self.backbone.forward(g, x)?;
        let p = self.pyramid.topdown(g, c)?;
        let slf = self.pyramid.slf(g, p)?;
        let mlf = self.pyramid.mlf(g, slf)?;
        let attended = self.attention.attend_all(g, slf, mlf)?;
        let heads = self.head.forward(g, slf, attended.features, out)?;
        Ok(ForwardVars { input: x, c, p, slf, mlf, attended, heads })
    }
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<F: Scalar> {
    pub net: Network,
    pub params: ParamStore<F>,
}

impl<F: Scalar> Model<F> {
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = seed::rng(seed::derive_str(seed, "init", &[]));
        let net = Network::build(config, &mut ParamBuilder::new(&mut params, &mut rng))?;
        Ok(Self { net, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.net.config
    }

    /// Zeroes the nine prediction convolutions so every output starts at 0.5.
    pub fn zero_prediction_heads(&mut self) -> usize {
        self.params.zero_where(|n| n.starts_with(PREDICTION_PREFIX))
    }

    /// Inference without recording gradients.
    pub fn predict(&self, x: &Tensor<F>) -> Result<PredictionBundle<F>> {
        let mut g = Graph::inference(&self.params);
        let xv = g.constant(x.clone());
        let v = self.net.forward(&mut g, xv)?;
        Ok(PredictionBundle::from_graph(&g, &v))
    }

    /// Inference that also returns the four attention maps.
    pub fn predict_with_attention(&self, x: &Tensor<F>) -> Result<(PredictionBundle<F>, [Tensor<F>; 4])> {
        let mut g = Graph::inference(&self.params);
        let xv = g.constant(x.clone());
        let v = self.net.forward(&mut g, xv)?;
        let maps = v.attended.maps.map(|m| g.value(m).clone());
        Ok((PredictionBundle::from_graph(&g, &v), maps))
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model { net: self.net.clone(), params: self.params.cast() }
    }
}
