//! Fusion of the attentive features, 3D ASPP, and the nine probability heads.

use daf3d_tensor::{Conv3d, ConvGeom, ConvNormAct, Graph, ParamBuilder, Scalar, Var};

use crate::config::NetworkConfig;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Aspp {
    branches: Vec<ConvNormAct>,
    project: ConvNormAct,
}

impl Aspp {
    pub fn new<F: Scalar>(b: &mut ParamBuilder<'_, F>, channels: usize, rates: [usize; 3], gn: usize) -> Result<Self> {
        let mut branches = vec![ConvNormAct::new(&mut b.sub("branch0"), channels, channels, ConvGeom::pointwise(), gn)?];
        for (i, &r) in rates.iter().enumerate() {
            branches.push(ConvNormAct::new(
                &mut b.sub(format!("branch{}", i + 1)),
                channels,
                channels,
                ConvGeom::cube(3, [1; 3], r, 1),
                gn,
            )?);
        }
        let project = ConvNormAct::new(&mut b.sub("project"), 4 * channels, channels, ConvGeom::pointwise(), gn)?;
        Ok(Self { branches, project })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let outs = self.branches.iter().map(|br| br.forward(g, x)).collect::<daf3d_tensor::Result<Vec<_>>>()?;
        let cat = g.concat(&outs)?;
        Ok(self.project.forward(g, cat)?)
    }
}

/// 1x1x1 convolution to one channel, resize of the logits, sigmoid.
pub fn predict_head<F: Scalar>(g: &mut Graph<'_, F>, head: &Conv3d, f: Var, out: [usize; 3]) -> Result<Var> {
    let logits = head.forward(g, f)?;
    let logits = g.resize(logits, out)?;
    Ok(g.sigmoid(logits))
}

#[derive(Clone, Debug)]
pub struct Head {
    fuse: ConvNormAct,
    aspp: Aspp,
    slf_heads: Vec<Conv3d>,
    att_heads: Vec<Conv3d>,
    final_head: Conv3d,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    pub slf: [Var; 4],
    pub att: [Var; 4],
    pub final_pred: Var,
    pub fused: Var,
    pub aspp: Var,
}

/// Name prefix shared by all nine 1x1x1 prediction convolutions.
pub const PREDICTION_PREFIX: &str = "heads.";

impl Head {
    /// Registers the fusion and ASPP blocks under `b` and the prediction
    /// convolutions under [`PREDICTION_PREFIX`] via `heads`.
    pub fn new<F: Scalar>(b: &mut ParamBuilder<'_, F>, cfg: &NetworkConfig) -> Result<Self> {
        let f = cfg.fused_channels;
        let fuse = ConvNormAct::new(&mut b.sub("head.fuse"), 4 * f, f, ConvGeom::cube(3, [1; 3], 1, 1), cfg.gn_groups)?;
        let aspp = Aspp::new(&mut b.sub("head.aspp"), f, cfg.aspp_rates, cfg.gn_groups)?;
        let mut hb = b.sub("heads");
        let slf_heads = (0..4)
            .map(|k| Conv3d::new(&mut hb.sub(format!("slf{}", k + 1)), cfg.slf_channels, 1, ConvGeom::pointwise()))
            .collect::<daf3d_tensor::Result<_>>()?;
        let att_heads = (0..4)
            .map(|k| Conv3d::new(&mut hb.sub(format!("att{}", k + 1)), f, 1, ConvGeom::pointwise()))
            .collect::<daf3d_tensor::Result<_>>()?;
        let final_head = Conv3d::new(&mut hb.sub("final"), f, 1, ConvGeom::pointwise())?;
        Ok(Self { fuse, aspp, slf_heads, att_heads, final_head })
    }

    pub fn fuse_attentive<F: Scalar>(&self, g: &mut Graph<'_, F>, att: [Var; 4]) -> Result<Var> {
        let cat = g.concat(&att)?;
        Ok(self.fuse.forward(g, cat)?)
    }

    pub fn aspp(&self) -> &Aspp {
        &self.aspp
    }

    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        slf: [Var; 4],
        att: [Var; 4],
        out: [usize; 3],
    ) -> Result<HeadOutputs> {
        let fused = self.fuse_attentive(g, att)?;
        let aspp = self.aspp.forward(g, fused)?;
        let mut slf_p = slf;
        let mut att_p = att;
        for k in 0..4 {
            slf_p[k] = predict_head(g, &self.slf_heads[k], slf[k], out)?;
            att_p[k] = predict_head(g, &self.att_heads[k], att[k], out)?;
        }
        let final_pred = predict_head(g, &self.final_head, aspp, out)?;
        Ok(HeadOutputs { slf: slf_p, att: att_p, final_pred, fused, aspp })
    }
}
