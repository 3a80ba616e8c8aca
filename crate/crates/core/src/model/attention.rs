//! Per-layer attention: weights computed from the concatenated SLF and MLF,
//! used to gate the MLF before merging it back with the SLF.

use daf3d_tensor::{Conv3d, ConvGeom, ConvNormAct, Graph, ParamBuilder, Scalar, Var};

use crate::config::{AttentionMode, NetworkConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct Refined {
    /// `A ⊙ MLF`, before the merge convolutions.
    pub weighted: Var,
    /// The attentive feature map.
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct AttentionModule {
    weight_convs: [ConvNormAct; 2],
    weight_out: Conv3d,
    merge_convs: [ConvNormAct; 2],
    merge_out: Conv3d,
}

impl AttentionModule {
    pub fn new<F: Scalar>(b: &mut ParamBuilder<'_, F>, cfg: &NetworkConfig) -> Result<Self> {
        let (s, f, gg) = (cfg.slf_channels, cfg.fused_channels, cfg.gn_groups);
        let k3 = ConvGeom::cube(3, [1; 3], 1, 1);
        let a_ch = match cfg.attention {
            AttentionMode::PerChannel => f,
            AttentionMode::SingleChannel => 1,
        };
        Ok(Self {
            weight_convs: [
                ConvNormAct::new(&mut b.sub("weights0"), s + f, f, k3, gg)?,
                ConvNormAct::new(&mut b.sub("weights1"), f, f, k3, gg)?,
            ],
            weight_out: Conv3d::new(&mut b.sub("weights_out"), f, a_ch, ConvGeom::pointwise())?,
            merge_convs: [
                ConvNormAct::new(&mut b.sub("merge0"), f + s, f, k3, gg)?,
                ConvNormAct::new(&mut b.sub("merge1"), f, f, k3, gg)?,
            ],
            merge_out: Conv3d::new(&mut b.sub("merge_out"), f, f, ConvGeom::pointwise())?,
        })
    }

    /// `A = sigmoid(f_a(concat(slf, mlf)))`.
    pub fn weights<F: Scalar>(&self, g: &mut Graph<'_, F>, slf: Var, mlf: Var) -> Result<Var> {
        if g.spatial(slf)? != g.spatial(mlf)? {
            return Err(Error::Shape(format!(
                "SLF extent {:?} differs from MLF extent {:?}",
                g.spatial(slf)?,
                g.spatial(mlf)?
            )));
        }
        let mut h = g.concat(&[slf, mlf])?;
        for c in &self.weight_convs {
            h = c.forward(g, h)?;
        }
        let w = self.weight_out.forward(g, h)?;
        Ok(g.sigmoid(w))
    }

    pub fn refine<F: Scalar>(&self, g: &mut Graph<'_, F>, slf: Var, mlf: Var, a: Var) -> Result<Refined> {
        let weighted = g.mul(a, mlf)?;
        let mut h = g.concat(&[weighted, slf])?;
        for c in &self.merge_convs {
            h = c.forward(g, h)?;
        }
        let output = self.merge_out.forward(g, h)?;
        Ok(Refined { weighted, output })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub features: [Var; 4],
    pub maps: [Var; 4],
    pub weighted: [Var; 4],
}

#[derive(Clone, Debug)]
pub struct Attention {
    modules: Vec<AttentionModule>,
}

impl Attention {
    pub fn new<F: Scalar>(b: &mut ParamBuilder<'_, F>, cfg: &NetworkConfig) -> Result<Self> {
        let modules = (0..4)
            .map(|k| AttentionModule::new(&mut b.sub(format!("layer{}", k + 1)), cfg))
            .collect::<Result<_>>()?;
        Ok(Self { modules })
    }

    pub fn module(&self, k: usize) -> &AttentionModule {
        &self.modules[k]
    }

    pub fn attend_all<F: Scalar>(&self, g: &mut Graph<'_, F>, s: [Var; 4], mlf: Var) -> Result<Attended> {
        let mut out = Attended { features: s, maps: s, weighted: s };
        for (k, m) in self.modules.iter().enumerate() {
            let a = m.weights(g, s[k], mlf)?;
            let r = m.refine(g, s[k], mlf, a)?;
            out.maps[k] = a;
            out.features[k] = r.output;
            out.weighted[k] = r.weighted;
        }
        Ok(out)
    }
}
