//! Top-down feature pyramid, per-layer single-layer features (SLF) at the
//! layer-1 resolution, and their fusion into the multi-layer feature (MLF).

use daf3d_tensor::{Conv3d, ConvGeom, ConvNormAct, Graph, ParamBuilder, Scalar, Var};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Pyramid {
    laterals: Vec<Conv3d>,
    smooth: Vec<ConvNormAct>,
    fuse: ConvNormAct,
}

impl Pyramid {
    pub fn new<F: Scalar>(b: &mut ParamBuilder<'_, F>, cfg: &NetworkConfig) -> Result<Self> {
        let mut laterals = Vec::with_capacity(4);
        let mut smooth = Vec::with_capacity(4);
        for k in 0..4 {
            laterals.push(Conv3d::new(
                &mut b.sub(format!("lateral{}", k + 1)),
                cfg.backbone.stage_channels[k],
                cfg.pyramid_channels,
                ConvGeom::pointwise(),
            )?);
            smooth.push(ConvNormAct::new(
                &mut b.sub(format!("slf{}", k + 1)),
                cfg.pyramid_channels,
                cfg.slf_channels,
                ConvGeom::cube(3, [1; 3], 1, 1),
                cfg.gn_groups,
            )?);
        }
        let fuse = ConvNormAct::new(
            &mut b.sub("mlf"),
            4 * cfg.slf_channels,
            cfg.fused_channels,
            ConvGeom::cube(3, [1; 3], 1, 1),
            cfg.gn_groups,
        )?;
        Ok(Self { laterals, smooth, fuse })
    }

    /// `p4 = lateral(c4)`, `p_k = lateral(c_k) + resize(p_{k+1})`.
    pub fn topdown<F: Scalar>(&self, g: &mut Graph<'_, F>, c: [Var; 4]) -> Result<[Var; 4]> {
        let mut p = [c[3]; 4];
        p[3] = self.laterals[3].forward(g, c[3])?;
        for k in (0..3).rev() {
            let lat = self.laterals[k].forward(g, c[k])?;
            let target = g.spatial(c[k])?;
            if g.shape(lat)[1] != g.shape(p[k + 1])[1] {
                return Err(Error::Shape(format!(
                    "pyramid level {} has {} channels, level {} has {}",
                    k + 1,
                    g.shape(lat)[1],
                    k + 2,
                    g.shape(p[k + 1])[1]
                )));
            }
            let up = g.resize(p[k + 1], target)?;
            p[k] = g.add(lat, up)?;
        }
        Ok(p)
    }

    /// Smooths each pyramid level, then resizes it to the exact extent of `p1`.
    pub fn slf<F: Scalar>(&self, g: &mut Graph<'_, F>, p: [Var; 4]) -> Result<[Var; 4]> {
        let target = g.spatial(p[0])?;
        let mut s = p;
        for k in 0..4 {
            let h = self.smooth[k].forward(g, p[k])?;
            s[k] = g.resize(h, target)?;
        }
        Ok(s)
    }

    pub fn mlf<F: Scalar>(&self, g: &mut Graph<'_, F>, s: [Var; 4]) -> Result<Var> {
        let cat = g.concat(&s)?;
        Ok(self.fuse.forward(g, cat)?)
    }
}
