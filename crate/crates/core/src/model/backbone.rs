//! 3D ResNeXt feature extractor producing four feature levels.

use daf3d_tensor::{Conv3d, ConvGeom, ConvNormAct, Graph, GroupNorm, PRelu, ParamBuilder, Scalar, Var};

use crate::config::BackboneConfig;
use crate::error::Result;

/// Residual block: 1x1 reduce, grouped 3x3x3 (carries stride and dilation),
/// 1x1 expand, with a projection shortcut when the shape changes.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    reduce: ConvNormAct,
    grouped: ConvNormAct,
    expand: Conv3d,
    expand_norm: GroupNorm,
    shortcut: Option<(Conv3d, GroupNorm)>,
    act: PRelu,
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar>(
        b: &mut ParamBuilder<'_, F>,
        cin: usize,
        cout: usize,
        stride: [usize; 3],
        dilation: usize,
        cardinality: usize,
        max_groups: usize,
    ) -> Result<Self> {
        let mid = BackboneConfig::bottleneck_width(cout);
        let reduce = ConvNormAct::new(&mut b.sub("reduce"), cin, mid, ConvGeom::pointwise(), max_groups)?;
        let grouped = ConvNormAct::new(
            &mut b.sub("grouped"),
            mid,
            mid,
            ConvGeom::cube(3, stride, dilation, cardinality),
            max_groups,
        )?;
        let expand = Conv3d::new(&mut b.sub("expand.conv"), mid, cout, ConvGeom::pointwise())?;
        let expand_norm = GroupNorm::new(&mut b.sub("expand.gn"), cout, max_groups);
        let shortcut = if cin != cout || stride != [1; 3] {
            let geom = ConvGeom { stride, ..ConvGeom::pointwise() };
            Some((
                Conv3d::new(&mut b.sub("shortcut.conv"), cin, cout, geom)?,
                GroupNorm::new(&mut b.sub("shortcut.gn"), cout, max_groups),
            ))
        } else {
            None
        };
        let act = PRelu::new(&mut b.sub("act"), cout);
        Ok(Self { reduce, grouped, expand, expand_norm, shortcut, act })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let y = self.reduce.forward(g, x)?;
        let y = self.grouped.forward(g, y)?;
        let y = self.expand.forward(g, y)?;
        let y = self.expand_norm.forward(g, y)?;
        let skip = match &self.shortcut {
            Some((conv, norm)) => {
                let s = conv.forward(g, x)?;
                norm.forward(g, s)?
            }
            None => x,
        };
        let y = g.add(y, skip)?;
        Ok(self.act.forward(g, y)?)
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    stem: ConvNormAct,
    stages: Vec<Vec<Bottleneck>>,
}

impl Backbone {
    pub fn new<F: Scalar>(b: &mut ParamBuilder<'_, F>, cfg: &BackboneConfig, max_groups: usize) -> Result<Self> {
        cfg.validate()?;
        let stem = ConvNormAct::new(
            &mut b.sub("stem"),
            cfg.in_channels,
            cfg.stem_channels,
            ConvGeom::cube(3, cfg.stem_stride, 1, 1),
            max_groups,
        )?;
        let mut stages = Vec::with_capacity(4);
        let mut cin = cfg.stem_channels;
        for s in 0..4 {
            let cout = cfg.stage_channels[s];
            let mut blocks = Vec::with_capacity(cfg.blocks[s]);
            for i in 0..cfg.blocks[s] {
                let stride = if i == 0 { cfg.stage_strides[s] } else { [1; 3] };
                blocks.push(Bottleneck::new(
                    &mut b.sub(format!("layer{}.{}", s + 1, i)),
                    cin,
                    cout,
                    stride,
                    cfg.stage_dilations[s],
                    cfg.cardinality,
                    max_groups,
                )?);
                cin = cout;
            }
            stages.push(blocks);
        }
        Ok(Self { stem, stages })
    }

    /// Returns the stage outputs C1..C4.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<[Var; 4]> {
        let mut h = self.stem.forward(g, x)?;
        let mut out = [h; 4];
        for (s, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                h = block.forward(g, h)?;
            }
            out[s] = h;
        }
        Ok(out)
    }
}

/// Spatial extents of C1..C4 for an input extent, with ceil division per stride.
pub fn feature_extents(input: [usize; 3]) -> [[usize; 3]; 4] {
    use crate::config::{STAGE_STRIDES, STEM_STRIDE};
    let mut e = [0; 3];
    for a in 0..3 {
        e[a] = input[a].div_ceil(STEM_STRIDE[a]);
    }
    let mut out = [[0; 3]; 4];
    for s in 0..4 {
        for a in 0..3 {
            e[a] = e[a].div_ceil(STAGE_STRIDES[s][a]);
        }
        out[s] = e;
    }
    out
}
