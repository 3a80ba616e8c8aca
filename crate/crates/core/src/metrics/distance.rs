//! Surface-distance metrics.

use crate::data::Mask;
use crate::error::Result;

use super::surface::{directed_distances, extract_surface};

/// Directed nearest-surface distances in both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceDistances {
    pub s_to_g: Vec<f64>,
    pub g_to_s: Vec<f64>,
}

/// `None` when either mask is empty. `spacing` of `[1.0; 3]` gives voxel units.
pub fn surface_distances(s: &Mask, g: &Mask, spacing: [f64; 3]) -> Result<Option<SurfaceDistances>> {
    s.check_same_shape(g)?;
    let (ss, gs) = (extract_surface(s), extract_surface(g));
    if ss.is_empty() || gs.is_empty() {
        log::warn!("empty mask; surface distances are undefined");
        return Ok(None);
    }
    let shape = s.shape();
    Ok(Some(SurfaceDistances {
        s_to_g: directed_distances(shape, &ss, &gs, spacing),
        g_to_s: directed_distances(shape, &gs, &ss, spacing),
    }))
}

/// Arithmetic mean, summed in the given order.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(q n / 100)`.
pub fn nearest_rank(xs: &[f64], q: u32) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rank = (q as usize * n).div_ceil(100).max(1);
    v[rank - 1]
}

impl SurfaceDistances {
    /// Mean of the two directed mean distances.
    pub fn adb(&self) -> f64 {
        0.5 * (mean(&self.s_to_g) + mean(&self.g_to_s))
    }

    /// Directed 95th percentiles `(S→G, G→S)`.
    pub fn hd95_directed(&self) -> [f64; 2] {
        [nearest_rank(&self.s_to_g, 95), nearest_rank(&self.g_to_s, 95)]
    }

    pub fn hd95(&self) -> f64 {
        let [a, b] = self.hd95_directed();
        a.max(b)
    }

    pub fn hausdorff(&self) -> f64 {
        self.s_to_g.iter().chain(&self.g_to_s).copied().fold(0.0, f64::max)
    }
}

pub fn adb(s: &Mask, g: &Mask) -> Result<Option<f64>> {
    Ok(surface_distances(s, g, [1.0; 3])?.map(|d| d.adb()))
}

pub fn hd95(s: &Mask, g: &Mask) -> Result<Option<f64>> {
    Ok(surface_distances(s, g, [1.0; 3])?.map(|d| d.hd95()))
}
