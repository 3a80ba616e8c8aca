use ndarray::Array3;

use crate::error::{Error, Result};

/// Voxel size in millimetres used when a file carries no spacing.
pub const DEFAULT_SPACING: [f32; 3] = [0.5, 0.5, 0.5];

/// Smallest extent along any axis that survives the backbone's downsampling.
pub const MIN_EXTENT: usize = 8;

/// Scalar intensity grid indexed `(W, H, L)`, `L` being the slice axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub id: String,
    pub data: Array3<f32>,
    pub spacing: [f32; 3],
}

impl Volume {
    pub fn new(id: impl Into<String>, data: Array3<f32>, spacing: [f32; 3]) -> Result<Self> {
        let dims = data.dim();
        if [dims.0, dims.1, dims.2].iter().any(|&d| d < MIN_EXTENT) {
            return Err(Error::Shape(format!(
                "volume extent {:?} is below the minimum of {} voxels per axis",
                dims, MIN_EXTENT
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("volume contains non-finite intensities".into()));
        }
        Ok(Self { id: id.into(), data, spacing })
    }

    pub fn shape(&self) -> [usize; 3] {
        let (w, h, l) = self.data.dim();
        [w, h, l]
    }

    /// Voxels in row-major `(W, H, L)` order.
    pub fn to_vec(&self) -> Vec<f32> {
        self.data.iter().copied().collect()
    }
}

/// Binary ground truth or segmentation, values exactly 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub data: Array3<u8>,
    pub spacing: [f32; 3],
}

impl Mask {
    pub fn new(data: Array3<u8>, spacing: [f32; 3]) -> Result<Self> {
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Argument("mask values must be 0 or 1".into()));
        }
        Ok(Self { data, spacing })
    }

    pub fn from_fn(shape: [usize; 3], f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let data = Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(x, y, z)| f(x, y, z) as u8);
        Self { data, spacing: DEFAULT_SPACING }
    }

    pub fn shape(&self) -> [usize; 3] {
        let (w, h, l) = self.data.dim();
        [w, h, l]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Binarizes probabilities with the `p >= threshold` rule.
    pub fn threshold(probs: &Array3<f32>, threshold: f32, spacing: [f32; 3]) -> Self {
        Self { data: probs.mapv(|p| (p >= threshold) as u8), spacing }
    }

    /// Errors unless `other` has the same grid extent.
    pub fn check_same_shape(&self, other: &Mask) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Argument(format!("mask shapes differ: {:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    pub fn check_pair(&self, v: &Volume) -> Result<()> {
        if self.shape() != v.shape() {
            return Err(Error::Shape(format!(
                "mask shape {:?} differs from volume `{}` shape {:?}",
                self.shape(),
                v.id,
                v.shape()
            )));
        }
        Ok(())
    }
}

/// Per-volume z-score. Constant volumes map to all zeros.
pub fn normalize(v: &Volume) -> Volume {
    let n = v.data.len() as f64;
    let mean = v.data.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.data.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let data = if var > 0.0 && var.is_finite() {
        let inv = 1.0 / var.sqrt();
        v.data.mapv(|x| ((x as f64 - mean) * inv) as f32)
    } else {
        Array3::zeros(v.data.dim())
    };
    Volume { id: v.id.clone(), data, spacing: v.spacing }
}
