//! Synthetic ultrasound-like phantoms with known ground truth: a rotated
//! ellipsoid with an intensity step across its boundary, a smooth
//! multiplicative bias field, multiplicative speckle, and one angular
//! acoustic-shadow wedge that removes part of the boundary.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::volume::{Mask, Volume, DEFAULT_SPACING, MIN_EXTENT};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Grid extent `(W, H, L)`.
    pub shape: [usize; 3],
    /// Per-axis semi-axis range in voxels, sampled uniformly.
    pub semi_axes_min: [f64; 3],
    pub semi_axes_max: [f64; 3],
    /// Maximum absolute rotation about the W, H and L axes, in degrees.
    pub rotation_deg: [f64; 3],
    /// Maximum centre offset from the grid centre, in voxels.
    pub center_jitter: f64,
    pub inside_intensity: f64,
    pub outside_intensity: f64,
    /// Standard deviation of the unit-mean gamma speckle; 0 disables it.
    pub speckle: f64,
    /// Range of the full shadow wedge angle, in degrees.
    pub shadow_angle_deg: [f64; 2],
    /// Attenuation at the wedge core, in `[0, 1]`; 0 disables the shadow.
    pub shadow_strength: f64,
    /// Amplitude of the log bias field; 0 disables it.
    pub bias_strength: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            shape: [64, 64, 32],
            semi_axes_min: [14.0, 14.0, 7.0],
            semi_axes_max: [22.0, 22.0, 11.0],
            rotation_deg: [10.0, 10.0, 30.0],
            center_jitter: 2.0,
            inside_intensity: 0.4,
            outside_intensity: 1.0,
            speckle: 0.3,
            shadow_angle_deg: [20.0, 40.0],
            shadow_strength: 0.8,
            bias_strength: 0.3,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.shape[a] < MIN_EXTENT {
                return Err(Error::Spec(format!("shape {:?} has an axis below {} voxels", self.shape, MIN_EXTENT)));
            }
            let half = self.shape[a] as f64 / 2.0;
            if !(self.semi_axes_min[a] > 0.0 && self.semi_axes_min[a] <= self.semi_axes_max[a]) {
                return Err(Error::Spec(format!(
                    "semi-axis range [{}, {}] on axis {} is empty or non-positive",
                    self.semi_axes_min[a], self.semi_axes_max[a], a
                )));
            }
            if self.semi_axes_max[a] > half {
                return Err(Error::Spec(format!(
                    "semi-axis {} on axis {} exceeds half the grid extent {}",
                    self.semi_axes_max[a], a, half
                )));
            }
        }
        if self.speckle < 0.0 || !self.speckle.is_finite() {
            return Err(Error::Spec("speckle strength must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.shadow_strength) {
            return Err(Error::Spec("shadow strength must lie in [0, 1]".into()));
        }
        if self.shadow_angle_deg[0] < 0.0 || self.shadow_angle_deg[0] > self.shadow_angle_deg[1] || self.shadow_angle_deg[1] > 360.0 {
            return Err(Error::Spec("shadow angle range must satisfy 0 <= min <= max <= 360".into()));
        }
        if self.bias_strength < 0.0 || !self.bias_strength.is_finite() {
            return Err(Error::Spec("bias strength must be >= 0".into()));
        }
        if self.inside_intensity <= 0.0 || self.outside_intensity <= 0.0 {
            return Err(Error::Spec("intensities must be positive".into()));
        }
        if self.center_jitter < 0.0 {
            return Err(Error::Spec("center jitter must be >= 0".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Row-major 3x3 rotation `Rz * Ry * Rx`.
fn rotation(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (sa, ca) = angles[0].sin_cos();
    let (sb, cb) = angles[1].sin_cos();
    let (sc, cc) = angles[2].sin_cos();
    [
        [cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa],
        [sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa],
        [-sb, cb * sa, cb * ca],
    ]
}

struct Ellipsoid {
    center: [f64; 3],
    axes: [f64; 3],
    rot: [[f64; 3]; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        // body coordinates: R^T d
        let mut s = 0.0;
        for i in 0..3 {
            let q = self.rot[0][i] * d[0] + self.rot[1][i] * d[1] + self.rot[2][i] * d[2];
            s += (q / self.axes[i]).powi(2);
        }
        s <= 1.0
    }
}

/// Generates a deterministic `(volume, mask)` pair.
pub fn synth_phantom(spec: &PhantomSpec) -> Result<(Volume, Mask)> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive_str(spec.seed, "phantom", &[]));
    let [w, h, l] = spec.shape;
    let mut center = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, (l as f64 - 1.0) / 2.0];
    for c in center.iter_mut() {
        *c += uniform(&mut rng, -spec.center_jitter, spec.center_jitter);
    }
    let axes = [0, 1, 2].map(|a| uniform(&mut rng, spec.semi_axes_min[a], spec.semi_axes_max[a]));
    let angles = [0, 1, 2].map(|a| uniform(&mut rng, -spec.rotation_deg[a], spec.rotation_deg[a]).to_radians());
    let shape = Ellipsoid { center, axes, rot: rotation(angles) };

    // bias field: sum of three random low-frequency cosines, bounded by 1
    let waves: Vec<([f64; 3], f64)> = (0..3)
        .map(|_| {
            let f = [0, 1, 2].map(|a| uniform(&mut rng, -1.0, 1.0) * PI / spec.shape[a] as f64);
            (f, uniform(&mut rng, 0.0, 2.0 * PI))
        })
        .collect();

    let wedge_dir = uniform(&mut rng, -PI, PI);
    let wedge_half = uniform(&mut rng, spec.shadow_angle_deg[0], spec.shadow_angle_deg[1]).to_radians() / 2.0;

    let speckle = if spec.speckle > 0.0 {
        let k = 1.0 / (spec.speckle * spec.speckle);
        Some(Gamma::new(k, 1.0 / k).map_err(|e| Error::Spec(format!("speckle distribution: {e}")))?)
    } else {
        None
    };

    let mut data = Array3::<f32>::zeros((w, h, l));
    let mut mask = Array3::<u8>::zeros((w, h, l));
    for x in 0..w {
        for y in 0..h {
            for z in 0..l {
                let p = [x as f64, y as f64, z as f64];
                let inside = shape.contains(p);
                let mut v = if inside { spec.inside_intensity } else { spec.outside_intensity };
                if spec.bias_strength > 0.0 {
                    let s: f64 = waves
                        .iter()
                        .map(|(f, phase)| (f[0] * p[0] + f[1] * p[1] + f[2] * p[2] + phase).cos())
                        .sum::<f64>()
                        / 3.0;
                    v *= (spec.bias_strength * s).exp();
                }
                if let Some(g) = &speckle {
                    v *= g.sample(&mut rng);
                }
                if spec.shadow_strength > 0.0 && wedge_half > 0.0 {
                    let theta = (p[1] - center[1]).atan2(p[0] - center[0]);
                    let mut d = (theta - wedge_dir).abs() % (2.0 * PI);
                    if d > PI {
                        d = 2.0 * PI - d;
                    }
                    if d < wedge_half {
                        let taper = 0.5 * (1.0 + (PI * d / wedge_half).cos());
                        v *= 1.0 - spec.shadow_strength * taper;
                    }
                }
                data[[x, y, z]] = v as f32;
                mask[[x, y, z]] = inside as u8;
            }
        }
    }
    let id = format!("phantom_{}", spec.seed);
    Ok((Volume::new(id, data, DEFAULT_SPACING)?, Mask::new(mask, DEFAULT_SPACING)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_spec() -> PhantomSpec {
        PhantomSpec {
            seed: 3,
            shape: [64, 64, 64],
            semi_axes_min: [8.0; 3],
            semi_axes_max: [8.0; 3],
            rotation_deg: [0.0; 3],
            center_jitter: 0.0,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn centered_sphere_voxel_count_matches_lattice_estimate() {
        let (_, m) = synth_phantom(&sphere_spec()).unwrap();
        // independent count of lattice points inside the radius-8 ball about
        // the grid centre (31.5, 31.5, 31.5)
        let mut lattice = 0usize;
        for x in 0..64 {
            for y in 0..64 {
                for z in 0..64 {
                    let d2 = [x, y, z].iter().map(|&c| (c as f64 - 31.5).powi(2)).sum::<f64>();
                    lattice += (d2 <= 64.0) as usize;
                }
            }
        }
        let analytic = 4.0 / 3.0 * PI * 512.0;
        assert_eq!(m.count(), lattice);
        assert!(((m.count() as f64) - analytic).abs() / analytic < 0.05, "count {}", m.count());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = PhantomSpec { seed: 11, ..PhantomSpec::default() };
        let (v1, m1) = synth_phantom(&spec).unwrap();
        let (v2, m2) = synth_phantom(&spec).unwrap();
        assert_eq!(v1.data.as_slice().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   v2.data.as_slice().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(m1, m2);
        let (v3, _) = synth_phantom(&spec.with_seed(12)).unwrap();
        assert_ne!(v1.data, v3.data);
    }

    #[test]
    fn disabled_corruptions_leave_a_two_level_step() {
        let spec = PhantomSpec { speckle: 0.0, shadow_strength: 0.0, bias_strength: 0.0, ..PhantomSpec::default() };
        let (v, m) = synth_phantom(&spec).unwrap();
        for (&iv, &mv) in v.data.iter().zip(m.data.iter()) {
            let expected = if mv == 1 { spec.inside_intensity } else { spec.outside_intensity } as f32;
            assert_eq!(iv, expected);
        }
        assert!(m.count() > 0);
    }

    #[test]
    fn corruptions_keep_intensities_positive_and_finite() {
        let (v, _) = synth_phantom(&PhantomSpec { seed: 5, ..PhantomSpec::default() }).unwrap();
        assert!(v.data.iter().all(|&x| x.is_finite() && x >= 0.0));
    }

    #[test]
    fn oversized_axes_are_rejected() {
        let spec = PhantomSpec { semi_axes_max: [40.0, 22.0, 11.0], ..PhantomSpec::default() };
        assert!(matches!(synth_phantom(&spec), Err(Error::Spec(_))));
    }
}
