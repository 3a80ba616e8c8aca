//! Grid-preserving augmentation: flips along `W` and `H` and in-plane
//! rotations by multiples of 90 degrees about the slice axis.

use ndarray::{Array3, ArrayView3, Axis};
use rand::Rng;

use crate::data::volume::{Mask, Volume};
use crate::seed;

/// Flips are applied first, then `rot_k` quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Augmentation {
    pub flip_w: bool,
    pub flip_h: bool,
    pub rot_k: u8,
}

fn materialize<T: Copy>(v: ArrayView3<'_, T>) -> Array3<T> {
    let dim = v.dim();
    Array3::from_shape_vec(dim, v.iter().copied().collect()).expect("logical iteration order")
}

/// Quarter turn mapping voxel `(x, y, z)` to `(H-1-y, x, z)`.
fn rot90<T: Copy>(a: &Array3<T>) -> Array3<T> {
    let mut v = a.view();
    v.swap_axes(0, 1);
    v.invert_axis(Axis(0));
    materialize(v)
}

impl Augmentation {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive_str(seed, "augment", &[]));
        Self { flip_w: rng.random_bool(0.5), flip_h: rng.random_bool(0.5), rot_k: rng.random_range(0..4) }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        !self.flip_w && !self.flip_h && self.rot_k.is_multiple_of(4)
    }

    pub fn apply_grid<T: Copy>(&self, a: &Array3<T>) -> Array3<T> {
        let mut v = a.view();
        if self.flip_w {
            v.invert_axis(Axis(0));
        }
        if self.flip_h {
            v.invert_axis(Axis(1));
        }
        let mut out = materialize(v);
        for _ in 0..self.rot_k % 4 {
            out = rot90(&out);
        }
        out
    }

    /// Undoes [`apply_grid`](Self::apply_grid).
    pub fn invert_grid<T: Copy>(&self, a: &Array3<T>) -> Array3<T> {
        let mut out = a.clone();
        for _ in 0..(4 - self.rot_k % 4) % 4 {
            out = rot90(&out);
        }
        let mut v = out.view();
        if self.flip_w {
            v.invert_axis(Axis(0));
        }
        if self.flip_h {
            v.invert_axis(Axis(1));
        }
        materialize(v)
    }

    fn spacing(&self, s: [f32; 3]) -> [f32; 3] {
        if self.rot_k % 2 == 1 {
            [s[1], s[0], s[2]]
        } else {
            s
        }
    }

    pub fn apply(&self, v: &Volume, m: &Mask) -> (Volume, Mask) {
        (
            Volume { id: v.id.clone(), data: self.apply_grid(&v.data), spacing: self.spacing(v.spacing) },
            Mask { data: self.apply_grid(&m.data), spacing: self.spacing(m.spacing) },
        )
    }
}

/// Applies the seeded augmentation to a paired volume and mask.
pub fn augment(v: &Volume, m: &Mask, seed: u64) -> (Volume, Mask) {
    Augmentation::from_seed(seed).apply(v, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::volume::DEFAULT_SPACING;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, l: usize) -> Array3<u32> {
        Array3::from_shape_fn((w, h, l), |(x, y, z)| (x * 10000 + y * 100 + z) as u32)
    }

    #[test]
    fn half_turn_maps_indices() {
        let a = grid(5, 4, 3);
        let aug = Augmentation { rot_k: 2, ..Default::default() };
        let b = aug.apply_grid(&a);
        assert_eq!(b.dim(), (5, 4, 3));
        for ((x, y, z), &v) in a.indexed_iter() {
            assert_eq!(b[[5 - 1 - x, 4 - 1 - y, z]], v);
        }
    }

    #[test]
    fn quarter_turn_swaps_in_plane_axes() {
        let a = grid(5, 4, 3);
        let b = Augmentation { rot_k: 1, ..Default::default() }.apply_grid(&a);
        assert_eq!(b.dim(), (4, 5, 3));
        for ((x, y, z), &v) in a.indexed_iter() {
            assert_eq!(b[[4 - 1 - y, x, z]], v);
        }
    }

    #[test]
    fn flip_w_is_an_involution() {
        let a = grid(6, 5, 4);
        let f = Augmentation { flip_w: true, ..Default::default() };
        assert_eq!(f.apply_grid(&f.apply_grid(&a)), a);
        assert_ne!(f.apply_grid(&a), a);
    }

    #[test]
    fn same_seed_same_output_and_mask_stays_binary() {
        let v = Volume::new("v", grid(9, 8, 8).mapv(|x| x as f32), DEFAULT_SPACING).unwrap();
        let m = Mask::from_fn([9, 8, 8], |x, y, _| x > y);
        for s in 0..16 {
            let (v1, m1) = augment(&v, &m, s);
            let (v2, m2) = augment(&v, &m, s);
            assert_eq!(v1, v2);
            assert_eq!(m1, m2);
            assert!(m1.data.iter().all(|&b| b <= 1));
            assert_eq!(m1.count(), m.count());
            assert_eq!(m1.shape(), v1.shape());
        }
    }

    proptest! {
        #[test]
        fn inverse_restores_input(fw: bool, fh: bool, k in 0u8..4, w in 1usize..7, h in 1usize..7, l in 1usize..4) {
            let a = grid(w, h, l);
            let aug = Augmentation { flip_w: fw, flip_h: fh, rot_k: k };
            prop_assert_eq!(aug.invert_grid(&aug.apply_grid(&a)), a);
        }
    }
}
