use crate::data::Mask;
use crate::error::Result;

/// Voxel counts of a segmentation `S` against ground truth `G`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Counts {
    pub s: u64,
    pub g: u64,
    pub intersection: u64,
}

impl Counts {
    pub fn union(&self) -> u64 {
        self.s + self.g - self.intersection
    }
}

pub fn counts(s: &Mask, g: &Mask) -> Result<Counts> {
    s.check_same_shape(g)?;
    let mut c = Counts { s: 0, g: 0, intersection: 0 };
    for (&a, &b) in s.data.iter().zip(g.data.iter()) {
        c.s += a as u64;
        c.g += b as u64;
        c.intersection += (a & b) as u64;
    }
    Ok(c)
}

/// Overlap scores; `None` where the defining ratio has a zero denominator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlap {
    pub dice: Option<f64>,
    pub jaccard: Option<f64>,
    /// Conformity coefficient `2 - |G ∪ S| / |G ∩ S|`.
    pub cc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl From<Counts> for Overlap {
    fn from(c: Counts) -> Self {
        let union = c.union();
        Self {
            dice: ratio(2 * c.intersection, c.s + c.g),
            jaccard: ratio(c.intersection, union),
            cc: ratio(union, c.intersection).map(|r| 2.0 - r),
            precision: ratio(c.intersection, c.s),
            recall: ratio(c.intersection, c.g),
        }
    }
}

pub fn overlap_metrics(s: &Mask, g: &Mask) -> Result<Overlap> {
    let c = counts(s, g)?;
    if c.g == 0 {
        log::warn!("ground truth is empty; recall is undefined");
    }
    if c.s == 0 {
        log::warn!("segmentation is empty; precision is undefined");
    }
    if c.intersection == 0 {
        log::warn!("segmentation and ground truth do not overlap; CC is undefined");
    }
    Ok(c.into())
}
