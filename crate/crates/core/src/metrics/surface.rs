//! Boundary extraction and exact Euclidean distance transforms.

use ndarray::Array3;

use crate::data::Mask;

/// Foreground voxels with a background 6-neighbour, in raster order. Voxels
/// outside the grid count as background.
pub fn extract_surface(m: &Mask) -> Vec<[usize; 3]> {
    let d = &m.data;
    let (w, h, l) = d.dim();
    let mut out = Vec::new();
    for x in 0..w {
        for y in 0..h {
            for z in 0..l {
                if d[[x, y, z]] == 0 {
                    continue;
                }
                let border = x == 0 || y == 0 || z == 0 || x + 1 == w || y + 1 == h || z + 1 == l;
                if border
                    || d[[x - 1, y, z]] == 0
                    || d[[x + 1, y, z]] == 0
                    || d[[x, y - 1, z]] == 0
                    || d[[x, y + 1, z]] == 0
                    || d[[x, y, z - 1]] == 0
                    || d[[x, y, z + 1]] == 0
                {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// Lower envelope of parabolas `f[q] + (w (p - q))²` over the finite sites
/// of `f`, evaluated at every `p`.
fn envelope_1d(f: &[f64], w: f64, out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    let w2 = w * w;
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&v) = sites.last() else {
                sites.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let vf = v as f64;
            let s = ((f[q] + w2 * qf * qf) - (f[v] + w2 * vf * vf)) / (2.0 * w2 * (qf - vf));
            if s <= *bounds.last().unwrap() {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let pf = p as f64;
        while k + 1 < sites.len() && bounds[k + 1] < pf {
            k += 1;
        }
        let dq = w * (pf - sites[k] as f64);
        *o = f[sites[k]] + dq * dq;
    }
}

/// Squared distance from every voxel to the nearest voxel of `sites`, with
/// per-axis spacing. With unit spacing all values are exact integers.
pub fn squared_distance_map(shape: [usize; 3], sites: &[[usize; 3]], spacing: [f64; 3]) -> Array3<f64> {
    let mut d = Array3::from_elem((shape[0], shape[1], shape[2]), f64::INFINITY);
    for s in sites {
        d[*s] = 0.0;
    }
    let n = shape.iter().copied().max().unwrap_or(0);
    let (mut line, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut sv, mut bv) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let len = shape[axis];
        for mut lane in d.lanes_mut(ndarray::Axis(axis)) {
            for (dst, &src) in line.iter_mut().zip(lane.iter()) {
                *dst = src;
            }
            envelope_1d(&line[..len], spacing[axis], &mut out[..len], &mut sv, &mut bv);
            for (dst, &src) in lane.iter_mut().zip(&out[..len]) {
                *dst = src;
            }
        }
    }
    d
}

/// Distance from each point of `from` to the nearest point of `to`, in the
/// order of `from`. Empty when `to` is empty.
pub fn directed_distances(shape: [usize; 3], from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    if to.is_empty() {
        return Vec::new();
    }
    let d = squared_distance_map(shape, to, spacing);
    from.iter().map(|p| d[*p].sqrt()).collect()
}
