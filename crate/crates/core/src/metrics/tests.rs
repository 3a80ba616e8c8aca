use proptest::prelude::*;

use super::*;
use crate::data::Mask;

fn cube(shape: [usize; 3], lo: [usize; 3], side: usize) -> Mask {
    Mask::from_fn(shape, |x, y, z| {
        [x, y, z].iter().zip(lo).all(|(&c, l)| c >= l && c < l + side)
    })
}

fn single(shape: [usize; 3], p: [usize; 3]) -> Mask {
    Mask::from_fn(shape, |x, y, z| [x, y, z] == p)
}

/// Counts by visiting every voxel pair of labels.
fn counting_oracle(s: &Mask, g: &Mask) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for (&a, &b) in s.data.iter().zip(g.data.iter()) {
        c.0 += (a == 1) as usize;
        c.1 += (b == 1) as usize;
        c.2 += (a == 1 && b == 1) as usize;
    }
    c
}

#[test]
fn identical_masks_score_perfectly() {
    let g = cube([6, 6, 6], [1, 1, 1], 3);
    let r = evaluate_case("a", &g, &g).unwrap();
    assert_eq!(r.values(), [Some(1.0), Some(1.0), Some(1.0), Some(0.0), Some(0.0), Some(1.0), Some(1.0)]);
}

#[test]
fn shifted_cubes() {
    let g = cube([6, 6, 6], [1, 1, 1], 2);
    let s = cube([6, 6, 6], [2, 1, 1], 2);
    assert_eq!(counting_oracle(&s, &g), (8, 8, 4));
    let r = evaluate_case("shift", &s, &g).unwrap();
    assert_eq!(r.dice, Some(0.5));
    assert_eq!(r.jaccard, Some(1.0 / 3.0));
    assert_eq!(r.cc, Some(-1.0));
    assert_eq!(r.precision, Some(0.5));
    assert_eq!(r.recall, Some(0.5));
    // Every voxel of a 2x2x2 cube is on its surface; half of each cube is at
    // distance 0 from the other, the other half at distance 1.
    assert_eq!(r.adb, Some(0.5));
    assert_eq!(r.hd95, Some(1.0));
}

#[test]
fn disjoint_masks_leave_cc_undefined() {
    let g = cube([8, 8, 8], [0, 0, 0], 2);
    let s = cube([8, 8, 8], [5, 5, 5], 2);
    let o = overlap_metrics(&s, &g).unwrap();
    assert_eq!((o.dice, o.jaccard, o.cc), (Some(0.0), Some(0.0), None));
    let empty = Mask::from_fn([8, 8, 8], |_, _, _| false);
    let o = overlap_metrics(&empty, &g).unwrap();
    assert_eq!(o.precision, None);
    assert_eq!(adb(&empty, &g).unwrap(), None);
    assert_eq!(hd95(&g, &empty).unwrap(), None);
}

#[test]
fn surface_examples() {
    let one = single([5, 5, 5], [2, 3, 1]);
    assert_eq!(extract_surface(&one), vec![[2, 3, 1]]);
    let c = cube([5, 5, 5], [1, 1, 1], 3);
    let s = extract_surface(&c);
    assert_eq!(s.len(), 26);
    assert!(!s.contains(&[2, 2, 2]));
    let full = Mask::from_fn([4, 5, 6], |_, _, _| true);
    assert_eq!(extract_surface(&full).len(), 4 * 5 * 6 - 2 * 3 * 4);
    assert!(extract_surface(&Mask::from_fn([3, 3, 3], |_, _, _| false)).is_empty());
}

#[test]
fn point_masks_three_apart() {
    let s = single([8, 8, 8], [1, 4, 4]);
    let g = single([8, 8, 8], [4, 4, 4]);
    assert_eq!(adb(&s, &g).unwrap(), Some(3.0));
    assert_eq!(hd95(&s, &g).unwrap(), Some(3.0));
}

#[test]
fn nearest_rank_excludes_single_outlier_of_twenty() {
    let mut d: Vec<f64> = (1..=19).map(|i| i as f64 / 10.0).collect();
    d.push(100.0);
    // ceil(0.95 * 20) = 19: the 19th smallest value.
    assert_eq!(nearest_rank(&d, 95), 1.9);
    assert_eq!(nearest_rank(&[5.0], 95), 5.0);
    assert_eq!(nearest_rank(&[3.0, 1.0], 95), 3.0);
}

#[test]
fn spacing_scales_isotropic_distances() {
    let s = single([8, 8, 8], [1, 4, 4]);
    let g = single([8, 8, 8], [4, 4, 4]);
    let r = evaluate_case_with_spacing("mm", &s, &g, [0.5; 3]).unwrap();
    assert_eq!(r.adb, Some(1.5));
    let r = evaluate_case_with_spacing("aniso", &s, &g, [2.0, 1.0, 1.0]).unwrap();
    assert_eq!(r.hd95, Some(6.0));
}

#[test]
fn aggregate_of_identical_reports_has_zero_sd() {
    let g = cube([6, 6, 6], [1, 1, 1], 2);
    let s = cube([6, 6, 6], [2, 1, 1], 2);
    let r = evaluate_case("x", &s, &g).unwrap();
    let agg = aggregate(&[r.clone(), r.clone(), r]);
    for a in agg {
        assert_eq!(a.unwrap().sd, 0.0);
    }
    let ms = mean_sd(&[1.0, 2.0, 3.0]).unwrap();
    assert_eq!((ms.mean, ms.sd, ms.n), (2.0, 1.0, 3));
}

#[test]
fn csv_round_trip_keeps_missing_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.csv");
    let g = cube([8, 8, 8], [0, 0, 0], 2);
    let reports = vec![
        evaluate_case("a", &cube([8, 8, 8], [1, 0, 0], 2), &g).unwrap(),
        evaluate_case("b", &cube([8, 8, 8], [5, 5, 5], 2), &g).unwrap(),
    ];
    write_reports_csv(&path, &reports).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("case_id,dice,jaccard,cc,adb,hd95,precision,recall\n"));
    let back = read_reports_csv(&path).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in back.iter().zip(&reports) {
        assert_eq!(a.case_id, b.case_id);
        assert_eq!(a.values(), b.values());
    }
    std::fs::write(&path, "id,dice\n").unwrap();
    assert!(read_reports_csv(&path).is_err());
}

/// Minimum over all pairs of surface voxels, summed in raster order.
fn brute_force(s: &Mask, g: &Mask) -> Option<(f64, f64)> {
    let (ss, gs) = (extract_surface(s), extract_surface(g));
    if ss.is_empty() || gs.is_empty() {
        return None;
    }
    let directed = |a: &[[usize; 3]], b: &[[usize; 3]]| -> Vec<f64> {
        a.iter()
            .map(|p| {
                let best = b
                    .iter()
                    .map(|q| (0..3).map(|i| (p[i] as i64 - q[i] as i64).pow(2)).sum::<i64>())
                    .min()
                    .unwrap();
                (best as f64).sqrt()
            })
            .collect()
    };
    let (a, b) = (directed(&ss, &gs), directed(&gs, &ss));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let p95 = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let k = ((95 * v.len()) as f64 / 100.0).ceil() as usize;
        v[k - 1]
    };
    Some((0.5 * (mean(&a) + mean(&b)), p95(&a).max(p95(&b))))
}

fn mask_strategy(max: usize) -> impl Strategy<Value = Mask> {
    (2..=max, 2..=max, 2..=max, 0.05f64..0.7).prop_flat_map(|(w, h, l, density)| {
        prop::collection::vec(prop::bool::weighted(density), w * h * l)
            .prop_map(move |bits| Mask::from_fn([w, h, l], |x, y, z| bits[(x * h + y) * l + z]))
    })
}

fn pair_strategy(max: usize) -> impl Strategy<Value = (Mask, Mask)> {
    mask_strategy(max).prop_flat_map(|a| {
        let [w, h, l] = a.shape();
        let n = w * h * l;
        (Just(a), prop::collection::vec(any::<bool>(), n))
            .prop_map(move |(a, bits)| (a, Mask::from_fn([w, h, l], |x, y, z| bits[(x * h + y) * l + z])))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_map_matches_brute_force(m in mask_strategy(9)) {
        let sites = extract_surface(&m);
        let d = squared_distance_map(m.shape(), &sites, [1.0; 3]);
        for ((x, y, z), &v) in d.indexed_iter() {
            let best = sites.iter()
                .map(|q| ((x as i64 - q[0] as i64).pow(2) + (y as i64 - q[1] as i64).pow(2) + (z as i64 - q[2] as i64).pow(2)) as f64)
                .fold(f64::INFINITY, f64::min);
            prop_assert_eq!(v, best);
        }
    }

    #[test]
    fn surface_metrics_match_brute_force((s, g) in pair_strategy(8)) {
        let expect = brute_force(&s, &g);
        let got = surface_distances(&s, &g, [1.0; 3]).unwrap().map(|d| (d.adb(), d.hd95()));
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn identities_and_symmetry((s, g) in pair_strategy(8)) {
        let a = evaluate_case("a", &s, &g).unwrap();
        let b = evaluate_case("b", &g, &s).unwrap();
        prop_assert_eq!((a.dice, a.jaccard, a.cc, a.adb, a.hd95), (b.dice, b.jaccard, b.cc, b.adb, b.hd95));
        prop_assert_eq!(a.precision, b.recall);
        if let (Some(d), Some(j)) = (a.dice, a.jaccard) {
            prop_assert!((j - d / (2.0 - d)).abs() < 1e-12);
            if let Some(cc) = a.cc {
                prop_assert!((cc - (2.0 - 1.0 / j)).abs() < 1e-12);
            }
        }
        let (cs, cg, ci) = counting_oracle(&s, &g);
        prop_assert_eq!(counts(&s, &g).unwrap(), Counts { s: cs as u64, g: cg as u64, intersection: ci as u64 });
        if let Some(h) = a.hd95 {
            let full = surface_distances(&s, &g, [1.0; 3]).unwrap().unwrap().hausdorff();
            prop_assert!(h <= full);
        }
    }

    #[test]
    fn translation_invariance((s, g) in pair_strategy(6), off in (1usize..3, 1usize..3, 1usize..3)) {
        let [w, h, l] = s.shape();
        let big = [w + 3, h + 3, l + 3];
        // Offsets of at least one keep both masks away from the grid border.
        let shift = |m: &Mask, o: (usize, usize, usize)| Mask::from_fn(big, |x, y, z| {
            x >= o.0 && y >= o.1 && z >= o.2 && x - o.0 < w && y - o.1 < h && z - o.2 < l
                && m.data[[x - o.0, y - o.1, z - o.2]] == 1
        });
        let a = evaluate_case("a", &shift(&s, (1, 1, 1)), &shift(&g, (1, 1, 1))).unwrap();
        let b = evaluate_case("b", &shift(&s, off), &shift(&g, off)).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }
}

/// Enumerates every size-`n` subset of pooled positions.
fn enumerate_p(xs: &[f64], ys: &[f64]) -> f64 {
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let n_total = pooled.len();
    let rank = |i: usize| {
        let less = pooled.iter().filter(|&&v| v < pooled[i]).count() as f64;
        let equal = pooled.iter().filter(|&&v| v == pooled[i]).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = (0..n_total).map(rank).collect();
    let n = xs.len();
    let mu = n as f64 * (n_total as f64 + 1.0) / 2.0;
    let observed = (ranks[..n].iter().sum::<f64>() - mu).abs();
    let (mut hit, mut total) = (0u64, 0u64);
    for bits in 0u32..(1 << n_total) {
        if bits.count_ones() as usize != n {
            continue;
        }
        let s: f64 = (0..n_total).filter(|i| bits >> i & 1 == 1).map(|i| ranks[i]).sum();
        total += 1;
        if (s - mu).abs() >= observed - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

#[test]
fn rank_sum_examples() {
    let r = rank_sum_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    assert_eq!((r.rank_sum, r.u), (6.0, 0.0));
    assert!(r.exact);
    assert!((r.p_value - 0.1).abs() < 1e-15);
    let same = [0.8, 0.9, 0.85, 0.9];
    assert_eq!(rank_sum_test(&same, &same).unwrap().p_value, 1.0);
    assert_eq!(rank_sum_test(&[2.0; 5], &[2.0; 3]).unwrap().p_value, 1.0);
    assert!(rank_sum_test(&[1.0], &[2.0, 3.0]).is_err());
}

#[test]
fn rank_sum_normal_approximation() {
    let xs: Vec<f64> = (1..=10).map(f64::from).collect();
    let ys: Vec<f64> = (11..=20).map(f64::from).collect();
    let r = rank_sum_test(&xs, &ys).unwrap();
    assert!(!r.exact);
    // z = (50 - 0.5) / sqrt(175), two-sided.
    assert!((r.p_value - 1.826717911095504e-4).abs() < 1e-12);
    let swapped = rank_sum_test(&ys, &xs).unwrap();
    assert_eq!(swapped.p_value, r.p_value);
    assert_eq!(rank_sum_test(&[1.0; 12], &[1.0; 9]).unwrap().p_value, 1.0);
}

proptest! {
    #[test]
    fn exact_rank_sum_matches_enumeration(
        xs in prop::collection::vec(0u8..6, 2..=8),
        ys in prop::collection::vec(0u8..6, 2..=8),
    ) {
        let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
        let ys: Vec<f64> = ys.into_iter().map(f64::from).collect();
        let r = rank_sum_test(&xs, &ys).unwrap();
        prop_assert!(r.exact);
        prop_assert!((r.p_value - enumerate_p(&xs, &ys)).abs() < 1e-12);
        let s = rank_sum_test(&ys, &xs).unwrap();
        prop_assert!((s.p_value - r.p_value).abs() < 1e-12);
    }
}

#[test]
fn anova_examples() {
    assert!((anova_f(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]]).unwrap() - 1.5).abs() < 1e-12);
    assert!(anova_f(&[vec![0.0, 0.0], vec![1.0, 1.0]]).is_err());
    assert_eq!(anova_f(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap(), 0.0);
    assert!(anova_f(&[vec![1.0, 2.0]]).is_err());
}
