use std::collections::HashMap;

use microcolor::analysis::{build_survey, hue_histogram, saturation_surface};
use microcolor::colorspace::{
    lab_pixel_to_rgb, merge_l_ab, rgb_pixel_to_hsv, rgb_pixel_to_lab, rgb_to_lab, split_l_ab,
};
use microcolor::prepost::{
    detect_edges, enforce_same_l_same_ab, enforce_same_l_same_ab_with, label_regions, uniform_fill,
    Aggregator, EdgeMap, GradientMagnitude,
};
use microcolor::trainer::loss;
use microcolor::{ChromaMap, Plane, RgbImage};
use proptest::prelude::*;

fn rgb_image(max_side: usize) -> impl Strategy<Value = RgbImage> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<[u8; 3]>(), w * h)
            .prop_map(move |px| RgbImage::new(w, h, px).unwrap())
    })
}

/// L on a coarse grid so that bins collide often, plus in-range chroma.
fn l_and_chroma(max_side: usize) -> impl Strategy<Value = (Plane, ChromaMap)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        let n = w * h;
        (
            prop::collection::vec(0u32..=40, n),
            prop::collection::vec(-128.0f64..=127.0, n),
            prop::collection::vec(-128.0f64..=127.0, n),
        )
            .prop_map(move |(l, a, b)| {
                let l = Plane::new(w, h, l.into_iter().map(|v| v as f64 * 2.5).collect()).unwrap();
                let ab = ChromaMap::new(Plane::new(w, h, a).unwrap(), Plane::new(w, h, b).unwrap())
                    .unwrap();
                (l, ab)
            })
    })
}

fn edge_map(max_side: usize) -> impl Strategy<Value = EdgeMap> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::bool::weighted(0.3), w * h).prop_map(move |e| {
            EdgeMap::new(
                Plane::new(
                    w,
                    h,
                    e.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
                )
                .unwrap(),
            )
            .unwrap()
        })
    })
}

proptest! {
    #[test]
    fn lab_round_trip_within_one_level(rgb in any::<[u8; 3]>()) {
        let back = lab_pixel_to_rgb(rgb_pixel_to_lab(rgb));
        for c in 0..3 {
            prop_assert!((back[c] as i32 - rgb[c] as i32).abs() <= 1);
        }
    }

    #[test]
    fn neutral_pixels_have_zero_chroma(v in any::<u8>()) {
        let [_, a, b] = rgb_pixel_to_lab([v, v, v]);
        prop_assert!(a.abs() < 1e-9 && b.abs() < 1e-9);
    }

    #[test]
    fn lab_values_in_declared_ranges(rgb in any::<[u8; 3]>()) {
        let [l, a, b] = rgb_pixel_to_lab(rgb);
        prop_assert!((0.0..=100.0).contains(&l));
        prop_assert!((-128.0..=127.0).contains(&a) && (-128.0..=127.0).contains(&b));
    }

    #[test]
    fn split_then_merge_is_identity(img in rgb_image(12)) {
        let lab = rgb_to_lab(&img);
        let (l, ab) = split_l_ab(&lab);
        prop_assert_eq!(merge_l_ab(&l, &ab).unwrap(), lab);
    }

    #[test]
    fn loss_is_symmetric_nonnegative_and_zero_on_self(
        (_, p) in l_and_chroma(6),
        seed in any::<u64>(),
    ) {
        let (w, h) = p.dims();
        let q = ChromaMap::new(
            Plane::from_fn(w, h, |x, y| ((seed as usize + x * 31 + y * 17) % 255) as f64 - 128.0),
            Plane::from_fn(w, h, |x, y| ((seed as usize + x * 7 + y * 3) % 255) as f64 - 128.0),
        ).unwrap();
        let pq = loss(&p, &q).unwrap();
        prop_assert!(pq >= 0.0);
        prop_assert_eq!(pq, loss(&q, &p).unwrap());
        prop_assert_eq!(loss(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn same_bin_pixels_share_chroma_exactly((l, ab) in l_and_chroma(10), bw in 0.5f64..10.0) {
        let out = enforce_same_l_same_ab(&l, &ab, bw).unwrap();
        let mut seen: HashMap<i64, (f64, f64)> = HashMap::new();
        for (i, lv) in l.as_slice().iter().enumerate() {
            let v = (out.a().as_slice()[i], out.b().as_slice()[i]);
            let prev = *seen.entry((lv / bw).floor() as i64).or_insert(v);
            prop_assert_eq!(prev, v);
        }
    }

    #[test]
    fn same_l_same_ab_is_idempotent_and_bounded(
        (l, ab) in l_and_chroma(10),
        bw in 0.5f64..10.0,
        median in any::<bool>(),
    ) {
        let agg = if median { Aggregator::Median } else { Aggregator::Mean };
        let once = enforce_same_l_same_ab_with(&l, &ab, bw, None, agg).unwrap();
        let twice = enforce_same_l_same_ab_with(&l, &once, bw, None, agg).unwrap();
        prop_assert_eq!(&twice, &once);
        for (inp, out) in [(ab.a(), once.a()), (ab.b(), once.b())] {
            let (lo, hi) = inp.min_max();
            let (olo, ohi) = out.min_max();
            prop_assert!(olo >= lo && ohi <= hi);
        }
    }

    #[test]
    fn regions_partition_with_contiguous_labels(edges in edge_map(16)) {
        let m = label_regions(&edges, 0.5).unwrap();
        prop_assert_eq!(m.labels().len(), m.width() * m.height());
        let mut used = vec![false; m.region_count()];
        for &l in m.labels() {
            used[l as usize] = true;
        }
        prop_assert!(used.into_iter().all(|u| u));
    }

    #[test]
    fn uniform_fill_is_idempotent((l, ab) in l_and_chroma(10), edges_seed in any::<u64>()) {
        let (w, h) = l.dims();
        let e = EdgeMap::new(Plane::from_fn(w, h, |x, y| {
            if (edges_seed >> ((x + 3 * y) % 64)) & 1 == 1 { 1.0 } else { 0.0 }
        })).unwrap();
        let m = label_regions(&e, 0.5).unwrap();
        let once = uniform_fill(&ab, &m).unwrap();
        prop_assert_eq!(uniform_fill(&once, &m).unwrap(), once);
    }

    #[test]
    fn gradient_edges_are_translation_equivariant(
        seed in any::<u64>(),
        dx in 0usize..4,
        dy in 0usize..4,
    ) {
        // Content inside a flat border so normalization sees the same maximum.
        let blob = |x: usize, y: usize| -> f64 {
            if (3..9).contains(&x) && (3..9).contains(&y) {
                ((seed >> ((x * 5 + y) % 60)) & 7) as f64 * 10.0
            } else {
                0.0
            }
        };
        let a = Plane::from_fn(20, 20, blob);
        let b = Plane::from_fn(20, 20, |x, y| {
            if x >= dx && y >= dy { blob(x - dx, y - dy) } else { 0.0 }
        });
        let ea = detect_edges(&a, &GradientMagnitude).unwrap();
        let eb = detect_edges(&b, &GradientMagnitude).unwrap();
        for y in 1..14 {
            for x in 1..14 {
                prop_assert_eq!(ea.strength().get(x, y), eb.strength().get(x + dx, y + dy));
            }
        }
    }

    #[test]
    fn edge_strengths_in_unit_interval(img in rgb_image(12)) {
        let (l, _) = split_l_ab(&rgb_to_lab(&img));
        let e = detect_edges(&l, &GradientMagnitude).unwrap();
        prop_assert!(e.strength().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn survey_order_is_a_permutation(seed in any::<u64>()) {
        let real: Vec<String> = (0..16).map(|i| format!("real-{i}")).collect();
        let pred: Vec<String> = (0..16).map(|i| format!("pred-{i}")).collect();
        let s = build_survey(&real, &pred, seed).unwrap();
        let mut got = s.order.clone();
        got.sort();
        let mut want: Vec<String> = real.into_iter().chain(pred).collect();
        want.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn hue_mass_plus_neutral_is_pixel_count(img in rgb_image(12), bins in 1usize..50) {
        let neutral = img.pixels().iter().filter(|p| p[0] == p[1] && p[1] == p[2]).count();
        let total: u64 = hue_histogram(&img, bins).unwrap().iter().sum();
        prop_assert_eq!(total as usize + neutral, img.pixels().len());
    }

    #[test]
    fn unit_block_surface_is_pixel_saturation(img in rgb_image(10)) {
        let s = saturation_surface(&img, 1).unwrap();
        prop_assert_eq!((s.width, s.height), img.dims());
        for (v, p) in s.values.iter().zip(img.pixels()) {
            prop_assert_eq!(*v, rgb_pixel_to_hsv(*p)[1]);
        }
    }

    #[test]
    fn surface_dims_are_ceiling_of_block(img in rgb_image(20), block in 1usize..8) {
        let s = saturation_surface(&img, block).unwrap();
        prop_assert_eq!(s.width, img.width().div_ceil(block));
        prop_assert_eq!(s.height, img.height().div_ceil(block));
        prop_assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
