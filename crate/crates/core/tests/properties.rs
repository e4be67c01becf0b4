use proptest::prelude::*;

use scenediff::evalkit::{
    binarize, connected_components, f1_score, filter_min_area, match_regions, prf1, Connectivity,
    EvalConfig, MatchMode,
};
use scenediff::synthlab::{label_or, paste_object, shadow_sample, ObjectCutout, ShadowPattern};
use scenediff::{Branch, ChangeMask, Image, ImagePair, LabeledSample, ProbabilityMask, Provenance};

fn mask_strategy() -> impl Strategy<Value = ChangeMask> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        proptest::collection::vec(prop_oneof![3 => Just(0u8), 2 => Just(1u8)], h * w)
            .prop_map(move |d| ChangeMask::new(h, w, d).unwrap())
    })
}

fn prob_strategy() -> impl Strategy<Value = ProbabilityMask> {
    (1usize..10, 1usize..10).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0.0f64..1.0, h * w)
            .prop_map(move |d| ProbabilityMask::new(h, w, d, 1e-7).unwrap())
    })
}

fn connectivity() -> impl Strategy<Value = Connectivity> {
    prop_oneof![Just(Connectivity::Four), Just(Connectivity::Eight)]
}

fn textured(h: usize, w: usize, seed: u32) -> Image {
    let data = (0..h * w * 3)
        .map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 1000) as f32 / 1000.0)
        .collect();
    Image::new(h, w, data).unwrap()
}

proptest! {
    #[test]
    fn components_partition_foreground(mask in mask_strategy(), conn in connectivity()) {
        let regions = connected_components(&mask, conn);
        let mut seen = vec![0u32; mask.data().len()];
        for r in &regions {
            prop_assert!(r.area() > 0);
            for &(y, x) in r.pixels() {
                seen[y * mask.width() + x] += 1;
            }
        }
        for (i, &v) in mask.data().iter().enumerate() {
            prop_assert_eq!(seen[i], u32::from(v));
        }
    }

    #[test]
    fn four_connectivity_refines_eight(mask in mask_strategy()) {
        let four = connected_components(&mask, Connectivity::Four).len();
        let eight = connected_components(&mask, Connectivity::Eight).len();
        prop_assert!(four >= eight);
    }

    #[test]
    fn area_filter_is_idempotent(mask in mask_strategy(), conn in connectivity(), min_area in 0usize..20) {
        let once = filter_min_area(connected_components(&mask, conn), min_area);
        prop_assert!(once.iter().all(|r| r.area() >= min_area));
        let twice = filter_min_area(once.clone(), min_area);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn binarize_is_monotone(prob in prob_strategy(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let low = binarize(&prob, lo);
        let high = binarize(&prob, hi);
        for (l, h) in low.data().iter().zip(high.data()) {
            prop_assert!(l >= h);
        }
    }

    #[test]
    fn f1_is_harmonic_mean(tp in 0usize..500, fp in 0usize..500, fn_ in 0usize..500) {
        let m = prf1(tp, fp, fn_);
        prop_assert!((0.0..=1.0).contains(&m.precision) && (0.0..=1.0).contains(&m.recall));
        prop_assert!((m.f1 - f1_score(m.precision, m.recall)).abs() < 1e-12);
        if m.precision + m.recall > 0.0 {
            let h = 2.0 / (1.0 / m.precision.max(f64::MIN_POSITIVE) + 1.0 / m.recall.max(f64::MIN_POSITIVE));
            prop_assert!((m.f1 - h).abs() < 1e-9);
        }
    }

    #[test]
    fn match_counts_are_consistent(pred in mask_strategy(), tau in 0.05f64..1.0) {
        let gt = ChangeMask::new(pred.height(), pred.width(), pred.data().iter().rev().copied().collect()).unwrap();
        let cfg = EvalConfig { iou_tau: tau, match_mode: MatchMode::IouThreshold, ..Default::default() };
        let p = connected_components(&pred, cfg.connectivity);
        let g = connected_components(&gt, cfg.connectivity);
        let r = match_regions(&p, &g, &cfg);
        prop_assert_eq!(r.tp + r.fp, p.len());
        prop_assert_eq!(r.tp + r.fn_, g.len());
        prop_assert_eq!(r.matches.len(), r.tp);
        prop_assert!(r.matches.iter().all(|m| m.iou >= tau));
    }

    #[test]
    fn shadows_never_touch_the_mask(mask in mask_strategy(), weight in 0.0f64..1.0, t1 in any::<bool>()) {
        let (h, w) = mask.dims();
        let pair = ImagePair::new(textured(h, w, 1), textured(h, w, 2), "p").unwrap();
        let sample = LabeledSample::new(pair, mask.clone(), Provenance::Real).unwrap();
        let pattern = ShadowPattern::new(h, w, (0..h * w).map(|i| (i % 7) as f32 / 6.0).collect()).unwrap();
        let branch = if t1 { Branch::T1 } else { Branch::T0 };
        let out = shadow_sample(&sample, &pattern, weight, branch).unwrap();
        prop_assert_eq!(out.mask(), &mask);
        let other = if t1 { Branch::T0 } else { Branch::T1 };
        prop_assert_eq!(out.pair().get(other), sample.pair().get(other));
        for (a, b) in out.pair().get(branch).data().iter().zip(sample.pair().get(branch).data()) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn paste_ors_alpha_support(
        mask in mask_strategy(),
        ch in 1usize..5,
        cw in 1usize..5,
        alpha_seed in any::<u32>(),
        pos in (0usize..12, 0usize..12),
    ) {
        let (h, w) = mask.dims();
        prop_assume!(ch <= h && cw <= w);
        let (row, col) = (pos.0 % (h - ch + 1), pos.1 % (w - cw + 1));
        let alpha: Vec<f32> = (0..ch * cw).map(|i| (((i as u32).wrapping_mul(7919) ^ alpha_seed) % 5) as f32 / 4.0).collect();
        let cutout = ObjectCutout::new(textured(ch, cw, 9), alpha.clone()).unwrap();
        let pair = ImagePair::new(textured(h, w, 3), textured(h, w, 4), "p").unwrap();
        let sample = LabeledSample::new(pair, mask.clone(), Provenance::Real).unwrap();
        let out = paste_object(&sample, &cutout, (row, col), Branch::T0, 0.5).unwrap();

        let mut support = vec![0u8; h * w];
        for r in 0..ch {
            for c in 0..cw {
                support[(row + r) * w + col + c] = u8::from(alpha[r * cw + c] > 0.5);
            }
        }
        let expected = label_or(&mask, &ChangeMask::new(h, w, support).unwrap()).unwrap();
        prop_assert_eq!(out.mask(), &expected);
        prop_assert_eq!(out.pair().t1(), sample.pair().t1());
    }
}
