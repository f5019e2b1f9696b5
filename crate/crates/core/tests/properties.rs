use std::time::Duration;

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use headprobe::detector::{self, Decision, Verdict};
use headprobe::eval::ResponseSet;
use headprobe::headspec::{
    parse_headspec, serialize_headspec, Activation, AffineLayer, HeadSpec, InputShape, LatentRangeInfo,
};
use headprobe::indicators::{self, IndicatorKind, IndicatorVector};
use headprobe::synth::{self, CleanParams, Mechanism, SynthParams};
use headprobe::zoo::{self, Truth};

#[test]
fn synth_heads_round_trip_bit_exact() {
    for seed in 0..100 {
        let c = synth::gen_clean_head(&CleanParams::new(512, 10, seed)).unwrap();
        let h = if seed % 2 == 0 {
            c.head
        } else {
            let p = SynthParams::new(Mechanism::ALL[(seed as usize / 2) % 4], 3, seed);
            synth::gen_backdoored_head(&c, &p).unwrap().head
        };
        let back = parse_headspec(&serialize_headspec(&h)).unwrap();
        assert_eq!(back, h);
        let bits = |h: &HeadSpec| -> Vec<u64> {
            h.layers()
                .iter()
                .flat_map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(bits(&back), bits(&h));
    }
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e3..1e3f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
    ]
}

fn head_strategy() -> impl Strategy<Value = HeadSpec> {
    (1usize..6, 1usize..6).prop_flat_map(|(d, k)| {
        (
            prop::collection::vec(finite(), d * k),
            prop::collection::vec(finite(), k),
            -5.0..0.0f64,
            0.0..5.0f64,
        )
            .prop_map(move |(w, b, lo, hi)| {
                let layer = AffineLayer::new(
                    Array2::from_shape_vec((k, d), w).unwrap(),
                    Array1::from(b),
                    Activation::Identity,
                );
                HeadSpec::new(
                    "prop",
                    InputShape::Flat { d },
                    k,
                    vec![layer],
                    LatentRangeInfo::new(lo, hi, 32).unwrap(),
                )
                .unwrap()
            })
    })
}

fn responses() -> impl Strategy<Value = ResponseSet> {
    (1usize..40, 1usize..8).prop_flat_map(|(n, k)| {
        prop::collection::vec(-30.0..30.0f64, n * k)
            .prop_map(move |v| ResponseSet::from_logits(Array2::from_shape_vec((n, k), v).unwrap()))
    })
}

fn verdict(flagged: bool, values: Vec<f64>) -> Verdict {
    let ind = IndicatorVector {
        kind: IndicatorKind::Mean,
        values,
        probe_count: 1,
    };
    let (target, score) = ind.peak();
    Verdict {
        model_id: "p".into(),
        decision: if flagged { Decision::Backdoored } else { Decision::Clean },
        target: Some(target),
        score,
        indicator: ind,
        elapsed: Duration::ZERO,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn headspec_round_trip(h in head_strategy()) {
        let bytes = serialize_headspec(&h);
        let back = parse_headspec(&bytes).unwrap();
        prop_assert_eq!(&back, &h);
        prop_assert_eq!(serialize_headspec(&back), bytes);
    }

    #[test]
    fn indicators_ignore_probe_order(r in responses(), seed in any::<u64>()) {
        let n = r.num_probes();
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left((seed as usize) % n);
        order.reverse();
        let p = r.permuted(&order);
        for kind in IndicatorKind::ALL {
            prop_assert_eq!(indicators::compute(kind, &r), indicators::compute(kind, &p));
        }
        let mean: f64 = indicators::r_mean(&r).values.iter().sum();
        prop_assert!((mean - 1.0).abs() <= 1e-6);
        let ratio: f64 = indicators::r_ratio(&r).values.iter().sum();
        prop_assert!((ratio - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn calibration_respects_cap_and_is_optimal(
        clean in prop::collection::vec(0.0..1.0f64, 1..30),
        bd in prop::collection::vec(0.0..1.5f64, 1..30),
        cap in 0.0..0.5f64,
    ) {
        let c = detector::calibrate(&clean, &bd, cap).unwrap();
        prop_assert!(c.fpr <= cap);
        // any threshold at a pooled score is no better than the chosen one
        for &t in clean.iter().chain(&bd) {
            let fpr = clean.iter().filter(|&&s| s > t).count() as f64 / clean.len() as f64;
            let tpr = bd.iter().filter(|&&s| s > t).count() as f64 / bd.len() as f64;
            if fpr <= cap {
                prop_assert!(tpr <= c.tpr);
            }
        }
    }

    #[test]
    fn rates_never_increase_with_tau(
        clean in prop::collection::vec(0.0..1.0f64, 1..30),
        bd in prop::collection::vec(0.0..1.0f64, 1..30),
        a in 0.0..1.0f64,
        b in 0.0..1.0f64,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let rate = |xs: &[f64], t: f64| xs.iter().filter(|&&s| s > t).count();
        prop_assert!(rate(&clean, hi) <= rate(&clean, lo));
        prop_assert!(rate(&bd, hi) <= rate(&bd, lo));
    }

    #[test]
    fn ap_invariant_to_monotone_transform(
        pairs in prop::collection::vec((0u8..20, any::<bool>()), 1..40),
    ) {
        let mut labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        labels[0] = true;
        let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let moved: Vec<f64> = scores.iter().map(|s| (s / 7.0).exp() * 3.0 - 11.0).collect();
        let a = zoo::average_precision(&scores, &labels).unwrap();
        let b = zoo::average_precision(&moved, &labels).unwrap();
        prop_assert!((a - b).abs() <= 1e-15);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn target_match_never_exceeds_tpr(
        rows in prop::collection::vec((any::<bool>(), any::<bool>(), 0usize..4, 0usize..4), 1..40),
    ) {
        let mut verdicts = Vec::new();
        let mut truth = Vec::new();
        for (flag, backdoor, peak, target) in rows {
            let mut values = vec![0.1; 4];
            values[peak] = 0.7;
            verdicts.push(verdict(flag, values));
            truth.push(Truth { backdoor, target: backdoor.then_some(target) });
        }
        let m = zoo::metrics(&verdicts, &truth).unwrap();
        if let (Some(tm), Some(tpr)) = (m.tpr_target_match, m.tpr) {
            prop_assert!(tm <= tpr);
        }
    }

    #[test]
    fn cosine_ignores_positive_scaling(
        r in prop::collection::vec(0.001..1.0f64, 1..16),
        c in 1e-6..1e6f64,
        tau in -1.0..1.0f64,
    ) {
        let other: Vec<f64> = r.iter().rev().map(|x| x + 0.05).collect();
        let scaled: Vec<f64> = r.iter().map(|x| x * c).collect();
        let a = detector::cosine(&r, &other).unwrap();
        let b = detector::cosine(&scaled, &other).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        if (a - tau).abs() > 1e-12 {
            prop_assert_eq!(a > tau, b > tau);
        }
        prop_assert_eq!(detector::cosine(&r, &r).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn zero_equalization_is_identity(seed in any::<u64>(), target in 0usize..8) {
        let c = synth::gen_clean_head(&CleanParams::new(256, 8, seed)).unwrap();
        let bd = synth::gen_backdoored_head(&c, &SynthParams::new(Mechanism::WeightInflation, target, seed)).unwrap();
        prop_assert_eq!(synth::gen_adaptive_head(&bd.head, 0.0, 0.0).unwrap(), bd.head);
    }

    #[test]
    fn detect_is_deterministic(seed in any::<u64>()) {
        let c = synth::gen_clean_head(&CleanParams::new(64, 5, seed)).unwrap();
        let cfg = detector::DetectorConfig::targeted(
            IndicatorKind::L2,
            1.0,
            detector::ProbeSettings { count: 256, seed, ..Default::default() },
        );
        let a = detector::detect(&c.head, &cfg).unwrap();
        let b = detector::detect(&c.head, &cfg).unwrap();
        prop_assert_eq!(a.indicator, b.indicator);
        prop_assert_eq!(a.decision, b.decision);
    }
}
