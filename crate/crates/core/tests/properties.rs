mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::Config;

use common::{elem, shot};
use groundkit::corpus::{load_corpus, save_corpus};
use groundkit::dedup::{hamming, PerceptualHash};
use groundkit::evaluation::{score, Answer, BenchmarkRecord, PredictionRecord, ScoreOptions};
use groundkit::geometry::{max_distance, normalized_distance, point_in_box, signed_distance, unsigned_distance};
use groundkit::instructions::export::to_sft_records;
use groundkit::instructions::{
    export_sft, load_sft, mix_counts, InstructionKind, InstructionSample, MixFractions, MixSpec, Provenance, Subkind,
};
use groundkit::rewards::{continuous_reward, discrete_reward, rloo_advantages};
use groundkit::stats::compute_stats;
use groundkit::{BoundingBox, Corpus, Point, Screenshot, UiElement};

const GEOMETRY_CASES: u32 = 10_000;
const EPS: f64 = 1e-9;

/// An image size, a box inside it, and a point anywhere near the image.
fn scene() -> impl Strategy<Value = (f64, f64, BoundingBox, Point)> {
    (1u32..=3000, 1u32..=2000)
        .prop_flat_map(|(w, h)| {
            let (w, h) = (f64::from(w), f64::from(h));
            (
                Just(w),
                Just(h),
                0.0..=w,
                0.0..=w,
                0.0..=h,
                0.0..=h,
                -100.0..w + 100.0,
                -100.0..h + 100.0,
            )
        })
        .prop_map(|(w, h, xa, xb, ya, yb, u, v)| {
            (
                w,
                h,
                BoundingBox::new(xa.min(xb), ya.min(yb), xa.max(xb), ya.max(yb)),
                Point::new(u, v),
            )
        })
}

proptest! {
    #![proptest_config(Config::with_cases(GEOMETRY_CASES))]

    #[test]
    fn distance_zero_exactly_inside((w, h, b, p) in scene()) {
        let (d, closest) = unsigned_distance(p, &b);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d == 0.0, point_in_box(p, &b));
        prop_assert!(point_in_box(closest, &b));
        prop_assert!(((p.u - closest.u).hypot(p.v - closest.v) - d).abs() <= EPS);
        let s = signed_distance(p, &b);
        if point_in_box(p, &b) {
            prop_assert!(s >= 0.0);
        } else {
            prop_assert!(s < 0.0);
            prop_assert!((s + d).abs() <= EPS);
        }
        let m = max_distance(&b, w, h).unwrap();
        if (0.0..=w).contains(&p.u) && (0.0..=h).contains(&p.v) {
            prop_assert!(d <= m + EPS);
        }
        let dn = normalized_distance(p, &b, w, h).unwrap();
        prop_assert!((-1.0..=1.0).contains(&dn));
        prop_assert_eq!(dn >= 0.0, point_in_box(p, &b));
    }

    #[test]
    fn distance_is_translation_invariant((_w, _h, b, p) in scene(), dx in -500.0..500.0f64, dy in -500.0..500.0f64) {
        let moved = BoundingBox::new(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy);
        let d0 = unsigned_distance(p, &b).0;
        let d1 = unsigned_distance(p.translated(dx, dy), &moved).0;
        prop_assert!((d0 - d1).abs() <= 1e-6);
    }

    #[test]
    fn continuous_reward_in_unit_interval((w, h, b, p) in scene()) {
        let r = continuous_reward(p, &b, w, h).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(r == 1.0, point_in_box(p, &b));
    }
}

proptest! {
    #[test]
    fn discrete_reward_is_monotone(a in -1.0..=1.0f64, b in -1.0..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (rl, rh) = (discrete_reward(lo).unwrap(), discrete_reward(hi).unwrap());
        prop_assert!(rl <= rh);
        prop_assert!([-1.0, -0.5, -0.1, 0.1, 0.5, 1.0].contains(&rl));
        prop_assert_eq!(rl > 0.0, lo >= 0.0);
    }

    #[test]
    fn discrete_reward_rejects_out_of_range(d in prop_oneof![-1e6..-1.000001f64, 1.000001..1e6f64]) {
        prop_assert!(discrete_reward(d).is_err());
    }

    #[test]
    fn rloo_sums_to_zero(r in prop::collection::vec(-1.0..=1.0f64, 2..=16)) {
        let a = rloo_advantages(&r).unwrap();
        prop_assert!(a.iter().sum::<f64>().abs() <= EPS);
    }

    #[test]
    fn hamming_is_a_metric(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let (a, b, c) = (PerceptualHash(a), PerceptualHash(b), PerceptualHash(c));
        prop_assert_eq!(hamming(a, a), 0);
        prop_assert_eq!(hamming(a, b), hamming(b, a));
        prop_assert_eq!(hamming(a, b) == 0, a == b);
        prop_assert!(hamming(a, c) <= hamming(a, b) + hamming(b, c));
        prop_assert!(hamming(a, b) <= 64);
    }

    #[test]
    fn mix_counts_sum_to_total(w in prop::array::uniform3(0u32..1000), total in 0usize..2_000_000) {
        let sum: u32 = w.iter().sum();
        prop_assume!(sum > 0);
        let f = w.map(|x| f64::from(x) / f64::from(sum));
        // Make the fractions sum to one exactly.
        let fractions = MixFractions { direct: f[0], functional: f[1], spatial: 1.0 - f[0] - f[1] };
        prop_assume!(fractions.validate().is_ok());
        let counts = mix_counts(&MixSpec { fractions, total }).unwrap();
        prop_assert_eq!(counts.iter().sum::<usize>(), total);
        for (c, q) in counts.iter().zip(fractions.as_array()) {
            prop_assert!((*c as f64 - q * total as f64).abs() < 1.0 + 1e-6);
        }
    }
}

fn corpus_strategy() -> impl Strategy<Value = (Vec<Screenshot>, Vec<UiElement>)> {
    prop::collection::vec(
        (
            100u32..4000,
            100u32..3000,
            prop::collection::vec(
                (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, "[A-Za-z ]{0,12}"),
                0..8,
            ),
        ),
        1..6,
    )
    .prop_map(|shots| {
        let mut screenshots = Vec::new();
        let mut elements = Vec::new();
        for (i, (w, h, boxes)) in shots.into_iter().enumerate() {
            let sid = format!("s{i}");
            for (j, (a, b, c, d, label)) in boxes.into_iter().enumerate() {
                let (fw, fh) = (f64::from(w), f64::from(h));
                let bbox = [a.min(b) * fw, c.min(d) * fh, a.max(b) * fw, c.max(d) * fh];
                elements.push(elem(&format!("{sid}-{j}"), &sid, bbox, &label));
            }
            screenshots.push(shot(&sid, w, h));
        }
        (screenshots, elements)
    })
}

proptest! {
    #![proptest_config(Config::with_cases(64))]

    #[test]
    fn corpus_save_load_round_trip((shots, elems) in corpus_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::new("rt", dir.path(), shots, elems).unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        prop_assert_eq!(back.name(), corpus.name());
        prop_assert_eq!(back.screenshots(), corpus.screenshots());
        prop_assert_eq!(back.elements(), corpus.elements());
    }

    #[test]
    fn stats_ignore_order((shots, elems) in corpus_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = compute_stats(&Corpus::new("c", ".", shots.clone(), elems.clone()).unwrap()).unwrap();
        let (mut s2, mut e2) = (shots, elems);
        s2.shuffle(&mut rng);
        e2.shuffle(&mut rng);
        let b = compute_stats(&Corpus::new("c", ".", s2, e2).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sft_export_round_trips_and_points_land_in_boxes((shots, elems) in corpus_strategy()) {
        prop_assume!(!elems.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::new("x", dir.path(), shots, elems).unwrap();
        let kinds = InstructionKind::ALL;
        let dataset: Vec<InstructionSample> = corpus
            .elements()
            .iter()
            .enumerate()
            .map(|(i, e)| InstructionSample {
                id: format!("{}:{i}", e.id),
                screenshot_id: e.screenshot_id.clone(),
                element_id: e.id.clone(),
                instruction: format!("Click \"{}\"", e.label),
                kind: kinds[i % 3],
                subkind: Subkind::General,
                provenance: Provenance::Template,
                anchors: vec![],
            })
            .collect();
        let out = dir.path().join("sft.jsonl");
        let written = export_sft(&dataset, &corpus, &out).unwrap();
        prop_assert_eq!(&written, &to_sft_records(&dataset, &corpus).unwrap());
        let back = load_sft(&out).unwrap();
        prop_assert_eq!(&back, &written);
        for (r, s) in back.iter().zip(&dataset) {
            prop_assert!(point_in_box(r.target_point, &r.target_box));
            prop_assert_eq!(&r.element_id, &s.element_id);
            prop_assert_eq!(r.kind, s.kind);
        }
    }
}

fn bench_strategy() -> impl Strategy<Value = Vec<(BoundingBox, Option<Point>, String)>> {
    prop::collection::vec(
        (
            0.0..500.0f64,
            0.0..500.0f64,
            1.0..200.0f64,
            1.0..200.0f64,
            prop::option::of((0.0..800.0f64, 0.0..800.0f64)),
            "[ab]",
        ),
        1..60,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(x, y, w, h, p, tag)| {
                (
                    BoundingBox::new(x, y, x + w, y + h),
                    p.map(|(u, v)| Point::new(u, v)),
                    tag,
                )
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(Config::with_cases(256))]

    #[test]
    fn evaluation_ignores_record_order(items in bench_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut bench = Vec::new();
        let mut preds = Vec::new();
        for (i, (b, p, tag)) in items.into_iter().enumerate() {
            let id = format!("r{i}");
            bench.push(BenchmarkRecord {
                id: id.clone(),
                image_w: 800,
                image_h: 800,
                image_path: None,
                instruction: "x".into(),
                gt_box: b,
                tags: BTreeMap::from([("group".to_string(), tag)]),
            });
            if let Some(p) = p {
                preds.push(PredictionRecord { record_id: id, answer: Answer::Point(p) });
            }
        }
        let opts = ScoreOptions::default();
        let a = score(&bench, &preds, &opts).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        bench.shuffle(&mut rng);
        preds.shuffle(&mut rng);
        let b = score(&bench, &preds, &opts).unwrap();
        prop_assert_eq!(a, b);
    }
}
