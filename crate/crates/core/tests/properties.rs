use std::collections::BTreeMap;

use proptest::collection::vec;
use proptest::prelude::*;
use toolgap_core::arith::{evaluate, render, sample_family, tokenize, ProblemFamily, Token};
use toolgap_core::collector::{aggregate, classify, Category};
use toolgap_core::diagnose::{boundary_order, trace, Stage};
use toolgap_core::dump::{write_dump, DumpHeader, DumpReader};
use toolgap_core::metrics::{mcc, Confusion};
use toolgap_core::probes::{cosine, stratified_split, Cell, ProbeResult, Target};
use toolgap_core::Probe;

fn brute_mcc(pairs: &[(bool, bool)]) -> Option<f64> {
    let n = pairs.len() as f64;
    if n == 0.0 {
        return None;
    }
    let mean = |f: &dyn Fn(&(bool, bool)) -> f64| pairs.iter().map(f).sum::<f64>() / n;
    let (mp, ma) = (mean(&|p| p.0 as u8 as f64), mean(&|p| p.1 as u8 as f64));
    let cov = mean(&|p| (p.0 as u8 as f64 - mp) * (p.1 as u8 as f64 - ma));
    let (vp, va) = (mp * (1.0 - mp), ma * (1.0 - ma));
    if vp == 0.0 || va == 0.0 {
        None
    } else {
        Some(cov / (vp * va).sqrt())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mcc_is_pearson_on_binary_pairs(pairs in vec(any::<(bool, bool)>(), 0..200)) {
        let m = Confusion::from_pairs(pairs.iter().copied()).mcc::<f64>();
        match brute_mcc(&pairs) {
            Some(r) => prop_assert!(m.defined && (m.value - r).abs() < 1e-9, "{} vs {r}", m.value),
            None => prop_assert!(!m.defined && m.value == 0.0),
        }
        prop_assert!((-1.0..=1.0).contains(&m.value));
    }

    #[test]
    fn mcc_symmetries(tp in 0u64..1000, tn in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000, k in 1u64..50) {
        let base = mcc::<f64>(tp, tn, fp, fn_);
        // Swapping the positive class leaves it unchanged; flipping the actual labels negates it.
        let swapped = mcc::<f64>(tn, tp, fn_, fp);
        let flipped = mcc::<f64>(fp, fn_, tp, tn);
        let scaled = mcc::<f64>(k * tp, k * tn, k * fp, k * fn_);
        prop_assert_eq!(base.defined, swapped.defined);
        prop_assert!((base.value - swapped.value).abs() < 1e-12);
        prop_assert!((base.value + flipped.value).abs() < 1e-12);
        prop_assert_eq!(base.defined, scaled.defined);
        prop_assert!((base.value - scaled.value).abs() < 1e-12);
    }

    #[test]
    fn cosine_ignores_positive_rescaling(
        a in vec(-10.0f64..10.0, 1..32),
        s in 0.01f64..100.0,
        t in 0.01f64..100.0,
    ) {
        let b: Vec<f64> = a.iter().rev().copied().collect();
        let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
        let tb: Vec<f64> = b.iter().map(|x| x * t).collect();
        match (cosine(&a, &b), cosine(&sa, &tb)) {
            (Some(x), Some(y)) => {
                prop_assert!((x - y).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&x));
            }
            (None, None) => {}
            other => prop_assert!(false, "{other:?}"),
        }
        if let Some(own) = cosine(&a, &a) {
            prop_assert!((own - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_is_a_bijection_and_counts_conserve(rows in vec(any::<(bool, bool)>(), 1..300)) {
        let mut seen = BTreeMap::new();
        for &(n, a) in &rows {
            let c = classify(n, a);
            prop_assert_eq!(c.is_mismatch(), n != a);
            if let Some(prev) = seen.insert(c, (n, a)) {
                prop_assert_eq!(prev, (n, a));
            }
        }
        let counts = aggregate(rows.iter().map(|&(n, a)| classify(n, a))).unwrap();
        prop_assert_eq!(counts.total() as usize, rows.len());
        prop_assert_eq!(counts.mismatches() as usize, rows.iter().filter(|(n, a)| n != a).count());
        prop_assert_eq!(counts.n_c as usize, rows.iter().filter(|&&r| r == (true, true)).count());
        prop_assert_eq!(counts.un_nc as usize, rows.iter().filter(|&&r| r == (false, false)).count());
    }

    #[test]
    fn trace_partitions_and_tracks_end_to_end_agreement(rows in vec(any::<(bool, bool, bool)>(), 0..300)) {
        let mut per_stage: BTreeMap<Stage, usize> = BTreeMap::new();
        for &(n, z, a) in &rows {
            let s = trace(n, z, a);
            *per_stage.entry(s).or_default() += 1;
            prop_assert_eq!(n == a, matches!(s, Stage::Aligned | Stage::Compensating));
            prop_assert_eq!(s.end_to_end_match(), n == a);
            let category = classify(n, a);
            prop_assert_eq!(category.is_mismatch(), matches!(s, Stage::Stage1Only | Stage::Stage2Only));
        }
        prop_assert_eq!(per_stage.values().sum::<usize>(), rows.len());
    }

    #[test]
    fn boundary_order_is_a_stable_sorted_bijection(
        (models, n) in (1usize..5, 0usize..40),
        seed in any::<u64>(),
    ) {
        let bits: Vec<Vec<bool>> = (0..models)
            .map(|m| (0..n).map(|s| (seed.rotate_left((m * 7 + s) as u32 % 64) ^ (s as u64 * 2654435761)) & 1 == 1).collect())
            .collect();
        let order = boundary_order(&bits).unwrap();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        for w in order.windows(2) {
            let key = |s: usize| bits.iter().map(|r| !r[s]).collect::<Vec<_>>();
            prop_assert!(key(w[0]) <= key(w[1]));
            if key(w[0]) == key(w[1]) {
                prop_assert!(w[0] < w[1], "ties must keep input order");
            }
        }
    }

    #[test]
    fn split_is_disjoint_stratified_and_reproducible(
        labels in vec(any::<bool>(), 0..300),
        frac in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let s = stratified_split(&labels, frac, seed).unwrap();
        prop_assert_eq!(&s, &stratified_split(&labels, frac, seed).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for class in [false, true] {
            let size = labels.iter().filter(|&&l| l == class).count();
            let in_test = s.test.iter().filter(|&&i| labels[i] == class).count();
            prop_assert_eq!(in_test, (size as f64 * frac).round() as usize);
        }
    }

    #[test]
    fn probe_decisions_ignore_positive_rescaling(
        w in vec(-3.0f64..3.0, 4),
        b in -3.0f64..3.0,
        c in 0.01f64..100.0,
        h in vec(vec(-5.0f64..5.0, 4), 1..20),
    ) {
        let probe = |w: Vec<f64>, b: f64| -> Probe {
            ProbeResult {
                target: Target::Cognition,
                position: Cell { offset: -1, layer: 0 },
                weight: w,
                bias: b,
                mean: vec![0.5; 4],
                std: vec![2.0; 4],
                train_mcc: 0.0,
                test_mcc: 0.0,
                test_mcc_defined: false,
                split_seed: 0,
                n_train: 0,
                n_test: 0,
                epochs_run: 0,
                loss_history: vec![],
            }
        };
        let p = probe(w.clone(), b);
        let q = probe(w.iter().map(|x| x * c).collect(), b * c);
        for row in &h {
            let (lp, lq) = (p.logit(row).unwrap(), q.logit(row).unwrap());
            // Skip points that sit on the boundary up to rounding.
            if lp.abs() > 1e-9 {
                prop_assert_eq!(p.predict(row).unwrap(), q.predict(row).unwrap());
                prop_assert_eq!(p.predict(row).unwrap(), lp >= 0.0);
                prop_assert!((lq - c * lp).abs() <= 1e-9 * (1.0 + lq.abs()));
            }
        }
    }

    #[test]
    fn generated_expressions_render_canonically(family in 0usize..13, seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let e = sample_family(ProblemFamily::ALL[family], &mut rng);
        let tokens: Vec<Token> = tokenize(&e.text).unwrap().into_iter().map(|(_, t)| t).collect();
        let rendered = render(&tokens);
        prop_assert_eq!(&rendered, &e.text);
        prop_assert_eq!(evaluate(&rendered).unwrap(), e.value);
    }

    #[test]
    fn dump_round_trips_bit_exactly(
        (n, layers, dim) in (1usize..5, 1usize..4, 1usize..6),
        seed in any::<u32>(),
        with_decisions in any::<bool>(),
    ) {
        let ids: Vec<String> = (0..n).map(|i| format!("id-{i}")).collect();
        let header = DumpHeader::new("m", dim, layers, ids);
        let len = header.sample_len();
        let samples: Vec<Vec<f32>> = (0..n)
            .map(|s| (0..len).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add((s * len + i) as u32) & 0x7f7f_ffff)).collect())
            .collect();
        let decisions: Vec<[f32; 2]> = (0..n).map(|i| [i as f32 / 8.0, 0.125]).collect();
        let mut header = header;
        header.decision_included = with_decisions;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.hsd");
        write_dump(&path, header.clone(), &samples, with_decisions.then_some(&decisions[..])).unwrap();
        let r = DumpReader::open(&path).unwrap();
        prop_assert_eq!(r.header(), &header);
        for (i, s) in samples.iter().enumerate() {
            let back = r.read_sample(i).unwrap();
            prop_assert!(back.iter().zip(s).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        prop_assert_eq!(r.read_decisions().unwrap(), with_decisions.then_some(decisions));
        let file_len = std::fs::metadata(&path).unwrap().len();
        prop_assert!(file_len >= header.body_bytes() + header.trailer_bytes());
    }
}

#[test]
fn categories_cover_all_four_cells() {
    let all: Vec<Category> = [(true, true), (true, false), (false, true), (false, false)]
        .into_iter()
        .map(|(n, a)| classify(n, a))
        .collect();
    let mut dedup = all.clone();
    dedup.sort();
    dedup.dedup();
    assert_eq!(dedup.len(), 4);
}
