//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use toolgap_core::arith::{evaluate, generate_corpus, sample_family, ProblemFamily};
use toolgap_core::collector::{aggregate, p_call, Category, CategoryCounts};
use toolgap_core::diagnose::boundary_order;
use toolgap_core::dump::MemoryDump;
use toolgap_core::metrics::mcc;
use toolgap_core::probes::{cosine_grid, sweep_grid, train_probe, Cell, ProbeHyper, Target};
use toolgap_core::synthetic::{axis, noise_dump, plant};
use toolgap_core::{GridSweep, Probe};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// Brute-force evaluator: reduce the innermost parenthesised group until none
// remain, each flat group by a multiplicative pass then an additive pass.

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Num(i128),
    Op(char),
    Open,
    Close,
}

fn lex(text: &str) -> Vec<Tok> {
    let mut out = Vec::new();
    let mut digits = String::new();
    for c in text.chars().chain(std::iter::once(' ')) {
        if c.is_ascii_digit() {
            digits.push(c);
            continue;
        }
        if !digits.is_empty() {
            out.push(Tok::Num(digits.parse().unwrap()));
            digits.clear();
        }
        match c {
            ' ' => {}
            '(' => out.push(Tok::Open),
            ')' => out.push(Tok::Close),
            '+' | '-' | '*' | '%' => out.push(Tok::Op(c)),
            '×' => out.push(Tok::Op('*')),
            other => panic!("unexpected character {other:?}"),
        }
    }
    out
}

fn flat(toks: &[Tok]) -> i128 {
    let mut nums = Vec::new();
    let mut ops = Vec::new();
    for t in toks {
        match *t {
            Tok::Num(v) => nums.push(v),
            Tok::Op(c) => ops.push(c),
            _ => panic!("parenthesis in flat group"),
        }
    }
    assert_eq!(nums.len(), ops.len() + 1, "malformed group");
    let mut terms = vec![nums[0]];
    let mut signs = Vec::new();
    for (op, v) in ops.iter().zip(&nums[1..]) {
        match op {
            '*' => *terms.last_mut().unwrap() *= v,
            '%' => *terms.last_mut().unwrap() %= v,
            _ => {
                signs.push(*op);
                terms.push(*v);
            }
        }
    }
    let mut acc = terms[0];
    for (s, v) in signs.iter().zip(&terms[1..]) {
        if *s == '+' {
            acc += v;
        } else {
            acc -= v;
        }
    }
    acc
}

fn brute_eval(text: &str) -> i128 {
    let mut toks = lex(text);
    while let Some(close) = toks.iter().position(|t| *t == Tok::Close) {
        let open = toks[..close].iter().rposition(|t| *t == Tok::Open).unwrap();
        let v = flat(&toks[open + 1..close]);
        toks.splice(open..=close, [Tok::Num(v)]);
    }
    flat(&toks)
}

fn operands_and_ops(text: &str) -> (Vec<i64>, Vec<char>) {
    let mut nums = Vec::new();
    let mut ops = Vec::new();
    for t in lex(text) {
        match t {
            Tok::Num(v) => nums.push(v as i64),
            Tok::Op(c) => ops.push(c),
            _ => {}
        }
    }
    (nums, ops)
}

fn within(v: &[i64], lo: i64, hi: i64) -> bool {
    v.iter().all(|x| (lo..=hi).contains(x))
}

fn operands_in_range(family: ProblemFamily, text: &str) -> bool {
    use ProblemFamily::*;
    let (v, ops) = operands_and_ops(text);
    let add_sub = ops.iter().all(|&c| c == '+' || c == '-');
    match family {
        SingleStepArithmetic => v.len() == 2 && within(&v, 1, 99) && ops.len() == 1 && add_sub,
        TwoStepArithmetic => v.len() == 3 && within(&v, 1, 99) && (ops == ['+', '-'] || ops == ['-', '+']),
        SmallModulo => v.len() == 2 && within(&v[..1], 100, 999) && within(&v[1..], 3, 19) && ops == ['%'],
        NegativeSubtraction => {
            v.len() == 2
                && ops == ['-']
                && ((within(&v[..1], 100, 500) && (v[0] + 10..=v[0] + 250).contains(&v[1]))
                    || (within(&v[..1], 1000, 5000) && (v[0] + 100..=v[0] + 3000).contains(&v[1])))
        }
        FourDigitAdditionSubtraction => v.len() == 2 && within(&v, 1000, 9999) && ops.len() == 1 && add_sub,
        TwoDigitMultiplication => v.len() == 2 && (within(&v, 15, 50) || within(&v, 30, 99)) && ops == ['*'],
        ThreeByTwoMultiplication => {
            v.len() == 2 && within(&v[..1], 100, 999) && within(&v[1..], 10, 99) && ops == ['*']
        }
        ThreeByThreeMultiplication => v.len() == 2 && within(&v, 100, 999) && ops == ['*'],
        PrecedenceChain => {
            v.len() == 5 && within(&v, 10, 999) && ops.len() == 4 && ops.iter().all(|c| "+-*".contains(*c))
        }
        OneDigitAdditionSubtractionChain => {
            let n = v.len() as i64;
            ((16..=22).contains(&n) || (29..=39).contains(&n))
                && within(&v, 1, 9)
                && ops.len() + 1 == v.len()
                && add_sub
        }
        SmallAdditionSubtractionChain => {
            (21..=27).contains(&(v.len() as i64)) && within(&v, 1, 30) && ops.len() + 1 == v.len() && add_sub
        }
        ParenthesizedExpression => {
            v.len() == 4 && within(&v, 10, 99) && text == format!("({} + {}) * ({} - {})", v[0], v[1], v[2], v[3])
        }
        MultiplicationChain => v.len() == 5 && within(&v, 10, 99) && ops == ['+', '*', '-', '*'],
    }
}

fn corpus_exactness() -> Check {
    let expected = [320, 200, 200, 280, 240, 360, 360, 280, 480, 440, 400, 240, 200];
    let start = Instant::now();
    let corpus = generate_corpus(0, 4000).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut counts = vec![0usize; 13];
    for e in &corpus {
        counts[ProblemFamily::ALL.iter().position(|&f| f == e.family).unwrap()] += 1;
    }
    ensure(counts == expected, format!("family counts {counts:?}"))?;
    let unique: HashSet<&str> = corpus.iter().map(|e| e.text.as_str()).collect();
    ensure(unique.len() == 4000, format!("{} unique of 4000", unique.len()))?;
    if let Some(bad) = corpus.iter().find(|e| !operands_in_range(e.family, &e.text)) {
        return Err(format!("{} `{}` out of range", bad.family, bad.text));
    }
    ensure(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("4000 unique, all in range, {elapsed:.2?}"))
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for family in ProblemFamily::ALL {
        for _ in 0..1000 {
            let e = sample_family(family, &mut rng);
            let ours = evaluate(&e.text).map_err(|err| format!("`{}`: {err}", e.text))?;
            let brute = brute_eval(&e.text);
            ensure(
                ours as i128 == brute && e.value as i128 == brute,
                format!("`{}`: evaluate {ours}, stored {}, brute force {brute}", e.text, e.value),
            )?;
            checked += 1;
        }
    }
    Ok(format!("{checked} expressions, 0 disagreements"))
}

fn operator_frequency() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut plus, mut total) = (0usize, 0usize);
    for _ in 0..10_000 {
        let e = sample_family(ProblemFamily::OneDigitAdditionSubtractionChain, &mut rng);
        let (_, ops) = operands_and_ops(&e.text);
        plus += ops.iter().filter(|&&c| c == '+').count();
        total += ops.len();
    }
    let rate = plus as f64 / total as f64;
    ensure((rate - 0.53).abs() <= 0.02, format!("'+' rate {rate:.4}"))?;
    Ok(format!("'+' rate {:.2}% over {total} operators", 100.0 * rate))
}

fn mcc_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut undefined = 0;
    for i in 0..1000 {
        let mut c: [u64; 4] = std::array::from_fn(|_| rng.random_range(0..500));
        if i % 10 == 0 {
            // Force an empty margin.
            match rng.random_range(0..4) {
                0 => (c[0], c[2]) = (0, 0),
                1 => (c[0], c[3]) = (0, 0),
                2 => (c[1], c[2]) = (0, 0),
                _ => (c[1], c[3]) = (0, 0),
            }
        }
        let [tp, tn, fp, fn_] = c.map(|v| v as f64);
        let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        let m = mcc::<f64>(c[0], c[1], c[2], c[3]);
        if denom == 0.0 {
            undefined += 1;
            ensure(
                !m.defined && m.value == 0.0,
                format!("{c:?}: expected flagged 0, got {m:?}"),
            )?;
        } else {
            let direct = (tp * tn - fp * fn_) / denom;
            ensure(
                m.defined && (m.value - direct).abs() <= 1e-12,
                format!("{c:?}: {} vs {direct}", m.value),
            )?;
        }
    }
    ensure(undefined > 0, "no undefined cases exercised")?;
    Ok(format!("1000 matrices, {undefined} flagged undefined"))
}

fn probe_sanity() -> Check {
    let (k, d) = (2000, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.iter_mut().for_each(|x| *x /= norm);
    let mut x = Array2::<f64>::zeros((k, d));
    let mut y = Vec::with_capacity(k);
    for i in 0..k {
        let row: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let s: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
        let label = s >= 0.0;
        // Push each point one unit further from the hyperplane.
        let shift = if label { 1.0 } else { -1.0 };
        for j in 0..d {
            x[[i, j]] = row[j] + shift * w[j];
        }
        y.push(label);
    }
    let hyper = ProbeHyper::default();
    let cell = Cell { offset: -1, layer: 0 };
    let start = Instant::now();
    let p: Probe = train_probe(x.view(), &y, &hyper, 0, Target::Cognition, cell).map_err(|e| e.to_string())?;
    let mut permuted = y.clone();
    permuted.shuffle(&mut rng);
    let q: Probe = train_probe(x.view(), &permuted, &hyper, 0, Target::Cognition, cell).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(p.test_mcc >= 0.95, format!("separable test MCC {:.4}", p.test_mcc))?;
    ensure(q.test_mcc.abs() <= 0.1, format!("permuted test MCC {:.4}", q.test_mcc))?;
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!(
        "separable MCC {:.4}, permuted MCC {:.4}, {elapsed:.2?}",
        p.test_mcc, q.test_mcc
    ))
}

const PLANTED: [Cell; 5] = [
    Cell { offset: -1, layer: 3 },
    Cell { offset: -4, layer: 3 },
    Cell { offset: -7, layer: 2 },
    Cell { offset: -12, layer: 1 },
    Cell { offset: -20, layer: 0 },
];

struct PlantedSweeps {
    cognition: GridSweep,
    action: GridSweep,
}

/// Cognition labels along one axis and independent action labels along an
/// orthogonal one, both at the same five cells of a noise dump.
fn planted_sweeps() -> std::result::Result<PlantedSweeps, String> {
    let (k, layers, dim) = (1000, 4, 16);
    let ids: Vec<String> = (0..k).map(|i| format!("s{i:04}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let cog: Vec<bool> = (0..k).map(|_| rng.random_bool(0.4)).collect();
    let act: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
    let mut dump: MemoryDump = noise_dump("planted", ids.clone(), layers, dim, 1.0, 23).map_err(|e| e.to_string())?;
    plant(&mut dump, &PLANTED, &cog, &axis(dim, 0), 3.0).map_err(|e| e.to_string())?;
    plant(&mut dump, &PLANTED, &act, &axis(dim, 1), 3.0).map_err(|e| e.to_string())?;
    let hyper = ProbeHyper::default();
    let labels = |bits: &[bool]| -> Vec<(String, bool)> { ids.iter().cloned().zip(bits.iter().copied()).collect() };
    let cognition = sweep_grid(&dump, &labels(&cog), Target::Cognition, &hyper, 0, false).map_err(|e| e.to_string())?;
    let action = sweep_grid(&dump, &labels(&act), Target::Action, &hyper, 0, false).map_err(|e| e.to_string())?;
    Ok(PlantedSweeps { cognition, action })
}

fn planted_sweep(s: &PlantedSweeps) -> Check {
    let grid = &s.cognition.grid;
    ensure(grid.n_layers * grid.offsets.len() == 80, "grid is not 4 x 20")?;
    let mut min_planted = f64::INFINITY;
    let mut max_other = f64::NEG_INFINITY;
    for (cell, v) in grid.cells() {
        if PLANTED.contains(&cell) {
            min_planted = min_planted.min(v);
        } else {
            max_other = max_other.max(v);
        }
    }
    ensure(min_planted >= 0.9, format!("weakest planted cell MCC {min_planted:.4}"))?;
    ensure(max_other <= 0.3, format!("strongest unplanted cell MCC {max_other:.4}"))?;
    Ok(format!("planted min {min_planted:.4}, elsewhere max {max_other:.4}"))
}

fn cosine_checks(s: &PlantedSweeps) -> Check {
    let cog = &s.cognition.probes;
    let same = cosine_grid(cog, cog).map_err(|e| e.to_string())?;
    for (cell, v) in same.cells() {
        ensure((v - 1.0).abs() <= 1e-12, format!("identical maps give {v} at {cell:?}"))?;
    }
    let negated: Vec<Probe> = cog
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.weight.iter_mut().for_each(|w| *w = -*w);
            q
        })
        .collect();
    let neg = cosine_grid(cog, &negated).map_err(|e| e.to_string())?;
    for (cell, v) in neg.cells() {
        ensure((v + 1.0).abs() <= 1e-12, format!("negated map gives {v} at {cell:?}"))?;
    }
    let cross = cosine_grid(cog, &s.action.probes).map_err(|e| e.to_string())?;
    let worst = PLANTED
        .iter()
        .map(|&c| cross.get(c).unwrap().abs())
        .fold(0.0f64, f64::max);
    ensure(worst <= 0.2, format!("orthogonal signals give |cos| {worst:.4}"))?;
    Ok(format!("identical 1, negated -1, orthogonal max |cos| {worst:.4}"))
}

fn toolgap(work: &Path, args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_toolgap"))
        .arg("--work")
        .arg(work)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "toolgap {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn read_json(path: &Path) -> std::result::Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn end_to_end(work: &Path) -> Check {
    let script = work.join("mock_script.jsonl");
    let script = script.to_str().unwrap();
    let start = Instant::now();
    toolgap(work, &["gen", "--seed", "5", "--total", "1000"])?;
    toolgap(work, &["synth", "--seed", "5"])?;
    for stage in [
        &["label"][..],
        &["collect"],
        &["probe"],
        &["cosine"],
        &["diagnose"],
        &["report"],
    ] {
        let mut args = vec!["--mock", script];
        args.extend_from_slice(stage);
        toolgap(work, &args)?;
    }
    let elapsed = start.elapsed();

    let truth = read_json(&work.join("truth.json"))?;
    let summary = read_json(&work.join("reports/summary.json"))?;
    ensure(
        summary["categories"] == truth["categories"],
        format!(
            "categories {} vs scripted {}",
            summary["categories"], truth["categories"]
        ),
    )?;
    let c = &truth["categories"];
    let count = |k: &str| c[k].as_u64().unwrap();
    let total = count("n_c") + count("n_nc") + count("un_c") + count("un_nc");
    ensure(total == 1000, format!("scripted total {total}"))?;
    let rate = (count("n_nc") + count("un_c")) as f64 / total as f64;
    ensure(
        summary["mismatch_rate"].as_f64() == Some(rate),
        format!("mismatch rate {} vs scripted {rate}", summary["mismatch_rate"]),
    )?;
    ensure(
        summary["stages"] == truth["stages"],
        format!("stages {} vs scripted {}", summary["stages"], truth["stages"]),
    )?;
    let stage2 = truth["stages"]["STAGE2_ONLY"].as_u64().unwrap();

    // Conservation, recomputed from the exported links.
    let sankey = read_json(&work.join("reports/sankey.json"))?;
    let mut flow: BTreeMap<(u64, String), (i64, i64)> = BTreeMap::new();
    let mut first_stage: BTreeMap<String, u64> = BTreeMap::new();
    for l in sankey["links"].as_array().unwrap() {
        let (src, dst, v) = (
            l["source"].as_u64().unwrap(),
            l["target"].as_u64().unwrap(),
            l["value"].as_i64().unwrap(),
        );
        let cat = l["category"].as_str().unwrap().to_string();
        flow.entry((dst, cat.clone())).or_default().0 += v;
        flow.entry((src, cat.clone())).or_default().1 += v;
        if src <= 1 {
            *first_stage.entry(cat).or_default() += v as u64;
        }
    }
    for ((node, cat), (inflow, outflow)) in &flow {
        if *node == 2 || *node == 3 {
            ensure(
                inflow == outflow,
                format!("node {node} {cat}: in {inflow}, out {outflow}"),
            )?;
        }
    }
    for (stage, v) in truth["stages"].as_object().unwrap() {
        let got = first_stage.get(stage).copied().unwrap_or(0);
        ensure(
            got == v.as_u64().unwrap(),
            format!("{stage} carries {got} in the Sankey, scripted {v}"),
        )?;
    }
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "categories exact, mismatch {:.1}%, STAGE2_ONLY {stage2}, flows conserved, {elapsed:.2?}",
        100.0 * rate
    ))
}

fn p_call_consistency(work: &Path) -> Check {
    let text = std::fs::read_to_string(work.join("behavior.jsonl")).map_err(|e| e.to_string())?;
    let (mut seen, mut ties) = (0, 0);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let Some(p) = r["p_call"].as_f64() else {
            return Err(format!("{} has no p_call", r["sample_id"]));
        };
        let called = r["called"].as_bool().unwrap();
        ensure(
            (p > 0.5) == called,
            format!("{}: p_call {p}, called {called}", r["sample_id"]),
        )?;
        seen += 1;
        if p == 0.5 {
            ties += 1;
        }
    }
    ensure(seen > 0, "no behavior records")?;
    ensure(ties > 0, "no tied decisions exercised")?;
    let tie = p_call(0.25f64, 0.25).map_err(|e| e.to_string())?;
    ensure(tie == 0.5, format!("a tied decision gives p_call {tie}"))?;
    Ok(format!("{seen} samples consistent, {ties} ties resolved to not-called"))
}

fn aggregation() -> Check {
    let raw = [438u64, 140, 1526, 1896];
    let cats = [
        Category::NecessaryCalled,
        Category::NecessaryNotCalled,
        Category::UnnecessaryCalled,
        Category::UnnecessaryNotCalled,
    ];
    let counts: CategoryCounts = aggregate(
        raw.iter()
            .zip(cats)
            .flat_map(|(&n, c)| std::iter::repeat_n(c, n as usize)),
    )
    .map_err(|e| e.to_string())?;
    let pct = counts.percentages();
    ensure(pct == ["11.0", "3.5", "38.2", "47.4", "41.7"], format!("got {pct:?}"))?;
    Ok(format!(
        "{}/{}/{}/{}%, Mis. {}%",
        pct[0], pct[1], pct[2], pct[3], pct[4]
    ))
}

fn boundary() -> Check {
    let (g, r) = (true, false);
    let order = boundary_order(&[vec![g, r, g, r], vec![r, r, g, g]]).map_err(|e| e.to_string())?;
    ensure(order == [2, 0, 3, 1], format!("2x4 example gives {order:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..1000 {
        let models = rng.random_range(1..5);
        let n = rng.random_range(0..40);
        let m: Vec<Vec<bool>> = (0..models)
            .map(|_| (0..n).map(|_| rng.random_bool(0.5)).collect())
            .collect();
        let mut o = boundary_order(&m).map_err(|e| e.to_string())?;
        o.sort_unstable();
        ensure(
            o == (0..n).collect::<Vec<_>>(),
            format!("not a bijection on {models}x{n}"),
        )?;
    }
    Ok("[2, 0, 3, 1]; bijective on 1000 random matrices".into())
}

fn run(name: &str, failures: &mut usize, f: impl FnOnce() -> Check) {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match outcome {
        Ok(detail) => println!("PASS  {name}: {detail}"),
        Err(why) => {
            *failures += 1;
            println!("FAIL  {name}: {why}");
        }
    }
}

fn main() {
    let mut failures = 0;
    run("corpus exactness", &mut failures, corpus_exactness);
    run("oracle equivalence", &mut failures, oracle_equivalence);
    run("operator frequency", &mut failures, operator_frequency);
    run("mcc correctness", &mut failures, mcc_correctness);
    run("probe sanity", &mut failures, probe_sanity);
    match planted_sweeps() {
        Ok(s) => {
            run("planted-signal sweep", &mut failures, || planted_sweep(&s));
            run("cosine grid", &mut failures, || cosine_checks(&s));
        }
        Err(e) => {
            for name in ["planted-signal sweep", "cosine grid"] {
                failures += 1;
                println!("FAIL  {name}: {e}");
            }
        }
    }
    let tmp = tempfile::tempdir().expect("temporary work directory");
    let work: PathBuf = tmp.path().join("mock");
    std::fs::create_dir_all(&work).unwrap();
    run("end-to-end mock oracle", &mut failures, || end_to_end(&work));
    run("p_call/greedy consistency", &mut failures, || p_call_consistency(&work));
    run("aggregation reproduction", &mut failures, aggregation);
    run("boundary_order", &mut failures, boundary);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
