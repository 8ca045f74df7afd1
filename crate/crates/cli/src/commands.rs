use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use toolgap_core::arith::generate_corpus;
use toolgap_core::backend::{Backend, Calculator, HttpBackend, MockBackend, RetryPolicy, ScriptLine, Search, Toolbox};
use toolgap_core::collector::{
    aggregate, category_csv, classify_records, collect_all, verbal_metrics, verbalized_protocol, BehaviorRecord,
    CollectParams, VerbalRecord,
};
use toolgap_core::corpus::{ingest_factual, Corpus, Domain, FactualForm, PromptTemplate};
use toolgap_core::diagnose::{
    boundary_order, cognition_readout, confidence_scatter, correctness_matrix, diagnose, readout_cell, sankey_export,
    scatter_csv, stage_counts, stripe_csv, DiagnosisRecord,
};
use toolgap_core::dump::DumpReader;
use toolgap_core::io;
use toolgap_core::labeler::{label_all, BackendJudge, Grader, GradingMode, NecessityRecord};
use toolgap_core::probes::{cosine_grid, sweep_grid, ProbeHyper, Target};
use toolgap_core::synthetic::{scenario, ScenarioSpec};
use toolgap_core::{Grid, GridSweep};

use crate::config::{BackendConfig, PipelineConfig, API_KEY_VAR};
use crate::svg;
use crate::{Cli, Command};

pub const CORPUS: &str = "corpus.jsonl";
pub const NECESSITY: &str = "necessity.jsonl";
pub const INCOMPLETE: &str = "necessity.incomplete.jsonl";
pub const BEHAVIOR: &str = "behavior.jsonl";
pub const BEHAVIOR_FAILED: &str = "behavior.failed.jsonl";
pub const VERBAL: &str = "verbal.jsonl";
pub const DUMP: &str = "hidden.hsd";
pub const SCRIPT: &str = "mock_script.jsonl";
pub const TRUTH: &str = "truth.json";
pub const PROBE_COGNITION: &str = "probe_cognition.json";
pub const PROBE_ACTION: &str = "probe_action.json";
pub const COSINE: &str = "cosine.json";
pub const DIAGNOSIS: &str = "diagnosis.jsonl";
pub const REPORTS: &str = "reports";

struct Ctx {
    config: PipelineConfig,
    work: PathBuf,
    model_id: Option<String>,
    mock: Option<PathBuf>,
}

fn parse_kebab<T: DeserializeOwned>(what: &str, value: &str) -> Result<T> {
    serde_json::from_value(json!(value)).map_err(|_| anyhow!("unknown {what} `{value}`"))
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.work.join(name)
    }

    /// An upstream stage output, or an error naming the stage to run.
    fn require(&self, path: PathBuf, stage: &str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            bail!("missing {}; run `toolgap {stage}` first", path.display())
        }
    }

    fn corpus_path(&self) -> PathBuf {
        self.config.corpus.clone().unwrap_or_else(|| self.path(CORPUS))
    }

    fn corpus(&self) -> Result<Corpus> {
        let path = self.require(self.corpus_path(), "gen` or `toolgap ingest")?;
        Ok(Corpus::load(&path)?)
    }

    fn backend_config(&self) -> Result<BackendConfig> {
        if let Some(script) = &self.mock {
            return Ok(BackendConfig::Mock { script: script.clone() });
        }
        self.config
            .backend
            .clone()
            .ok_or_else(|| anyhow!("no backend configured; set `backend` in the config or pass --mock"))
    }

    fn model_id(&self) -> Result<String> {
        if let Some(id) = self.model_id.clone().or_else(|| self.config.model_id.clone()) {
            return Ok(id);
        }
        Ok(match self.backend_config()? {
            BackendConfig::Mock { .. } => "mock".into(),
            BackendConfig::Http(h) => h.model,
        })
    }

    fn backend(&self, corpus: &Corpus) -> Result<Box<dyn Backend>> {
        let model_id = self.model_id()?;
        Ok(match self.backend_config()? {
            BackendConfig::Mock { script } => {
                let script = self.require(script, "synth")?;
                Box::new(MockBackend::new(model_id, ScriptLine::load(&script)?, corpus)?)
            }
            BackendConfig::Http(mut h) => {
                h.api_key = std::env::var(API_KEY_VAR).ok();
                Box::new(HttpBackend::new(model_id, h)?)
            }
        })
    }

    fn retry(&self) -> RetryPolicy {
        match self.backend_config() {
            Ok(BackendConfig::Mock { .. }) => RetryPolicy::none(),
            _ => RetryPolicy::default(),
        }
    }

    fn toolbox(&self, corpus: &Corpus) -> Result<Toolbox> {
        Ok(match corpus.domain {
            Domain::Arithmetic => Toolbox::new().with(Calculator),
            Domain::Factual => Toolbox::new().with(match &self.config.search_fixtures {
                Some(p) => Search::from_file(p)?,
                None => Search::default(),
            }),
        })
    }

    fn dump_path(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.config.dump.clone())
            .unwrap_or_else(|| self.path(DUMP))
    }

    fn open_dump(&self, flag: Option<PathBuf>) -> Result<DumpReader> {
        let path = self.dump_path(flag);
        if !path.exists() {
            bail!("no hidden-state dump at {}; run extractor first", path.display());
        }
        Ok(DumpReader::open(&path)?)
    }

    fn read_jsonl<T: DeserializeOwned>(&self, name: &str, stage: &str) -> Result<Vec<T>> {
        let path = self.require(self.path(name), stage)?;
        Ok(io::read_jsonl(&path)?)
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str, stage: &str) -> Result<T> {
        let path = self.require(self.path(name), stage)?;
        Ok(io::read_json(&path)?)
    }

    fn write_jsonl<T: Serialize>(&self, name: &str, items: &[T]) -> Result<()> {
        io::write_jsonl(&self.path(name), items)?;
        log::info!("wrote {}", self.path(name).display());
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        io::write_json(&self.path(name), value)?;
        log::info!("wrote {}", self.path(name).display());
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.global.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(jobs) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    let work = cli
        .global
        .work
        .clone()
        .or_else(|| config.work_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&work).with_context(|| format!("creating {}", work.display()))?;
    let ctx = Ctx {
        config,
        work,
        model_id: cli.global.model_id,
        mock: cli.global.mock,
    };
    match cli.command {
        Command::Gen { seed, total, out } => gen(&ctx, seed, total, out),
        Command::Ingest { csv, form, out } => ingest(&ctx, &csv, &form, out),
        Command::Synth { seed, layers, dim } => synth(&ctx, seed, layers, dim),
        Command::Label {
            runs,
            temperature,
            grading,
        } => label(&ctx, runs, temperature, grading),
        Command::Collect {
            max_tool_rounds,
            no_decision,
        } => collect(&ctx, max_tool_rounds, no_decision),
        Command::Verbal => verbal(&ctx),
        Command::Probe {
            dump,
            split_seed,
            allow_partial,
        } => probe(&ctx, dump, split_seed, allow_partial),
        Command::Cosine => cosine(&ctx),
        Command::Diagnose { dump } => diagnose_cmd(&ctx, dump),
        Command::Report { compare } => report(&ctx, &compare),
    }
}

fn gen(ctx: &Ctx, seed: Option<u64>, total: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let seed = seed.or(ctx.config.seed).unwrap_or(0);
    let total = total.or(ctx.config.total).unwrap_or(4000);
    let template = ctx.config.template.clone().map(PromptTemplate).unwrap_or_default();
    let exprs = generate_corpus(seed, total)?;
    let corpus = Corpus::from_expressions(seed, &exprs, &template);
    let out = out.unwrap_or_else(|| ctx.corpus_path());
    corpus.save(&out)?;
    println!("wrote {} samples to {}", corpus.samples.len(), out.display());
    Ok(())
}

fn ingest(ctx: &Ctx, csv: &Path, form: &str, out: Option<PathBuf>) -> Result<()> {
    let form: FactualForm = parse_kebab("factual form", form)?;
    let ingested = ingest_factual(csv, form)?;
    for s in &ingested.skipped {
        log::warn!("row {} skipped: {}", s.row, s.reason);
    }
    let out = out.unwrap_or_else(|| ctx.corpus_path());
    ingested.corpus.save(&out)?;
    println!(
        "wrote {} samples to {} ({} rows skipped)",
        ingested.corpus.samples.len(),
        out.display(),
        ingested.skipped.len()
    );
    Ok(())
}

fn synth(ctx: &Ctx, seed: u64, layers: usize, dim: usize) -> Result<()> {
    let corpus = ctx.corpus()?;
    let spec = ScenarioSpec {
        seed,
        model: ctx.model_id.clone().unwrap_or_else(|| "mock".into()),
        n_layers: layers,
        dim,
        ..ScenarioSpec::default()
    };
    let sc = scenario(&corpus, &spec)?;
    ctx.write_jsonl(SCRIPT, &sc.script)?;
    sc.dump.save(&ctx.path(DUMP))?;
    ctx.write_json(TRUTH, &sc.truth)?;
    println!("wrote {SCRIPT}, {DUMP} and {TRUTH} for {} samples", sc.script.len());
    Ok(())
}

fn label(ctx: &Ctx, runs: Option<usize>, temperature: Option<f64>, grading: Option<String>) -> Result<()> {
    let corpus = ctx.corpus()?;
    let mut params = ctx.config.labeling.unwrap_or_default();
    params.runs = runs.unwrap_or(params.runs);
    params.temperature = temperature.unwrap_or(params.temperature);
    if params.runs == 0 || params.temperature.is_nan() || params.temperature < 0.0 {
        bail!("labeling needs runs >= 1 and temperature >= 0");
    }
    let mode = match grading {
        Some(g) => parse_kebab::<GradingMode>("grading mode", &g)?,
        None => ctx
            .config
            .grading
            .unwrap_or(if corpus.samples.iter().any(|s| s.choices.is_some()) {
                GradingMode::ChoiceMatch
            } else {
                GradingMode::ReferenceMatch
            }),
    };
    let backend = ctx.backend(&corpus)?;
    let judge = match (mode, &ctx.config.judge) {
        (GradingMode::ExternalJudge, Some(h)) => {
            let mut h = h.clone();
            h.api_key = std::env::var(API_KEY_VAR).ok();
            Some(BackendJudge {
                backend: HttpBackend::new(format!("judge:{}", h.model), h)?,
                retry: RetryPolicy::default(),
            })
        }
        (GradingMode::ExternalJudge, None) if corpus.domain == Domain::Factual => {
            bail!("external-judge grading needs a `judge` backend in the config")
        }
        _ => None,
    };
    let grader = match &judge {
        Some(j) => Grader::with_judge(mode, j),
        None => Grader::new(mode),
    };
    let labeled = label_all(backend.as_ref(), &corpus.samples, params, grader, ctx.retry())?;
    ctx.write_jsonl(NECESSITY, &labeled.records)?;
    ctx.write_jsonl(INCOMPLETE, &labeled.incomplete)?;
    let necessary = labeled.records.iter().filter(|r| r.n).count();
    println!(
        "labeled {} samples ({necessary} necessary, {} incomplete)",
        labeled.records.len(),
        labeled.incomplete.len()
    );
    Ok(())
}

fn collect_params(ctx: &Ctx) -> CollectParams {
    ctx.config.collect.clone().unwrap_or_default()
}

fn collect(ctx: &Ctx, max_tool_rounds: Option<usize>, no_decision: bool) -> Result<()> {
    let corpus = ctx.corpus()?;
    let mut params = collect_params(ctx);
    params.max_tool_rounds = max_tool_rounds.unwrap_or(params.max_tool_rounds);
    params.capture_decision &= !no_decision;
    let backend = ctx.backend(&corpus)?;
    let tools = ctx.toolbox(&corpus)?;
    let (records, failures) = collect_all(backend.as_ref(), &corpus.samples, &tools, &params, ctx.retry())?;
    for f in &failures {
        log::warn!("{}: {}", f.sample_id, f.reason);
    }
    ctx.write_jsonl(BEHAVIOR, &records)?;
    ctx.write_jsonl(BEHAVIOR_FAILED, &failures)?;
    let called = records.iter().filter(|r| r.called).count();
    println!(
        "collected {} samples ({called} called a tool, {} failed)",
        records.len(),
        failures.len()
    );
    Ok(())
}

fn verbal(ctx: &Ctx) -> Result<()> {
    let corpus = ctx.corpus()?;
    let direct: Vec<BehaviorRecord> = ctx.read_jsonl(BEHAVIOR, "collect")?;
    let backend = ctx.backend(&corpus)?;
    let tools = ctx.toolbox(&corpus)?;
    let params = collect_params(ctx);
    let retry = ctx.retry();
    let mut records: Vec<VerbalRecord> = Vec::with_capacity(direct.len());
    let results: Vec<Result<VerbalRecord>> = direct
        .par_iter()
        .map(|d| {
            let sample = corpus
                .get(&d.sample_id)
                .ok_or_else(|| anyhow!("behavior record for unknown sample `{}`", d.sample_id))?;
            Ok(verbalized_protocol(
                backend.as_ref(),
                sample,
                &tools,
                d,
                &params,
                retry,
            )?)
        })
        .collect();
    for r in results {
        match r {
            Ok(v) => records.push(v),
            Err(e) => log::warn!("{e:#}"),
        }
    }
    ctx.write_jsonl(VERBAL, &records)?;
    println!("wrote {} verbal records", records.len());
    Ok(())
}

fn probe(ctx: &Ctx, dump: Option<PathBuf>, split_seed: Option<u64>, allow_partial: bool) -> Result<()> {
    let reader = ctx.open_dump(dump)?;
    let necessity: Vec<NecessityRecord> = ctx.read_jsonl(NECESSITY, "label")?;
    let behavior: Vec<BehaviorRecord> = ctx.read_jsonl(BEHAVIOR, "collect")?;
    let hyper: ProbeHyper = ctx.config.probe.clone().unwrap_or_default();
    let seed = split_seed.or(ctx.config.split_seed).unwrap_or(0);
    let allow_partial = allow_partial || ctx.config.allow_partial;
    let targets = [
        (
            Target::Cognition,
            PROBE_COGNITION,
            necessity.iter().map(|r| (r.sample_id.clone(), r.n)).collect::<Vec<_>>(),
        ),
        (
            Target::Action,
            PROBE_ACTION,
            behavior.iter().map(|r| (r.sample_id.clone(), r.called)).collect(),
        ),
    ];
    for (target, file, labels) in targets {
        let sweep: GridSweep = sweep_grid(&reader, &labels, target, &hyper, seed, allow_partial)
            .with_context(|| format!("{target} probes"))?;
        if !sweep.missing.is_empty() {
            log::warn!("{} labeled sample(s) had no hidden states", sweep.missing.len());
        }
        ctx.write_json(file, &sweep)?;
        let best = sweep
            .probes
            .iter()
            .max_by(|a, b| a.test_mcc.total_cmp(&b.test_mcc))
            .expect("a sweep has at least one cell");
        println!(
            "{target}: {} probes, best test MCC {:.3} at offset {} layer {}",
            sweep.probes.len(),
            best.test_mcc,
            best.position.offset,
            best.position.layer
        );
    }
    Ok(())
}

fn cosine(ctx: &Ctx) -> Result<()> {
    let cog: GridSweep = ctx.read_json(PROBE_COGNITION, "probe")?;
    let act: GridSweep = ctx.read_json(PROBE_ACTION, "probe")?;
    let grid: Grid = cosine_grid(&cog.probes, &act.probes)?;
    if !grid.flagged.is_empty() {
        log::warn!("{} cell(s) have a zero-norm probe weight", grid.flagged.len());
    }
    ctx.write_json(COSINE, &grid)?;
    println!(
        "wrote cosine grid ({} layers x {} offsets)",
        grid.n_layers,
        grid.offsets.len()
    );
    Ok(())
}

fn diagnose_cmd(ctx: &Ctx, dump: Option<PathBuf>) -> Result<()> {
    let reader = ctx.open_dump(dump)?;
    let necessity: Vec<NecessityRecord> = ctx.read_jsonl(NECESSITY, "label")?;
    let behavior: Vec<BehaviorRecord> = ctx.read_jsonl(BEHAVIOR, "collect")?;
    let cog: GridSweep = ctx.read_json(PROBE_COGNITION, "probe")?;
    let cell = readout_cell(reader.header().n_layers);
    let probe = cog
        .probe(cell)
        .ok_or_else(|| anyhow!("no cognition probe at the readout cell {cell:?}"))?;
    let ids: Vec<String> = necessity
        .iter()
        .map(|r| r.sample_id.clone())
        .filter(|id| reader.sample_index(id).is_some())
        .collect();
    let readouts = cognition_readout(&reader, probe, &ids)?;
    let diag = diagnose(&necessity, &readouts, &behavior);
    if !diag.unclassifiable.is_empty() {
        log::warn!("{} sample(s) could not be traced", diag.unclassifiable.len());
    }
    ctx.write_jsonl(DIAGNOSIS, &diag.records)?;
    let counts = stage_counts(&diag.records);
    let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k} {v}")).collect();
    println!("diagnosed {} samples: {}", diag.records.len(), summary.join(", "));
    Ok(())
}

fn write_report(dir: &Path, name: &str, text: &str) -> Result<()> {
    io::write_atomic(&dir.join(name), text.as_bytes())?;
    Ok(())
}

fn report(ctx: &Ctx, compare: &[PathBuf]) -> Result<()> {
    let corpus = ctx.corpus()?;
    let records: Vec<DiagnosisRecord> = ctx.read_jsonl(DIAGNOSIS, "diagnose")?;
    if records.is_empty() {
        bail!("the diagnosis set is empty; nothing to report (check that labeling and collection produced records)");
    }
    let necessity: Vec<NecessityRecord> = ctx.read_jsonl(NECESSITY, "label")?;
    let behavior: Vec<BehaviorRecord> = ctx.read_jsonl(BEHAVIOR, "collect")?;
    let cog: GridSweep = ctx.read_json(PROBE_COGNITION, "probe")?;
    let act: GridSweep = ctx.read_json(PROBE_ACTION, "probe")?;
    let cos: Grid = ctx.read_json(COSINE, "cosine")?;
    let model = ctx.model_id().unwrap_or_else(|_| necessity[0].model_id.clone());
    let dir = ctx.path(REPORTS);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let (classified, unmatched) = classify_records(&necessity, &behavior);
    if !unmatched.is_empty() {
        log::warn!(
            "{} sample(s) lack a necessity label or behavior record",
            unmatched.len()
        );
    }
    let counts = aggregate(classified.iter().map(|c| c.category))?;
    let domain = serde_json::to_value(corpus.domain)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    write_report(
        &dir,
        "categories.csv",
        &category_csv(&[(model.clone(), domain.clone(), counts)])?,
    )?;

    for (name, grid, title) in [
        ("heatmap_cognition", &cog.grid, "cognition probe test MCC"),
        ("heatmap_action", &act.grid, "action probe test MCC"),
        ("heatmap_cosine", &cos, "cosine(cognition, action)"),
    ] {
        write_report(&dir, &format!("{name}.csv"), &grid.to_csv()?)?;
        write_report(
            &dir,
            &format!("{name}.svg"),
            &svg::heatmap(grid, &format!("{model}: {title}")),
        )?;
    }

    let flows = sankey_export(&records)?;
    flows.check_conservation(records.len())?;
    io::write_json(&dir.join("sankey.json"), &flows)?;

    let (points, skipped) = confidence_scatter(&records);
    write_report(&dir, "scatter.csv", &scatter_csv(&points)?)?;

    let mut models = vec![model.clone()];
    let mut per_model = vec![necessity.clone()];
    for other in compare {
        let recs: Vec<NecessityRecord> = io::read_jsonl(&other.join(NECESSITY))
            .with_context(|| format!("reading labels from {}", other.display()))?;
        models.push(
            recs.first()
                .map(|r| r.model_id.clone())
                .unwrap_or_else(|| other.display().to_string()),
        );
        per_model.push(recs);
    }
    let ids: Vec<String> = necessity.iter().map(|r| r.sample_id.clone()).collect();
    let matrix = correctness_matrix(&ids, &per_model)?;
    let order = boundary_order(&matrix)?;
    io::write_json(
        &dir.join("boundary.json"),
        &json!({
            "models": models,
            "order": order,
            "sample_ids": order.iter().map(|&i| &ids[i]).collect::<Vec<_>>(),
        }),
    )?;
    write_report(
        &dir,
        "boundary_stripes.csv",
        &stripe_csv(&models, &ids, &matrix, &order)?,
    )?;

    let stages = stage_counts(&records);
    let pct = counts.percentages();
    let mut summary = json!({
        "model": model,
        "domain": domain,
        "categories": counts,
        "percentages": {"N-C": pct[0], "N-NC": pct[1], "UN-C": pct[2], "UN-NC": pct[3], "mismatch": pct[4]},
        "mismatch_rate": counts.mismatch_rate(),
        "stages": stages,
        "end_to_end_mismatch": stages.iter().filter(|(s, _)| !s.end_to_end_match()).map(|(_, v)| v).sum::<usize>(),
        "scatter_skipped": skipped,
        "probe_features": "standardized per dimension on the training split",
    });
    let verbal_path = ctx.path(VERBAL);
    if verbal_path.exists() {
        let verbal: Vec<VerbalRecord> = io::read_jsonl(&verbal_path)?;
        let m = verbal_metrics(&verbal, &necessity)?;
        io::write_json(&dir.join("verbal.json"), &m)?;
        summary["verbal"] = serde_json::to_value(&m)?;
    }
    io::write_json(&dir.join("summary.json"), &summary)?;
    let stage_line: BTreeMap<String, usize> = stages.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    println!(
        "{model}/{domain}: mismatch {}% over {} samples; stages {:?}; reports in {}",
        pct[4],
        counts.total(),
        stage_line,
        dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use toolgap_core::labeler::LabelParams;

    #[test]
    fn kebab_values_parse() {
        assert_eq!(
            parse_kebab::<GradingMode>("grading mode", "external-judge").unwrap(),
            GradingMode::ExternalJudge
        );
        assert_eq!(
            parse_kebab::<FactualForm>("factual form", "generative").unwrap(),
            FactualForm::Generative
        );
        assert!(parse_kebab::<GradingMode>("grading mode", "vibes").is_err());
    }

    #[test]
    fn label_params_default_matches_protocol() {
        assert_eq!(
            LabelParams::default(),
            LabelParams {
                runs: 10,
                temperature: 0.7
            }
        );
    }
}
