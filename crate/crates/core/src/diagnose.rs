//! Per-sample tracing through necessity, cognition and action, with Sankey,
//! scatter and capability-boundary exports.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::collector::BehaviorRecord;
use crate::dump::HiddenStateSource;
use crate::error::{Error, Result};
use crate::labeler::NecessityRecord;
use crate::probes::{Cell, ProbeResult};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Aligned,
    #[serde(rename = "STAGE1_ONLY")]
    Stage1Only,
    #[serde(rename = "STAGE2_ONLY")]
    Stage2Only,
    Compensating,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Aligned,
        Stage::Stage1Only,
        Stage::Stage2Only,
        Stage::Compensating,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Aligned => "ALIGNED",
            Stage::Stage1Only => "STAGE1_ONLY",
            Stage::Stage2Only => "STAGE2_ONLY",
            Stage::Compensating => "COMPENSATING",
        }
    }

    pub fn color(self) -> &'static str {
        match self {
            Stage::Aligned => "green",
            Stage::Stage1Only => "red",
            Stage::Stage2Only => "orange",
            Stage::Compensating => "purple",
        }
    }

    /// Whether the action ends up matching necessity.
    pub fn end_to_end_match(self) -> bool {
        matches!(self, Stage::Aligned | Stage::Compensating)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn trace(n: bool, z: bool, a: bool) -> Stage {
    match (n == z, z == a) {
        (true, true) => Stage::Aligned,
        (false, true) => Stage::Stage1Only,
        (true, false) => Stage::Stage2Only,
        (false, false) => Stage::Compensating,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub z: bool,
    pub confidence: f64,
}

/// The cell the cognition readout uses: last query token, last stored layer.
pub fn readout_cell(n_layers: usize) -> Cell {
    Cell {
        offset: -1,
        layer: n_layers.saturating_sub(1),
    }
}

/// Reads the cognition probe out on every listed sample. The probe must sit
/// at the readout cell of `source`.
pub fn cognition_readout<F: Real, S: HiddenStateSource + ?Sized>(
    source: &S,
    probe: &ProbeResult<F>,
    sample_ids: &[String],
) -> Result<Vec<(String, Readout)>> {
    let header = source.header();
    let cell = readout_cell(header.n_layers);
    if probe.position != cell {
        return Err(Error::InvalidInput(format!(
            "readout probe is at {:?}, expected {:?}",
            probe.position, cell
        )));
    }
    if probe.weight.len() != header.dim {
        return Err(Error::Dimension {
            expected: probe.weight.len(),
            actual: header.dim,
        });
    }
    let pos = header
        .position_index(-1)
        .ok_or_else(|| Error::Dump("dump has no position -1".into()))?;
    let mut rows = Vec::with_capacity(sample_ids.len());
    for id in sample_ids {
        rows.push(
            source
                .sample_index(id)
                .ok_or_else(|| Error::MissingGrids(vec![id.clone()]))?,
        );
    }
    let raw = source.read_cell(pos, cell.layer, &rows)?;
    sample_ids
        .iter()
        .zip(raw.chunks(header.dim))
        .map(|(id, h)| {
            let h: Vec<F> = h.iter().map(|&v| F::of(v as f64)).collect();
            let confidence = probe.confidence(&h)?;
            Ok((
                id.clone(),
                Readout {
                    z: confidence >= F::of(0.5),
                    confidence: confidence.to_f64().unwrap_or(f64::NAN),
                },
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisRecord {
    pub sample_id: String,
    #[serde(with = "crate::labeler::bit")]
    pub n: bool,
    #[serde(with = "crate::labeler::bit")]
    pub z: bool,
    #[serde(with = "crate::labeler::bit")]
    pub a: bool,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_call: Option<f64>,
    pub category: Stage,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub records: Vec<DiagnosisRecord>,
    /// Samples missing one of the three bits.
    pub unclassifiable: Vec<String>,
}

/// Joins necessity, readout and behavior by sample id, in readout order.
pub fn diagnose(
    necessity: &[NecessityRecord],
    readouts: &[(String, Readout)],
    behavior: &[BehaviorRecord],
) -> Diagnosis {
    let n: HashMap<&str, bool> = necessity.iter().map(|r| (r.sample_id.as_str(), r.n)).collect();
    let b: HashMap<&str, &BehaviorRecord> = behavior.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let mut out = Diagnosis::default();
    for (id, r) in readouts {
        match (n.get(id.as_str()), b.get(id.as_str())) {
            (Some(&n), Some(beh)) => out.records.push(DiagnosisRecord {
                sample_id: id.clone(),
                n,
                z: r.z,
                a: beh.called,
                confidence: r.confidence,
                p_call: beh.p_call,
                category: trace(n, r.z, beh.called),
            }),
            _ => out.unclassifiable.push(id.clone()),
        }
    }
    let seen: std::collections::HashSet<&str> = readouts.iter().map(|(id, _)| id.as_str()).collect();
    out.unclassifiable.extend(
        necessity
            .iter()
            .filter(|r| !seen.contains(r.sample_id.as_str()))
            .map(|r| r.sample_id.clone()),
    );
    out
}

pub fn stage_counts(records: &[DiagnosisRecord]) -> BTreeMap<Stage, usize> {
    let mut counts: BTreeMap<Stage, usize> = Stage::ALL.iter().map(|&s| (s, 0)).collect();
    for r in records {
        *counts.get_mut(&r.category).unwrap() += 1;
    }
    counts
}

pub const NODES: [&str; 6] = [
    "Factual: necessary",
    "Factual: unnecessary",
    "Cognition: necessary",
    "Cognition: unnecessary",
    "Action: call",
    "Action: no call",
];

const FACTUAL: [usize; 2] = [0, 1];
const COGNITION: [usize; 2] = [2, 3];
const ACTION: [usize; 2] = [4, 5];

fn node(group: [usize; 2], bit: bool) -> usize {
    if bit {
        group[0]
    } else {
        group[1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub source: usize,
    pub target: usize,
    pub value: usize,
    pub category: Stage,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyFlows {
    pub nodes: Vec<String>,
    pub links: Vec<Link>,
}

impl SankeyFlows {
    fn inflow(&self, node: usize) -> usize {
        self.links.iter().filter(|l| l.target == node).map(|l| l.value).sum()
    }

    fn outflow(&self, node: usize) -> usize {
        self.links.iter().filter(|l| l.source == node).map(|l| l.value).sum()
    }

    /// Samples of one category, counted on the first stage's edges.
    pub fn category_flow(&self, category: Stage) -> usize {
        self.links
            .iter()
            .filter(|l| l.category == category && FACTUAL.contains(&l.source))
            .map(|l| l.value)
            .sum()
    }

    /// Inflow equals outflow at both cognition nodes, per category as well
    /// as in total, and each stage carries `total` samples.
    pub fn check_conservation(&self, total: usize) -> Result<()> {
        for c in COGNITION {
            for cat in Stage::ALL {
                let inflow: usize = self
                    .links
                    .iter()
                    .filter(|l| l.target == c && l.category == cat)
                    .map(|l| l.value)
                    .sum();
                let outflow: usize = self
                    .links
                    .iter()
                    .filter(|l| l.source == c && l.category == cat)
                    .map(|l| l.value)
                    .sum();
                if inflow != outflow {
                    return Err(Error::InvalidInput(format!(
                        "{} flow into `{}` is {inflow} but {outflow} leaves",
                        cat, self.nodes[c]
                    )));
                }
            }
            if self.inflow(c) != self.outflow(c) {
                return Err(Error::InvalidInput(format!(
                    "flow not conserved at `{}`",
                    self.nodes[c]
                )));
            }
        }
        let first: usize = FACTUAL.iter().map(|&f| self.outflow(f)).sum();
        let last: usize = ACTION.iter().map(|&a| self.inflow(a)).sum();
        if first != total || last != total {
            return Err(Error::InvalidInput(format!(
                "flows carry {first} and {last} samples, expected {total}"
            )));
        }
        Ok(())
    }
}

pub fn sankey_export(records: &[DiagnosisRecord]) -> Result<SankeyFlows> {
    if records.is_empty() {
        return Err(Error::Empty("no diagnosis records".into()));
    }
    let mut edges: BTreeMap<(usize, usize, Stage), usize> = BTreeMap::new();
    for r in records {
        let cog = node(COGNITION, r.z);
        *edges.entry((node(FACTUAL, r.n), cog, r.category)).or_default() += 1;
        *edges.entry((cog, node(ACTION, r.a), r.category)).or_default() += 1;
    }
    Ok(SankeyFlows {
        nodes: NODES.iter().map(|s| s.to_string()).collect(),
        links: edges
            .into_iter()
            .map(|((source, target, category), value)| Link {
                source,
                target,
                value,
                category,
                color: category.color().into(),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub sample_id: String,
    pub confidence: f64,
    pub p_call: f64,
    pub category: Stage,
}

/// One point per record carrying `p_call`, sorted by sample id; also
/// returns how many records were skipped for lacking it.
pub fn confidence_scatter(records: &[DiagnosisRecord]) -> (Vec<ScatterPoint>, usize) {
    let mut points: Vec<ScatterPoint> = records
        .iter()
        .filter_map(|r| {
            r.p_call.map(|p| ScatterPoint {
                sample_id: r.sample_id.clone(),
                confidence: r.confidence,
                p_call: p,
                category: r.category,
            })
        })
        .collect();
    let skipped = records.len() - points.len();
    if points.is_empty() {
        log::warn!("no diagnosis record carries p_call; scatter export is empty");
    } else if skipped > 0 {
        log::warn!("{skipped} record(s) without p_call left out of the scatter export");
    }
    points.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    (points, skipped)
}

pub fn scatter_csv(points: &[ScatterPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_id", "confidence", "p_call", "category"])?;
    for p in points {
        w.write_record([
            p.sample_id.clone(),
            p.confidence.to_string(),
            p.p_call.to_string(),
            p.category.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Orders samples by a stable recursive partition on each model's
/// correctness in turn, correct samples first. `correct[m][s]` is model
/// `m`'s correctness on sample `s`.
pub fn boundary_order(correct: &[Vec<bool>]) -> Result<Vec<usize>> {
    let n = correct.first().map_or(0, Vec::len);
    if let Some(row) = correct.iter().position(|r| r.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            actual: correct[row].len(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        correct
            .iter()
            .map(|row| row[b].cmp(&row[a]))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(order)
}

/// One row per model, columns in boundary order; 1 marks a correct sample.
pub fn stripe_csv(models: &[String], sample_ids: &[String], correct: &[Vec<bool>], order: &[usize]) -> Result<String> {
    if models.len() != correct.len() {
        return Err(Error::Dimension {
            expected: models.len(),
            actual: correct.len(),
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["model".to_string()];
    head.extend(order.iter().map(|&i| sample_ids[i].clone()));
    w.write_record(&head)?;
    for (model, row) in models.iter().zip(correct) {
        let mut rec = vec![model.clone()];
        rec.extend(order.iter().map(|&i| if row[i] { "1" } else { "0" }.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Builds the correctness matrix for `boundary_order` from per-model
/// necessity records over a shared sample list.
pub fn correctness_matrix(sample_ids: &[String], per_model: &[Vec<NecessityRecord>]) -> Result<Vec<Vec<bool>>> {
    per_model
        .iter()
        .map(|records| {
            let by_id: HashMap<&str, bool> = records
                .iter()
                .map(|r| (r.sample_id.as_str(), r.all_correct()))
                .collect();
            sample_ids
                .iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::InvalidInput(format!("model has no necessity label for `{id}`")))
                })
                .collect()
        })
        .collect()
}
