//! Synthetic stand-ins for model output: hidden-state dumps with planted
//! linear signals, and mock scripts with a declared ground truth.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backend::ScriptLine;
use crate::collector::{classify, CategoryCounts};
use crate::corpus::Corpus;
use crate::diagnose::{readout_cell, trace, Stage};
use crate::dump::{DumpHeader, MemoryDump};
use crate::error::{Error, Result};
use crate::probes::Cell;

/// A dump of i.i.d. Gaussian noise with standard deviation `scale`.
pub fn noise_dump(
    model: &str,
    sample_ids: Vec<String>,
    n_layers: usize,
    dim: usize,
    scale: f32,
    seed: u64,
) -> Result<MemoryDump> {
    let header = DumpHeader::new(model, dim, n_layers, sample_ids);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = header.sample_ids.len() * header.sample_len();
    let body = (0..len).map(|_| scale * rng.sample::<f32, _>(StandardNormal)).collect();
    MemoryDump::new(header, body, None)
}

/// Unit vector along axis `k`.
pub fn axis(dim: usize, k: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    v
}

/// Adds `strength * (±1) * direction` at each cell, positive for samples
/// labeled `true`.
pub fn plant(dump: &mut MemoryDump, cells: &[Cell], labels: &[bool], direction: &[f32], strength: f32) -> Result<()> {
    let h = dump.header.clone();
    if labels.len() != h.sample_ids.len() {
        return Err(Error::Dimension {
            expected: h.sample_ids.len(),
            actual: labels.len(),
        });
    }
    if direction.len() != h.dim {
        return Err(Error::Dimension {
            expected: h.dim,
            actual: direction.len(),
        });
    }
    for cell in cells {
        let pos = h
            .position_index(cell.offset)
            .filter(|_| cell.layer < h.n_layers)
            .ok_or_else(|| Error::InvalidInput(format!("cell {cell:?} is outside the dump grid")))?;
        for (s, &y) in labels.iter().enumerate() {
            let sign = if y { strength } else { -strength };
            for (x, d) in dump.cell_mut(s, pos, cell.layer).iter_mut().zip(direction) {
                *x += sign * d;
            }
        }
    }
    Ok(())
}

/// Rates that shape a mock scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub model: String,
    pub runs: usize,
    pub p_necessary: f64,
    /// Chance the cognition bit disagrees with necessity.
    pub p_stage1_flip: f64,
    /// Chance the action disagrees with cognition.
    pub p_stage2_flip: f64,
    /// Chance a not-called sample gets a tied decision.
    pub p_tie: f64,
    pub n_layers: usize,
    pub dim: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 0,
            model: "mock".into(),
            runs: 10,
            p_necessary: 0.3,
            p_stage1_flip: 0.1,
            p_stage2_flip: 0.25,
            p_tie: 0.05,
            n_layers: 4,
            dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRow {
    pub sample_id: String,
    pub n: bool,
    pub z: bool,
    pub a: bool,
}

/// What a correct pipeline run over the scenario must report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub rows: Vec<TruthRow>,
    pub categories: CategoryCounts,
    pub stages: BTreeMap<Stage, usize>,
    /// Cells carrying the cognition and action signals.
    pub cognition_cells: Vec<Cell>,
    pub action_cells: Vec<Cell>,
}

pub struct Scenario {
    pub script: Vec<ScriptLine>,
    pub dump: MemoryDump,
    pub truth: ScenarioTruth,
}

fn decision(rng: &mut ChaCha8Rng, calls: bool, p_tie: f64) -> [f64; 2] {
    // Quantized to multiples of 1/64 so the f32 trailer holds them exactly.
    let q = |x: f64| (x * 64.0).round() / 64.0;
    let hi = q(rng.random_range(0.3..0.9));
    let lo = q(rng.random_range(0.0..(1.0 - hi).min(hi) - 1.0 / 64.0));
    if calls {
        [hi, lo]
    } else if rng.random_bool(p_tie) {
        let t = q(rng.random_range(0.05..0.45));
        [t, t]
    } else {
        [lo, hi]
    }
}

/// Builds a scripted scenario over `corpus`: necessity from scripted label
/// runs, a cognition bit coupled into the readout cell of the dump, and an
/// action with matching decision probabilities. The action signal sits in
/// other cells of the last layer, along an orthogonal axis.
pub fn scenario(corpus: &Corpus, spec: &ScenarioSpec) -> Result<Scenario> {
    if spec.runs == 0 || spec.n_layers == 0 || spec.dim < 2 {
        return Err(Error::InvalidInput(
            "scenario needs runs >= 1, layers >= 1, dim >= 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut script = Vec::with_capacity(corpus.samples.len());
    let mut rows = Vec::with_capacity(corpus.samples.len());
    for s in &corpus.samples {
        let n = rng.random_bool(spec.p_necessary);
        let mut runs: Vec<bool> = (0..spec.runs).map(|_| !n || rng.random_bool(0.5)).collect();
        if n && runs.iter().all(|&c| c) {
            let k = rng.random_range(0..spec.runs);
            runs[k] = false;
        }
        let z = n ^ rng.random_bool(spec.p_stage1_flip);
        let a = z ^ rng.random_bool(spec.p_stage2_flip);
        script.push(ScriptLine {
            sample_id: s.id.clone(),
            per_run_correct: runs,
            calls_tool: a,
            decision: Some(decision(&mut rng, a, spec.p_tie)),
            verbal: None,
            verbal_calls_tool: None,
        });
        rows.push(TruthRow {
            sample_id: s.id.clone(),
            n,
            z,
            a,
        });
    }

    let ids: Vec<String> = rows.iter().map(|r| r.sample_id.clone()).collect();
    let mut dump = noise_dump(&spec.model, ids, spec.n_layers, spec.dim, 1.0, spec.seed ^ 0x5eed)?;
    dump.header.layer_convention = Some("synthetic".into());
    let readout = readout_cell(spec.n_layers);
    let cognition_cells = vec![
        readout,
        Cell {
            offset: -2,
            layer: readout.layer,
        },
    ];
    let action_cells = vec![
        Cell {
            offset: -3,
            layer: readout.layer,
        },
        Cell {
            offset: -4,
            layer: readout.layer,
        },
    ];
    let z: Vec<bool> = rows.iter().map(|r| r.z).collect();
    let a: Vec<bool> = rows.iter().map(|r| r.a).collect();
    // Damp the noise along the planted axes so the readout is exact.
    for s in 0..rows.len() {
        for cell in cognition_cells.iter().chain(&action_cells) {
            let pos = dump.header.position_index(cell.offset).unwrap();
            let h = dump.cell_mut(s, pos, cell.layer);
            h[0] *= 0.1;
            h[1] *= 0.1;
        }
    }
    plant(&mut dump, &cognition_cells, &z, &axis(spec.dim, 0), 4.0)?;
    plant(&mut dump, &action_cells, &a, &axis(spec.dim, 1), 4.0)?;
    let decisions: Vec<[f32; 2]> = script
        .iter()
        .map(|l| {
            let [t, b] = l.decision.unwrap();
            [t as f32, b as f32]
        })
        .collect();
    dump.header.decision_included = true;
    dump = MemoryDump::new(dump.header.clone(), std::mem::take(&mut dump.body), Some(decisions))?;

    let mut categories = CategoryCounts::default();
    let mut stages: BTreeMap<Stage, usize> = Stage::ALL.iter().map(|&s| (s, 0)).collect();
    for r in &rows {
        categories.add(classify(r.n, r.a));
        *stages.get_mut(&trace(r.n, r.z, r.a)).unwrap() += 1;
    }
    Ok(Scenario {
        script,
        dump,
        truth: ScenarioTruth {
            rows,
            categories,
            stages,
            cognition_cells,
            action_cells,
        },
    })
}
