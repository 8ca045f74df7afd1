//! Linear probes over the (token offset x layer) grid of hidden states,
//! scored by held-out MCC, and cosine grids between probe directions.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::HiddenStateSource;
use crate::error::{Error, Result};
use crate::metrics::Confusion;
use crate::scalar::Real;

pub const MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Cognition,
    Action,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Cognition => "cognition",
            Target::Action => "action",
        })
    }
}

/// A grid cell: token offset from the end of the query, and layer index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub offset: i32,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Stop after this many epochs without at least `min_delta` improvement.
    pub patience: usize,
    pub min_delta: f64,
    /// Mini-batch size; `None` trains full-batch.
    #[serde(default)]
    pub batch: Option<usize>,
    pub test_fraction: f64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        ProbeHyper {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 200,
            patience: 10,
            min_delta: 1e-6,
            batch: None,
            test_fraction: 0.3,
        }
    }
}

/// Row indices of a stratified train/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles each class with `seed` and sends `round(fraction * class size)`
/// of it to the test side. Both sides come back sorted.
pub fn stratified_split(labels: &[bool], test_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidInput(format!(
            "test fraction {test_fraction} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { seed, train, test })
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Binary cross-entropy on a logit, computed without overflow.
fn bce_logit<F: Real>(z: F, y: F) -> F {
    z.max(F::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ProbeResult<F> {
    pub target: Target,
    pub position: Cell,
    /// Weight in standardized feature space.
    pub weight: Vec<F>,
    pub bias: F,
    /// Standardization fitted on the training split: `(h - mean) / std`.
    pub mean: Vec<F>,
    pub std: Vec<F>,
    pub train_mcc: F,
    pub test_mcc: F,
    pub test_mcc_defined: bool,
    pub split_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs_run: usize,
    pub loss_history: Vec<F>,
}

impl<F: Real> ProbeResult<F> {
    /// `w . standardize(h) + b`.
    pub fn logit(&self, h: &[F]) -> Result<F> {
        if h.len() != self.weight.len() {
            return Err(Error::Dimension {
                expected: self.weight.len(),
                actual: h.len(),
            });
        }
        let mut z = self.bias;
        for (((&x, &w), &m), &s) in h.iter().zip(&self.weight).zip(&self.mean).zip(&self.std) {
            z = z + w * (x - m) / s;
        }
        Ok(z)
    }

    pub fn confidence(&self, h: &[F]) -> Result<F> {
        self.logit(h).map(sigmoid)
    }

    /// Class decision with ties at 0.5 going to the positive class.
    pub fn predict(&self, h: &[F]) -> Result<bool> {
        self.confidence(h).map(|c| c >= F::of(0.5))
    }
}

fn check_inputs<F: Real>(features: ArrayView2<F>, labels: &[bool]) -> Result<()> {
    let (k, _) = features.dim();
    if k != labels.len() {
        return Err(Error::Dimension {
            expected: k,
            actual: labels.len(),
        });
    }
    if k < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "{k} samples; probes need at least {MIN_SAMPLES}"
        )));
    }
    if let Some(((row, col), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { row, col });
    }
    Ok(())
}

fn predict_rows<F: Real>(x: ArrayView2<F>, w: ArrayView1<F>, b: F) -> Vec<bool> {
    x.dot(&w).iter().map(|&z| z + b >= F::zero()).collect()
}

/// Trains on `split.train` and scores on `split.test`.
pub fn train_probe_with_split<F: Real>(
    features: ArrayView2<F>,
    labels: &[bool],
    split: &Split,
    hyper: &ProbeHyper,
    target: Target,
    position: Cell,
) -> Result<ProbeResult<F>> {
    check_inputs(features, labels)?;
    let positives = split.train.iter().filter(|&&i| labels[i]).count();
    if positives == 0 || positives == split.train.len() {
        return Err(Error::DegenerateLabels(format!(
            "training split at {position:?} has a single class"
        )));
    }
    let d = features.ncols();
    let x_train = features.select(Axis(0), &split.train);
    let mean = x_train.mean_axis(Axis(0)).expect("nonempty training split");
    let std = x_train
        .std_axis(Axis(0), F::zero())
        .mapv(|s| if s > F::zero() { s } else { F::one() });
    let standardize = |x: Array2<F>| (x - &mean) / &std;
    let x_train = standardize(x_train);
    let x_test = standardize(features.select(Axis(0), &split.test));
    let y_train: Array1<F> = split
        .train
        .iter()
        .map(|&i| if labels[i] { F::one() } else { F::zero() })
        .collect();

    let (lr, b1, b2, eps) = (
        F::of(hyper.lr),
        F::of(hyper.beta1),
        F::of(hyper.beta2),
        F::of(hyper.eps),
    );
    let mut w = Array1::<F>::zeros(d);
    let mut b = F::zero();
    let (mut m_w, mut v_w) = (Array1::<F>::zeros(d), Array1::<F>::zeros(d));
    let (mut m_b, mut v_b) = (F::zero(), F::zero());
    let mut step = 0i32;
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut best = F::infinity();
    let mut stale = 0;
    let n = x_train.nrows();
    let batch = hyper.batch.unwrap_or(n).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);

    for _ in 0..hyper.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = F::zero();
        for chunk in order.chunks(batch) {
            let (xb, yb) = if batch < n {
                (x_train.select(Axis(0), chunk), y_train.select(Axis(0), chunk))
            } else {
                (x_train.clone(), y_train.clone())
            };
            let z = xb.dot(&w) + b;
            let m = F::from_usize(chunk.len()).unwrap();
            let loss = z.iter().zip(&yb).fold(F::zero(), |acc, (&z, &y)| acc + bce_logit(z, y));
            epoch_loss = epoch_loss + loss;
            let residual = z.mapv(sigmoid) - &yb;
            let g_w = xb.t().dot(&residual) / m;
            let g_b = residual.sum() / m;

            step += 1;
            m_w = &m_w * b1 + &g_w * (F::one() - b1);
            v_w = &v_w * b2 + &g_w.mapv(|g| g * g) * (F::one() - b2);
            m_b = m_b * b1 + g_b * (F::one() - b1);
            v_b = v_b * b2 + g_b * g_b * (F::one() - b2);
            let c1 = F::one() - b1.powi(step);
            let c2 = F::one() - b2.powi(step);
            w = w - (&m_w / c1) * lr / ((&v_w / c2).mapv(F::sqrt) + eps);
            b = b - lr * (m_b / c1) / ((v_b / c2).sqrt() + eps);
        }
        let epoch_loss = epoch_loss / F::from_usize(n).unwrap();
        history.push(epoch_loss);
        if best - epoch_loss < F::of(hyper.min_delta) {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        } else {
            stale = 0;
        }
        best = best.min(epoch_loss);
    }

    let score = |x: &Array2<F>, rows: &[usize]| {
        let pred = predict_rows(x.view(), w.view(), b);
        Confusion::from_pairs(pred.into_iter().zip(rows.iter().map(|&i| labels[i]))).mcc::<F>()
    };
    let train_mcc = score(&x_train, &split.train);
    let test_mcc = score(&x_test, &split.test);
    Ok(ProbeResult {
        target,
        position,
        weight: w.to_vec(),
        bias: b,
        mean: mean.to_vec(),
        std: std.to_vec(),
        train_mcc: train_mcc.value,
        test_mcc: test_mcc.value,
        test_mcc_defined: test_mcc.defined,
        split_seed: split.seed,
        n_train: split.train.len(),
        n_test: split.test.len(),
        epochs_run: history.len(),
        loss_history: history,
    })
}

/// Splits `labels` with `split_seed` and trains one probe.
pub fn train_probe<F: Real>(
    features: ArrayView2<F>,
    labels: &[bool],
    hyper: &ProbeHyper,
    split_seed: u64,
    target: Target,
    position: Cell,
) -> Result<ProbeResult<F>> {
    check_inputs(features, labels)?;
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::DegenerateLabels("all labels are identical".into()));
    }
    let split = stratified_split(labels, hyper.test_fraction, split_seed)?;
    train_probe_with_split(features, labels, &split, hyper, target, position)
}

/// Values over the grid, rows = layers, columns = token offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct PositionGrid<F> {
    /// What the cells hold, e.g. `cognition`, `action` or `cosine`.
    pub kind: String,
    pub offsets: Vec<i32>,
    pub n_layers: usize,
    pub values: Vec<Vec<F>>,
    /// Cells whose value is undefined and reported as 0.
    #[serde(default)]
    pub flagged: Vec<Cell>,
}

impl<F: Real> PositionGrid<F> {
    pub fn get(&self, cell: Cell) -> Option<F> {
        let col = self.offsets.iter().position(|&o| o == cell.offset)?;
        self.values.get(cell.layer).map(|row| row[col])
    }

    pub fn cells(&self) -> impl Iterator<Item = (Cell, F)> + '_ {
        self.values.iter().enumerate().flat_map(move |(layer, row)| {
            self.offsets
                .iter()
                .zip(row)
                .map(move |(&offset, &v)| (Cell { offset, layer }, v))
        })
    }

    /// Heatmap data as CSV: a `layer` column followed by one column per offset.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["layer".to_string()];
        head.extend(self.offsets.iter().map(|o| o.to_string()));
        w.write_record(&head)?;
        for (layer, row) in self.values.iter().enumerate() {
            let mut rec = vec![layer.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }
}

/// Probes for every cell plus the test-MCC grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct Sweep<F> {
    pub target: Target,
    pub grid: PositionGrid<F>,
    pub probes: Vec<ProbeResult<F>>,
    pub split: Split,
    /// Labeled samples with no hidden states, skipped under `allow_partial`.
    #[serde(default)]
    pub missing: Vec<String>,
}

impl<F: Real> Sweep<F> {
    pub fn probe(&self, cell: Cell) -> Option<&ProbeResult<F>> {
        self.probes.iter().find(|p| p.position == cell)
    }

    pub fn by_cell(&self) -> BTreeMap<Cell, &ProbeResult<F>> {
        self.probes.iter().map(|p| (p.position, p)).collect()
    }
}

/// Trains one probe per (offset, layer) cell. Every cell shares the same
/// stratified split so test MCCs are comparable across the grid.
pub fn sweep_grid<F: Real, S: HiddenStateSource + ?Sized>(
    source: &S,
    labels: &[(String, bool)],
    target: Target,
    hyper: &ProbeHyper,
    split_seed: u64,
    allow_partial: bool,
) -> Result<Sweep<F>> {
    let header = source.header();
    let mut rows = Vec::with_capacity(labels.len());
    let mut y = Vec::with_capacity(labels.len());
    let mut missing = Vec::new();
    for (id, label) in labels {
        match source.sample_index(id) {
            Some(i) => {
                rows.push(i);
                y.push(*label);
            }
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() && !allow_partial {
        return Err(Error::MissingGrids(missing));
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(Error::DegenerateLabels(format!(
            "all {} {target} labels are identical",
            y.len()
        )));
    }
    let split = stratified_split(&y, hyper.test_fraction, split_seed)?;
    let cells: Vec<(usize, usize)> = (0..header.n_layers)
        .flat_map(|l| (0..header.n_positions()).map(move |p| (l, p)))
        .collect();
    let probes = cells
        .par_iter()
        .map(|&(layer, pos)| {
            let raw = source.read_cell(pos, layer, &rows)?;
            let x = Array2::from_shape_vec(
                (rows.len(), header.dim),
                raw.into_iter().map(|v| F::of(v as f64)).collect(),
            )
            .expect("cell reads are rows x dim");
            let cell = Cell {
                offset: header.positions[pos],
                layer,
            };
            train_probe_with_split(x.view(), &y, &split, hyper, target, cell)
        })
        .collect::<Result<Vec<_>>>()?;
    let values = probes
        .chunks(header.n_positions())
        .map(|row| row.iter().map(|p| p.test_mcc).collect())
        .collect();
    let flagged = probes
        .iter()
        .filter(|p| !p.test_mcc_defined)
        .map(|p| p.position)
        .collect();
    Ok(Sweep {
        target,
        grid: PositionGrid {
            kind: target.to_string(),
            offsets: header.positions.clone(),
            n_layers: header.n_layers,
            values,
            flagged,
        },
        probes,
        split,
        missing,
    })
}

pub fn cosine<F: Real>(a: &[F], b: &[F]) -> Option<F> {
    let dot = a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y);
    let na = a.iter().fold(F::zero(), |acc, &x| acc + x * x).sqrt();
    let nb = b.iter().fold(F::zero(), |acc, &x| acc + x * x).sqrt();
    if na.is_zero() || nb.is_zero() {
        return None;
    }
    Some((dot / (na * nb)).max(-F::one()).min(F::one()))
}

/// Cosine between cognition and action probe weights at every cell. Both
/// maps must cover the same cells; zero-norm weights are flagged.
pub fn cosine_grid<F: Real>(cognition: &[ProbeResult<F>], action: &[ProbeResult<F>]) -> Result<PositionGrid<F>> {
    let cog: BTreeMap<Cell, &ProbeResult<F>> = cognition.iter().map(|p| (p.position, p)).collect();
    let act: BTreeMap<Cell, &ProbeResult<F>> = action.iter().map(|p| (p.position, p)).collect();
    if cog.len() != cognition.len() || act.len() != action.len() {
        return Err(Error::InvalidInput("probe map lists a cell twice".into()));
    }
    if !cog.keys().eq(act.keys()) {
        return Err(Error::InvalidInput(
            "cognition and action probes cover different cells".into(),
        ));
    }
    if cog.is_empty() {
        return Err(Error::Empty("no probes".into()));
    }
    let offsets: Vec<i32> = {
        let set: HashSet<i32> = cog.keys().map(|c| c.offset).collect();
        let mut v: Vec<i32> = set.into_iter().collect();
        v.sort_unstable();
        v
    };
    let n_layers = cog.keys().map(|c| c.layer).max().unwrap() + 1;
    if cog.len() != offsets.len() * n_layers {
        return Err(Error::InvalidInput("probe cells do not form a full grid".into()));
    }
    let mut values = vec![vec![F::zero(); offsets.len()]; n_layers];
    let mut flagged = Vec::new();
    for (col, &offset) in offsets.iter().enumerate() {
        for (layer, row) in values.iter_mut().enumerate() {
            let cell = Cell { offset, layer };
            let (c, a) = (cog[&cell], act[&cell]);
            if c.weight.len() != a.weight.len() {
                return Err(Error::Dimension {
                    expected: c.weight.len(),
                    actual: a.weight.len(),
                });
            }
            match cosine(&c.weight, &a.weight) {
                Some(v) => row[col] = v,
                None => flagged.push(cell),
            }
        }
    }
    Ok(PositionGrid {
        kind: "cosine".into(),
        offsets,
        n_layers,
        values,
        flagged,
    })
}
