//! Reader and writer for `HSD1` hidden-state dumps.
//!
//! Layout: the magic `HSD1`, a little-endian `u32` header length, a UTF-8
//! JSON header, then the body. The body holds, per sample in `sample_ids`
//! order, `n_layers x positions x dim` little-endian `f32`s (layer-major,
//! then position, then dimension). When `decision_included` is set, a
//! trailer of two `f32`s per sample (`p_tool`, `p_best_nontool`) follows the
//! whole body, again in sample order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HSD1";
const PREAMBLE: u64 = 8;
const F32: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub model: String,
    pub dim: usize,
    pub n_layers: usize,
    /// Token offsets relative to the end of the query, e.g. `-20..=-1`.
    pub positions: Vec<i32>,
    pub dtype: String,
    pub sample_ids: Vec<String>,
    pub decision_included: bool,
    /// Which layers are stored, e.g. whether index 0 is the embedding output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_convention: Option<String>,
    /// Which tokens count as query tokens, e.g. whether chat-template
    /// tokens are included.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_convention: Option<String>,
    /// Samples whose prompt was shorter than the window, with the number of
    /// zero-filled leading positions.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub zero_filled: BTreeMap<String, usize>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DumpHeader {
    pub fn new(model: impl Into<String>, dim: usize, n_layers: usize, sample_ids: Vec<String>) -> Self {
        DumpHeader {
            model: model.into(),
            dim,
            n_layers,
            positions: (-20..0).collect(),
            dtype: "f32".into(),
            sample_ids,
            decision_included: false,
            layer_convention: None,
            token_convention: None,
            zero_filled: BTreeMap::new(),
            extra: Map::new(),
        }
    }

    pub fn n_positions(&self) -> usize {
        self.positions.len()
    }

    /// Floats per sample in the body.
    pub fn sample_len(&self) -> usize {
        self.n_layers * self.n_positions() * self.dim
    }

    pub fn body_bytes(&self) -> u64 {
        self.sample_ids.len() as u64 * self.sample_len() as u64 * F32
    }

    pub fn trailer_bytes(&self) -> u64 {
        if self.decision_included {
            self.sample_ids.len() as u64 * 2 * F32
        } else {
            0
        }
    }

    /// Index of a token offset in `positions`.
    pub fn position_index(&self, offset: i32) -> Option<usize> {
        self.positions.iter().position(|&p| p == offset)
    }

    fn validate(&self) -> Result<()> {
        if self.dtype != "f32" {
            return Err(Error::Dump(format!("unsupported dtype `{}`", self.dtype)));
        }
        if self.dim == 0 || self.n_layers == 0 || self.positions.is_empty() {
            return Err(Error::Dump("dim, n_layers and positions must be nonzero".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &self.sample_ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut offsets = self.positions.clone();
        offsets.sort_unstable();
        offsets.dedup();
        if offsets.len() != self.positions.len() {
            return Err(Error::Dump("repeated token offset in positions".into()));
        }
        Ok(())
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(self)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::Dump("header too large".into()))?;
        let mut out = Vec::with_capacity(json.len() + PREAMBLE as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }
}

fn f32s_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Random-access reader. Only the header is held in memory; cells and
/// samples are read on demand so dumps larger than RAM can be probed.
#[derive(Debug, Clone)]
pub struct DumpReader {
    path: PathBuf,
    header: DumpHeader,
    body_offset: u64,
    index: HashMap<String, usize>,
}

impl DumpReader {
    pub fn open(path: &Path) -> Result<Self> {
        let ctx = || format!("reading dump {}", path.display());
        let mut file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
        let file_len = file.metadata().map_err(|e| Error::io(ctx(), e))?.len();
        let mut pre = [0u8; 8];
        file.read_exact(&mut pre)
            .map_err(|_| Error::Dump(format!("{}: truncated preamble", path.display())))?;
        if &pre[..4] != MAGIC {
            return Err(Error::Dump(format!("{}: bad magic, expected HSD1", path.display())));
        }
        let header_len = u32::from_le_bytes([pre[4], pre[5], pre[6], pre[7]]) as u64;
        if PREAMBLE + header_len > file_len {
            return Err(Error::Dump(format!(
                "{}: header length exceeds file size",
                path.display()
            )));
        }
        let mut json = vec![0u8; header_len as usize];
        file.read_exact(&mut json).map_err(|e| Error::io(ctx(), e))?;
        let header: DumpHeader =
            serde_json::from_slice(&json).map_err(|e| Error::Dump(format!("{}: header: {e}", path.display())))?;
        header.validate()?;
        let body_offset = PREAMBLE + header_len;
        let expected = body_offset + header.body_bytes() + header.trailer_bytes();
        if file_len != expected {
            return Err(Error::Dump(format!(
                "{}: file is {file_len} bytes, header implies {expected}",
                path.display()
            )));
        }
        let index = header
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(DumpReader {
            path: path.to_path_buf(),
            header,
            body_offset,
            index,
        })
    }

    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.header.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    fn open_file(&self) -> Result<File> {
        File::open(&self.path).map_err(|e| Error::io(format!("reading dump {}", self.path.display()), e))
    }

    fn offset(&self, sample: usize, layer: usize, pos: usize) -> u64 {
        let h = &self.header;
        let floats = ((sample * h.n_layers + layer) * h.n_positions() + pos) * h.dim;
        self.body_offset + floats as u64 * F32
    }

    fn check_cell(&self, pos: usize, layer: usize) -> Result<()> {
        if pos >= self.header.n_positions() || layer >= self.header.n_layers {
            return Err(Error::InvalidInput(format!(
                "cell (position index {pos}, layer {layer}) outside the {} x {} grid",
                self.header.n_positions(),
                self.header.n_layers
            )));
        }
        Ok(())
    }

    /// The full `[n_layers x positions x dim]` block of one sample.
    pub fn read_sample(&self, sample: usize) -> Result<Vec<f32>> {
        if sample >= self.len() {
            return Err(Error::InvalidInput(format!("sample index {sample} out of range")));
        }
        let mut file = self.open_file()?;
        let mut buf = vec![0u8; self.header.sample_len() * F32 as usize];
        file.seek(SeekFrom::Start(self.offset(sample, 0, 0)))
            .and_then(|_| file.read_exact(&mut buf))
            .map_err(|e| Error::io(format!("reading dump {}", self.path.display()), e))?;
        Ok(f32s_from_le(&buf))
    }

    /// Feature rows `[samples.len() x dim]`, row-major, for one cell.
    pub fn read_cell(&self, pos: usize, layer: usize, samples: &[usize]) -> Result<Vec<f32>> {
        self.check_cell(pos, layer)?;
        let dim = self.header.dim;
        let mut file = self.open_file()?;
        let mut buf = vec![0u8; dim * F32 as usize];
        let mut out = Vec::with_capacity(samples.len() * dim);
        for &s in samples {
            if s >= self.len() {
                return Err(Error::InvalidInput(format!("sample index {s} out of range")));
            }
            file.seek(SeekFrom::Start(self.offset(s, layer, pos)))
                .and_then(|_| file.read_exact(&mut buf))
                .map_err(|e| Error::io(format!("reading dump {}", self.path.display()), e))?;
            out.extend(f32s_from_le(&buf));
        }
        Ok(out)
    }

    /// Trailer decision probabilities in sample order, if present.
    pub fn read_decisions(&self) -> Result<Option<Vec<[f32; 2]>>> {
        if !self.header.decision_included {
            return Ok(None);
        }
        let mut file = self.open_file()?;
        let mut buf = vec![0u8; self.header.trailer_bytes() as usize];
        file.seek(SeekFrom::Start(self.body_offset + self.header.body_bytes()))
            .and_then(|_| file.read_exact(&mut buf))
            .map_err(|e| Error::io(format!("reading dump {}", self.path.display()), e))?;
        Ok(Some(f32s_from_le(&buf).chunks_exact(2).map(|c| [c[0], c[1]]).collect()))
    }
}

/// Anything that can hand out per-cell feature rows.
pub trait HiddenStateSource: Sync {
    fn header(&self) -> &DumpHeader;
    fn sample_index(&self, id: &str) -> Option<usize>;
    /// Feature rows `[samples.len() x dim]`, row-major, for one cell.
    fn read_cell(&self, pos: usize, layer: usize, samples: &[usize]) -> Result<Vec<f32>>;
}

impl HiddenStateSource for DumpReader {
    fn header(&self) -> &DumpHeader {
        DumpReader::header(self)
    }
    fn sample_index(&self, id: &str) -> Option<usize> {
        DumpReader::sample_index(self, id)
    }
    fn read_cell(&self, pos: usize, layer: usize, samples: &[usize]) -> Result<Vec<f32>> {
        DumpReader::read_cell(self, pos, layer, samples)
    }
}

/// A whole dump held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryDump {
    pub header: DumpHeader,
    /// Concatenated sample blocks in body order.
    pub body: Vec<f32>,
    pub decisions: Option<Vec<[f32; 2]>>,
    index: HashMap<String, usize>,
}

impl MemoryDump {
    pub fn new(header: DumpHeader, body: Vec<f32>, decisions: Option<Vec<[f32; 2]>>) -> Result<Self> {
        header.validate()?;
        let expected = header.sample_ids.len() * header.sample_len();
        if body.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: body.len(),
            });
        }
        if header.decision_included != decisions.is_some()
            || decisions.as_ref().is_some_and(|d| d.len() != header.sample_ids.len())
        {
            return Err(Error::Dump("decision trailer does not match decision_included".into()));
        }
        let index = header
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(MemoryDump {
            header,
            body,
            decisions,
            index,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = DumpReader::open(path)?;
        let mut body = Vec::with_capacity(r.len() * r.header().sample_len());
        for i in 0..r.len() {
            body.extend(r.read_sample(i)?);
        }
        let decisions = r.read_decisions()?;
        MemoryDump::new(r.header.clone(), body, decisions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = DumpWriter::create(path, self.header.clone())?;
        let n = self.header.sample_len();
        for block in self.body.chunks(n.max(1)).take(self.header.sample_ids.len()) {
            w.write_sample(block)?;
        }
        w.finish(self.decisions.as_deref())
    }

    /// The `dim` features of one sample at one cell.
    pub fn cell(&self, sample: usize, pos: usize, layer: usize) -> &[f32] {
        let h = &self.header;
        let start = ((sample * h.n_layers + layer) * h.n_positions() + pos) * h.dim;
        &self.body[start..start + h.dim]
    }

    pub fn cell_mut(&mut self, sample: usize, pos: usize, layer: usize) -> &mut [f32] {
        let h = &self.header;
        let start = ((sample * h.n_layers + layer) * h.n_positions() + pos) * h.dim;
        &mut self.body[start..start + h.dim]
    }
}

impl HiddenStateSource for MemoryDump {
    fn header(&self) -> &DumpHeader {
        &self.header
    }
    fn sample_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
    fn read_cell(&self, pos: usize, layer: usize, samples: &[usize]) -> Result<Vec<f32>> {
        let h = &self.header;
        if pos >= h.n_positions() || layer >= h.n_layers {
            return Err(Error::InvalidInput(format!(
                "cell (position index {pos}, layer {layer}) outside the {} x {} grid",
                h.n_positions(),
                h.n_layers
            )));
        }
        let mut out = Vec::with_capacity(samples.len() * h.dim);
        for &s in samples {
            if s >= h.sample_ids.len() {
                return Err(Error::InvalidInput(format!("sample index {s} out of range")));
            }
            out.extend_from_slice(self.cell(s, pos, layer));
        }
        Ok(out)
    }
}

/// Streaming writer. Samples must be written in header order; the file only
/// appears at its destination after [`DumpWriter::finish`].
pub struct DumpWriter {
    header: DumpHeader,
    dest: PathBuf,
    out: BufWriter<tempfile::NamedTempFile>,
    written: usize,
}

impl DumpWriter {
    pub fn create(path: &Path, header: DumpHeader) -> Result<Self> {
        header.validate()?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let ctx = || format!("writing dump {}", path.display());
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(ctx(), e))?;
        let mut out = BufWriter::new(tmp);
        out.write_all(&header.to_bytes()?).map_err(|e| Error::io(ctx(), e))?;
        Ok(DumpWriter {
            header,
            dest: path.to_path_buf(),
            out,
            written: 0,
        })
    }

    pub fn write_sample(&mut self, data: &[f32]) -> Result<()> {
        if self.written == self.header.sample_ids.len() {
            return Err(Error::Dump("more samples written than the header lists".into()));
        }
        if data.len() != self.header.sample_len() {
            return Err(Error::Dimension {
                expected: self.header.sample_len(),
                actual: data.len(),
            });
        }
        for x in data {
            self.out
                .write_all(&x.to_le_bytes())
                .map_err(|e| Error::io(format!("writing dump {}", self.dest.display()), e))?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self, decisions: Option<&[[f32; 2]]>) -> Result<()> {
        let n = self.header.sample_ids.len();
        if self.written != n {
            return Err(Error::Dump(format!("{} of {n} samples written", self.written)));
        }
        match (self.header.decision_included, decisions) {
            (true, Some(d)) if d.len() == n => {
                for x in d.iter().flatten() {
                    self.out
                        .write_all(&x.to_le_bytes())
                        .map_err(|e| Error::io(format!("writing dump {}", self.dest.display()), e))?;
                }
            }
            (false, None) => {}
            _ => return Err(Error::Dump("decision trailer does not match decision_included".into())),
        }
        let ctx = format!("writing dump {}", self.dest.display());
        let tmp = self.out.into_inner().map_err(|e| Error::io(ctx, e.into_error()))?;
        crate::io::publish(tmp, &self.dest)
    }
}

/// Writes a complete dump from in-memory sample blocks.
pub fn write_dump(path: &Path, header: DumpHeader, samples: &[Vec<f32>], decisions: Option<&[[f32; 2]]>) -> Result<()> {
    let mut w = DumpWriter::create(path, header)?;
    for s in samples {
        w.write_sample(s)?;
    }
    w.finish(decisions)
}
