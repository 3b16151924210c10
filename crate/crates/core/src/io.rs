//! Persistence: sequence files, corpus manifests, model checkpoints and
//! run reports.
//!
//! Sequence files (`SEGF1`), all integers little-endian:
//!
//! | field      | type                       |
//! |------------|----------------------------|
//! | magic      | 5 bytes `SEGF1`            |
//! | T          | u32, > 0                   |
//! | F          | u32, > 0                   |
//! | has_labels | u8, 0 or 1                 |
//! | group_id   | u32 byte length + UTF-8    |
//! | features   | T * F f32, row-major       |
//! | labels     | T u16, only if has_labels  |
//!
//! Files ending in `.csv` are read as text instead: a header row, one frame
//! per row, feature columns first and an optional final `label` column.
//!
//! Checkpoints (`SEGCK`): 5-byte magic, u32 format version, u32 manifest
//! length, the JSON manifest, then every parameter array in manifest order
//! as f64 values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::domain::{EngineConfig, LabeledSequence};
use crate::error::{Error, Result};
use crate::gateway::{CorpusResult, Decision};
use crate::lang_model::TransitionTable;
use crate::metrics::MetricReport;
use crate::policy::PolicyModel;
use crate::synth::SynthConfig;
use crate::value::RecurrentValueModel;

pub const SEQUENCE_MAGIC: &str = "SEGF1";
pub const CHECKPOINT_MAGIC: &str = "SEGCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CORPUS_MANIFEST: &str = "manifest.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Bounds-checked little-endian reader over a byte buffer.
struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }

    fn magic(&mut self, magic: &'static str) -> Result<()> {
        let ok = self.bytes.len() >= magic.len() && &self.bytes[..magic.len()] == magic.as_bytes();
        if !ok {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected: magic,
            });
        }
        self.pos = magic.len();
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(malformed(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn encode_sequence(seq: &LabeledSequence) -> Result<Vec<u8>> {
    let (t, f) = seq.features.dim();
    let dim = |n: usize, what: &'static str| {
        u32::try_from(n).map_err(|_| Error::InvalidConfig(format!("{what} {n} exceeds u32")))
    };
    let group = seq.group_id.as_bytes();
    let mut out = Vec::with_capacity(18 + group.len() + 4 * t * f + 2 * t);
    out.extend_from_slice(SEQUENCE_MAGIC.as_bytes());
    out.extend_from_slice(&dim(t, "length")?.to_le_bytes());
    out.extend_from_slice(&dim(f, "feature dim")?.to_le_bytes());
    out.push(seq.labels.is_some() as u8);
    out.extend_from_slice(&dim(group.len(), "group id length")?.to_le_bytes());
    out.extend_from_slice(group);
    for v in seq.features.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &seq.labels {
        for (frame, &label) in labels.iter().enumerate() {
            let l = u16::try_from(label).map_err(|_| Error::LabelOutOfRange {
                label,
                frame,
                num_classes: u16::MAX as usize + 1,
            })?;
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_sequence(path: &Path, bytes: &[u8], num_classes: Option<usize>) -> Result<LabeledSequence> {
    let mut r = Reader::new(path, bytes);
    r.magic(SEQUENCE_MAGIC)?;
    let t = r.u32("length")? as usize;
    let f = r.u32("feature dim")? as usize;
    if t == 0 || f == 0 {
        return Err(malformed(path, format!("empty shape {t} x {f}")));
    }
    let has_labels = match r.u8("label flag")? {
        0 => false,
        1 => true,
        other => return Err(malformed(path, format!("label flag {other}"))),
    };
    let glen = r.u32("group id length")? as usize;
    let group = std::str::from_utf8(r.take(glen, "group id")?)
        .map_err(|e| malformed(path, format!("group id: {e}")))?
        .to_owned();
    let n = t
        .checked_mul(f)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| malformed(path, "shape overflows"))?;
    let raw = r.take(n, "features")?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = if has_labels {
        let raw = r.take(2 * t, "labels")?;
        Some(
            raw.chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().unwrap()) as usize)
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    r.finish()?;
    build_sequence(path, t, f, values, labels, group, num_classes)
}

fn build_sequence(
    path: &Path,
    t: usize,
    f: usize,
    values: Vec<f32>,
    labels: Option<Vec<usize>>,
    group: String,
    num_classes: Option<usize>,
) -> Result<LabeledSequence> {
    if let (Some(c), Some(labels)) = (num_classes, &labels) {
        if let Some((frame, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(Error::LabelOutOfRange {
                label,
                frame,
                num_classes: c,
            });
        }
    }
    let features =
        Array2::from_shape_vec((t, f), values).map_err(|e| malformed(path, e.to_string()))?;
    LabeledSequence::new(features, labels, group).map_err(|e| malformed(path, e.to_string()))
}

fn group_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_sequence_csv(path: &Path, num_classes: Option<usize>) -> Result<LabeledSequence> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => malformed(path, format!("{other:?}")),
        })?;
    let headers = reader.headers()?.clone();
    let has_labels = headers.iter().next_back().is_some_and(|h| h.trim() == "label");
    let f = headers.len() - has_labels as usize;
    if f == 0 {
        return Err(malformed(path, "no feature columns"));
    }
    let mut values = Vec::new();
    let mut labels = has_labels.then(Vec::new);
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(malformed(
                path,
                format!("row {row} has {} fields, expected {}", record.len(), headers.len()),
            ));
        }
        for field in record.iter().take(f) {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| malformed(path, format!("row {row}: bad number {field:?}")))?;
            values.push(v);
        }
        if let Some(labels) = labels.as_mut() {
            let field = record[f].trim();
            let l: usize = field
                .parse()
                .map_err(|_| malformed(path, format!("row {row}: bad label {field:?}")))?;
            labels.push(l);
        }
    }
    let t = values.len() / f;
    if t == 0 {
        return Err(malformed(path, "no frames"));
    }
    build_sequence(path, t, f, values, labels, group_from_path(path), num_classes)
}

/// Reads a sequence file, as CSV when the extension is `.csv`. Labels are
/// range-checked when `num_classes` is given.
pub fn read_sequence(path: &Path, num_classes: Option<usize>) -> Result<LabeledSequence> {
    if is_csv(path) {
        read_sequence_csv(path, num_classes)
    } else {
        decode_sequence(path, &read_file(path)?, num_classes)
    }
}

/// Writes a sequence file, as CSV when the extension is `.csv`. The CSV form
/// does not carry the group id; readers use the file stem instead.
pub fn write_sequence(path: &Path, seq: &LabeledSequence) -> Result<()> {
    if !is_csv(path) {
        return write_file(path, &encode_sequence(seq)?);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..seq.feature_dim()).map(|j| format!("f{j}")).collect();
    if seq.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (t, row) in seq.features.rows().into_iter().enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(labels) = &seq.labels {
            record.push(labels[t].to_string());
        }
        w.write_record(&record)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_file(path, &bytes)
}

/// Reads a label file: one non-negative integer per line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| malformed(path, format!("line {}: bad label {l:?}", i + 1)))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

/// Labels from either a label file (`.txt`) or a labelled sequence file.
pub fn read_any_labels(path: &Path) -> Result<Vec<usize>> {
    let is_txt = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("txt"));
    if is_txt {
        return read_labels(path);
    }
    read_sequence(path, None)?.labels.ok_or(Error::MissingLabels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub file: String,
    pub group_id: String,
    pub split: Split,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub num_classes: usize,
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub sequences: Vec<CorpusEntry>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub sequences: Vec<LabeledSequence>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> (Vec<String>, Vec<LabeledSequence>) {
        self.manifest
            .sequences
            .iter()
            .zip(&self.sequences)
            .filter(|(e, _)| e.split == split)
            .map(|(e, s)| (entry_name(e), s.clone()))
            .unzip()
    }

    /// Sequences whose group is (or, with `exclude`, is not) `group`.
    pub fn by_group(&self, group: &str, exclude: bool) -> (Vec<String>, Vec<LabeledSequence>) {
        self.manifest
            .sequences
            .iter()
            .zip(&self.sequences)
            .filter(|(e, _)| (e.group_id == group) != exclude)
            .map(|(e, s)| (entry_name(e), s.clone()))
            .unzip()
    }
}

fn entry_name(e: &CorpusEntry) -> String {
    group_from_path(Path::new(&e.file))
}

/// Writes `seq_000.segf` ... plus `manifest.json` into `dir`.
pub fn write_corpus(
    dir: &Path,
    train: &[LabeledSequence],
    test: &[LabeledSequence],
    preset: Option<&str>,
    synth: Option<&SynthConfig>,
) -> Result<CorpusManifest> {
    let first = train
        .first()
        .or(test.first())
        .ok_or(Error::EmptyInput("corpus"))?;
    let num_classes = synth.map(|s| s.num_classes).unwrap_or_else(|| {
        train
            .iter()
            .chain(test)
            .filter_map(|s| s.labels.as_ref())
            .flatten()
            .max()
            .map_or(0, |m| m + 1)
    });
    let mut sequences = Vec::new();
    let all = train
        .iter()
        .map(|s| (s, Split::Train))
        .chain(test.iter().map(|s| (s, Split::Test)));
    for (i, (seq, split)) in all.enumerate() {
        let file = format!("seq_{i:03}.segf");
        write_sequence(&dir.join(&file), seq)?;
        sequences.push(CorpusEntry {
            file,
            group_id: seq.group_id.clone(),
            split,
            len: seq.len(),
        });
    }
    let manifest = CorpusManifest {
        num_classes,
        feature_dim: first.feature_dim(),
        preset: preset.map(str::to_owned),
        synth: synth.cloned(),
        sequences,
    };
    write_json(&dir.join(CORPUS_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(CORPUS_MANIFEST);
    let manifest: CorpusManifest = serde_json::from_slice(&read_file(&path)?)?;
    let sequences = manifest
        .sequences
        .iter()
        .map(|e| {
            let p = dir.join(&e.file);
            let seq = read_sequence(&p, Some(manifest.num_classes))?;
            if seq.feature_dim() != manifest.feature_dim {
                return Err(malformed(
                    &p,
                    format!("feature dim {} but manifest says {}", seq.feature_dim(), manifest.feature_dim),
                ));
            }
            Ok(seq)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        manifest,
        sequences,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Policy,
    Value,
    LangModel,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Policy => "policy",
            ModelKind::Value => "value",
            ModelKind::LangModel => "lang_model",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "policy" => Ok(ModelKind::Policy),
            "value" => Ok(ModelKind::Value),
            "lang_model" => Ok(ModelKind::LangModel),
            other => Err(Error::UnknownModelKind(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    /// Kept as a string so unknown kinds surface as a typed error.
    pub kind: String,
    /// Architecture sizes needed to rebuild the model.
    pub dims: BTreeMap<String, usize>,
    pub arrays: Vec<ArraySpec>,
    pub seed: u64,
    pub config_hash: String,
}

/// A model that can be stored as named f64 arrays.
pub trait Checkpoint: Sized {
    const KIND: ModelKind;
    fn dims(&self) -> BTreeMap<String, usize>;
    fn arrays(&self) -> Vec<(ArraySpec, Vec<f64>)>;
    fn from_arrays(dims: &BTreeMap<String, usize>, arrays: Vec<(ArraySpec, Vec<f64>)>) -> Result<Self>;
}

fn dim(dims: &BTreeMap<String, usize>, key: &str) -> Result<usize> {
    dims.get(key).copied().ok_or_else(|| Error::ShapeMismatch {
        name: key.to_owned(),
        detail: "missing from checkpoint dims".into(),
    })
}

fn layout_arrays(layout: &crate::nn::ParamLayout, params: &Array1<f64>) -> Vec<(ArraySpec, Vec<f64>)> {
    let flat = params.as_slice().expect("contiguous parameters");
    layout
        .entries
        .iter()
        .map(|e| {
            (
                ArraySpec {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                },
                flat[e.range()].to_vec(),
            )
        })
        .collect()
}

fn concat_checked(
    layout: &crate::nn::ParamLayout,
    arrays: Vec<(ArraySpec, Vec<f64>)>,
) -> Result<Array1<f64>> {
    let described: Vec<_> = arrays
        .iter()
        .map(|(s, v)| (s.name.clone(), s.shape.clone(), v.len()))
        .collect();
    layout.check_against(&described)?;
    Ok(arrays.into_iter().flat_map(|(_, v)| v).collect())
}

impl Checkpoint for PolicyModel {
    const KIND: ModelKind = ModelKind::Policy;

    fn dims(&self) -> BTreeMap<String, usize> {
        let [h0, h1] = self.hidden();
        BTreeMap::from([
            ("input_dim".into(), self.input_dim()),
            ("hidden0".into(), h0),
            ("hidden1".into(), h1),
            ("num_actions".into(), self.num_actions()),
        ])
    }

    fn arrays(&self) -> Vec<(ArraySpec, Vec<f64>)> {
        layout_arrays(self.layout(), &self.params)
    }

    fn from_arrays(dims: &BTreeMap<String, usize>, arrays: Vec<(ArraySpec, Vec<f64>)>) -> Result<Self> {
        let input = dim(dims, "input_dim")?;
        let hidden = [dim(dims, "hidden0")?, dim(dims, "hidden1")?];
        let actions = dim(dims, "num_actions")?;
        let layout = PolicyModel::layout_for(input, hidden, actions);
        let params = concat_checked(&layout, arrays)?;
        PolicyModel::from_params(input, hidden, actions, params)
    }
}

impl Checkpoint for RecurrentValueModel {
    const KIND: ModelKind = ModelKind::Value;

    fn dims(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([
            ("feature_dim".into(), self.feature_dim()),
            ("num_classes".into(), self.num_classes()),
            ("hidden".into(), self.hidden()),
            ("fc".into(), self.fc()),
        ])
    }

    fn arrays(&self) -> Vec<(ArraySpec, Vec<f64>)> {
        layout_arrays(self.layout(), &self.params)
    }

    fn from_arrays(dims: &BTreeMap<String, usize>, arrays: Vec<(ArraySpec, Vec<f64>)>) -> Result<Self> {
        let f = dim(dims, "feature_dim")?;
        let c = dim(dims, "num_classes")?;
        let h = dim(dims, "hidden")?;
        let fc = dim(dims, "fc")?;
        let layout = RecurrentValueModel::layout_for(f + c, h, fc);
        let params = concat_checked(&layout, arrays)?;
        RecurrentValueModel::from_params(f, c, h, fc, params)
    }
}

impl Checkpoint for TransitionTable {
    const KIND: ModelKind = ModelKind::LangModel;

    fn dims(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([("num_classes".into(), self.num_classes())])
    }

    fn arrays(&self) -> Vec<(ArraySpec, Vec<f64>)> {
        let c = self.num_classes();
        vec![
            (
                ArraySpec {
                    name: "transitions".into(),
                    shape: vec![c, c],
                },
                self.transitions.iter().copied().collect(),
            ),
            (
                ArraySpec {
                    name: "start".into(),
                    shape: vec![c],
                },
                self.start.to_vec(),
            ),
        ]
    }

    fn from_arrays(dims: &BTreeMap<String, usize>, arrays: Vec<(ArraySpec, Vec<f64>)>) -> Result<Self> {
        let c = dim(dims, "num_classes")?;
        let mut layout = crate::nn::ParamLayout::default();
        layout.push("transitions", &[c, c]);
        layout.push("start", &[c]);
        let flat = concat_checked(&layout, arrays)?;
        let table = TransitionTable {
            transitions: Array2::from_shape_vec((c, c), flat.slice(ndarray::s![..c * c]).to_vec())
                .expect("checked shape"),
            start: flat.slice(ndarray::s![c * c..]).to_owned(),
        };
        table.validate()?;
        Ok(table)
    }
}

/// Training metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub config_hash: String,
}

impl CheckpointMeta {
    pub fn new(seed: u64, cfg: &EngineConfig) -> Self {
        Self {
            seed,
            config_hash: cfg.config_hash(),
        }
    }
}

pub fn encode_checkpoint<M: Checkpoint>(model: &M, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let arrays = model.arrays();
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        kind: M::KIND.as_str().to_owned(),
        dims: model.dims(),
        arrays: arrays.iter().map(|(s, _)| s.clone()).collect(),
        seed: meta.seed,
        config_hash: meta.config_hash.clone(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, values) in &arrays {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint<M: Checkpoint>(path: &Path, bytes: &[u8]) -> Result<(M, CheckpointManifest)> {
    let mut r = Reader::new(path, bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = r.u32("manifest length")? as usize;
    let manifest: CheckpointManifest = serde_json::from_slice(r.take(len, "manifest")?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let kind = ModelKind::parse(&manifest.kind)?;
    if kind != M::KIND {
        return Err(Error::WrongModelKind {
            found: manifest.kind.clone(),
            expected: M::KIND.as_str().to_owned(),
        });
    }
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for spec in &manifest.arrays {
        let n = spec
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::ShapeMismatch {
                name: spec.name.clone(),
                detail: format!("shape {:?} overflows", spec.shape),
            })?;
        let raw = r.take(n, &spec.name)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push((spec.clone(), values));
    }
    r.finish()?;
    let model = M::from_arrays(&manifest.dims, arrays)?;
    Ok((model, manifest))
}

pub fn write_checkpoint<M: Checkpoint>(path: &Path, model: &M, meta: &CheckpointMeta) -> Result<()> {
    write_file(path, &encode_checkpoint(model, meta)?)
}

pub fn read_checkpoint<M: Checkpoint>(path: &Path) -> Result<(M, CheckpointManifest)> {
    decode_checkpoint(path, &read_file(path)?)
}

/// Returns a warning (also logged) when a checkpoint was trained under a
/// different engine configuration.
pub fn config_hash_warning(manifest: &CheckpointManifest, cfg: &EngineConfig) -> Option<String> {
    let current = cfg.config_hash();
    if manifest.config_hash == current {
        return None;
    }
    let msg = format!(
        "{} checkpoint was trained with config {} but the runtime config is {}",
        manifest.kind, manifest.config_hash, current
    );
    log::warn!("{msg}");
    Some(msg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceReport {
    pub name: String,
    pub group_id: String,
    pub len: usize,
    pub metrics: Option<MetricReport>,
    pub searched_fraction: f64,
    pub searched_frame_fraction: f64,
    pub decisions: Vec<Decision>,
}

/// Structured run report. `config` echoes the parsed run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub aggregate: Option<MetricReport>,
    pub searched_fraction: f64,
    pub sequences: Vec<SequenceReport>,
}

impl RunReport {
    pub fn new(
        command: &str,
        seed: u64,
        config: serde_json::Value,
        names: &[String],
        corpus: &[LabeledSequence],
        result: &CorpusResult,
    ) -> Self {
        let sequences = names
            .iter()
            .zip(corpus)
            .zip(&result.episodes)
            .enumerate()
            .map(|(i, ((name, seq), ep))| SequenceReport {
                name: name.clone(),
                group_id: seq.group_id.clone(),
                len: seq.len(),
                metrics: result.metrics.as_ref().map(|m| m[i].clone()),
                searched_fraction: ep.searched_fraction,
                searched_frame_fraction: ep.searched_frame_fraction,
                decisions: ep.decisions.clone(),
            })
            .collect();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            seed,
            config,
            aggregate: result.aggregate.clone(),
            searched_fraction: result.searched_fraction,
            sequences,
        }
    }
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    write_json(path, report)
}

/// Flat per-frame export: sequence, frame, ground truth (empty when
/// unlabelled), prediction, the max policy probability of the decision
/// covering the frame, and whether that decision was searched.
pub fn write_frame_trace(
    path: &Path,
    names: &[String],
    corpus: &[LabeledSequence],
    result: &CorpusResult,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sequence", "frame", "gt", "pred", "max_prob", "searched"])?;
    for ((name, seq), ep) in names.iter().zip(corpus).zip(&result.episodes) {
        let mut decisions = ep.decisions.iter().peekable();
        let mut current = decisions.next();
        for (t, pred) in ep.predicted.iter().enumerate() {
            while decisions.peek().is_some_and(|d| d.frame <= t) {
                current = decisions.next();
            }
            let d = current.expect("every episode has a first decision");
            let gt = seq.labels.as_ref().map(|l| l[t].to_string()).unwrap_or_default();
            w.write_record([
                name.clone(),
                t.to_string(),
                gt,
                pred.to_string(),
                d.max_prob.to_string(),
                (d.searched as u8).to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_file(path, &bytes)
}

/// Sequence and label files (`.segf`, `.csv`, `.txt`) in `dir`, sorted by name.
pub fn sequence_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e, "segf" | "csv" | "txt"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}
