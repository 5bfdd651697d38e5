//! Trace bundle data model and its on-disk format.
//!
//! A bundle directory holds everything the engine needs from one model run:
//!
//! * `meta.json`: counts, class names, per-neuron layer indices and task kind.
//! * `activations.bin`: little-endian `f32`, row-major, `n_images x n_neurons`, no header.
//! * `predictions.csv`: `image_id,predicted,true` with `;`-joined class indices.
//! * `weights.csv` (optional): `class_index,w_0;w_1;...` one row per class, no header.
//!
//! Every downstream module consumes only the validated [`TraceBundle`].

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const ACTIVATIONS_FILE: &str = "activations.bin";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleLabel,
    MultiLabel,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::SingleLabel => "single_label",
            TaskKind::MultiLabel => "multi_label",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronMeta {
    pub neuron_index: usize,
    pub layer_index: usize,
    /// Diagnostic only.
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMeta {
    pub class_index: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: String,
    /// Sorted, no duplicates.
    pub predicted_labels: Vec<usize>,
    /// Sorted, no duplicates; empty means unlabeled.
    pub true_labels: Vec<usize>,
    pub activation_row_index: usize,
}

impl ImageRecord {
    pub fn predicts(&self, class: usize) -> bool {
        self.predicted_labels.binary_search(&class).is_ok()
    }

    pub fn truly_contains(&self, class: usize) -> bool {
        self.true_labels.binary_search(&class).is_ok()
    }

    pub fn is_labeled(&self) -> bool {
        !self.true_labels.is_empty()
    }
}

/// A validated inspection input. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    neurons: Vec<NeuronMeta>,
    classes: Vec<ClassMeta>,
    images: Vec<ImageRecord>,
    activations: Array2<f32>,
    task_kind: TaskKind,
    weight_vectors: Option<Array2<f64>>,
    convention: Option<String>,
}

/// Raw parts of a bundle, checked by [`TraceBundle::new`].
#[derive(Debug, Clone)]
pub struct BundleParts {
    pub task_kind: TaskKind,
    pub class_names: Vec<String>,
    pub layers: Vec<usize>,
    pub neuron_labels: Option<Vec<String>>,
    /// `(image_id, predicted, true)` in activation row order.
    pub images: Vec<(String, Vec<usize>, Vec<usize>)>,
    pub activations: Array2<f32>,
    pub weight_vectors: Option<Array2<f64>>,
    /// Free-text description of how the extractor scalarized neurons.
    pub convention: Option<String>,
}

impl TraceBundle {
    pub fn new(parts: BundleParts) -> Result<Self> {
        let BundleParts {
            task_kind,
            class_names,
            layers,
            neuron_labels,
            images,
            activations,
            weight_vectors,
            convention,
        } = parts;

        let m = class_names.len();
        if m == 0 {
            return Err(Error::CorruptBundle("class list is empty".into()));
        }
        let mut seen = HashSet::with_capacity(m);
        for name in &class_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::CorruptBundle(format!("duplicate class name {name:?}")));
            }
        }

        let n = layers.len();
        if layers.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::CorruptBundle(
                "layer indices must be non-decreasing in neuron order".into(),
            ));
        }
        if let Some(labels) = &neuron_labels {
            if labels.len() != n {
                return Err(Error::CorruptBundle(format!(
                    "{} neuron labels for {n} neurons",
                    labels.len()
                )));
            }
        }

        if activations.nrows() != images.len() || activations.ncols() != n {
            return Err(Error::CorruptBundle(format!(
                "activation matrix is {}x{}, expected {}x{n}",
                activations.nrows(),
                activations.ncols(),
                images.len()
            )));
        }
        if let Some((idx, _)) = activations.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::CorruptBundle(format!(
                "non-finite activation at image {} neuron {}",
                idx / n.max(1),
                idx % n.max(1)
            )));
        }

        if let Some(w) = &weight_vectors {
            if w.nrows() != m {
                return Err(Error::CorruptBundle(format!(
                    "weight matrix has {} rows for {m} classes",
                    w.nrows()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptBundle("non-finite weight value".into()));
            }
        }

        let mut ids = HashSet::with_capacity(images.len());
        let mut records = Vec::with_capacity(images.len());
        for (row, (image_id, predicted, truth)) in images.into_iter().enumerate() {
            if !ids.insert(image_id.clone()) {
                return Err(Error::CorruptBundle(format!("duplicate image id {image_id:?}")));
            }
            let predicted_labels = normalize_labels(&image_id, predicted, m)?;
            let true_labels = normalize_labels(&image_id, truth, m)?;
            if task_kind == TaskKind::SingleLabel
                && (predicted_labels.len() != 1 || true_labels.len() > 1)
            {
                return Err(Error::CorruptBundle(format!(
                    "image {image_id:?}: single-label bundles need exactly one predicted and at most one true label"
                )));
            }
            records.push(ImageRecord {
                image_id,
                predicted_labels,
                true_labels,
                activation_row_index: row,
            });
        }

        let neurons = layers
            .into_iter()
            .enumerate()
            .map(|(i, layer_index)| NeuronMeta {
                neuron_index: i,
                layer_index,
                label: neuron_labels.as_ref().map(|l| l[i].clone()),
            })
            .collect();
        let classes = class_names
            .into_iter()
            .enumerate()
            .map(|(class_index, name)| ClassMeta { class_index, name })
            .collect();

        Ok(TraceBundle {
            neurons,
            classes,
            images: records,
            activations,
            task_kind,
            weight_vectors,
            convention,
        })
    }

    pub fn neurons(&self) -> &[NeuronMeta] {
        &self.neurons
    }

    pub fn classes(&self) -> &[ClassMeta] {
        &self.classes
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn activations(&self) -> &Array2<f32> {
        &self.activations
    }

    pub fn activation_row(&self, row: usize) -> ArrayView1<'_, f32> {
        self.activations.row(row)
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn weight_vectors(&self) -> Option<&Array2<f64>> {
        self.weight_vectors.as_ref()
    }

    pub fn convention(&self) -> Option<&str> {
        self.convention.as_deref()
    }

    pub fn n_neurons(&self) -> usize {
        self.neurons.len()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn has_true_labels(&self) -> bool {
        self.images.iter().any(ImageRecord::is_labeled)
    }

    /// Same bundle with the activation payload replaced; shape must match.
    pub fn with_activations(&self, activations: Array2<f32>) -> Result<Self> {
        if activations.dim() != self.activations.dim() {
            return Err(Error::InvalidArgument(format!(
                "replacement activations are {:?}, expected {:?}",
                activations.dim(),
                self.activations.dim()
            )));
        }
        if activations.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite replacement activation".into()));
        }
        Ok(TraceBundle {
            activations,
            ..self.clone()
        })
    }

    /// Layer index of each neuron, in neuron order.
    pub fn layers(&self) -> Vec<usize> {
        self.neurons.iter().map(|n| n.layer_index).collect()
    }
}

fn normalize_labels(image_id: &str, mut labels: Vec<usize>, m: usize) -> Result<Vec<usize>> {
    if let Some(bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::CorruptBundle(format!(
            "image {image_id:?}: label index {bad} out of range for {m} classes"
        )));
    }
    labels.sort_unstable();
    let before = labels.len();
    labels.dedup();
    if labels.len() != before {
        return Err(Error::CorruptBundle(format!(
            "image {image_id:?}: repeated label index"
        )));
    }
    Ok(labels)
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleMeta {
    schema_version: u32,
    task_kind: TaskKind,
    n_neurons: usize,
    n_images: usize,
    classes: Vec<String>,
    layers: Vec<usize>,
    has_weights: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    neuron_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::BundleIncomplete(format!("missing {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

fn parse_label_list(field: &str, line: usize) -> Result<Vec<usize>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|tok| {
            tok.trim().parse::<usize>().map_err(|_| {
                Error::CorruptBundle(format!(
                    "{PREDICTIONS_FILE} line {line}: bad class index {tok:?}"
                ))
            })
        })
        .collect()
}

fn join_labels(labels: &[usize]) -> String {
    labels
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

/// Loads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<TraceBundle> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::BundleIncomplete(format!(
            "{} is not a directory",
            dir.display()
        )));
    }

    let meta_bytes = read_file(&dir.join(META_FILE))?;
    let meta: BundleMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::CorruptBundle(format!("{META_FILE}: {e}")))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::CorruptBundle(format!(
            "unsupported schema_version {}",
            meta.schema_version
        )));
    }
    if meta.layers.len() != meta.n_neurons {
        return Err(Error::CorruptBundle(format!(
            "{} layer entries for {} neurons",
            meta.layers.len(),
            meta.n_neurons
        )));
    }

    let payload = read_file(&dir.join(ACTIVATIONS_FILE))?;
    let expected = meta
        .n_images
        .checked_mul(meta.n_neurons)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::CorruptBundle("declared sizes overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::CorruptBundle(format!(
            "{ACTIVATIONS_FILE} holds {} bytes, meta declares {} x {} floats ({expected} bytes)",
            payload.len(),
            meta.n_images,
            meta.n_neurons
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let activations = Array2::from_shape_vec((meta.n_images, meta.n_neurons), values)
        .map_err(|e| Error::CorruptBundle(e.to_string()))?;

    let pred_bytes = read_file(&dir.join(PREDICTIONS_FILE))?;
    let images = parse_predictions(&pred_bytes)?;
    if images.len() != meta.n_images {
        return Err(Error::CorruptBundle(format!(
            "{PREDICTIONS_FILE} has {} rows, meta declares {} images",
            images.len(),
            meta.n_images
        )));
    }

    let weight_vectors = if meta.has_weights {
        let dim = meta.weight_dim.ok_or_else(|| {
            Error::CorruptBundle("weight_dim is required when has_weights is true".into())
        })?;
        let bytes = read_file(&dir.join(WEIGHTS_FILE))?;
        Some(parse_weights(&bytes, meta.classes.len(), dim)?)
    } else {
        None
    };

    TraceBundle::new(BundleParts {
        task_kind: meta.task_kind,
        class_names: meta.classes,
        layers: meta.layers,
        neuron_labels: meta.neuron_labels,
        images,
        activations,
        weight_vectors,
        convention: meta.label,
    })
}

/// `(image_id, predicted, true)` rows as read.
type PredictionRow = (String, Vec<usize>, Vec<usize>);

fn parse_predictions(bytes: &[u8]) -> Result<Vec<PredictionRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::CorruptBundle(format!("{PREDICTIONS_FILE}: {e}")))?;
    if header.iter().collect::<Vec<_>>() != ["image_id", "predicted", "true"] {
        return Err(Error::CorruptBundle(format!(
            "{PREDICTIONS_FILE}: header must be image_id,predicted,true"
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record =
            record.map_err(|e| Error::CorruptBundle(format!("{PREDICTIONS_FILE}: {e}")))?;
        rows.push((
            record[0].to_string(),
            parse_label_list(&record[1], line)?,
            parse_label_list(&record[2], line)?,
        ));
    }
    Ok(rows)
}

fn parse_weights(bytes: &[u8], m: usize, dim: usize) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(bytes);
    let mut out = Array2::<f64>::zeros((m, dim));
    let mut filled = vec![false; m];
    for record in reader.records() {
        let record = record.map_err(|e| Error::CorruptBundle(format!("{WEIGHTS_FILE}: {e}")))?;
        if record.len() != 2 {
            return Err(Error::CorruptBundle(format!(
                "{WEIGHTS_FILE}: expected class_index,w_0;w_1;... rows"
            )));
        }
        let class: usize = record[0].trim().parse().map_err(|_| {
            Error::CorruptBundle(format!("{WEIGHTS_FILE}: bad class index {:?}", &record[0]))
        })?;
        if class >= m {
            return Err(Error::CorruptBundle(format!(
                "{WEIGHTS_FILE}: class index {class} out of range for {m} classes"
            )));
        }
        if std::mem::replace(&mut filled[class], true) {
            return Err(Error::CorruptBundle(format!(
                "{WEIGHTS_FILE}: class {class} listed twice"
            )));
        }
        let values: Vec<f64> = record[1]
            .split(';')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::CorruptBundle(format!("{WEIGHTS_FILE}: bad weight {t:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::CorruptBundle(format!(
                "{WEIGHTS_FILE}: class {class} has {} weights, weight_dim is {dim}",
                values.len()
            )));
        }
        out.row_mut(class)
            .iter_mut()
            .zip(values)
            .for_each(|(o, v)| *o = v);
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        return Err(Error::CorruptBundle(format!(
            "{WEIGHTS_FILE}: no row for class {missing}"
        )));
    }
    Ok(out)
}

/// Writes `bundle` into `dir` (created if needed). Loading the result yields an equal bundle.
pub fn write_bundle(bundle: &TraceBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let neuron_labels = if bundle.neurons.iter().all(|n| n.label.is_none()) {
        None
    } else {
        Some(
            bundle
                .neurons
                .iter()
                .map(|n| n.label.clone().unwrap_or_default())
                .collect(),
        )
    };
    let meta = BundleMeta {
        schema_version: SCHEMA_VERSION,
        task_kind: bundle.task_kind,
        n_neurons: bundle.n_neurons(),
        n_images: bundle.n_images(),
        classes: bundle.classes.iter().map(|c| c.name.clone()).collect(),
        layers: bundle.layers(),
        has_weights: bundle.weight_vectors.is_some(),
        weight_dim: bundle.weight_vectors.as_ref().map(|w| w.ncols()),
        neuron_labels,
        label: bundle.convention.clone(),
    };
    let meta_path = dir.join(META_FILE);
    let mut meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    meta_json.push('\n');
    fs::write(&meta_path, meta_json).map_err(|e| Error::io(&meta_path, e))?;

    let mut payload = Vec::with_capacity(bundle.activations.len() * 4);
    for row in bundle.activations.rows() {
        for v in row {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let act_path = dir.join(ACTIVATIONS_FILE);
    fs::write(&act_path, payload).map_err(|e| Error::io(&act_path, e))?;

    let pred_path = dir.join(PREDICTIONS_FILE);
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    writer
        .write_record(["image_id", "predicted", "true"])
        .map_err(csv_err)?;
    for img in &bundle.images {
        writer
            .write_record([
                img.image_id.as_str(),
                &join_labels(&img.predicted_labels),
                &join_labels(&img.true_labels),
            ])
            .map_err(csv_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(&pred_path, bytes).map_err(|e| Error::io(&pred_path, e))?;

    let weights_path = dir.join(WEIGHTS_FILE);
    if let Some(w) = &bundle.weight_vectors {
        let mut text = String::new();
        for (class, row) in w.rows().into_iter().enumerate() {
            let joined = row
                .iter()
                .map(|v| format!("{v:?}"))
                .collect::<Vec<_>>()
                .join(";");
            text.push_str(&format!("{class},{joined}\n"));
        }
        fs::write(&weights_path, text).map_err(|e| Error::io(&weights_path, e))?;
    } else if weights_path.exists() {
        fs::remove_file(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    ByPredicted,
    ByTrue,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::ByPredicted => "by_predicted",
            Grouping::ByTrue => "by_true",
        })
    }
}

/// Activation row indices per class. Classes without members keep an empty list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassGroups {
    members: Vec<Vec<usize>>,
}

impl ClassGroups {
    pub fn from_members(members: Vec<Vec<usize>>) -> Self {
        ClassGroups { members }
    }

    pub fn n_classes(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn empty_classes(&self) -> Vec<usize> {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.is_empty())
            .map(|(c, _)| c)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.members.iter().enumerate().map(|(c, m)| (c, m.as_slice()))
    }
}

pub fn group_images_by_class(bundle: &TraceBundle, grouping: Grouping) -> Result<ClassGroups> {
    if grouping == Grouping::ByTrue && !bundle.has_true_labels() {
        return Err(Error::NoLabels);
    }
    let mut members = vec![Vec::new(); bundle.n_classes()];
    for img in &bundle.images {
        let labels = match grouping {
            Grouping::ByPredicted => &img.predicted_labels,
            Grouping::ByTrue => &img.true_labels,
        };
        for &c in labels {
            members[c].push(img.activation_row_index);
        }
    }
    Ok(ClassGroups { members })
}
