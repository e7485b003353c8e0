use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Graph, Label, Split, Task};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Sidecar declaring the task of a JSONL dataset.
///
/// ```toml
/// task = "multiclass"   # binary | multiclass | regression
/// num_classes = 20      # multiclass only
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

impl DatasetMeta {
    pub fn from_task(task: Task) -> Self {
        match task {
            Task::Binary => Self {
                task: "binary".into(),
                num_classes: None,
            },
            Task::Multiclass(c) => Self {
                task: "multiclass".into(),
                num_classes: Some(c),
            },
            Task::Regression => Self {
                task: "regression".into(),
                num_classes: None,
            },
        }
    }

    pub fn to_task(&self) -> Result<Task> {
        match (self.task.as_str(), self.num_classes) {
            ("binary", None | Some(2)) => Ok(Task::Binary),
            ("multiclass", Some(c)) if c >= 2 => Ok(Task::Multiclass(c)),
            ("multiclass", _) => Err(Error::Config("multiclass task needs num_classes >= 2".into())),
            ("regression", _) => Ok(Task::Regression),
            (other, _) => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

/// `data.jsonl` → `data.meta.toml`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.toml")
}

pub fn read_meta(path: &Path) -> Result<DatasetMeta> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_meta(path: &Path, meta: &DatasetMeta) -> Result<()> {
    let text = toml::to_string(meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    node_feat: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_feat: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    graphs: Vec<GraphRecord>,
    label: serde_json::Number,
    split: String,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    graphs: Vec<GraphRecord>,
    label: serde_json::Value,
    split: &'a str,
}

fn matrix(rows: &[Vec<f64>], expect_rows: usize, what: &str) -> Result<Tensor> {
    if rows.len() != expect_rows {
        return Err(Error::InvalidGraph(format!(
            "{what} has {} rows, expected {expect_rows}",
            rows.len()
        )));
    }
    if rows.is_empty() {
        return Ok(Tensor::zeros(0, 0));
    }
    Tensor::from_rows(rows).map_err(|_| Error::InvalidGraph(format!("{what} rows have unequal length")))
}

fn graph_from_record(rec: GraphRecord) -> Result<Graph> {
    let node_feat = matrix(&rec.node_feat, rec.num_nodes, "node_feat")?;
    let edge_feat = rec
        .edge_feat
        .as_deref()
        .map(|ef| matrix(ef, rec.edges.len(), "edge_feat"))
        .transpose()?;
    let edges = rec.edges.iter().map(|e| (e[0], e[1])).collect();
    Graph::new(rec.num_nodes, edges, node_feat, edge_feat)
}

fn graph_to_record(g: &Graph) -> GraphRecord {
    let rows = |t: &Tensor| (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect();
    GraphRecord {
        num_nodes: g.num_nodes(),
        edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
        node_feat: rows(g.node_feat()),
        edge_feat: g.edge_feat().map(rows),
    }
}

fn parse_label(num: &serde_json::Number, task: Task) -> Result<Label> {
    match task {
        Task::Regression => num
            .as_f64()
            .map(Label::Value)
            .ok_or_else(|| Error::InvalidDataset(format!("label {num} is not a real number"))),
        _ => num
            .as_u64()
            .and_then(|c| u32::try_from(c).ok())
            .map(Label::Class)
            .ok_or_else(|| Error::InvalidDataset(format!("label {num} is not a class index"))),
    }
}

/// Parses JSONL records from `reader`. Example ids follow line order,
/// counting only non-blank lines.
pub fn parse_jsonl(reader: impl BufRead, task: Task) -> Result<Dataset> {
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut dims: Option<(usize, Option<usize>)> = None;
    let mut next_id = 0u64;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let at = |e: Error| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        };
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: format!("malformed JSON: {e}"),
        })?;
        let split: Split = rec.split.parse().map_err(at)?;
        let label = parse_label(&rec.label, task).map_err(at)?;
        task.check_label(&label).map_err(at)?;
        let graphs = rec
            .graphs
            .into_iter()
            .map(graph_from_record)
            .collect::<Result<Vec<_>>>()
            .map_err(at)?;
        let example = Example::new(next_id, graphs, label).map_err(at)?;
        let g0 = &example.graphs[0];
        let here = (g0.node_dim(), g0.edge_dim());
        match dims {
            None => dims = Some(here),
            Some(d) if d != here => {
                return Err(at(Error::InvalidDataset(format!(
                    "feature dimensions {here:?} differ from earlier lines {d:?}"
                ))))
            }
            _ => {}
        }
        next_id += 1;
        match split {
            Split::Train => train.push(example),
            Split::Valid => valid.push(example),
            Split::Test => test.push(example),
        }
    }
    Dataset::new(task, train, valid, test)
}

/// Loads `path` using the task declared in its `.meta.toml` sidecar.
pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    let meta = read_meta(&meta_path(path))?;
    load_jsonl_with_meta(path, &meta)
}

pub fn load_jsonl_with_meta(path: &Path, meta: &DatasetMeta) -> Result<Dataset> {
    let task = meta.to_task()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file), task)
}

/// Writes one line per example in id order, plus the sidecar.
pub fn write_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (split, ex) in dataset.iter_by_id() {
        let label = match ex.label {
            Label::Class(c) => serde_json::Value::from(c),
            Label::Value(v) => serde_json::Value::from(v),
        };
        let rec = RecordOut {
            graphs: ex.graphs.iter().map(graph_to_record).collect(),
            label,
            split: split.as_str(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    write_meta(&meta_path(path), &DatasetMeta::from_task(dataset.task()))
}
