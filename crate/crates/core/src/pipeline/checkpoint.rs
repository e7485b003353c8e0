//! Single-file binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "GRCK" | u32 version
//! str config (TOML) | u64 seed | str index reference
//! u8 task kind | u32 classes | u32 node_dim | u32 edge_dim + 1 (0 = none) | u32 graphs_per_example
//! blobs model parameters
//! u32 batch-norm layers, each: u32 features, f64 running means, f64 running variances
//! u8 has_adapter [blobs adapter parameters]
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8; `blobs` is a u32 count
//! followed by `str name, u32 rows, u32 cols, rows * cols f64`.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::adapter::AdapterParams;
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::gnn::GnnModel;
use crate::graph::Task;

const MAGIC: &[u8; 4] = b"GRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub seed: u64,
    /// Index file, relative to the checkpoint's directory.
    pub index_ref: String,
    pub model: GnnModel,
    pub adapter: Option<AdapterParams>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, CHECKPOINT_VERSION);
        put_str(&mut w, &self.config.to_toml_string()?);
        w.extend_from_slice(&self.seed.to_le_bytes());
        put_str(&mut w, &self.index_ref);
        let m = &self.model;
        let (kind, classes) = match m.task() {
            Task::Binary => (0u8, 2),
            Task::Multiclass(c) => (1, c as u32),
            Task::Regression => (2, 0),
        };
        w.push(kind);
        put_u32(&mut w, classes);
        put_u32(&mut w, m.node_dim() as u32);
        put_u32(&mut w, m.edge_dim().map_or(0, |d| d as u32 + 1));
        put_u32(&mut w, m.graphs_per_example() as u32);
        put_blobs(&mut w, m.params());
        put_u32(&mut w, m.bn_states().len() as u32);
        for s in m.bn_states() {
            put_u32(&mut w, s.features() as u32);
            for v in s.running_mean.iter().chain(&s.running_var) {
                w.extend_from_slice(&v.to_le_bytes());
            }
        }
        match &self.adapter {
            Some(a) => {
                w.push(1);
                put_blobs(&mut w, a.store());
            }
            None => w.push(0),
        }
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |msg: String| Error::Format {
            path: path.to_path_buf(),
            msg,
        };
        let mut r = Reader { bytes, pos: 0 };
        let t = |what: &str| fail(format!("truncated while reading {what}"));
        if r.take(4).ok_or_else(|| t("magic"))? != MAGIC {
            return Err(fail("bad magic, not a checkpoint".into()));
        }
        let version = r.u32().ok_or_else(|| t("version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported checkpoint version {version}")));
        }
        let config = RunConfig::from_toml_str(&r.string().ok_or_else(|| t("config"))?)
            .map_err(|e| fail(e.to_string()))?;
        let seed = r.u64().ok_or_else(|| t("seed"))?;
        let index_ref = r.string().ok_or_else(|| t("index reference"))?;
        let kind = r.u8().ok_or_else(|| t("task"))?;
        let classes = r.u32().ok_or_else(|| t("task"))? as usize;
        let task = match kind {
            0 => Task::Binary,
            1 => Task::Multiclass(classes),
            2 => Task::Regression,
            k => return Err(fail(format!("unknown task kind {k}"))),
        };
        let node_dim = r.u32().ok_or_else(|| t("model header"))? as usize;
        let edge_dim = match r.u32().ok_or_else(|| t("model header"))? {
            0 => None,
            d => Some(d as usize - 1),
        };
        let gpe = r.u32().ok_or_else(|| t("model header"))? as usize;
        let mut model = GnnModel::new(config.model.clone(), task, node_dim, edge_dim, gpe, 0)
            .map_err(|e| fail(e.to_string()))?;
        let blobs = r.blobs().ok_or_else(|| t("model parameters"))?;
        if blobs.len() != model.params().len() {
            return Err(fail(format!(
                "{} model parameters stored, config implies {}",
                blobs.len(),
                model.params().len()
            )));
        }
        for (name, tensor) in blobs {
            model.params_mut().set(&name, tensor).map_err(|e| fail(e.to_string()))?;
        }
        let layers = r.u32().ok_or_else(|| t("batch norm"))? as usize;
        if layers != model.bn_states().len() {
            return Err(fail(format!("{layers} batch-norm layers stored, config implies {}", model.bn_states().len())));
        }
        for state in model.bn_states_mut() {
            let f = r.u32().ok_or_else(|| t("batch norm"))? as usize;
            if f != state.features() {
                return Err(fail(format!("batch norm width {f}, expected {}", state.features())));
            }
            for v in state.running_mean.iter_mut() {
                *v = r.f64().ok_or_else(|| t("batch norm"))?;
            }
            for v in state.running_var.iter_mut() {
                *v = r.f64().ok_or_else(|| t("batch norm"))?;
            }
        }
        let adapter = match r.u8().ok_or_else(|| t("adapter flag"))? {
            0 => None,
            1 => {
                let mut blobs = r.blobs().ok_or_else(|| t("adapter parameters"))?;
                if blobs.len() != 3 {
                    return Err(fail(format!("adapter has {} tensors, expected 3", blobs.len())));
                }
                let phi = blobs.pop().expect("len 3").1;
                let w2 = blobs.pop().expect("len 3").1;
                let w1 = blobs.pop().expect("len 3").1;
                let a = AdapterParams::from_tensors(w1, w2, phi).map_err(|e| fail(e.to_string()))?;
                if a.dim() != model.embedding_dim() {
                    return Err(fail(format!(
                        "adapter dimension {} does not match model embedding {}",
                        a.dim(),
                        model.embedding_dim()
                    )));
                }
                Some(a)
            }
            f => return Err(fail(format!("bad adapter flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(fail("trailing bytes".into()));
        }
        Ok(Self {
            config,
            seed,
            index_ref,
            model,
            adapter,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Index path resolved against the checkpoint's directory.
    pub fn index_path(&self, checkpoint_path: &Path) -> PathBuf {
        checkpoint_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&self.index_ref)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

fn put_blobs(w: &mut Vec<u8>, store: &ParamStore) {
    put_u32(w, store.len() as u32);
    for (name, t) in store.names().iter().zip(store.tensors()) {
        put_str(w, name);
        put_u32(w, t.rows() as u32);
        put_u32(w, t.cols() as u32);
        for v in t.data() {
            w.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        Some(self.take(1)?[0])
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn string(&mut self) -> Option<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }

    fn blobs(&mut self) -> Option<Vec<(String, Tensor)>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = self.string()?;
            let rows = self.u32()? as usize;
            let cols = self.u32()? as usize;
            let data = (0..rows.checked_mul(cols)?).map(|_| self.f64()).collect::<Option<Vec<_>>>()?;
            out.push((name, Tensor::new(rows, cols, data).ok()?));
        }
        Some(out)
    }
}
