//! Graph encoders (GCN and GIN), readout and the task head.

mod batch;
mod layers;
mod loss;
mod model;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::GraphBatch;
pub use layers::{encode_input, gcn_layer, gin_layer, readout, BnArgs, GinEps, GinMlp, Readout};
pub use loss::{argmax, batch_loss, phase1_loss, Prediction};
pub use model::{task_head, ForwardOut, GnnModel, Inference};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GnnKind {
    Gcn,
    #[default]
    Gin,
}

impl std::str::FromStr for GnnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(GnnKind::Gcn),
            "gin" => Ok(GnnKind::Gin),
            other => Err(Error::Config(format!("unknown gnn kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    pub kind: GnnKind,
    pub layers: usize,
    pub hidden_dim: usize,
    pub readout: Readout,
    pub use_edge_feat: bool,
    pub gin_eps: f64,
    pub learn_eps: bool,
    pub batch_norm: bool,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            kind: GnnKind::Gin,
            layers: 3,
            hidden_dim: 64,
            readout: Readout::Sum,
            use_edge_feat: true,
            gin_eps: 0.0,
            learn_eps: false,
            batch_norm: true,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("gnn needs at least one layer".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if !self.gin_eps.is_finite() {
            return Err(Error::Config("gin_eps must be finite".into()));
        }
        Ok(())
    }
}
