//! JSON model checkpoints.
//!
//! A checkpoint stores the topology (dims, per-layer grid size, degree and
//! domain, residual flags) and every coefficient vector in declared layer
//! order. Floats are written in shortest round-trip form, so save/load is
//! value-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{KanBlock, KanLayer, ProKanNetwork};
use crate::spline::KnotVector;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    in_dim: usize,
    out_dim: usize,
    grid_size: usize,
    degree: usize,
    domain_min: f64,
    domain_max: f64,
    coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    residual: bool,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format_version: u32,
    input_dim: usize,
    hidden_width: usize,
    blocks: Vec<BlockDoc>,
    output_head: LayerDoc,
}

impl From<&KanLayer> for LayerDoc {
    fn from(l: &KanLayer) -> Self {
        let (domain_min, domain_max) = l.knots().domain();
        Self {
            in_dim: l.in_dim(),
            out_dim: l.out_dim(),
            grid_size: l.grid_size(),
            degree: l.degree(),
            domain_min,
            domain_max,
            coefficients: l.coefficients().to_vec(),
        }
    }
}

impl LayerDoc {
    fn into_layer(self) -> Result<KanLayer> {
        let knots = KnotVector::uniform(self.domain_min, self.domain_max, self.grid_size, self.degree)?;
        KanLayer::from_parts(self.in_dim, self.out_dim, knots, self.coefficients)
    }
}

pub fn to_json(net: &ProKanNetwork) -> String {
    let doc = CheckpointDoc {
        format_version: CHECKPOINT_VERSION,
        input_dim: net.input_dim(),
        hidden_width: net.hidden_width(),
        blocks: net
            .blocks()
            .iter()
            .map(|b| BlockDoc {
                residual: b.is_residual(),
                layers: b.layers().iter().map(LayerDoc::from).collect(),
            })
            .collect(),
        output_head: net.output_head().into(),
    };
    serde_json::to_string_pretty(&doc).expect("checkpoint serialization cannot fail")
}

pub fn from_json(text: &str) -> Result<ProKanNetwork> {
    // Check the version before the full schema so old files get a clear error.
    let probe: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    match probe.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: u32::try_from(v).unwrap_or(u32::MAX),
            })
        }
        None => return Err(Error::Checkpoint("missing format_version".into())),
    }
    let doc: CheckpointDoc = serde_json::from_value(probe).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let blocks = doc
        .blocks
        .into_iter()
        .map(|b| {
            let layers = b.layers.into_iter().map(LayerDoc::into_layer).collect::<Result<Vec<_>>>()?;
            KanBlock::new(layers, b.residual)
        })
        .collect::<Result<Vec<_>>>()?;
    ProKanNetwork::from_parts(doc.input_dim, doc.hidden_width, blocks, doc.output_head.into_layer()?)
}

pub fn save(path: impl AsRef<Path>, net: &ProKanNetwork) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ProKanNetwork> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
