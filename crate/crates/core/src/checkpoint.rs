//! Checkpoint container.
//!
//! Binary framing, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "IVTCKPT\0"
//! version u32
//! hlen    u64      length of the JSON header
//! header  hlen     UTF-8 JSON: metadata, layouts and a section table
//! payload          f64 sections in table order
//! ```
//!
//! Every float travels as raw IEEE-754 bits, so a round trip is exact. The
//! JSON text export carries the same content for inspection and also round
//! trips exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{FisherDiagonal, FisherLedger};
use crate::paramspace::{ClassId, OptimizerKind, OptimizerState, ParamLayout, ParamVector};

pub const MAGIC: &[u8; 8] = b"IVTCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub task_id: usize,
    pub seed: u64,
    pub config_digest: Option<String>,
    pub params: ParamVector,
    pub optimizer: Option<OptimizerState>,
    pub ledger: FisherLedger,
}

#[derive(Debug, Serialize, Deserialize)]
struct Section {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerMeta {
    kind: OptimizerKind,
    steps: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    task_id: usize,
    seed: u64,
    config_digest: Option<String>,
    layout: ParamLayout,
    head_init_classes: Vec<ClassId>,
    optimizer: Option<OptimizerMeta>,
    /// Commit order and layout of each per-task Fisher diagonal.
    fisher_tasks: Vec<(usize, ParamLayout)>,
    sections: Vec<Section>,
}

fn push_section(sections: &mut Vec<Section>, payload: &mut Vec<u8>, name: String, values: &[f64]) {
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    sections.push(Section {
        name,
        len: values.len(),
    });
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut sections = Vec::new();
        let mut payload = Vec::new();
        push_section(
            &mut sections,
            &mut payload,
            "params".into(),
            self.params.values(),
        );
        for (c, col) in self.params.head_init() {
            push_section(&mut sections, &mut payload, format!("head_init/{c}"), col);
        }
        if let Some(o) = &self.optimizer {
            push_section(
                &mut sections,
                &mut payload,
                "optimizer/first".into(),
                &o.first,
            );
            push_section(
                &mut sections,
                &mut payload,
                "optimizer/second".into(),
                &o.second,
            );
        }
        let mut fisher_tasks = Vec::new();
        for &id in self.ledger.commit_order() {
            let f = &self.ledger.per_task()[&id];
            push_section(
                &mut sections,
                &mut payload,
                format!("fisher/{id}"),
                f.values(),
            );
            fisher_tasks.push((id, f.layout().clone()));
        }
        let header = Header {
            task_id: self.task_id,
            seed: self.seed,
            config_digest: self.config_digest.clone(),
            layout: self.params.layout().clone(),
            head_init_classes: self.params.head_init().keys().copied().collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerMeta {
                kind: o.kind,
                steps: o.steps,
            }),
            fisher_tasks,
            sections,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let mut rest = &body[hlen..];
        let mut data: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for s in &header.sections {
            let n = s
                .len
                .checked_mul(8)
                .ok_or_else(|| bad("section too large"))?;
            if rest.len() < n {
                return Err(bad(format!("truncated section {}", s.name)));
            }
            let values = rest[..n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            rest = &rest[n..];
            data.insert(s.name.clone(), values);
        }
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        let mut take = |name: &str| {
            data.remove(name)
                .ok_or_else(|| bad(format!("missing section {name}")))
        };

        let params_values = take("params")?;
        let mut head_init = BTreeMap::new();
        for &c in &header.head_init_classes {
            head_init.insert(c, take(&format!("head_init/{c}"))?);
        }
        let params = ParamVector::with_head_init(header.layout, params_values, head_init)?;
        let optimizer = match header.optimizer {
            Some(meta) => Some(OptimizerState {
                kind: meta.kind,
                steps: meta.steps,
                first: take("optimizer/first")?,
                second: take("optimizer/second")?,
            }),
            None => None,
        };
        let mut ledger = FisherLedger::new();
        for (id, layout) in header.fisher_tasks {
            ledger.commit_task(
                id,
                FisherDiagonal::new(layout, take(&format!("fisher/{id}"))?)?,
            )?;
        }
        Ok(Checkpoint {
            task_id: header.task_id,
            seed: header.seed,
            config_digest: header.config_digest,
            params,
            optimizer,
            ledger,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    /// Pretty JSON with shortest round-trip float formatting.
    pub fn to_json_text(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_text(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
