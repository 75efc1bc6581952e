//! Versioned binary checkpoint of a learner, optionally with base heads.
//!
//! All integers and reals are little-endian. Network parameters are stored as
//! `f32`; statistics and prototypes as `f64`.
//!
//! ```text
//! magic "PCKP" | version u32 = 1 | flags u32 (bit 0: heads present)
//! session_index u32 | lambda f64 | var_floor f64
//! net(projection)
//! [head kind u32 (0 CE, 1 SC) | temperature f64 | net(head)] × 2   if bit 0
//! n_classes u32
//! n_classes × { class_id u32 | session u32 | count u64
//!               | mean f64×d_in | m2 f64×d_in | prototype f64×d_hyper }
//!
//! net := n_layers u32 | dims u32×(n_layers+1) | per layer: weight f32×(out·in), bias f32×out
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::base_trainer::BaseHeads;
use crate::calibration::{CalibrationConfig, ClassStats};
use crate::error::{CheckpointError, Error, Result};
use crate::online::{ClassRecord, LearnerState};
use crate::projection::{Dense, LossHead, LossKind, Mlp, ProjectionModule};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const FLAG_HEADS: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: LearnerState,
    pub heads: Option<BaseHeads>,
}

/// Byte accounting of a serialized learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateAccounting {
    /// Class means and squared-deviation sums, 8 bytes per value.
    pub stats_bytes: u64,
    /// Hyperdimensional prototypes, 8 bytes per value.
    pub prototype_bytes: u64,
    /// Projection parameters, 4 bytes per value.
    pub parameter_bytes: u64,
    /// Loss-head parameters, 4 bytes per value; zero for a bare learner.
    pub head_parameter_bytes: u64,
    /// Header, layer shapes, class ids, sessions and counts.
    pub framing_bytes: u64,
}

impl StateAccounting {
    pub fn total(&self) -> u64 {
        self.stats_bytes + self.prototype_bytes + self.parameter_bytes + self.head_parameter_bytes + self.framing_bytes
    }

    /// Statistics, prototypes and projection parameters, without framing.
    pub fn payload(&self) -> u64 {
        self.stats_bytes + self.prototype_bytes + self.parameter_bytes
    }
}

fn net_framing(net: &Mlp) -> u64 {
    4 + 4 * (net.layers.len() as u64 + 1)
}

pub fn accounting(state: &LearnerState, heads: Option<&BaseHeads>) -> StateAccounting {
    let n = state.classes.len() as u64;
    let d_in = state.feature_dim() as u64;
    let d_hyper = state.d_hyper() as u64;
    let mut framing = 4 + 4 + 4 + 4 + 8 + 8 + net_framing(state.projection.net()) + 4 + n * (4 + 4 + 8);
    let mut head_params = 0;
    if let Some(h) = heads {
        for head in [&h.vp, &h.hp] {
            framing += 4 + 8 + net_framing(&head.net);
            head_params += 4 * head.net.param_count() as u64;
        }
    }
    StateAccounting {
        stats_bytes: n * 2 * d_in * 8,
        prototype_bytes: n * d_hyper * 8,
        parameter_bytes: 4 * state.projection.param_count() as u64,
        head_parameter_bytes: head_params,
        framing_bytes: framing,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
    fn f32s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.0.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fn net(&mut self, net: &Mlp) {
        self.u32(net.layers.len() as u32);
        for d in net.dims() {
            self.u32(d as u32);
        }
        for l in &net.layers {
            self.f32s(&l.weight);
            self.f32s(&l.bias);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated { offset: self.bytes.len() })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| malformed("length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| malformed("length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect())
    }
    fn net(&mut self) -> Result<Mlp> {
        let n_layers = self.u32()? as usize;
        if n_layers == 0 {
            return Err(malformed("network with no layers"));
        }
        let mut dims = Vec::with_capacity(n_layers + 1);
        for _ in 0..=n_layers {
            dims.push(self.u32()? as usize);
        }
        let mut layers = Vec::with_capacity(n_layers);
        for w in dims.windows(2) {
            let (i, o) = (w[0], w[1]);
            let count = i.checked_mul(o).ok_or_else(|| malformed("layer size overflow"))?;
            let weight = self.f32s(count)?;
            let bias = self.f32s(o)?;
            layers.push(Dense {
                in_dim: i,
                out_dim: o,
                weight,
                bias,
            });
        }
        Mlp::new(layers).map_err(|e| malformed(&e.to_string()))
    }
}

fn malformed(msg: &str) -> Error {
    CheckpointError::Malformed(msg.to_string()).into()
}

impl Checkpoint {
    pub fn new(state: LearnerState, heads: Option<BaseHeads>) -> Self {
        Checkpoint { state, heads }
    }

    pub fn accounting(&self) -> StateAccounting {
        accounting(&self.state, self.heads.as_ref())
    }

    pub fn encode(&self) -> Vec<u8> {
        let s = &self.state;
        let mut w = Writer(Vec::with_capacity(self.accounting().total() as usize));
        w.0.extend_from_slice(&CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u32(if self.heads.is_some() { FLAG_HEADS } else { 0 });
        w.u32(s.session_index);
        w.f64(s.calibration.lambda);
        w.f64(s.calibration.var_floor);
        w.net(s.projection.net());
        if let Some(h) = &self.heads {
            for head in [&h.vp, &h.hp] {
                w.u32(match head.kind {
                    LossKind::Ce => 0,
                    LossKind::Sc => 1,
                });
                w.f64(head.temperature);
                w.net(&head.net);
            }
        }
        w.u32(s.classes.len() as u32);
        for (&id, r) in &s.classes {
            w.u32(id);
            w.u32(r.session);
            w.u64(r.stats.count);
            w.f64s(&r.stats.mean);
            w.f64s(&r.stats.m2);
            w.f64s(&r.prototype);
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 4 && bytes[..4] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic {
                found: bytes[..4].try_into().expect("4 bytes"),
            }
            .into());
        }
        let mut r = Reader { bytes, pos: 0 };
        r.take(4)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version }.into());
        }
        let flags = r.u32()?;
        if flags & !FLAG_HEADS != 0 {
            return Err(malformed(&format!("unknown flags {flags:#x}")));
        }
        let session_index = r.u32()?;
        let calibration = CalibrationConfig {
            lambda: r.f64()?,
            var_floor: r.f64()?,
        };
        let projection = ProjectionModule::from_net(r.net()?);
        let heads = if flags & FLAG_HEADS != 0 {
            let read_head = |r: &mut Reader| -> Result<LossHead> {
                let kind = match r.u32()? {
                    0 => LossKind::Ce,
                    1 => LossKind::Sc,
                    k => return Err(malformed(&format!("unknown head kind {k}"))),
                };
                let temperature = r.f64()?;
                Ok(LossHead {
                    kind,
                    net: r.net()?,
                    temperature,
                })
            };
            let vp = read_head(&mut r)?;
            let hp = read_head(&mut r)?;
            Some(BaseHeads { vp, hp })
        } else {
            None
        };
        let d_in = projection.d_in();
        let d_hyper = projection.d_hyper();
        let n_classes = r.u32()? as usize;
        let mut classes = BTreeMap::new();
        for _ in 0..n_classes {
            let id = r.u32()?;
            let session = r.u32()?;
            let count = r.u64()?;
            let mean = r.f64s(d_in)?;
            let m2 = r.f64s(d_in)?;
            let prototype = r.f64s(d_hyper)?;
            let record = ClassRecord {
                stats: ClassStats {
                    class_id: id,
                    count,
                    mean,
                    m2,
                },
                prototype,
                session,
            };
            if classes.insert(id, record).is_some() {
                return Err(malformed(&format!("class {id} appears twice")));
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos).into());
        }
        Ok(Checkpoint {
            state: LearnerState {
                calibration,
                projection,
                classes,
                session_index,
            },
            heads,
        })
    }

    /// The same checkpoint after an encode/decode cycle, i.e. with network
    /// parameters rounded to their stored precision.
    pub fn quantized(&self) -> Self {
        Checkpoint::decode(&self.encode()).expect("freshly encoded checkpoint decodes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let path = path.as_ref();
        let bytes = self.encode();
        fs::write(path, &bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Checkpoint::decode(&bytes)
    }
}

/// Serialized learner without heads.
pub fn encode_state(state: &LearnerState) -> Vec<u8> {
    Checkpoint::new(state.clone(), None).encode()
}
