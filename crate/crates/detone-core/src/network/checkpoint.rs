//! Versioned binary serialization of a trained (or in-training) model.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   "SADCNN01"                          8 bytes
//! version u32 (currently 1)
//! header  p, q, r, m, k, stage, reserved      7 x u32
//! weights per subnet (IRS, ISMP, RS), per layer:
//!         cout, cin, kh, kw                   4 x u32
//!         weight array                        cout*cin*kh*kw x f32
//!         bias array                          cout x f32
//! step    u64 optimizer-step counter
//! seed    u64 master seed
//! crc     CRC32 of all preceding bytes
//! ```
//!
//! The reserved header field doubles as the concatenation-order tag;
//! 0 means (halftone, initial, structure map).

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::fmt;

use crate::container::{self, ContainerError, Reader};
use crate::tensor::{ConvParams, Dims, Tensor};

use super::{build_subnet, NetworkError, NetworkSpec, StructureAwareNet, Subnet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SADCNN01";
pub const CHECKPOINT_VERSION: u32 = 1;
const CONCAT_ORDER_TAG: u32 = 0;

/// Which phase of the training schedule produced the weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Only the initial-reconstruction subnet has been trained; the other
    /// two hold their freshly initialized weights.
    IrsPretrained,
    /// The whole network has been trained jointly.
    EndToEnd,
}

impl Stage {
    fn to_u32(self) -> u32 {
        match self {
            Stage::IrsPretrained => 0,
            Stage::EndToEnd => 1,
        }
    }

    fn from_u32(v: u32) -> Option<Stage> {
        match v {
            0 => Some(Stage::IrsPretrained),
            1 => Some(Stage::EndToEnd),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::IrsPretrained => write!(f, "irs-pretrained"),
            Stage::EndToEnd => write!(f, "end-to-end"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CheckpointError {
    Container(ContainerError),
    BadStage { got: u32 },
    BadConcatOrder { got: u32 },
    /// The embedded depths/width/kernel do not form a valid model.
    InvalidSpec(NetworkError),
    /// A stored layer's shape contradicts the embedded spec.
    LayerShape {
        subnet: &'static str,
        layer: usize,
        expected: Dims,
        got: Dims,
    },
    /// Bytes remain after the declared contents; offset of the first one.
    TrailingBytes { offset: usize },
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Container(e) => write!(f, "{e}"),
            CheckpointError::BadStage { got } => write!(f, "unknown training stage id {got}"),
            CheckpointError::BadConcatOrder { got } => {
                write!(f, "unknown concatenation-order tag {got}")
            }
            CheckpointError::InvalidSpec(e) => write!(f, "embedded spec is invalid: {e}"),
            CheckpointError::LayerShape {
                subnet,
                layer,
                expected,
                got,
            } => write!(
                f,
                "{subnet} layer {layer} stores shape {got}, spec requires {expected}"
            ),
            CheckpointError::TrailingBytes { offset } => {
                write!(f, "unexpected trailing bytes at offset {offset}")
            }
        }
    }
}

impl core::error::Error for CheckpointError {}

impl From<ContainerError> for CheckpointError {
    fn from(e: ContainerError) -> Self {
        CheckpointError::Container(e)
    }
}

/// A model plus the training state needed to resume: stage, optimizer
/// step count within that stage, and the master seed.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: StructureAwareNet<f32>,
    pub stage: Stage,
    pub step: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(net: StructureAwareNet<f32>, stage: Stage, step: u64, seed: u64) -> Self {
        Checkpoint {
            net,
            stage,
            step,
            seed,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.net.spec();
        let mut payload = Vec::new();
        for v in [
            spec.irs.depth as u32,
            spec.ismp.depth as u32,
            spec.rs.depth as u32,
            spec.hidden() as u32,
            spec.kernel() as u32,
            self.stage.to_u32(),
            CONCAT_ORDER_TAG,
        ] {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        for subnet in [self.net.irs(), self.net.ismp(), self.net.rs()] {
            for layer in subnet.layers() {
                let d = layer.weights().dims();
                for v in [d.n as u32, d.c as u32, d.h as u32, d.w as u32] {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                for w in layer.weights().data() {
                    payload.extend_from_slice(&w.to_le_bytes());
                }
                for b in layer.bias() {
                    payload.extend_from_slice(&b.to_le_bytes());
                }
            }
        }
        payload.extend_from_slice(&self.step.to_le_bytes());
        payload.extend_from_slice(&self.seed.to_le_bytes());
        container::seal(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let payload = container::unseal(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, bytes)?;
        let mut r = Reader::new(payload, 12);
        let p = r.u32()? as usize;
        let q = r.u32()? as usize;
        let depth_rs = r.u32()? as usize;
        let m = r.u32()? as usize;
        let k = r.u32()? as usize;
        let stage_raw = r.u32()?;
        let reserved = r.u32()?;
        let stage = Stage::from_u32(stage_raw).ok_or(CheckpointError::BadStage { got: stage_raw })?;
        if reserved != CONCAT_ORDER_TAG {
            return Err(CheckpointError::BadConcatOrder { got: reserved });
        }
        let spec =
            NetworkSpec::new(p, q, depth_rs, m, k).map_err(CheckpointError::InvalidSpec)?;
        let irs = read_subnet(&mut r, "initial-reconstruction subnet", &spec.irs)?;
        let ismp = read_subnet(&mut r, "structure-map subnet", &spec.ismp)?;
        let rs = read_subnet(&mut r, "final-reconstruction subnet", &spec.rs)?;
        let step = r.u64()?;
        let seed = r.u64()?;
        if r.remaining() != 0 {
            return Err(CheckpointError::TrailingBytes { offset: r.offset() });
        }
        Ok(Checkpoint {
            net: StructureAwareNet::from_parts(spec, irs, ismp, rs),
            stage,
            step,
            seed,
        })
    }
}

fn read_subnet(
    r: &mut Reader<'_>,
    name: &'static str,
    spec: &super::SubnetSpec,
) -> Result<Subnet<f32>, CheckpointError> {
    // Start from a correctly shaped zero net and overwrite its layers.
    let mut subnet = build_subnet::<f32>(spec, 0);
    for (index, slot) in subnet.layers_mut().iter_mut().enumerate() {
        let (cin, cout) = spec.layer_io(index);
        let expected = Dims::new(cout, cin, spec.kernel, spec.kernel);
        let n = r.u32()? as usize;
        let c = r.u32()? as usize;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let got = Dims::new(n, c, h, w);
        if got != expected {
            return Err(CheckpointError::LayerShape {
                subnet: name,
                layer: index,
                expected,
                got,
            });
        }
        let weights = r.f32_slice(expected.count())?;
        let bias = r.f32_slice(cout)?;
        *slot = ConvParams::new(
            Tensor::from_vec(expected, weights).expect("length enforced by reader"),
            bias,
        )
        .expect("shape validated against spec");
    }
    Ok(subnet)
}

/// Validate that a checkpoint's architecture matches an expected spec
/// (used when resuming training under a configured spec).
pub fn ensure_spec_matches(
    checkpoint: &Checkpoint,
    expected: &NetworkSpec,
) -> Result<(), Box<CheckpointError>> {
    if checkpoint.net.spec() != expected {
        // Report the first differing layer shape for a concrete message.
        let got = checkpoint.net.spec();
        let expected_dims = Dims::new(
            expected.irs.layer_io(0).1,
            expected.irs.layer_io(0).0,
            expected.kernel(),
            expected.kernel(),
        );
        let got_dims = Dims::new(
            got.irs.layer_io(0).1,
            got.irs.layer_io(0).0,
            got.kernel(),
            got.kernel(),
        );
        return Err(Box::new(CheckpointError::LayerShape {
            subnet: "initial-reconstruction subnet",
            layer: 0,
            expected: expected_dims,
            got: got_dims,
        }));
    }
    Ok(())
}
