//! `MILCKPT1` checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        8 bytes  "MILCKPT1"
//! version      u32      1
//! input_dim    u32
//! n_hidden     u32
//! widths       u32 × n_hidden
//! attention    u32
//! n_classes    u32
//! weights      f32 ×    (hidden W,b pairs, V, w, classifier W, b)
//! seed         u64
//! epochs       u32
//! dropout      f32
//! n_losses     u32
//! losses       f32 × n_losses
//! crc32        u32      over every preceding byte
//! ```

use std::path::Path;

use crate::binfmt::{atomic_write, to_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::model::mil::{MilModel, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MILCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: u32,
    pub dropout: f32,
    pub final_losses: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: MilModel,
    pub metadata: TrainingMetadata,
}

pub fn encode_checkpoint(model: &MilModel, metadata: &TrainingMetadata) -> Result<Vec<u8>> {
    let cfg = model.config();
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(to_u32(cfg.input_dim, "input_dim")?);
    w.u32(to_u32(cfg.hidden.len(), "hidden layer count")?);
    for &h in &cfg.hidden {
        w.u32(to_u32(h, "hidden width")?);
    }
    w.u32(to_u32(cfg.attention_dim, "attention_dim")?);
    w.u32(to_u32(cfg.n_classes, "n_classes")?);
    for p in model.parameters() {
        for &v in p.data() {
            w.f32(v as f32);
        }
    }
    w.u64(metadata.seed);
    w.u32(metadata.epochs);
    w.f32(metadata.dropout);
    w.u32(to_u32(metadata.final_losses.len(), "loss count")?);
    for &l in &metadata.final_losses {
        w.f32(l);
    }
    Ok(w.finish_with_crc())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.position();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(at, format!("unsupported checkpoint version {}", version)));
    }
    let input_dim = r.u32("input_dim")? as usize;
    let at = r.position();
    let n_hidden = r.u32("hidden layer count")? as usize;
    if n_hidden == 0 || n_hidden > 64 {
        return Err(Error::format(
            at,
            format!("implausible hidden layer count {}", n_hidden),
        ));
    }
    let hidden = (0..n_hidden)
        .map(|_| r.u32("hidden width").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let attention_dim = r.u32("attention_dim")? as usize;
    let at = r.position();
    let n_classes = r.u32("n_classes")? as usize;
    let config = ModelConfig {
        input_dim,
        hidden,
        attention_dim,
        n_classes,
    };
    config
        .validate()
        .map_err(|e| Error::format(at, format!("invalid layer dimensions: {}", e)))?;

    let mut params = Vec::new();
    for shape in MilModel::parameter_shapes(&config) {
        let len = shape.iter().product();
        let data = r.f32s(len, "weights")?.into_iter().map(f64::from).collect();
        params.push(Tensor::new(shape, data)?);
    }
    let model = MilModel::from_parameters(config, params)?;

    let seed = r.u64("seed")?;
    let epochs = r.u32("epochs")?;
    let dropout = r.f32("dropout")?;
    let n_losses = r.u32("loss count")? as usize;
    let final_losses = r.f32s(n_losses, "losses")?;
    r.finish_crc()?;
    Ok(Checkpoint {
        model,
        metadata: TrainingMetadata {
            seed,
            epochs,
            dropout,
            final_losses,
        },
    })
}

pub fn save_checkpoint(model: &MilModel, metadata: &TrainingMetadata, path: &Path) -> Result<()> {
    atomic_write(path, &encode_checkpoint(model, metadata)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> MilModel {
        MilModel::init(
            ModelConfig {
                input_dim: 4,
                hidden: vec![6, 3],
                attention_dim: 2,
                n_classes: 2,
            },
            5,
        )
        .unwrap()
    }

    fn meta() -> TrainingMetadata {
        TrainingMetadata {
            seed: 5,
            epochs: 3,
            dropout: 0.25,
            final_losses: vec![0.5],
        }
    }

    #[test]
    fn round_trip() {
        let m = model();
        let bytes = encode_checkpoint(&m, &meta()).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.model, m.rounded_to_f32());
        assert_eq!(ck.metadata, meta());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_checkpoint(&model(), &meta()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn bad_version() {
        let mut bytes = encode_checkpoint(&model(), &meta()).unwrap();
        bytes[8] = 2;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Format { offset: 8, .. })
        ));
    }

    #[test]
    fn truncated() {
        let bytes = encode_checkpoint(&model(), &meta()).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        match decode_checkpoint(cut) {
            Err(Error::Format { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn corrupted_weight_fails_checksum() {
        let mut bytes = encode_checkpoint(&model(), &meta()).unwrap();
        bytes[40] ^= 0x01;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Checksum { .. })));
    }
}
