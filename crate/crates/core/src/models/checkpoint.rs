//! Versioned binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! magic `SINT` | version u16 | metadata length u32 | metadata JSON |
//! tensor count u32 | tensors. Each tensor: name length u16 | name bytes |
//! rows u32 | cols u32 | row-major f32 values.
//!
//! The metadata JSON carries the variant, model config, class list, and the
//! id-ordered vocabulary, so a checkpoint is self-describing. Save -> load
//! -> save reproduces the file byte for byte.

use super::{ModelConfig, MultiTaskModel, OfflineModel, TrainedModel, Variant};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::numkernel::{Matrix, Parameterized};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SINT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: Variant,
    pub config: ModelConfig,
    pub classes: Vec<String>,
    pub vocab: Vec<String>,
}

impl CheckpointMeta {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_words(self.vocab.clone())
    }
}

pub fn save_checkpoint(path: &Path, model: &TrainedModel<f32>, meta: &CheckpointMeta) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta_json = serde_json::to_vec(meta).expect("metadata serialization cannot fail");
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(p.value.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols as u32).to_le_bytes());
        for v in p.value.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<R: Read> {
    inner: R,
    pos: u64,
}

impl<R: Read> Reader<R> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint { offset: self.pos, msg: msg.into() }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::Checkpoint { offset: self.pos, msg: format!("truncated file: {e}") })?;
        self.pos += buf.len() as u64;
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.read_exact(&mut b)?;
        Ok(b)
    }

    fn at_eof(&mut self) -> bool {
        let mut b = [0u8; 1];
        matches!(self.inner.read(&mut b), Ok(0))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainedModel<f32>, CheckpointMeta)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { inner: std::io::BufReader::new(file), pos: 0 };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(r.fail("bad magic bytes, not a checkpoint file"));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let meta_len = r.u32()? as usize;
    let meta_bytes = r.bytes(meta_len)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| r.fail(format!("bad metadata: {e}")))?;
    meta.config.validate()?;

    let tensor_count = r.u32()? as usize;
    let mut tensors: HashMap<String, Matrix<f32>> = HashMap::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|e| Error::Checkpoint { offset: 0, msg: format!("bad tensor name: {e}") })?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let mut values = vec![0f32; rows * cols];
        let mut raw = vec![0u8; rows * cols * 4];
        r.read_exact(&mut raw)?;
        for (v, chunk) in values.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        if tensors.insert(name.clone(), Matrix::from_vec(rows, cols, values)).is_some() {
            return Err(r.fail(format!("duplicate tensor '{name}'")));
        }
    }
    if !r.at_eof() {
        return Err(r.fail("trailing bytes after the last tensor"));
    }

    let mut model = match meta.variant {
        Variant::Offline => TrainedModel::Offline(OfflineModel::seeded(&meta.config)),
        v => TrainedModel::MultiTask(MultiTaskModel::seeded(&meta.config, v.uses_context())),
    };
    let params = model.params_mut();
    if params.len() != tensors.len() {
        return Err(Error::Checkpoint {
            offset: 0,
            msg: format!("checkpoint has {} tensors, model expects {}", tensors.len(), params.len()),
        });
    }
    for p in params {
        let tensor = tensors.remove(&p.name).ok_or_else(|| Error::Checkpoint {
            offset: 0,
            msg: format!("missing tensor '{}'", p.name),
        })?;
        if tensor.rows != p.value.rows || tensor.cols != p.value.cols {
            return Err(Error::Checkpoint {
                offset: 0,
                msg: format!(
                    "tensor '{}' is {}x{}, model expects {}x{}",
                    p.name, tensor.rows, tensor.cols, p.value.rows, p.value.cols
                ),
            });
        }
        p.value = tensor;
    }
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{IntentTag, PAD_TOKEN, UNK_TOKEN};
    use crate::models::Variant;
    use tempfile::tempdir;

    fn tiny_meta(variant: Variant) -> CheckpointMeta {
        CheckpointMeta {
            variant,
            config: ModelConfig {
                vocab_size: 6,
                embed_dim: 3,
                hidden_dim: 4,
                num_layers: 2,
                dropout: 0.0,
                num_classes: 2,
                seed: 3,
                context_turns: if variant.uses_context() { 3 } else { 0 },
                ..ModelConfig::default()
            },
            classes: vec!["a".into(), "b".into()],
            vocab: vec![
                PAD_TOKEN.into(),
                UNK_TOKEN.into(),
                "w2".into(),
                "w3".into(),
                "w4".into(),
                "w5".into(),
            ],
        }
    }

    fn trained_multitask(meta: &CheckpointMeta) -> TrainedModel<f32> {
        let mut model = MultiTaskModel::<f32>::seeded(&meta.config, meta.variant.uses_context());
        // Nudge the weights so the file is not just the init.
        let ids = vec![2, 3, 4, 5];
        let ib = vec![false, false, true, false];
        let tags = vec![IntentTag::O, IntentTag::O, IntentTag::Class(1), IntentTag::O];
        model.train_example(&ids, &[], &ib, &tags, Variant::MultiTask, None, 1.0).unwrap();
        TrainedModel::MultiTask(model)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let meta = tiny_meta(Variant::MultiTask);
        let model = trained_multitask(&meta);
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&p1, &model, &meta).unwrap();
        let (loaded, loaded_meta) = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded_meta, meta);
        save_checkpoint(&p2, &loaded, &loaded_meta).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn loaded_model_streams_bitwise_identically() {
        let dir = tempdir().unwrap();
        let meta = tiny_meta(Variant::MultiTask);
        let model = trained_multitask(&meta);
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model, &meta).unwrap();
        let (loaded, _) = load_checkpoint(&path).unwrap();
        let (TrainedModel::MultiTask(a), TrainedModel::MultiTask(b)) = (&model, &loaded) else {
            panic!("variant mismatch");
        };
        let (pa, da) = a.forward_eval(&[2, 4, 3, 5], &a.zero_states()).unwrap();
        let (pb, db) = b.forward_eval(&[2, 4, 3, 5], &b.zero_states()).unwrap();
        for (x, y) in pa.iter().zip(pb.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in da.iter().flatten().zip(db.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_rejected_with_offset() {
        let dir = tempdir().unwrap();
        let meta = tiny_meta(Variant::MultiTask);
        let model = trained_multitask(&meta);
        let path = dir.path().join("full.ckpt");
        save_checkpoint(&path, &model, &meta).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
        match load_checkpoint(&cut).unwrap_err() {
            Error::Checkpoint { offset, msg } => {
                assert!(offset > 0);
                assert!(msg.contains("truncated"));
            }
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn version_and_magic_mismatches_are_rejected() {
        let dir = tempdir().unwrap();
        let meta = tiny_meta(Variant::MultiTask);
        let model = trained_multitask(&meta);
        let path = dir.path().join("v.ckpt");
        save_checkpoint(&path, &model, &meta).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 0xFF; // version
        let bad = dir.path().join("badver.ckpt");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&bad), Err(Error::Checkpoint { .. })));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&bad), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempdir().unwrap();
        let meta = tiny_meta(Variant::MultiTask);
        let model = trained_multitask(&meta);
        let path = dir.path().join("t.ckpt");
        save_checkpoint(&path, &model, &meta).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"));
    }

    #[test]
    fn offline_checkpoints_round_trip() {
        let dir = tempdir().unwrap();
        let meta = tiny_meta(Variant::Offline);
        let model = TrainedModel::Offline(OfflineModel::<f32>::seeded(&meta.config));
        let path = dir.path().join("o.ckpt");
        save_checkpoint(&path, &model, &meta).unwrap();
        let (loaded, m2) = load_checkpoint(&path).unwrap();
        assert_eq!(m2.variant, Variant::Offline);
        let (TrainedModel::Offline(a), TrainedModel::Offline(b)) = (&model, &loaded) else {
            panic!("variant mismatch");
        };
        let da = a.forward_eval(&[2, 3]).unwrap();
        let db = b.forward_eval(&[2, 3]).unwrap();
        for (x, y) in da.iter().zip(db.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
