//! Checkpoint container.
//!
//! Binary layout, all integers little-endian `u32`:
//!
//! ```text
//! "MSCK" version tensor_count
//! per tensor: name_len name ndim dims... f32 data (row-major)
//! ```
//!
//! Momentum buffers are stored as extra tensors prefixed `momentum.`. A JSON
//! sidecar (`<file>.json`) holds the training config, input recipe, layer
//! sizes and the loss history. Parameters are narrowed to `f32` on save, so
//! resuming continues from a close approximation of the saved state.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    EmbedError, EncoderNet, EpochLoss, InputConfig, PairClassifierHead, SimilarityModel,
    TrainConfig, Trainer,
};

const MAGIC: &[u8; 4] = b"MSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub epochs_completed: usize,
    pub train_config: TrainConfig,
    pub input_config: InputConfig,
    pub encoder_input_dim: usize,
    pub encoder_hidden: usize,
    pub encoder_blocks: usize,
    pub head_hidden: usize,
    pub loss_history: Vec<EpochLoss>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

struct Tensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn split_tensors(shapes: Vec<(String, Vec<usize>)>, params: &[f64], prefix: &str) -> Vec<Tensor> {
    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(name, dims)| {
            let n: usize = dims.iter().product();
            let data = params[offset..offset + n]
                .iter()
                .map(|&v| v as f32)
                .collect();
            offset += n;
            Tensor {
                name: format!("{prefix}{name}"),
                dims,
                data,
            }
        })
        .collect()
}

fn all_tensors(trainer: &Trainer) -> Vec<Tensor> {
    let model = &trainer.model;
    let mut out = split_tensors(model.encoder.tensor_shapes(), &model.encoder.params, "");
    out.extend(split_tensors(
        model.head.tensor_shapes(),
        &model.head.params,
        "",
    ));
    out.extend(split_tensors(
        model.encoder.tensor_shapes(),
        &trainer.velocity_encoder,
        "momentum.",
    ));
    out.extend(split_tensors(
        model.head.tensor_shapes(),
        &trainer.velocity_head,
        "momentum.",
    ));
    out
}

fn encode(tensors: &[Tensor]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], EmbedError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| EmbedError::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<Tensor>, EmbedError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(EmbedError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(EmbedError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| EmbedError::Checkpoint("tensor name is not utf-8".into()))?;
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| EmbedError::Checkpoint("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(Tensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(EmbedError::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

/// Writes `path` and its JSON sidecar.
pub fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<(), EmbedError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let model = &trainer.model;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        epochs_completed: trainer.epochs_done,
        train_config: trainer.config.clone(),
        input_config: model.input,
        encoder_input_dim: model.encoder.input_dim,
        encoder_hidden: model.encoder.hidden,
        encoder_blocks: model.encoder.blocks,
        head_hidden: model.head.hidden,
        loss_history: trainer.history.clone(),
    };
    std::fs::File::create(path)?.write_all(&encode(&all_tensors(trainer)))?;
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

fn fill(
    target: &mut [f64],
    tensors: &mut std::vec::IntoIter<Tensor>,
    shapes: Vec<(String, Vec<usize>)>,
    prefix: &str,
) -> Result<(), EmbedError> {
    let mut offset = 0;
    for (name, dims) in shapes {
        let expected = format!("{prefix}{name}");
        let t = tensors
            .next()
            .ok_or_else(|| EmbedError::Checkpoint(format!("missing tensor {expected}")))?;
        if t.name != expected || t.dims != dims {
            return Err(EmbedError::Checkpoint(format!(
                "expected {expected} {dims:?}, found {} {:?}",
                t.name, t.dims
            )));
        }
        for (dst, &v) in target[offset..offset + t.data.len()]
            .iter_mut()
            .zip(&t.data)
        {
            *dst = v as f64;
        }
        offset += t.data.len();
    }
    Ok(())
}

/// Restores a trainer (model, momentum, epoch count, history).
pub fn load_checkpoint(path: &Path) -> Result<Trainer, EmbedError> {
    let meta: CheckpointMeta = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(EmbedError::Checkpoint(format!(
            "unsupported sidecar version {}",
            meta.format_version
        )));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let tensors = decode(&bytes)?;

    let encoder = EncoderNet::new(
        meta.encoder_input_dim,
        meta.encoder_hidden,
        meta.encoder_blocks,
        0,
    );
    let head = PairClassifierHead::new(meta.encoder_hidden, meta.head_hidden, 0);
    let mut model = SimilarityModel {
        encoder,
        head,
        input: meta.input_config,
    };
    let mut trainer_velocity_encoder = vec![0.0; model.encoder.params.len()];
    let mut trainer_velocity_head = vec![0.0; model.head.params.len()];
    let mut iter = tensors.into_iter();
    let (enc_shapes, head_shapes) = (model.encoder.tensor_shapes(), model.head.tensor_shapes());
    fill(&mut model.encoder.params, &mut iter, enc_shapes.clone(), "")?;
    fill(&mut model.head.params, &mut iter, head_shapes.clone(), "")?;
    fill(
        &mut trainer_velocity_encoder,
        &mut iter,
        enc_shapes,
        "momentum.",
    )?;
    fill(
        &mut trainer_velocity_head,
        &mut iter,
        head_shapes,
        "momentum.",
    )?;
    if iter.next().is_some() {
        return Err(EmbedError::Checkpoint("unexpected extra tensors".into()));
    }

    let mut trainer = Trainer::from_model(model, meta.train_config);
    trainer.velocity_encoder = trainer_velocity_encoder;
    trainer.velocity_head = trainer_velocity_head;
    trainer.epochs_done = meta.epochs_completed;
    trainer.history = meta.loss_history;
    Ok(trainer)
}
