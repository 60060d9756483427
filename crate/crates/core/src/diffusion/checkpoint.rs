//! Model checkpoints: a JSON header followed by little-endian f32 tensors.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::aggregate::{AttentionConfig, AttentionRegistry, MixtureWeights};
use crate::diffusion::denoiser::{Denoiser, DenoiserShape};
use crate::diffusion::model::{AggregationSettings, CDiffModel};
use crate::diffusion::schedule::ScheduleParams;
use crate::error::{Error, Result};
use crate::hashing::write_atomic;
use crate::pseudo::ByteReader;
use crate::real::Real;
use crate::rng::stage_rng;

const MAGIC: &[u8; 4] = b"CDCK";
const VERSION: u32 = 1;

/// Everything needed to rebuild a model besides its tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub n_items: usize,
    pub hidden: usize,
    pub time_dim: usize,
    pub schedule: ScheduleParams,
    pub seed: u64,
    /// Hash of the run configuration that produced the checkpoint.
    pub config_hash: String,
    pub attention: AttentionConfig,
    pub mix: MixtureWeights,
    pub aggregation_enabled: bool,
    pub detach_neighbors: bool,
    pub best_epoch: usize,
    /// `(rows, cols)` of every tensor in parameter order; vectors have one column.
    pub tensor_shapes: Vec<(usize, usize)>,
}

fn tensor_shapes<F: Real>(model: &CDiffModel<F>) -> Vec<(usize, usize)> {
    let d = &model.denoiser;
    let mut shapes = vec![d.w1.dim(), (d.b1.len(), 1), d.w2.dim(), (d.b2.len(), 1)];
    shapes.extend(model.attention.params().iter().map(|p| p.dim()));
    shapes
}

/// Fill in the model-derived fields of `meta` and write the checkpoint.
pub fn save_checkpoint<F: Real>(path: &Path, model: &CDiffModel<F>, meta: &CheckpointMeta) -> Result<()> {
    let shape = model.denoiser.shape();
    let mut meta = meta.clone();
    meta.n_items = shape.n_items;
    meta.hidden = shape.hidden;
    meta.time_dim = shape.time_dim;
    meta.mix = model.aggregation.mix;
    meta.aggregation_enabled = model.aggregation.enabled;
    meta.detach_neighbors = model.aggregation.detach_neighbors;
    meta.tensor_shapes = tensor_shapes(model);
    let header = serde_json::to_vec(&meta).map_err(|e| Error::format(path, e.to_string()))?;

    let mut out = Vec::with_capacity(16 + header.len() + 4 * model.param_slices().iter().map(|s| s.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for tensor in model.param_slices() {
        for &x in tensor {
            out.extend_from_slice(&(x.to_f64() as f32).to_le_bytes());
        }
    }
    write_atomic(path, &out)
}

/// Read a checkpoint, building the attention strategy through `registry`.
pub fn load_checkpoint<F: Real>(path: &Path, registry: &AttentionRegistry<F>) -> Result<(CDiffModel<F>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let header_len = r.u64()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    meta.mix.validate()?;

    let shape = DenoiserShape { n_items: meta.n_items, hidden: meta.hidden, time_dim: meta.time_dim };
    let mut attention = registry.create(&meta.attention, meta.n_items, &mut stage_rng(meta.seed, "attention", 0))?;
    let mut expected = vec![
        (shape.input_dim(), shape.hidden),
        (shape.hidden, 1),
        (shape.hidden, shape.n_items),
        (shape.n_items, 1),
    ];
    expected.extend(attention.params().iter().map(|p| p.dim()));
    if expected != meta.tensor_shapes {
        return Err(Error::format(path, format!("tensor shapes {:?}, expected {expected:?}", meta.tensor_shapes)));
    }

    let mut tensors = Vec::with_capacity(expected.len());
    for &(rows, cols) in &expected {
        let mut v = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            v.push(F::from_f64(r.f32()? as f64));
        }
        tensors.push(v);
    }
    r.finish()?;

    let mut it = tensors.into_iter();
    let mut next = || it.next().unwrap();
    let w1 = Array2::from_shape_vec(expected[0], next()).unwrap();
    let b1 = Array1::from(next());
    let w2 = Array2::from_shape_vec(expected[2], next()).unwrap();
    let b2 = Array1::from(next());
    let denoiser = Denoiser::from_parts(shape, w1, b1, w2, b2);
    for p in attention.params_mut() {
        let dim = p.dim();
        *p = Array2::from_shape_vec(dim, next()).unwrap();
    }
    let aggregation = AggregationSettings {
        enabled: meta.aggregation_enabled,
        mix: meta.mix,
        detach_neighbors: meta.detach_neighbors,
    };
    Ok((CDiffModel { denoiser, attention, aggregation }, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(mode: &str) -> (CDiffModel<f32>, CheckpointMeta) {
        let shape = DenoiserShape { n_items: 6, hidden: 5, time_dim: 4 };
        let registry = AttentionRegistry::<f32>::with_builtins();
        let attention_cfg = AttentionConfig { mode: mode.into(), dim: 3 };
        let attention = registry.create(&attention_cfg, 6, &mut stage_rng(3, "attention", 0)).unwrap();
        let denoiser = Denoiser::init(shape, &mut stage_rng(3, "denoiser", 0));
        let m = CDiffModel { denoiser, attention, aggregation: AggregationSettings::new(MixtureWeights::default()) };
        let meta = CheckpointMeta {
            n_items: 0,
            hidden: 0,
            time_dim: 0,
            schedule: ScheduleParams::default(),
            seed: 3,
            config_hash: "abc".into(),
            attention: attention_cfg,
            mix: MixtureWeights::default(),
            aggregation_enabled: true,
            detach_neighbors: false,
            best_epoch: 2,
            tensor_shapes: Vec::new(),
        };
        (m, meta)
    }

    #[test]
    fn round_trip_every_mode() {
        let dir = tempfile::tempdir().unwrap();
        for mode in ["average_pooling", "behavior_similarity", "parametric"] {
            let (m, meta) = model(mode);
            let path = dir.path().join(format!("{mode}.ckpt"));
            save_checkpoint(&path, &m, &meta).unwrap();
            let (back, meta_back) = load_checkpoint::<f32>(&path, &AttentionRegistry::with_builtins()).unwrap();
            assert_eq!(back.param_slices(), m.param_slices());
            assert_eq!(back.attention.name(), mode);
            assert_eq!(meta_back.n_items, 6);
            assert_eq!(meta_back.best_epoch, 2);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (m, meta) = model("parametric");
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &m, &meta).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint::<f32>(&path, &AttentionRegistry::with_builtins()).is_err());
    }

    #[test]
    fn unknown_mode_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (m, meta) = model("average_pooling");
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &m, &meta).unwrap();
        let empty = AttentionRegistry::<f32>::empty();
        assert!(matches!(load_checkpoint::<f32>(&path, &empty), Err(Error::UnknownAttention(_))));
    }
}
