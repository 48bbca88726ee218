//! Neural painters: differentiable networks mapping an action vector to a
//! stroke image, trained to imitate the stroke oracle.
//!
//! Both painter kinds share the same inference network, a feed-forward
//! trunk from action to code followed by a transposed-convolution decoder
//! and a sigmoid. They differ only in how that network is trained
//! (two-stage VAE in [`vae`], conditional WGAN-GP in [`gan`]).

pub mod eval;
pub mod gan;
pub mod vae;

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{tensor_to_images, Image};
use crate::nn::{self, Decoder, Mlp};
use crate::oracle::{Action, Dataset, ACTION_DIM};

pub use eval::{action_sweep, evaluate_painter, laplacian_energy, lift_check, LiftCheck, PainterMetrics, Sweep};
pub use gan::{train_gan_painter, GanPainterConfig, GanTrainLog};
pub use vae::{train_vae_painter, VaePainterConfig, VaeTrainLog};

pub const CHECKPOINT_FORMAT: &str = "strokeforge-painter/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PainterKind {
    Vae,
    Gan,
}

impl std::str::FromStr for PainterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(Self::Vae),
            "gan" => Ok(Self::Gan),
            other => Err(Error::InvalidArgument(format!("unknown painter kind {other:?}"))),
        }
    }
}

/// Shape of the inference network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PainterArch {
    pub canvas_size: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub code_dim: usize,
    pub decoder_channels: usize,
}

/// Action → stroke network (trunk + decoder), producing logits.
#[derive(Clone, Debug)]
pub struct PainterNet {
    trunk: Mlp,
    decoder: Decoder,
}

impl PainterNet {
    pub fn new(vb: VarBuilder, arch: &PainterArch) -> Result<Self> {
        Ok(Self {
            trunk: Mlp::new(vb.pp("trunk"), &[arch.action_dim, arch.hidden, arch.hidden, arch.code_dim])?,
            decoder: Decoder::new(vb.pp("decoder"), arch.code_dim, arch.decoder_channels, arch.canvas_size)?,
        })
    }

    pub fn logits(&self, actions: &Tensor) -> Result<Tensor> {
        self.decoder.forward(&self.trunk.forward(actions)?)
    }

    pub fn forward(&self, actions: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::sigmoid(&self.logits(actions)?)?)
    }
}

/// JSON sidecar stored next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PainterMeta {
    pub format: String,
    pub kind: PainterKind,
    pub action_dim: usize,
    pub canvas_size: usize,
    /// Inputs carry a trailing lift flag (discrete-variant painter).
    pub discrete: bool,
    pub arch: PainterArch,
    pub training_config: serde_json::Value,
    pub dataset_fingerprint: String,
}

/// A trained painter with frozen weights.
#[derive(Clone, Debug)]
pub struct PainterCheckpoint {
    pub meta: PainterMeta,
    net: PainterNet,
    tensors: HashMap<String, Tensor>,
    device: Device,
}

impl PainterCheckpoint {
    /// Wraps a weight map (keys `trunk.*`, `decoder.*`) as a frozen painter.
    pub fn from_tensors(meta: PainterMeta, tensors: HashMap<String, Tensor>, device: &Device) -> Result<Self> {
        let frozen: HashMap<String, Tensor> = tensors.into_iter().map(|(k, v)| (k, v.detach())).collect();
        let vb = VarBuilder::from_tensors(frozen.clone(), DType::F32, device);
        let net = PainterNet::new(vb, &meta.arch)?;
        Ok(Self {
            meta,
            net,
            tensors: frozen,
            device: device.clone(),
        })
    }

    /// Randomly initialized, untrained painter (a sanity baseline).
    pub fn untrained(kind: PainterKind, arch: PainterArch, seed: u64, device: &Device) -> Result<Self> {
        let vm = candle_nn::VarMap::new();
        PainterNet::new(VarBuilder::from_varmap(&vm, DType::F32, device), &arch)?;
        nn::seeded_init(&vm, seed)?;
        let meta = PainterMeta {
            format: CHECKPOINT_FORMAT.into(),
            kind,
            action_dim: arch.action_dim,
            canvas_size: arch.canvas_size,
            discrete: arch.action_dim == ACTION_DIM + 1,
            arch,
            training_config: serde_json::json!({ "untrained": true, "seed": seed }),
            dataset_fingerprint: String::new(),
        };
        Self::from_tensors(meta, nn::varmap_tensors(&vm), device)
    }

    /// Writes `path` (safetensors) and the JSON sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        candle_core::safetensors::save(&self.tensors, path)?;
        nn::write_json(&nn::sidecar_path(path), &self.meta)
    }

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let path = path.as_ref();
        let meta: PainterMeta = nn::read_json(&nn::sidecar_path(path))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::CheckpointMismatch(format!("unknown format {:?}", meta.format)));
        }
        if meta.action_dim != meta.arch.action_dim || meta.canvas_size != meta.arch.canvas_size {
            return Err(Error::CheckpointMismatch("sidecar dims disagree with arch".into()));
        }
        let (tensors, _) = nn::load_frozen(path, device)?;
        Self::from_tensors(meta, tensors, device)
    }

    /// A copy whose network computes in `dtype` (weights converted).
    pub fn with_dtype(&self, dtype: DType) -> Result<Self> {
        let vb = VarBuilder::from_tensors(self.tensors.clone(), dtype, &self.device);
        Ok(Self {
            net: PainterNet::new(vb, &self.meta.arch)?,
            ..self.clone()
        })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn action_dim(&self) -> usize {
        self.meta.action_dim
    }

    pub fn canvas_size(&self) -> usize {
        self.meta.canvas_size
    }

    pub fn net(&self) -> &PainterNet {
        &self.net
    }

    pub fn tensors(&self) -> &HashMap<String, Tensor> {
        &self.tensors
    }

    pub fn weights_digest(&self) -> Result<String> {
        nn::weights_digest(&self.tensors)
    }

    /// Paints a batch of `(N, action_dim)` actions into `(N, 3, S, S)` strokes
    /// in `[0, 1]`. Differentiable with respect to `actions`.
    pub fn paint(&self, actions: &Tensor) -> Result<Tensor> {
        let (_, d) = actions.dims2()?;
        if d != self.meta.action_dim {
            return Err(Error::CheckpointMismatch(format!(
                "painter expects {}-dim actions, got {d}",
                self.meta.action_dim
            )));
        }
        self.net.forward(actions)
    }

    pub fn paint_vectors(&self, actions: &[Vec<f32>]) -> Result<Vec<Image>> {
        let t = vectors_to_tensor(actions, self.meta.action_dim, &self.device)?;
        tensor_to_images(&self.paint(&t)?)
    }

    pub fn paint_actions(&self, actions: &[Action]) -> Result<Vec<Image>> {
        let v: Vec<Vec<f32>> = actions.iter().map(|a| a.to_array().to_vec()).collect();
        self.paint_vectors(&v)
    }
}

/// Packs action vectors into an `(N, dim)` tensor, checking every range.
pub fn vectors_to_tensor(actions: &[Vec<f32>], dim: usize, device: &Device) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(actions.len() * dim);
    for a in actions {
        if a.len() != dim {
            return Err(Error::CheckpointMismatch(format!("expected {dim}-dim action, got {}", a.len())));
        }
        for (index, &value) in a.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteAction { index, value });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ActionOutOfRange { index, value });
            }
        }
        flat.extend_from_slice(a);
    }
    Ok(Tensor::from_vec(flat, (actions.len(), dim), device)?)
}

/// Gathers dataset records into `(actions (B, d), images (B, 3, S, S))`.
pub fn dataset_batch(ds: &Dataset, idx: &[usize], device: &Device) -> Result<(Tensor, Tensor)> {
    let d = ds.action_dim();
    let s = ds.canvas_size();
    let mut actions = Vec::with_capacity(idx.len() * d);
    let mut pixels = Vec::with_capacity(idx.len() * 3 * s * s);
    for &i in idx {
        actions.extend_from_slice(ds.action(i));
        pixels.extend(ds.image_bytes(i).iter().map(|&b| b as f32 / 255.0));
    }
    let a = Tensor::from_vec(actions, (idx.len(), d), device)?;
    let x = Tensor::from_vec(pixels, (idx.len(), s, s, 3), device)?
        .permute((0, 3, 1, 2))?
        .contiguous()?;
    Ok((a, x))
}

pub(crate) fn check_dataset(ds: &Dataset, allow_discrete: bool) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.header().is_discrete() && !allow_discrete {
        return Err(Error::InvalidArgument(
            "dataset holds discrete-variant actions; enable allow_discrete to train on it".into(),
        ));
    }
    if ds.header().height != ds.header().width {
        return Err(Error::InvalidArgument("painter canvases must be square".into()));
    }
    nn::stages_for(ds.canvas_size())?;
    Ok(())
}

/// Cycles through seeded shuffles of a fixed index set.
pub(crate) struct BatchStream {
    indices: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl BatchStream {
    pub(crate) fn new(indices: Vec<usize>, seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            indices,
            order: Vec::new(),
            pos: 0,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.indices.len());
        if self.pos + size > self.order.len() {
            self.order = nn::shuffled(&self.indices, &mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> PainterArch {
        PainterArch {
            canvas_size: 16,
            action_dim: 12,
            hidden: 32,
            code_dim: 8,
            decoder_channels: 16,
        }
    }

    #[test]
    fn paint_output_in_unit_range_and_deterministic() {
        let p = PainterCheckpoint::untrained(PainterKind::Gan, arch(), 1, &Device::Cpu).unwrap();
        let acts = vec![vec![0.3f32; 12], vec![0.9f32; 12]];
        let a = p.paint_vectors(&acts).unwrap();
        let b = p.paint_vectors(&acts).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|img| img.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn action_dim_mismatch_is_rejected() {
        let p = PainterCheckpoint::untrained(PainterKind::Vae, arch(), 1, &Device::Cpu).unwrap();
        let t = Tensor::zeros((1, 13), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(p.paint(&t), Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.safetensors");
        let p = PainterCheckpoint::untrained(PainterKind::Gan, arch(), 2, &Device::Cpu).unwrap();
        p.save(&path).unwrap();
        assert!(path.with_extension("json").exists());
        let q = PainterCheckpoint::load(&path, &Device::Cpu).unwrap();
        assert_eq!(q.meta, p.meta);
        let acts = vec![vec![0.5f32; 12]];
        assert_eq!(p.paint_vectors(&acts).unwrap(), q.paint_vectors(&acts).unwrap());
        assert_eq!(p.weights_digest().unwrap(), q.weights_digest().unwrap());
    }

    #[test]
    fn batch_stream_covers_indices() {
        let mut s = BatchStream::new((0..10).collect(), 3);
        let mut seen: Vec<usize> = (0..2).flat_map(|_| s.next_batch(5)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }
}
