//! Small image classifiers used as frozen objectives for stroke optimization.
//!
//! A classifier is a stack of convolutions (each followed by leaky ReLU)
//! feeding a global-average-pool linear head, so it accepts any input size.
//! The layer list lives in the JSON sidecar next to the safetensors weights
//! (`conv{i}.weight`, `conv{i}.bias`, `head.weight`, `head.bias`); any
//! network exported in that form loads as a [`ClassifierCheckpoint`].
//! Other feature networks can be plugged in through [`FeatureNetwork`].

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{Conv2d, Conv2dConfig, Linear, VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::data::LabeledImages;
use crate::error::{Error, Result};
use crate::image::images_to_tensor;
use crate::nn;

pub const CLASSIFIER_FORMAT: &str = "strokeforge-classifier/1";

/// A frozen network exposing class logits and named activations.
pub trait FeatureNetwork {
    fn num_classes(&self) -> usize;
    /// `(N, 3, H, W)` images in `[0, 1]` to `(N, classes)` logits.
    fn logits(&self, x: &Tensor) -> Result<Tensor>;
    fn features(&self, x: &Tensor, tap: &str) -> Result<Tensor>;
    fn default_tap(&self) -> &str;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_channels: usize,
}

impl ConvLayerSpec {
    fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1
    }
}

/// Layer lists of the built-in architectures `a` and `b`.
pub fn arch_layers(arch_id: &str, width: usize) -> Result<Vec<ConvLayerSpec>> {
    let l = |kernel, stride, padding, out_channels| ConvLayerSpec {
        kernel,
        stride,
        padding,
        out_channels,
    };
    match arch_id {
        "a" => Ok(vec![l(3, 1, 1, width), l(4, 2, 1, 2 * width), l(3, 1, 1, 2 * width), l(4, 2, 1, 4 * width)]),
        "b" => Ok(vec![l(5, 2, 2, width), l(3, 1, 1, 2 * width), l(3, 1, 1, 2 * width), l(3, 2, 1, 4 * width)]),
        other => Err(Error::InvalidArgument(format!("unknown classifier arch {other:?} (expected a or b)"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapInfo {
    pub id: String,
    pub channels: usize,
    /// Spatial extent of the activation at the training input size.
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub format: String,
    pub arch_id: String,
    pub layers: Vec<ConvLayerSpec>,
    pub class_names: Vec<String>,
    pub input_size: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
    pub taps: Vec<TapInfo>,
    pub default_tap: String,
    pub held_out_accuracy: f64,
    /// Held-out accuracy cleared the gate for use as an optimization objective.
    pub usable: bool,
    pub training_config: serde_json::Value,
}

/// Taps for a layer list at `input_size`, and the default content tap: the
/// deepest layer whose activation is at least 8×8.
pub fn taps_for(layers: &[ConvLayerSpec], input_size: usize) -> (Vec<TapInfo>, String) {
    let mut size = input_size;
    let mut taps = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        size = l.out_size(size);
        taps.push(TapInfo {
            id: format!("conv{i}"),
            channels: l.out_channels,
            size,
        });
    }
    let default = taps
        .iter()
        .rev()
        .find(|t| t.size >= 8)
        .unwrap_or(&taps[0])
        .id
        .clone();
    (taps, default)
}

#[derive(Clone, Debug)]
struct ConvNet {
    convs: Vec<Conv2d>,
    head: Linear,
}

impl ConvNet {
    fn new(vb: VarBuilder, layers: &[ConvLayerSpec], classes: usize) -> Result<Self> {
        let mut convs = Vec::with_capacity(layers.len());
        let mut c_in = 3;
        for (i, l) in layers.iter().enumerate() {
            let cfg = Conv2dConfig {
                padding: l.padding,
                stride: l.stride,
                ..Default::default()
            };
            convs.push(candle_nn::conv2d(c_in, l.out_channels, l.kernel, cfg, vb.pp(format!("conv{i}")))?);
            c_in = l.out_channels;
        }
        Ok(Self {
            convs,
            head: candle_nn::linear(c_in, classes, vb.pp("head"))?,
        })
    }

    /// Activations up to and including layer `upto`.
    fn trunk(&self, x: &Tensor, upto: usize) -> Result<Tensor> {
        let mut h = x.clone();
        for c in &self.convs[..=upto] {
            h = nn::lrelu(&c.forward(&h)?)?;
        }
        Ok(h)
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.trunk(x, self.convs.len() - 1)?;
        Ok(self.head.forward(&h.mean(D::Minus1)?.mean(D::Minus1)?)?)
    }
}

fn normalize(x: &Tensor, mean: &[f32; 3], std: &[f32; 3]) -> Result<Tensor> {
    let dev = x.device();
    let m = Tensor::from_slice(mean, (1, 3, 1, 1), dev)?.to_dtype(x.dtype())?;
    let s = Tensor::from_slice(std, (1, 3, 1, 1), dev)?.to_dtype(x.dtype())?;
    Ok(x.broadcast_sub(&m)?.broadcast_div(&s)?)
}

#[derive(Clone, Debug)]
pub struct ClassifierCheckpoint {
    pub meta: ClassifierMeta,
    net: ConvNet,
    tensors: HashMap<String, Tensor>,
}

impl ClassifierCheckpoint {
    pub fn from_tensors(meta: ClassifierMeta, tensors: HashMap<String, Tensor>, device: &Device) -> Result<Self> {
        if meta.layers.is_empty() {
            return Err(Error::CheckpointMismatch("classifier needs at least one layer".into()));
        }
        let frozen: HashMap<String, Tensor> = tensors.into_iter().map(|(k, v)| (k, v.detach())).collect();
        let net = ConvNet::new(VarBuilder::from_tensors(frozen.clone(), DType::F32, device), &meta.layers, meta.class_names.len())?;
        Ok(Self {
            meta,
            net,
            tensors: frozen,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        candle_core::safetensors::save(&self.tensors, path)?;
        nn::write_json(&nn::sidecar_path(path), &self.meta)
    }

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let path = path.as_ref();
        let meta: ClassifierMeta = nn::read_json(&nn::sidecar_path(path))?;
        if meta.format != CLASSIFIER_FORMAT {
            return Err(Error::CheckpointMismatch(format!("unknown format {:?}", meta.format)));
        }
        let (tensors, _) = nn::load_frozen(path, device)?;
        Self::from_tensors(meta, tensors, device)
    }

    pub fn weights_digest(&self) -> Result<String> {
        nn::weights_digest(&self.tensors)
    }

    fn tap_index(&self, tap: &str) -> Result<usize> {
        self.meta
            .taps
            .iter()
            .position(|t| t.id == tap)
            .ok_or_else(|| Error::UnknownTap(tap.to_string()))
    }

    /// Pre-softmax logit of `class_id` for each image: `(N,)`.
    pub fn class_logit(&self, x: &Tensor, class_id: usize) -> Result<Tensor> {
        let k = self.num_classes();
        if class_id >= k {
            return Err(Error::InvalidClass {
                class_id,
                num_classes: k,
            });
        }
        Ok(self.logits(x)?.narrow(1, class_id, 1)?.squeeze(1)?)
    }

    pub fn extract_features(&self, x: &Tensor, tap: &str) -> Result<Tensor> {
        self.features(x, tap)
    }

    pub fn predict(&self, data: &LabeledImages) -> Result<Vec<usize>> {
        let dev = Device::Cpu;
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.images.chunks(256) {
            let l = self.logits(&images_to_tensor(chunk, &dev)?)?;
            out.extend(l.argmax(1)?.to_vec1::<u32>()?.into_iter().map(|v| v as usize));
        }
        Ok(out)
    }

    pub fn accuracy(&self, data: &LabeledImages) -> Result<f64> {
        let labels = data.require_labels("accuracy")?;
        let pred = self.predict(data)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

impl FeatureNetwork for ClassifierCheckpoint {
    fn num_classes(&self) -> usize {
        self.meta.class_names.len()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.net.logits(&normalize(x, &self.meta.mean, &self.meta.std)?)
    }

    fn features(&self, x: &Tensor, tap: &str) -> Result<Tensor> {
        let i = self.tap_index(tap)?;
        self.net.trunk(&normalize(x, &self.meta.mean, &self.meta.std)?, i)
    }

    fn default_tap(&self) -> &str {
        &self.meta.default_tap
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub held_out_fraction: f64,
    /// Minimum held-out accuracy for the checkpoint to be marked usable.
    pub accuracy_gate: f64,
    pub max_steps: Option<usize>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            width: 16,
            epochs: 10,
            learning_rate: 2e-3,
            batch_size: 64,
            seed: 0,
            held_out_fraction: 0.1,
            accuracy_gate: 0.6,
            max_steps: None,
        }
    }
}

/// Per-channel mean and standard deviation over a set of images.
fn channel_stats(data: &LabeledImages) -> ([f32; 3], [f32; 3]) {
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    let mut n = 0f64;
    for img in &data.images {
        for px in img.data().chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as f64;
                sq[c] += (px[c] as f64).powi(2);
            }
            n += 1.0;
        }
    }
    let mean = sum.map(|s| s / n.max(1.0));
    let std: [f64; 3] = std::array::from_fn(|c| (sq[c] / n.max(1.0) - mean[c] * mean[c]).max(1e-4).sqrt());
    (mean.map(|v| v as f32), std.map(|v| v as f32))
}

/// Trains a classifier; the last `held_out_fraction` of records are held out.
pub fn train_classifier(data: &LabeledImages, arch_id: &str, cfg: &ClassifierConfig) -> Result<ClassifierCheckpoint> {
    let labels = data.require_labels("classifier training")?;
    let (h, w) = data.image_size().ok_or(Error::EmptyDataset)?;
    if h != w {
        return Err(Error::InvalidArgument("classifier images must be square".into()));
    }
    if data.images.iter().any(|i| i.height() != h || i.width() != w) {
        return Err(Error::InvalidArgument("classifier images must share one size".into()));
    }
    let classes = data.num_classes().max(labels.iter().max().map_or(0, |m| m + 1));
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("learning_rate and batch_size must be positive".into()));
    }
    let layers = arch_layers(arch_id, cfg.width)?;
    let (train, held) = data.split(cfg.held_out_fraction);
    let (mean, std) = channel_stats(&train);
    let dev = Device::Cpu;
    let vm = VarMap::new();
    let net = ConvNet::new(VarBuilder::from_varmap(&vm, DType::F32, &dev), &layers, classes)?;
    nn::seeded_init(&vm, cfg.seed)?;
    let mut opt = nn::adam(&vm, cfg.learning_rate, 0.9, 0.999)?;
    let train_labels = train.labels.clone().unwrap_or_default();
    let steps = cfg
        .max_steps
        .unwrap_or(cfg.epochs * train.len().div_ceil(cfg.batch_size));
    let mut stream = crate::painter::BatchStream::new((0..train.len()).collect(), cfg.seed.wrapping_add(1));
    let mut trace = Vec::new();
    for step in 0..steps {
        let idx = stream.next_batch(cfg.batch_size);
        let imgs: Vec<_> = idx.iter().map(|&i| train.images[i].clone()).collect();
        let x = normalize(&images_to_tensor(&imgs, &dev)?, &mean, &std)?;
        let y = Tensor::from_vec(idx.iter().map(|&i| train_labels[i] as u32).collect::<Vec<_>>(), idx.len(), &dev)?;
        let loss = candle_nn::loss::cross_entropy(&net.logits(&x)?, &y)?;
        trace.push(nn::checked_scalar(&loss, "classifier loss", step, &trace)?);
        nn::step(&mut opt, &loss)?;
    }

    let (taps, default_tap) = taps_for(&layers, h);
    let class_names = if data.class_names.len() == classes {
        data.class_names.clone()
    } else {
        (0..classes).map(|c| c.to_string()).collect()
    };
    let meta = ClassifierMeta {
        format: CLASSIFIER_FORMAT.into(),
        arch_id: arch_id.to_string(),
        layers,
        class_names,
        input_size: h,
        mean,
        std,
        taps,
        default_tap,
        held_out_accuracy: 0.0,
        usable: false,
        training_config: serde_json::json!({ "arch_id": arch_id, "config": cfg }),
    };
    let mut ckpt = ClassifierCheckpoint::from_tensors(meta, nn::varmap_tensors(&vm), &dev)?;
    let acc = if held.is_empty() { ckpt.accuracy(&train)? } else { ckpt.accuracy(&held)? };
    ckpt.meta.held_out_accuracy = acc;
    ckpt.meta.usable = acc > cfg.accuracy_gate;
    Ok(ckpt)
}

/// Content loss: mean squared difference of two activation blocks.
pub fn content_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    nn::mse(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_shapes;

    #[test]
    fn taps_pick_deepest_eight_by_eight() {
        let (taps, d) = taps_for(&arch_layers("a", 4).unwrap(), 16);
        assert_eq!(taps.iter().map(|t| t.size).collect::<Vec<_>>(), vec![16, 8, 8, 4]);
        assert_eq!(d, "conv2");
        let (taps, d) = taps_for(&arch_layers("b", 4).unwrap(), 32);
        assert_eq!(taps.iter().map(|t| t.size).collect::<Vec<_>>(), vec![16, 16, 16, 8]);
        assert_eq!(d, "conv3");
        assert!(arch_layers("c", 4).is_err());
    }

    #[test]
    fn short_training_beats_chance_and_round_trips() {
        let data = synthetic_shapes(200, 16, 0).unwrap();
        let cfg = ClassifierConfig {
            width: 8,
            max_steps: Some(60),
            batch_size: 32,
            ..Default::default()
        };
        let ckpt = train_classifier(&data, "a", &cfg).unwrap();
        assert!(ckpt.meta.held_out_accuracy > 0.1, "{}", ckpt.meta.held_out_accuracy);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.safetensors");
        ckpt.save(&p).unwrap();
        let back = ClassifierCheckpoint::load(&p, &Device::Cpu).unwrap();
        let x = images_to_tensor(&data.images[..3], &Device::Cpu).unwrap();
        let a = ckpt.logits(&x).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(a, back.logits(&x).unwrap().to_vec2::<f32>().unwrap());
        for tap in &ckpt.meta.taps {
            let f = back.features(&x, &tap.id).unwrap();
            assert_eq!(f.dims(), &[3, tap.channels, tap.size, tap.size]);
        }
        assert!(matches!(back.features(&x, "fc9"), Err(Error::UnknownTap(_))));
        assert!(matches!(back.class_logit(&x, 10), Err(Error::InvalidClass { .. })));
    }
}
