//! Network building blocks shared by painters, agents and classifiers.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{AdamW, Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig, Linear, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn lrelu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, LEAKY_SLOPE)?)
}

/// Re-draws every variable from a seeded generator.
///
/// Weights get Kaiming-uniform values for leaky-ReLU fan-in, biases are
/// zeroed and recurrent weights use `±1/√hidden`. Variables are visited in
/// name order so results depend only on the seed.
pub fn seeded_init(varmap: &VarMap, seed: u64) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in names {
        let var = &data[name];
        let dims = var.dims().to_vec();
        let n: usize = dims.iter().product();
        let values: Vec<f32> = if name.contains("lstm") {
            let bound = 1.0 / ((dims[0] / 4).max(1) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
        } else if name.ends_with("bias") || dims.len() == 1 {
            vec![0.0; n]
        } else {
            let fan_in: usize = dims[1..].iter().product();
            let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
            let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
        };
        var.set(&Tensor::from_vec(values, dims, var.device())?.to_dtype(var.dtype())?)?;
    }
    Ok(())
}

pub fn adam(varmap: &VarMap, lr: f64, beta1: f64, beta2: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        varmap.all_vars(),
        ParamsAdamW {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

/// Learning rate at `step` of `total`, decaying linearly from `start` to
/// `end` (constant when `end` is unset).
pub fn linear_lr(start: f64, end: Option<f64>, step: usize, total: usize) -> f64 {
    match end {
        Some(end) => start + (end - start) * step as f64 / total.max(1) as f64,
        None => start,
    }
}

/// Minimizes `loss` for the variables owned by `opt`.
pub fn step(opt: &mut AdamW, loss: &Tensor) -> Result<()> {
    opt.backward_step(loss)?;
    Ok(())
}

/// Reads a scalar loss and fails if it is not finite.
pub fn checked_scalar(loss: &Tensor, what: &'static str, step: usize, trace: &[f32]) -> Result<f32> {
    let v = loss.to_dtype(DType::F32)?.to_scalar::<f32>()?;
    if !v.is_finite() {
        return Err(Error::Diverged {
            what,
            step,
            trace: trace.iter().rev().take(20).rev().copied().collect(),
        });
    }
    Ok(v)
}

/// Compares the autograd gradient of the scalar `loss()` with respect to
/// `vars` against central differences of step `eps`, one element at a time.
/// Returns `‖g_fd − g‖ / max(‖g_fd‖, ‖g‖)` over all elements; use f64 vars.
pub fn gradient_check(loss: impl Fn() -> Result<Tensor>, vars: &[Var], eps: f64) -> Result<f64> {
    let grads = loss()?.backward()?;
    let (mut diff, mut n_fd, mut n_an) = (0f64, 0f64, 0f64);
    for var in vars {
        let analytic: Vec<f64> = match grads.get(var) {
            Some(g) => g.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?,
            None => vec![0.0; var.elem_count()],
        };
        let base = var.as_tensor().copy()?;
        let flat: Vec<f64> = base.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let eval = |v: &[f64]| -> Result<f64> {
            var.set(&Tensor::from_slice(v, base.dims(), base.device())?.to_dtype(base.dtype())?)?;
            Ok(loss()?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
        };
        for (i, g) in analytic.iter().enumerate() {
            let mut v = flat.clone();
            v[i] = flat[i] + eps;
            let up = eval(&v)?;
            v[i] = flat[i] - eps;
            let down = eval(&v)?;
            let fd = (up - down) / (2.0 * eps);
            diff += (fd - g).powi(2);
            n_fd += fd * fd;
            n_an += g * g;
        }
        var.set(&base)?;
    }
    let scale = n_fd.max(n_an).sqrt();
    Ok(if scale == 0.0 { 0.0 } else { diff.sqrt() / scale })
}

/// Binary cross-entropy with logits, summed over all but the batch axis and
/// averaged over the batch.
pub fn bce_with_logits_per_item(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    // softplus(x) − x·t, written stably as relu(x) − x·t + log(1 + exp(−|x|)).
    let relu = logits.relu()?;
    let soft = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    let per = ((relu - (logits * target)?)? + soft)?;
    Ok(per.flatten_from(1)?.sum(1)?.mean(0)?)
}

/// Mean squared error over all elements.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Stable SHA-256 over all named tensors.
pub fn weights_digest(tensors: &HashMap<String, Tensor>) -> Result<String> {
    let mut names: Vec<&String> = tensors.keys().collect();
    names.sort();
    let mut h = Sha256::new();
    for name in names {
        h.update(name.as_bytes());
        let v = tensors[name].flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        for x in v {
            h.update(x.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

pub fn varmap_tensors(varmap: &VarMap) -> HashMap<String, Tensor> {
    varmap
        .data()
        .lock()
        .expect("varmap lock")
        .iter()
        .map(|(k, v)| (k.clone(), v.as_tensor().detach()))
        .collect()
}

/// Loads a safetensors file as frozen (non-trainable) weights.
pub fn load_frozen(path: &Path, device: &Device) -> Result<(HashMap<String, Tensor>, VarBuilder<'static>)> {
    let tensors = candle_core::safetensors::load(path, device)?;
    let vb = VarBuilder::from_tensors(tensors.clone(), DType::F32, device);
    Ok((tensors, vb))
}

/// Loads a safetensors file into a fresh, trainable varmap.
pub fn load_trainable(path: &Path, varmap: &mut VarMap) -> Result<()> {
    varmap.load(path)?;
    Ok(())
}

/// Feed-forward stack with SiLU between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(vb: VarBuilder, dims: &[usize]) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| candle_nn::linear(w[0], w[1], vb.pp(format!("fc{i}"))))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.silu()?;
            }
        }
        Ok(h)
    }
}

/// Number of stride-2 stages between a `size` image and a 4×4 grid.
pub fn stages_for(size: usize) -> Result<usize> {
    if size < 8 || !size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "network image size must be a power of two >= 8, got {size}"
        )));
    }
    Ok(size.trailing_zeros() as usize - 2)
}

/// Channel widths halving per stage from `base`, floored at 8.
fn channel_ladder(base: usize, stages: usize) -> Vec<usize> {
    (0..=stages).map(|i| (base >> i).max(8)).collect()
}

/// Maps a code vector to `(N, 3, S, S)` logits through transposed convolutions.
/// Activations are smooth so painted strokes are smooth in the action.
#[derive(Clone, Debug)]
pub struct Decoder {
    fc: Linear,
    deconvs: Vec<ConvTranspose2d>,
    base: usize,
}

impl Decoder {
    pub fn new(vb: VarBuilder, code_dim: usize, base_channels: usize, size: usize) -> Result<Self> {
        let stages = stages_for(size)?;
        let ch = channel_ladder(base_channels, stages);
        let fc = candle_nn::linear(code_dim, base_channels * 16, vb.pp("fc"))?;
        let cfg = ConvTranspose2dConfig {
            padding: 1,
            stride: 2,
            ..Default::default()
        };
        let mut deconvs = Vec::with_capacity(stages);
        for i in 0..stages {
            let out = if i + 1 == stages { 3 } else { ch[i + 1] };
            deconvs.push(candle_nn::conv_transpose2d(ch[i], out, 4, cfg, vb.pp(format!("deconv{i}")))?);
        }
        Ok(Self {
            fc,
            deconvs,
            base: base_channels,
        })
    }

    pub fn forward(&self, code: &Tensor) -> Result<Tensor> {
        let n = code.dim(0)?;
        let mut h = self.fc.forward(code)?.silu()?.reshape((n, self.base, 4, 4))?;
        for (i, d) in self.deconvs.iter().enumerate() {
            h = d.forward(&h)?;
            if i + 1 < self.deconvs.len() {
                h = h.silu()?;
            }
        }
        Ok(h)
    }
}

/// Strided convolution stack from an image to a 4×4 feature grid.
#[derive(Clone, Debug)]
pub struct ConvTrunk {
    convs: Vec<Conv2d>,
    out_channels: usize,
    smooth: bool,
}

impl ConvTrunk {
    pub fn new(vb: VarBuilder, in_channels: usize, first_channels: usize, size: usize) -> Result<Self> {
        let stages = stages_for(size)?;
        let cfg = Conv2dConfig {
            padding: 1,
            stride: 2,
            ..Default::default()
        };
        let mut convs = Vec::with_capacity(stages);
        let mut c_in = in_channels;
        let mut c_out = first_channels;
        for i in 0..stages {
            convs.push(candle_nn::conv2d(c_in, c_out, 4, cfg, vb.pp(format!("conv{i}")))?);
            c_in = c_out;
            c_out = (c_out * 2).min(first_channels * 8);
        }
        Ok(Self {
            convs,
            out_channels: c_in,
            smooth: false,
        })
    }

    /// Same stack with SiLU activations, for encoders that must be smooth in
    /// their weights.
    pub fn new_smooth(vb: VarBuilder, in_channels: usize, first_channels: usize, size: usize) -> Result<Self> {
        Ok(Self {
            smooth: true,
            ..Self::new(vb, in_channels, first_channels, size)?
        })
    }

    pub fn out_features(&self) -> usize {
        self.out_channels * 16
    }

    /// Returns every post-activation feature map; the last is the trunk output.
    pub fn forward_features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut feats = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for c in &self.convs {
            let z = c.forward(&h)?;
            h = if self.smooth { z.silu()? } else { lrelu(&z)? };
            feats.push(h.clone());
        }
        Ok(feats)
    }

    /// Output plus pre-activation maps, for the explicit input gradient.
    fn forward_with_preacts(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        debug_assert!(!self.smooth, "explicit gradient assumes leaky ReLU");
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for c in &self.convs {
            let z = c.forward(&h)?;
            h = lrelu(&z)?;
            pre.push(z);
        }
        Ok((h, pre))
    }
}

/// VAE encoder: image to posterior mean and log-variance.
#[derive(Clone, Debug)]
pub struct Encoder {
    trunk: ConvTrunk,
    mu: Linear,
    logvar: Linear,
}

impl Encoder {
    pub fn new(vb: VarBuilder, latent_dim: usize, first_channels: usize, size: usize) -> Result<Self> {
        let trunk = ConvTrunk::new(vb.pp("trunk"), 3, first_channels, size)?;
        let f = trunk.out_features();
        Ok(Self {
            mu: candle_nn::linear(f, latent_dim, vb.pp("mu"))?,
            logvar: candle_nn::linear(f, latent_dim, vb.pp("logvar"))?,
            trunk,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self
            .trunk
            .forward_features(x)?
            .pop()
            .expect("at least one stage")
            .flatten_from(1)?;
        Ok((self.mu.forward(&h)?, self.logvar.forward(&h)?))
    }
}

/// Wasserstein critic: conv trunk followed by a linear score.
#[derive(Clone, Debug)]
pub struct ConvCritic {
    trunk: ConvTrunk,
    head: Linear,
}

impl ConvCritic {
    pub fn new(vb: VarBuilder, in_channels: usize, first_channels: usize, size: usize) -> Result<Self> {
        let trunk = ConvTrunk::new(vb.pp("trunk"), in_channels, first_channels, size)?;
        let head = candle_nn::linear(trunk.out_features(), 1, vb.pp("head"))?;
        Ok(Self { trunk, head })
    }

    /// Scores `(N, C, S, S)` inputs; returns `(N,)`.
    pub fn score(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.score_with_features(x)?.0)
    }

    pub fn score_with_features(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let feats = self.trunk.forward_features(x)?;
        let last = feats.last().expect("at least one stage").flatten_from(1)?;
        let s = self.head.forward(&last)?.squeeze(D::Minus1)?;
        Ok((s, feats))
    }

    /// Score and its gradient with respect to the input, built from ordinary
    /// tensor ops so that a penalty on the gradient can itself be
    /// back-propagated into the critic weights.
    ///
    /// Leaky-ReLU slopes are piecewise constant, so their masks are detached.
    pub fn score_and_input_grad(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (h, pre) = self.trunk.forward_with_preacts(x)?;
        let n = x.dim(0)?;
        let flat = h.flatten_from(1)?;
        let s = self.head.forward(&flat)?.squeeze(D::Minus1)?;
        let w = self.head.weight(); // (1, F)
        let mut g = w.broadcast_as((n, w.dim(1)?))?.reshape(h.shape())?;
        for (conv, z) in self.trunk.convs.iter().zip(pre.iter()).rev() {
            let mask = z
                .detach()
                .gt(0.0)?
                .where_cond(&z.ones_like()?, &z.ones_like()?.affine(LEAKY_SLOPE, 0.0)?)?;
            g = (g * mask)?;
            g = g.conv_transpose2d(conv.weight(), 1, 0, 2, 1)?;
        }
        Ok((s, g))
    }
}

/// `E[(‖∇‖₂ − 1)²]` over the batch, for gradients of shape `(N, ...)`.
pub fn gradient_penalty(grad: &Tensor) -> Result<Tensor> {
    let norm = (grad.flatten_from(1)?.sqr()?.sum(1)? + 1e-12)?.sqrt()?;
    Ok(norm.affine(1.0, -1.0)?.sqr()?.mean(0)?)
}

/// Uniform interpolation weights `(N, 1, 1, 1)` from a seeded generator.
pub fn interpolation_weights(rng: &mut ChaCha8Rng, n: usize, device: &Device) -> Result<Tensor> {
    let v: Vec<f32> = (0..n).map(|_| rng.random::<f32>()).collect();
    Ok(Tensor::from_vec(v, (n, 1, 1, 1), device)?)
}

/// Standard normal tensor from a seeded generator.
pub fn seeded_randn(rng: &mut ChaCha8Rng, shape: &[usize], device: &Device) -> Result<Tensor> {
    use rand_distr::{Distribution, StandardNormal};
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(v, shape, device)?)
}

/// A seeded shuffle of `indices`.
pub fn shuffled(indices: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v = indices.to_vec();
    v.shuffle(rng);
    v
}

/// Serializable view of a JSON sidecar next to a weights file.
pub fn sidecar_path(weights: &Path) -> std::path::PathBuf {
    weights.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let dev = Device::Cpu;
        let build = |seed| {
            let vm = VarMap::new();
            let vb = VarBuilder::from_varmap(&vm, DType::F32, &dev);
            Mlp::new(vb, &[4, 8, 2]).unwrap();
            seeded_init(&vm, seed).unwrap();
            weights_digest(&varmap_tensors(&vm)).unwrap()
        };
        assert_eq!(build(1), build(1));
        assert_ne!(build(1), build(2));
    }

    #[test]
    fn decoder_and_trunk_shapes() {
        let dev = Device::Cpu;
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, DType::F32, &dev);
        let dec = Decoder::new(vb.pp("dec"), 5, 32, 32).unwrap();
        let out = dec.forward(&Tensor::zeros((2, 5), DType::F32, &dev).unwrap()).unwrap();
        assert_eq!(out.dims(), &[2, 3, 32, 32]);
        let trunk = ConvTrunk::new(vb.pp("t"), 3, 8, 32).unwrap();
        let feats = trunk.forward_features(&out).unwrap();
        assert_eq!(feats.last().unwrap().dims(), &[2, 32, 4, 4]);
        assert!(stages_for(24).is_err());
    }

    #[test]
    fn explicit_input_gradient_matches_autograd() {
        let dev = Device::Cpu;
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, DType::F32, &dev);
        let critic = ConvCritic::new(vb, 5, 8, 16).unwrap();
        seeded_init(&vm, 3).unwrap();
        let x = Var::from_tensor(&Tensor::randn(0f32, 1.0, (3, 5, 16, 16), &dev).unwrap()).unwrap();
        let (s, g) = critic.score_and_input_grad(x.as_tensor()).unwrap();
        let grads = s.sum_all().unwrap().backward().unwrap();
        let auto = grads.get(x.as_tensor()).unwrap();
        let diff = (auto - &g).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        let scale = g.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff <= 1e-5 * scale.max(1.0), "diff {diff} scale {scale}");
    }

    #[test]
    fn penalty_gradient_reaches_critic_weights() {
        let dev = Device::Cpu;
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, DType::F32, &dev);
        let critic = ConvCritic::new(vb, 3, 8, 8).unwrap();
        seeded_init(&vm, 4).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 3, 8, 8), &dev).unwrap();
        let (_, g) = critic.score_and_input_grad(&x).unwrap();
        let gp = gradient_penalty(&g).unwrap();
        let grads = gp.backward().unwrap();
        let w = vm.data().lock().unwrap()["trunk.conv0.weight"].clone();
        let gw = grads.get(w.as_tensor()).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(gw > 0.0);
    }

    #[test]
    fn bce_matches_direct_formula() {
        let dev = Device::Cpu;
        let logits = Tensor::new(&[[-3.0f32, 0.0, 2.5]], &dev).unwrap();
        let target = Tensor::new(&[[0.0f32, 1.0, 0.3]], &dev).unwrap();
        let got = bce_with_logits_per_item(&logits, &target).unwrap().to_scalar::<f32>().unwrap();
        let sig = |x: f32| 1.0 / (1.0 + (-x).exp());
        let expected: f32 = [(-3.0f32, 0.0f32), (0.0, 1.0), (2.5, 0.3)]
            .iter()
            .map(|&(x, t)| -(t * sig(x).ln() + (1.0 - t) * (1.0 - sig(x)).ln()))
            .sum();
        assert!((got - expected).abs() < 1e-5);
    }

    #[test]
    fn linear_lr_interpolates_to_the_final_rate() {
        assert_eq!(linear_lr(1e-3, None, 50, 100), 1e-3);
        assert!((linear_lr(1e-3, Some(1e-4), 0, 100) - 1e-3).abs() < 1e-12);
        assert!((linear_lr(1e-3, Some(1e-4), 50, 100) - 5.5e-4).abs() < 1e-12);
        assert!((linear_lr(1e-3, Some(1e-4), 100, 100) - 1e-4).abs() < 1e-12);
    }
}
