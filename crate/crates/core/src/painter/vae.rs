//! Two-stage VAE painter.
//!
//! Stage one fits a convolutional VAE on stroke images alone. Stage two fits
//! a feed-forward mapper from actions to the encoder's posterior mean. The
//! painter is `decoder ∘ mapper`.

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dataset, dataset_batch, BatchStream, PainterArch, PainterCheckpoint, PainterKind, PainterMeta, CHECKPOINT_FORMAT};
use crate::error::{Error, Result};
use crate::nn::{self, Decoder, Encoder, Mlp};
use crate::oracle::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaePainterConfig {
    pub latent_dim: usize,
    pub kl_weight: f64,
    pub vae_epochs: usize,
    pub mapper_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub decoder_channels: usize,
    pub encoder_channels: usize,
    /// Caps the optimizer steps of each stage, overriding the epoch counts.
    pub max_steps: Option<usize>,
    pub allow_discrete: bool,
}

impl Default for VaePainterConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            kl_weight: 1.0,
            vae_epochs: 10,
            mapper_epochs: 30,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
            hidden: 256,
            decoder_channels: 64,
            encoder_channels: 16,
            max_steps: None,
            allow_discrete: false,
        }
    }
}

impl VaePainterConfig {
    fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 {
            return Err(Error::InvalidArgument("latent_dim must be >= 2".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.kl_weight < 0.0 {
            return Err(Error::InvalidArgument("learning_rate and batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct VaeTrainLog {
    pub vae_loss: Vec<f32>,
    pub mapper_loss: Vec<f32>,
}

pub fn train_vae_painter(ds: &Dataset, cfg: &VaePainterConfig) -> Result<(PainterCheckpoint, VaeTrainLog)> {
    cfg.validate()?;
    check_dataset(ds, cfg.allow_discrete)?;
    let dev = Device::Cpu;
    let size = ds.canvas_size();
    let (train_idx, _) = ds.split_indices();
    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let mut log = VaeTrainLog::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Stage 1: image VAE.
    let vae_vm = VarMap::new();
    let vb = VarBuilder::from_varmap(&vae_vm, DType::F32, &dev);
    let encoder = Encoder::new(vb.pp("encoder"), cfg.latent_dim, cfg.encoder_channels, size)?;
    let decoder = Decoder::new(vb.pp("decoder"), cfg.latent_dim, cfg.decoder_channels, size)?;
    nn::seeded_init(&vae_vm, cfg.seed)?;
    let mut opt = nn::adam(&vae_vm, cfg.learning_rate, 0.9, 0.999)?;
    let mut stream = BatchStream::new(train_idx.clone(), cfg.seed.wrapping_add(1));
    let vae_steps = cfg.max_steps.unwrap_or(cfg.vae_epochs * steps_per_epoch);
    for step in 0..vae_steps {
        let idx = stream.next_batch(cfg.batch_size);
        let (_, x) = dataset_batch(ds, &idx, &dev)?;
        let (mu, logvar) = encoder.forward(&x)?;
        let eps = nn::seeded_randn(&mut rng, mu.dims(), &dev)?;
        let z = (&mu + (logvar.affine(0.5, 0.0)?.exp()? * eps)?)?;
        let logits = decoder.forward(&z)?;
        let recon = nn::bce_with_logits_per_item(&logits, &x)?;
        let kl = ((logvar.affine(1.0, 1.0)? - mu.sqr()?)? - logvar.exp()?)?
            .sum(1)?
            .mean(0)?
            .affine(-0.5, 0.0)?;
        let loss = (recon + kl.affine(cfg.kl_weight, 0.0)?)?;
        let v = nn::checked_scalar(&loss, "vae loss", step, &log.vae_loss)?;
        log.vae_loss.push(v);
        nn::step(&mut opt, &loss)?;
        if step % 200 == 0 {
            log::debug!("vae step {step}/{vae_steps} loss {v:.3}");
        }
    }

    // Posterior means for every training record.
    let mut targets = Vec::with_capacity(train_idx.len() * cfg.latent_dim);
    for chunk in train_idx.chunks(256) {
        let (_, x) = dataset_batch(ds, chunk, &dev)?;
        let (mu, _) = encoder.forward(&x)?;
        targets.extend(mu.detach().flatten_all()?.to_vec1::<f32>()?);
    }
    let targets = Tensor::from_vec(targets, (train_idx.len(), cfg.latent_dim), &dev)?;
    let d = ds.action_dim();
    let mut actions = Vec::with_capacity(train_idx.len() * d);
    for &i in &train_idx {
        actions.extend_from_slice(ds.action(i));
    }
    let actions = Tensor::from_vec(actions, (train_idx.len(), d), &dev)?;

    // Stage 2: action → posterior-mean mapper.
    let map_vm = VarMap::new();
    let mvb = VarBuilder::from_varmap(&map_vm, DType::F32, &dev);
    let mapper = Mlp::new(mvb.pp("trunk"), &[d, cfg.hidden, cfg.hidden, cfg.latent_dim])?;
    nn::seeded_init(&map_vm, cfg.seed.wrapping_add(2))?;
    let mut opt = nn::adam(&map_vm, cfg.learning_rate, 0.9, 0.999)?;
    let positions: Vec<usize> = (0..train_idx.len()).collect();
    let mut stream = BatchStream::new(positions, cfg.seed.wrapping_add(3));
    let map_steps = cfg.max_steps.unwrap_or(cfg.mapper_epochs * steps_per_epoch);
    for step in 0..map_steps {
        let idx: Vec<u32> = stream.next_batch(cfg.batch_size).into_iter().map(|i| i as u32).collect();
        let sel = Tensor::from_vec(idx.clone(), idx.len(), &dev)?;
        let pred = mapper.forward(&actions.index_select(&sel, 0)?)?;
        let loss = nn::mse(&pred, &targets.index_select(&sel, 0)?)?;
        let v = nn::checked_scalar(&loss, "mapper loss", step, &log.mapper_loss)?;
        log.mapper_loss.push(v);
        nn::step(&mut opt, &loss)?;
    }

    let mut tensors = nn::varmap_tensors(&map_vm);
    for (k, v) in nn::varmap_tensors(&vae_vm) {
        if k.starts_with("decoder.") {
            tensors.insert(k, v);
        }
    }
    let arch = PainterArch {
        canvas_size: size,
        action_dim: d,
        hidden: cfg.hidden,
        code_dim: cfg.latent_dim,
        decoder_channels: cfg.decoder_channels,
    };
    let meta = PainterMeta {
        format: CHECKPOINT_FORMAT.into(),
        kind: PainterKind::Vae,
        action_dim: d,
        canvas_size: size,
        discrete: ds.header().is_discrete(),
        arch,
        training_config: serde_json::to_value(cfg)?,
        dataset_fingerprint: ds.fingerprint().to_string(),
    };
    Ok((PainterCheckpoint::from_tensors(meta, tensors, &dev)?, log))
}
