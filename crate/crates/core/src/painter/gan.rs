//! Conditional Wasserstein GAN painter with gradient penalty.
//!
//! The generator is the deterministic painter network (no noise input). The
//! critic sees the stroke image concatenated with the action broadcast over
//! the spatial grid.

use candle_core::{DType, Device, Tensor};
use candle_nn::{Optimizer, VarBuilder, VarMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dataset, dataset_batch, BatchStream, PainterArch, PainterCheckpoint, PainterKind, PainterMeta, PainterNet, CHECKPOINT_FORMAT};
use crate::error::{Error, Result};
use crate::nn::{self, ConvCritic};
use crate::oracle::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanPainterConfig {
    pub critic_iters_per_gen: usize,
    pub gradient_penalty_weight: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// When set, both learning rates decay linearly to this value.
    pub final_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    /// Weight of a per-pixel cross-entropy term added to the generator loss.
    pub aux_pixel_weight: f64,
    pub seed: u64,
    pub hidden: usize,
    pub code_dim: usize,
    pub decoder_channels: usize,
    pub critic_channels: usize,
    /// Caps the number of generator steps, overriding `epochs`.
    pub max_steps: Option<usize>,
    pub allow_discrete: bool,
}

impl Default for GanPainterConfig {
    fn default() -> Self {
        Self {
            critic_iters_per_gen: 5,
            gradient_penalty_weight: 10.0,
            epochs: 10,
            learning_rate: 1e-4,
            final_learning_rate: None,
            beta1: 0.5,
            beta2: 0.9,
            batch_size: 64,
            aux_pixel_weight: 0.0,
            seed: 0,
            hidden: 256,
            code_dim: 64,
            decoder_channels: 64,
            critic_channels: 32,
            max_steps: None,
            allow_discrete: false,
        }
    }
}

impl GanPainterConfig {
    fn validate(&self) -> Result<()> {
        if self.critic_iters_per_gen == 0 {
            return Err(Error::InvalidArgument("critic_iters_per_gen must be >= 1".into()));
        }
        if !(self.gradient_penalty_weight >= 0.0) || !(self.aux_pixel_weight >= 0.0) {
            return Err(Error::InvalidArgument("penalty and auxiliary weights must be >= 0".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.final_learning_rate.is_some_and(|v| !(v >= 0.0)) {
            return Err(Error::InvalidArgument("learning_rate and batch_size must be positive".into()));
        }
        Ok(())
    }

    fn arch(&self, canvas_size: usize, action_dim: usize) -> PainterArch {
        PainterArch {
            canvas_size,
            action_dim,
            hidden: self.hidden,
            code_dim: self.code_dim,
            decoder_channels: self.decoder_channels,
        }
    }
}

/// Per generator step: mean critic loss, generator loss and the critic's
/// mean scores on the last real and fake batch.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GanTrainLog {
    pub critic_loss: Vec<f32>,
    pub generator_loss: Vec<f32>,
    pub real_score: Vec<f32>,
    pub fake_score: Vec<f32>,
}

/// `(N, 3, S, S)` images concatenated with `(N, d)` actions broadcast to `(N, d, S, S)`.
pub(crate) fn critic_input(images: &Tensor, actions: &Tensor) -> Result<Tensor> {
    let (n, _, h, w) = images.dims4()?;
    let d = actions.dim(1)?;
    let planes = actions.reshape((n, d, 1, 1))?.broadcast_as((n, d, h, w))?;
    Ok(Tensor::cat(&[images, &planes.contiguous()?], 1)?)
}

pub fn train_gan_painter(ds: &Dataset, cfg: &GanPainterConfig) -> Result<(PainterCheckpoint, GanTrainLog)> {
    cfg.validate()?;
    check_dataset(ds, cfg.allow_discrete)?;
    let dev = Device::Cpu;
    let size = ds.canvas_size();
    let d = ds.action_dim();
    let arch = cfg.arch(size, d);

    let gen_vm = VarMap::new();
    let generator = PainterNet::new(VarBuilder::from_varmap(&gen_vm, DType::F32, &dev), &arch)?;
    nn::seeded_init(&gen_vm, cfg.seed)?;
    let crit_vm = VarMap::new();
    let critic = ConvCritic::new(VarBuilder::from_varmap(&crit_vm, DType::F32, &dev), 3 + d, cfg.critic_channels, size)?;
    nn::seeded_init(&crit_vm, cfg.seed.wrapping_add(1))?;
    let mut gen_opt = nn::adam(&gen_vm, cfg.learning_rate, cfg.beta1, cfg.beta2)?;
    let mut crit_opt = nn::adam(&crit_vm, cfg.learning_rate, cfg.beta1, cfg.beta2)?;

    let (train_idx, _) = ds.split_indices();
    let batches_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let gen_steps = cfg
        .max_steps
        .unwrap_or((cfg.epochs * batches_per_epoch / cfg.critic_iters_per_gen).max(1));
    let mut stream = BatchStream::new(train_idx, cfg.seed.wrapping_add(2));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let mut log = GanTrainLog::default();

    for step in 0..gen_steps {
        if cfg.final_learning_rate.is_some() {
            let lr = nn::linear_lr(cfg.learning_rate, cfg.final_learning_rate, step, gen_steps);
            gen_opt.set_learning_rate(lr);
            crit_opt.set_learning_rate(lr);
        }
        let mut crit_sum = 0.0;
        let (mut real_mean, mut fake_mean) = (0.0, 0.0);
        for _ in 0..cfg.critic_iters_per_gen {
            let idx = stream.next_batch(cfg.batch_size);
            let (a, x) = dataset_batch(ds, &idx, &dev)?;
            let fake = generator.forward(&a)?.detach();
            let real_s = critic.score(&critic_input(&x, &a)?)?;
            let fake_s = critic.score(&critic_input(&fake, &a)?)?;
            let mut loss = (fake_s.mean(0)? - real_s.mean(0)?)?;
            if cfg.gradient_penalty_weight > 0.0 {
                let eps = nn::interpolation_weights(&mut rng, idx.len(), &dev)?;
                let mix = (x.broadcast_mul(&eps)? + fake.broadcast_mul(&eps.affine(-1.0, 1.0)?)?)?;
                let (_, g) = critic.score_and_input_grad(&critic_input(&mix, &a)?)?;
                let gp = nn::gradient_penalty(&g.narrow(1, 0, 3)?)?;
                loss = (loss + gp.affine(cfg.gradient_penalty_weight, 0.0)?)?;
            }
            crit_sum += nn::checked_scalar(&loss, "critic loss", step, &log.critic_loss)?;
            real_mean = real_s.mean(0)?.to_scalar::<f32>()?;
            fake_mean = fake_s.mean(0)?.to_scalar::<f32>()?;
            nn::step(&mut crit_opt, &loss)?;
        }

        let idx = stream.next_batch(cfg.batch_size);
        let (a, x) = dataset_batch(ds, &idx, &dev)?;
        let logits = generator.logits(&a)?;
        let fake = candle_nn::ops::sigmoid(&logits)?;
        let mut loss = critic.score(&critic_input(&fake, &a)?)?.mean(0)?.neg()?;
        if cfg.aux_pixel_weight > 0.0 {
            let pixels = (3 * size * size) as f64;
            let bce = nn::bce_with_logits_per_item(&logits, &x)?.affine(cfg.aux_pixel_weight / pixels, 0.0)?;
            loss = (loss + bce)?;
        }
        let g = nn::checked_scalar(&loss, "generator loss", step, &log.generator_loss)?;
        nn::step(&mut gen_opt, &loss)?;

        log.critic_loss.push(crit_sum / cfg.critic_iters_per_gen as f32);
        log.generator_loss.push(g);
        log.real_score.push(real_mean);
        log.fake_score.push(fake_mean);
        if step % 100 == 0 {
            log::debug!("gan step {step}/{gen_steps} critic {crit_sum:.3} gen {g:.3}");
        }
    }

    let meta = PainterMeta {
        format: CHECKPOINT_FORMAT.into(),
        kind: PainterKind::Gan,
        action_dim: d,
        canvas_size: size,
        discrete: ds.header().is_discrete(),
        arch,
        training_config: serde_json::to_value(cfg)?,
        dataset_fingerprint: ds.fingerprint().to_string(),
    };
    Ok((PainterCheckpoint::from_tensors(meta, nn::varmap_tensors(&gen_vm), &dev)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{generate_dataset, OracleConfig};

    fn tiny_cfg() -> GanPainterConfig {
        GanPainterConfig {
            hidden: 32,
            code_dim: 8,
            decoder_channels: 16,
            critic_channels: 8,
            batch_size: 16,
            critic_iters_per_gen: 2,
            max_steps: Some(10),
            ..Default::default()
        }
    }

    #[test]
    fn critic_prefers_real_pairs_early() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.npds");
        generate_dataset(64, &OracleConfig::scaled_to(16), &p, false).unwrap();
        let ds = Dataset::load(&p).unwrap();
        let (ckpt, log) = train_gan_painter(&ds, &tiny_cfg()).unwrap();
        assert_eq!(log.generator_loss.len(), 10);
        let gap: f32 = log.real_score.iter().zip(&log.fake_score).skip(2).map(|(r, f)| r - f).sum();
        assert!(gap > 0.0, "real {:?} fake {:?}", log.real_score, log.fake_score);
        assert_eq!(ckpt.meta.kind, PainterKind::Gan);
        let (again, _) = train_gan_painter(&ds, &tiny_cfg()).unwrap();
        assert_eq!(ckpt.weights_digest().unwrap(), again.weights_digest().unwrap());
    }

    #[test]
    fn rejects_zero_critic_iters() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.npds");
        generate_dataset(4, &OracleConfig::scaled_to(16), &p, false).unwrap();
        let ds = Dataset::load(&p).unwrap();
        let cfg = GanPainterConfig {
            critic_iters_per_gen: 0,
            ..tiny_cfg()
        };
        assert!(matches!(train_gan_painter(&ds, &cfg), Err(Error::InvalidArgument(_))));
    }
}
