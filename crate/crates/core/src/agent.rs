//! Recurrent painting agent: maps a target image to a fixed-length stroke
//! sequence, trained through a frozen painter against a conditional critic.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::rnn::{LSTMConfig, LSTMState, RNN};
use candle_nn::{Linear, VarBuilder, VarMap, LSTM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canvas::composite_strokes;
use crate::data::{render_sequence, templates_by_class, LabeledImages, StrokeTemplate};
use crate::error::{Error, Result};
use crate::image::{images_to_tensor, tensor_to_images, Image};
use crate::nn::{self, ConvCritic, ConvTrunk};
use crate::oracle::{Action, OracleConfig, ACTION_DIM};
use crate::painter::{BatchStream, PainterCheckpoint};

pub const AGENT_FORMAT: &str = "strokeforge-agent/1";

pub type StrokeSequence = Vec<Action>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub n_strokes: usize,
    pub recurrent_state_dim: usize,
    /// First-layer width of the strided-conv target encoder.
    pub encoder_channels: usize,
    pub code_dim: usize,
    pub adversarial_loss_weight: f64,
    pub feature_match_weight: f64,
    pub gradient_penalty_weight: f64,
    pub critic_channels: usize,
    pub critic_iters: usize,
    pub learning_rate: f64,
    pub critic_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    /// Real pairs are `(x, aug(x))`: integer shifts up to this many pixels…
    pub aug_shift_px: usize,
    /// …and a uniform brightness offset of at most this magnitude.
    pub brightness_jitter: f32,
    /// Feed an encoding of the current canvas to every step.
    pub canvas_feedback: bool,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            n_strokes: 4,
            recurrent_state_dim: 128,
            encoder_channels: 16,
            code_dim: 128,
            adversarial_loss_weight: 1.0,
            feature_match_weight: 10.0,
            gradient_penalty_weight: 10.0,
            critic_channels: 16,
            critic_iters: 2,
            learning_rate: 3e-4,
            critic_learning_rate: 3e-4,
            beta1: 0.5,
            beta2: 0.9,
            batch_size: 32,
            epochs: 10,
            max_steps: None,
            aug_shift_px: 2,
            brightness_jitter: 0.05,
            canvas_feedback: false,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_strokes == 0 {
            return Err(Error::InvalidArgument("n_strokes must be >= 1".into()));
        }
        if self.recurrent_state_dim == 0 || self.code_dim == 0 || self.encoder_channels == 0 {
            return Err(Error::InvalidArgument("agent layer sizes must be positive".into()));
        }
        if self.batch_size == 0 || self.critic_iters == 0 || !(self.learning_rate > 0.0) || !(self.critic_learning_rate > 0.0) {
            return Err(Error::InvalidArgument("batch size, critic iterations and learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Target encoder, LSTM cell and action head.
#[derive(Clone, Debug)]
pub struct AgentNet {
    encoder: ConvTrunk,
    enc_fc: Linear,
    lstm: LSTM,
    head: Linear,
    cfg: AgentConfig,
    canvas_size: usize,
}

impl AgentNet {
    pub fn new(vb: VarBuilder, cfg: &AgentConfig, canvas_size: usize) -> Result<Self> {
        cfg.validate()?;
        let encoder = ConvTrunk::new_smooth(vb.pp("encoder"), 3, cfg.encoder_channels, canvas_size)?;
        let enc_fc = candle_nn::linear(encoder.out_features(), cfg.code_dim, vb.pp("enc_fc"))?;
        let feedback = if cfg.canvas_feedback { cfg.code_dim } else { 0 };
        let lstm = candle_nn::lstm(cfg.code_dim + feedback + ACTION_DIM, cfg.recurrent_state_dim, LSTMConfig::default(), vb.pp("lstm"))?;
        let head = candle_nn::linear(cfg.recurrent_state_dim, ACTION_DIM, vb.pp("head"))?;
        Ok(Self {
            encoder,
            enc_fc,
            lstm,
            head,
            cfg: cfg.clone(),
            canvas_size,
        })
    }

    fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.encoder.forward_features(x)?.pop().expect("at least one stage").flatten_from(1)?;
        Ok(self.enc_fc.forward(&h)?.silu()?)
    }

    fn check_targets(&self, targets: &Tensor) -> Result<()> {
        let (_, c, h, w) = targets.dims4()?;
        if c != 3 || h != self.canvas_size || w != self.canvas_size {
            return Err(Error::ShapeMismatch {
                expected: format!("(N, 3, {s}, {s}) targets", s = self.canvas_size),
                got: format!("{:?}", targets.dims()),
            });
        }
        Ok(())
    }

    /// Actions `(N, n_strokes, 12)` in `(0, 1)`, with the canvas they paint
    /// when a painter is supplied (required with canvas feedback).
    pub fn forward(&self, targets: &Tensor, painter: Option<&PainterCheckpoint>) -> Result<(Tensor, Option<Tensor>)> {
        self.check_targets(targets)?;
        if self.cfg.canvas_feedback && painter.is_none() {
            return Err(Error::InvalidArgument("canvas feedback needs a painter".into()));
        }
        let n = targets.dim(0)?;
        let code = self.encode(targets)?;
        let mut state: LSTMState = self.lstm.zero_state(n)?;
        let mut prev = Tensor::zeros((n, ACTION_DIM), targets.dtype(), targets.device())?;
        let mut canvas = painter.map(|_| targets.ones_like()).transpose()?;
        let mut actions = Vec::with_capacity(self.cfg.n_strokes);
        for _ in 0..self.cfg.n_strokes {
            let mut parts = vec![code.clone()];
            if self.cfg.canvas_feedback {
                parts.push(self.encode(canvas.as_ref().expect("painter present"))?);
            }
            parts.push(prev.clone());
            state = self.lstm.step(&Tensor::cat(&parts, 1)?, &state)?;
            let a = candle_nn::ops::sigmoid(&self.head.forward(state.h())?)?;
            if let (Some(p), Some(c)) = (painter, canvas.as_ref()) {
                canvas = Some(crate::canvas::composite_tensor(c, &p.paint(&a)?)?);
            }
            actions.push(a.clone());
            prev = a;
        }
        Ok((Tensor::stack(&actions, 1)?, canvas))
    }
}

/// Composites painter strokes for `(N, T, 12)` actions onto white canvases.
pub fn paint_actions(painter: &PainterCheckpoint, actions: &Tensor) -> Result<Tensor> {
    let (n, t, d) = actions.dims3()?;
    let s = painter.canvas_size();
    if t == 0 {
        return Ok(Tensor::ones((n, 3, s, s), actions.dtype(), actions.device())?);
    }
    let strokes = painter.paint(&actions.reshape((n * t, d))?)?.reshape((n, t, 3, s, s))?;
    composite_strokes(&strokes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub format: String,
    pub config: AgentConfig,
    pub canvas_size: usize,
    pub action_dim: usize,
    /// Training stages applied so far, in order.
    pub stages: Vec<String>,
    pub painter_digest: String,
}

#[derive(Clone, Debug)]
pub struct AgentCheckpoint {
    pub meta: AgentMeta,
    net: AgentNet,
    tensors: HashMap<String, Tensor>,
}

impl AgentCheckpoint {
    /// A freshly initialized agent.
    pub fn new(cfg: &AgentConfig, canvas_size: usize) -> Result<Self> {
        let vm = VarMap::new();
        AgentNet::new(VarBuilder::from_varmap(&vm, DType::F32, &Device::Cpu), cfg, canvas_size)?;
        nn::seeded_init(&vm, cfg.seed)?;
        let meta = AgentMeta {
            format: AGENT_FORMAT.into(),
            config: cfg.clone(),
            canvas_size,
            action_dim: ACTION_DIM,
            stages: Vec::new(),
            painter_digest: String::new(),
        };
        Self::from_tensors(meta, nn::varmap_tensors(&vm))
    }

    pub fn from_tensors(meta: AgentMeta, tensors: HashMap<String, Tensor>) -> Result<Self> {
        let frozen: HashMap<String, Tensor> = tensors.into_iter().map(|(k, v)| (k, v.detach())).collect();
        let vb = VarBuilder::from_tensors(frozen.clone(), DType::F32, &Device::Cpu);
        let net = AgentNet::new(vb, &meta.config, meta.canvas_size)?;
        Ok(Self { meta, net, tensors: frozen })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        candle_core::safetensors::save(&self.tensors, path)?;
        nn::write_json(&nn::sidecar_path(path), &self.meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: AgentMeta = nn::read_json(&nn::sidecar_path(path))?;
        if meta.format != AGENT_FORMAT {
            return Err(Error::CheckpointMismatch(format!("unknown format {:?}", meta.format)));
        }
        let (tensors, _) = nn::load_frozen(path, &Device::Cpu)?;
        Self::from_tensors(meta, tensors)
    }

    pub fn net(&self) -> &AgentNet {
        &self.net
    }

    pub fn tensors(&self) -> &HashMap<String, Tensor> {
        &self.tensors
    }

    pub fn canvas_size(&self) -> usize {
        self.meta.canvas_size
    }

    pub fn n_strokes(&self) -> usize {
        self.meta.config.n_strokes
    }

    pub fn weights_digest(&self) -> Result<String> {
        nn::weights_digest(&self.tensors)
    }

    /// A trainable copy of the weights in `dtype`, with the network bound to it.
    pub fn trainable(&self, dtype: DType) -> Result<(VarMap, AgentNet)> {
        let vm = VarMap::new();
        let net = AgentNet::new(VarBuilder::from_varmap(&vm, dtype, &Device::Cpu), &self.meta.config, self.meta.canvas_size)?;
        {
            let data = vm.data().lock().expect("varmap lock");
            for (name, var) in data.iter() {
                let t = self
                    .tensors
                    .get(name)
                    .ok_or_else(|| Error::CheckpointMismatch(format!("missing agent weight {name}")))?;
                var.set(&t.to_dtype(dtype)?)?;
            }
        }
        Ok((vm, net))
    }

    fn with_weights(&self, vm: &VarMap, stage: &str, painter: &PainterCheckpoint) -> Result<Self> {
        let mut meta = self.meta.clone();
        meta.stages.push(stage.to_string());
        meta.painter_digest = painter.weights_digest()?;
        let tensors = nn::varmap_tensors(vm)
            .into_iter()
            .map(|(k, v)| Ok((k, v.to_dtype(DType::F32)?)))
            .collect::<Result<HashMap<_, _>>>()?;
        Self::from_tensors(meta, tensors)
    }

    /// Stroke sequences for a batch of target images.
    pub fn act(&self, targets: &[Image], painter: Option<&PainterCheckpoint>) -> Result<Vec<StrokeSequence>> {
        let mut out = Vec::with_capacity(targets.len());
        for chunk in targets.chunks(128) {
            let (a, _) = self.net.forward(&images_to_tensor(chunk, &Device::Cpu)?, painter)?;
            for seq in a.to_vec3::<f32>()? {
                out.push(seq.iter().map(|v| Action::from_slice(v)).collect::<Result<Vec<_>>>()?);
            }
        }
        Ok(out)
    }
}

/// Canvases and actions for targets painted through the (frozen) painter.
pub fn rollout(agent: &AgentCheckpoint, painter: &PainterCheckpoint, targets: &[Image]) -> Result<(Vec<Image>, Vec<StrokeSequence>)> {
    if painter.canvas_size() != agent.canvas_size() {
        return Err(Error::CheckpointMismatch(format!(
            "painter canvas {} differs from agent canvas {}",
            painter.canvas_size(),
            agent.canvas_size()
        )));
    }
    let mut canvases = Vec::with_capacity(targets.len());
    let mut seqs = Vec::with_capacity(targets.len());
    for chunk in targets.chunks(128) {
        let x = images_to_tensor(chunk, painter.device())?;
        let (a, fed) = agent.net.forward(&x, Some(painter))?;
        let canvas = match fed {
            Some(c) if agent.meta.config.canvas_feedback => c,
            _ => paint_actions(painter, &a)?,
        };
        canvases.extend(tensor_to_images(&canvas)?);
        for seq in a.to_vec3::<f32>()? {
            seqs.push(seq.iter().map(|v| Action::from_slice(v)).collect::<Result<Vec<_>>>()?);
        }
    }
    Ok((canvases, seqs))
}

/// Weight of the stroke-imitation term over the course of adversarial training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StrokeLossSchedule {
    /// `start → end` linearly over the first `fraction` of steps, then `end`.
    Linear { start: f64, end: f64, fraction: f64 },
    Constant { value: f64 },
}

impl Default for StrokeLossSchedule {
    fn default() -> Self {
        Self::Linear {
            start: 1.0,
            end: 0.0,
            fraction: 0.3,
        }
    }
}

impl StrokeLossSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Linear { start, end, fraction } => {
                start.is_finite() && end.is_finite() && start >= 0.0 && end >= 0.0 && fraction > 0.0 && fraction <= 1.0
            }
            Self::Constant { value } => value.is_finite() && value >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid stroke loss schedule {self:?}")))
        }
    }

    pub fn weight(&self, step: usize, total: usize) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Linear { start, end, fraction } => {
                let t = step as f64 / total.max(1) as f64;
                if t >= fraction {
                    end
                } else {
                    start + (end - start) * t / fraction
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AgentTrainLog {
    pub critic_loss: Vec<f32>,
    pub agent_loss: Vec<f32>,
    pub adversarial: Vec<f32>,
    pub feature_match: Vec<f32>,
    pub stroke_mse: Vec<f32>,
    pub stroke_weight: Vec<f32>,
}

/// Integer shift (white fill) plus a uniform brightness offset.
pub fn augment<R: Rng + ?Sized>(img: &Image, shift: usize, brightness: f32, rng: &mut R) -> Image {
    let s = shift as i64;
    let (dy, dx) = if s > 0 { (rng.random_range(-s..=s), rng.random_range(-s..=s)) } else { (0, 0) };
    let b = if brightness > 0.0 { rng.random_range(-brightness..=brightness) } else { 0.0 };
    let (h, w) = (img.height() as i64, img.width() as i64);
    let mut out = Image::white(img.height(), img.width());
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = (y - dy, x - dx);
            let p = if (0..h).contains(&sy) && (0..w).contains(&sx) {
                img.pixel(sy as usize, sx as usize)
            } else {
                [1.0; 3]
            };
            out.set_pixel(y as usize, x as usize, p.map(|v| (v + b).clamp(0.0, 1.0)));
        }
    }
    out
}

fn check_images(data: &LabeledImages, size: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(img) = data.images.iter().find(|i| i.height() != size || i.width() != size) {
        return Err(Error::ShapeMismatch {
            expected: format!("{size}x{size} images"),
            got: format!("{}x{}", img.height(), img.width()),
        });
    }
    Ok(())
}

/// Template actions gathered per record label: `(N, T, 12)`.
fn template_targets(templates: &[StrokeTemplate], labels: &[usize], idx: &[usize], dtype: DType) -> Result<Tensor> {
    let t = templates[0].actions.len();
    let flat: Vec<f32> = idx
        .iter()
        .flat_map(|&i| templates[labels[i]].actions.iter().flat_map(|a| a.to_array()))
        .collect();
    Ok(Tensor::from_vec(flat, (idx.len(), t, ACTION_DIM), &Device::Cpu)?.to_dtype(dtype)?)
}

struct StrokeTerm<'a> {
    templates: Vec<StrokeTemplate>,
    labels: &'a [usize],
    schedule: StrokeLossSchedule,
}

fn adversarial_training(
    start: &AgentCheckpoint,
    painter: &PainterCheckpoint,
    data: &LabeledImages,
    cfg: &AgentConfig,
    stroke: Option<StrokeTerm>,
    stage: &str,
) -> Result<(AgentCheckpoint, AgentTrainLog)> {
    cfg.validate()?;
    let size = start.canvas_size();
    if painter.canvas_size() != size || painter.action_dim() != ACTION_DIM {
        return Err(Error::CheckpointMismatch("painter must be a 12-dim painter at the agent's canvas size".into()));
    }
    check_images(data, size)?;
    let dev = Device::Cpu;
    let (agent_vm, agent) = start.trainable(DType::F32)?;
    let crit_vm = VarMap::new();
    let critic = ConvCritic::new(VarBuilder::from_varmap(&crit_vm, DType::F32, &dev), 6, cfg.critic_channels, size)?;
    nn::seeded_init(&crit_vm, cfg.seed.wrapping_add(11))?;
    let mut agent_opt = nn::adam(&agent_vm, cfg.learning_rate, cfg.beta1, cfg.beta2)?;
    let mut crit_opt = nn::adam(&crit_vm, cfg.critic_learning_rate, cfg.beta1, cfg.beta2)?;
    let steps = cfg
        .max_steps
        .unwrap_or((cfg.epochs * data.len().div_ceil(cfg.batch_size) / (cfg.critic_iters + 1)).max(1));
    let mut stream = BatchStream::new((0..data.len()).collect(), cfg.seed.wrapping_add(12));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(13));
    let mut log = AgentTrainLog::default();

    let batch = |idx: &[usize], rng: &mut ChaCha8Rng| -> Result<(Tensor, Tensor)> {
        let x: Vec<Image> = idx.iter().map(|&i| data.images[i].clone()).collect();
        let real: Vec<Image> = x.iter().map(|i| augment(i, cfg.aug_shift_px, cfg.brightness_jitter, rng)).collect();
        Ok((images_to_tensor(&x, &dev)?, images_to_tensor(&real, &dev)?))
    };
    let paint = |x: &Tensor| -> Result<(Tensor, Tensor)> {
        let (a, fed) = agent.forward(x, Some(painter))?;
        let canvas = match fed {
            Some(c) if cfg.canvas_feedback => c,
            _ => paint_actions(painter, &a)?,
        };
        Ok((a, canvas))
    };

    for step in 0..steps {
        let mut crit_sum = 0.0;
        for _ in 0..cfg.critic_iters {
            let idx = stream.next_batch(cfg.batch_size);
            let (x, real) = batch(&idx, &mut rng)?;
            let fake = paint(&x)?.1.detach();
            let real_s = critic.score(&Tensor::cat(&[&x, &real], 1)?)?;
            let fake_s = critic.score(&Tensor::cat(&[&x, &fake], 1)?)?;
            let mut loss = (fake_s.mean(0)? - real_s.mean(0)?)?;
            if cfg.gradient_penalty_weight > 0.0 {
                let eps = nn::interpolation_weights(&mut rng, idx.len(), &dev)?;
                let mix = (real.broadcast_mul(&eps)? + fake.broadcast_mul(&eps.affine(-1.0, 1.0)?)?)?;
                let (_, g) = critic.score_and_input_grad(&Tensor::cat(&[&x, &mix], 1)?)?;
                loss = (loss + nn::gradient_penalty(&g.narrow(1, 3, 3)?)?.affine(cfg.gradient_penalty_weight, 0.0)?)?;
            }
            crit_sum += nn::checked_scalar(&loss, "critic loss", step, &log.critic_loss)?;
            nn::step(&mut crit_opt, &loss)?;
        }

        let idx = stream.next_batch(cfg.batch_size);
        let (x, real) = batch(&idx, &mut rng)?;
        let (actions, canvas) = paint(&x)?;
        let (fake_s, fake_f) = critic.score_with_features(&Tensor::cat(&[&x, &canvas], 1)?)?;
        let (_, real_f) = critic.score_with_features(&Tensor::cat(&[&x, &real], 1)?)?;
        let adv = fake_s.mean(0)?.neg()?;
        let mut fm = Tensor::zeros((), DType::F32, &dev)?;
        for (f, r) in fake_f.iter().zip(&real_f) {
            fm = (fm + nn::mse(f, &r.detach())?)?;
        }
        let fm = fm.affine(1.0 / fake_f.len() as f64, 0.0)?;
        let mut loss = (adv.affine(cfg.adversarial_loss_weight, 0.0)? + fm.affine(cfg.feature_match_weight, 0.0)?)?;
        let (mut smse, mut sw) = (0.0, 0.0);
        if let Some(term) = &stroke {
            let w = term.schedule.weight(step, steps);
            let target = template_targets(&term.templates, term.labels, &idx, DType::F32)?;
            let m = nn::mse(&actions, &target)?;
            smse = m.to_scalar::<f32>()?;
            sw = w as f32;
            if w > 0.0 {
                loss = (loss + m.affine(w, 0.0)?)?;
            }
        }
        let v = nn::checked_scalar(&loss, "agent loss", step, &log.agent_loss)?;
        nn::step(&mut agent_opt, &loss)?;
        log.critic_loss.push(crit_sum / cfg.critic_iters as f32);
        log.agent_loss.push(v);
        log.adversarial.push(adv.to_scalar::<f32>()?);
        log.feature_match.push(fm.to_scalar::<f32>()?);
        log.stroke_mse.push(smse);
        log.stroke_weight.push(sw);
        if step % 100 == 0 {
            log::debug!("agent step {step}/{steps} loss {v:.4}");
        }
    }
    Ok((start.with_weights(&agent_vm, stage, painter)?, log))
}

/// Trains a fresh agent (seeded from `cfg.seed`) through a frozen painter.
pub fn train_agent(data: &LabeledImages, painter: &PainterCheckpoint, cfg: &AgentConfig) -> Result<(AgentCheckpoint, AgentTrainLog)> {
    let start = AgentCheckpoint::new(cfg, painter.canvas_size())?;
    adversarial_training(&start, painter, data, cfg, None, "adversarial")
}

/// Continues adversarial training from `agent`, adding the scheduled
/// stroke-imitation term toward each record's class template.
pub fn resume_adversarial(
    agent: &AgentCheckpoint,
    painter: &PainterCheckpoint,
    data: &LabeledImages,
    templates: &[StrokeTemplate],
    cfg: &AgentConfig,
    schedule: &StrokeLossSchedule,
) -> Result<(AgentCheckpoint, AgentTrainLog)> {
    schedule.validate()?;
    let labels = data.require_labels("resume_adversarial")?;
    let templates = checked_templates(templates, data, agent)?;
    let cfg = AgentConfig {
        n_strokes: agent.n_strokes(),
        recurrent_state_dim: agent.meta.config.recurrent_state_dim,
        encoder_channels: agent.meta.config.encoder_channels,
        code_dim: agent.meta.config.code_dim,
        canvas_feedback: agent.meta.config.canvas_feedback,
        ..cfg.clone()
    };
    let term = StrokeTerm {
        templates,
        labels,
        schedule: schedule.clone(),
    };
    adversarial_training(agent, painter, data, &cfg, Some(term), "resumed")
}

fn checked_templates(templates: &[StrokeTemplate], data: &LabeledImages, agent: &AgentCheckpoint) -> Result<Vec<StrokeTemplate>> {
    let labels = data.require_labels("stroke templates")?;
    let k = data.num_classes().max(labels.iter().max().map_or(0, |m| m + 1));
    let t = templates_by_class(templates, k)?;
    if t[0].actions.len() != agent.n_strokes() {
        return Err(Error::InvalidArgument(format!(
            "templates have {} strokes, agent paints {}",
            t[0].actions.len(),
            agent.n_strokes()
        )));
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreconditionConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Stop once the mean action MSE over the whole set falls below this.
    pub threshold: f64,
    pub check_every: usize,
    pub seed: u64,
}

impl Default for PreconditionConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_steps: 5000,
            threshold: 0.01,
            check_every: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PreconditionLog {
    pub loss: Vec<f32>,
    /// `(step, mean action MSE over the set)` at each check.
    pub checks: Vec<(usize, f64)>,
    pub converged: bool,
}

/// Mean squared difference between agent actions and class templates.
pub fn template_mse(agent: &AgentCheckpoint, data: &LabeledImages, templates: &[StrokeTemplate]) -> Result<f64> {
    let labels = data.require_labels("template_mse")?;
    let t = checked_templates(templates, data, agent)?;
    let seqs = agent.act(&data.images, None)?;
    let mut sum = 0.0;
    for (seq, &l) in seqs.iter().zip(labels) {
        for (a, b) in seq.iter().zip(&t[l].actions) {
            for (x, y) in a.to_array().iter().zip(b.to_array()) {
                sum += ((x - y) as f64).powi(2);
            }
        }
    }
    Ok(sum / (seqs.len() * agent.n_strokes() * ACTION_DIM) as f64)
}

/// Fits the agent's actions to each input's class template by MSE, leaving
/// any critic untouched, until the set-wide MSE drops below the threshold.
pub fn precondition_agent(
    agent: &AgentCheckpoint,
    templates: &[StrokeTemplate],
    data: &LabeledImages,
    cfg: &PreconditionConfig,
) -> Result<(AgentCheckpoint, PreconditionLog)> {
    let labels = data.require_labels("preconditioning")?;
    let t = checked_templates(templates, data, agent)?;
    check_images(data, agent.canvas_size())?;
    if agent.meta.config.canvas_feedback {
        return Err(Error::InvalidArgument("preconditioning supports agents without canvas feedback".into()));
    }
    if cfg.batch_size == 0 || cfg.check_every == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("invalid preconditioning config".into()));
    }
    let dev = Device::Cpu;
    let (vm, net) = agent.trainable(DType::F32)?;
    let mut opt = nn::adam(&vm, cfg.learning_rate, 0.9, 0.999)?;
    let mut stream = BatchStream::new((0..data.len()).collect(), cfg.seed);
    let mut log = PreconditionLog::default();
    let set_mse = |net: &AgentNet| -> Result<f64> {
        let mut sum = 0.0;
        for chunk in (0..data.len()).collect::<Vec<_>>().chunks(256) {
            let x: Vec<Image> = chunk.iter().map(|&i| data.images[i].clone()).collect();
            let (a, _) = net.forward(&images_to_tensor(&x, &dev)?, None)?;
            let target = template_targets(&t, labels, chunk, DType::F32)?;
            sum += (a - target)?.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
        }
        Ok(sum / (data.len() * agent.n_strokes() * ACTION_DIM) as f64)
    };
    for step in 0..cfg.max_steps {
        if step % cfg.check_every == 0 {
            let m = set_mse(&net)?;
            log.checks.push((step, m));
            if m < cfg.threshold {
                log.converged = true;
                break;
            }
        }
        let idx = stream.next_batch(cfg.batch_size);
        let x: Vec<Image> = idx.iter().map(|&i| data.images[i].clone()).collect();
        let (a, _) = net.forward(&images_to_tensor(&x, &dev)?, None)?;
        let loss = nn::mse(&a, &template_targets(&t, labels, &idx, DType::F32)?)?;
        log.loss.push(nn::checked_scalar(&loss, "precondition loss", step, &log.loss)?);
        nn::step(&mut opt, &loss)?;
    }
    if !log.converged {
        let m = set_mse(&net)?;
        log.checks.push((cfg.max_steps, m));
        log.converged = m < cfg.threshold;
    }
    let mut meta = agent.meta.clone();
    meta.stages.push("preconditioned".into());
    let out = AgentCheckpoint::from_tensors(meta, nn::varmap_tensors(&vm))?;
    Ok((out, log))
}

/// Signed area of the polygon through every stroke's three control points
/// in order, with y pointing up, so positive means counter-clockwise on screen.
pub fn signed_area(actions: &[Action]) -> f64 {
    let pts: Vec<(f64, f64)> = actions
        .iter()
        .flat_map(|a| a.control_points())
        .map(|(x, y)| (x as f64, -(y as f64)))
        .collect();
    let n = pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    0.5 * s
}

/// `+1` counter-clockwise, `-1` clockwise, `0` degenerate.
pub fn chirality(actions: &[Action]) -> i8 {
    let a = signed_area(actions);
    if a > 1e-9 {
        1
    } else if a < -1e-9 {
        -1
    } else {
        0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    pub n: usize,
    /// Mean per-image Euclidean distance over all pixel channels.
    pub l2: f64,
    pub white_l2: f64,
    pub mse: f64,
    pub white_mse: f64,
    /// Mean MSE between painter canvases and oracle canvases of the same actions.
    pub transfer_mse: f64,
}

/// Reconstruction quality on `data`, plus the painter-to-oracle transfer gap.
pub fn evaluate_reconstruction(
    agent: &AgentCheckpoint,
    painter: &PainterCheckpoint,
    data: &LabeledImages,
    oracle: &OracleConfig,
) -> Result<(ReconstructionMetrics, Vec<(Image, Image, Image)>)> {
    check_images(data, agent.canvas_size())?;
    if oracle.canvas_size != agent.canvas_size() {
        return Err(Error::CheckpointMismatch("oracle canvas differs from agent canvas".into()));
    }
    let oracle = OracleConfig {
        noise_scale: 0.0,
        ..oracle.clone()
    };
    let (canvases, seqs) = rollout(agent, painter, &data.images)?;
    let white = Image::white(agent.canvas_size(), agent.canvas_size());
    let npx = (agent.canvas_size() * agent.canvas_size() * 3) as f64;
    let mut m = ReconstructionMetrics {
        n: data.len(),
        l2: 0.0,
        white_l2: 0.0,
        mse: 0.0,
        white_mse: 0.0,
        transfer_mse: 0.0,
    };
    let mut triplets = Vec::new();
    for ((target, canvas), seq) in data.images.iter().zip(&canvases).zip(&seqs) {
        let e = canvas.mse(target)? as f64;
        let w = white.mse(target)? as f64;
        m.mse += e;
        m.white_mse += w;
        m.l2 += (e * npx).sqrt();
        m.white_l2 += (w * npx).sqrt();
        let transferred = render_sequence(seq, &oracle)?;
        m.transfer_mse += canvas.mse(&transferred)? as f64;
        if triplets.len() < 8 {
            triplets.push((target.clone(), canvas.clone(), transferred));
        }
    }
    let n = data.len() as f64;
    m.l2 /= n;
    m.white_l2 /= n;
    m.mse /= n;
    m.white_mse /= n;
    m.transfer_mse /= n;
    Ok((m, triplets))
}

/// Across-input variance of the first stroke's start point, and of the
/// targets' ink centroids (a diagnostic of stroke-order stability).
pub fn stroke_order_stability(seqs: &[StrokeSequence], targets: &[Image]) -> (f64, f64) {
    fn var2(pts: &[(f64, f64)]) -> f64 {
        let n = pts.len().max(1) as f64;
        let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
        pts.iter().map(|p| (p.0 - mx).powi(2) + (p.1 - my).powi(2)).sum::<f64>() / n
    }
    let starts: Vec<(f64, f64)> = seqs
        .iter()
        .filter_map(|s| s.first())
        .map(|a| (a.x0 as f64, a.y0 as f64))
        .collect();
    let centroids: Vec<(f64, f64)> = targets
        .iter()
        .map(|img| {
            let (mut sx, mut sy, mut m) = (0.0, 0.0, 0.0);
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let ink = 1.0 - img.pixel(y, x).iter().copied().fold(1.0f32, f32::min) as f64;
                    sx += ink * (x as f64 + 0.5) / img.width() as f64;
                    sy += ink * (y as f64 + 0.5) / img.height() as f64;
                    m += ink;
                }
            }
            if m > 0.0 {
                (sx / m, sy / m)
            } else {
                (0.5, 0.5)
            }
        })
        .collect();
    (var2(&starts), var2(&centroids))
}

/// Writes a stroke sequence as a JSON array of 12-number arrays.
pub fn export_strokes(seq: &[Action], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(seq)?)?;
    Ok(())
}

pub fn import_strokes(path: impl AsRef<Path>) -> Result<StrokeSequence> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Mean of a `(N, …)` tensor's per-item squared norm; used in gradient probes.
pub fn canvas_loss(canvas: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok((canvas - target)?.sqr()?.flatten_from(1)?.sum(D::Minus1)?.mean(0)?)
}
