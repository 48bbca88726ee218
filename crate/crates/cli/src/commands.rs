use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use strokeforge_core::agent::{
    chirality, evaluate_reconstruction, export_strokes, import_strokes, paint_actions, precondition_agent, resume_adversarial, rollout,
    stroke_order_stability, template_mse, train_agent, AgentCheckpoint, AgentConfig, PreconditionConfig, StrokeLossSchedule,
};
use strokeforge_core::canvas::GridSpec;
use strokeforge_core::data::{
    digit_templates, load_idx, load_png_dir, load_templates, render_sequence, synthetic_digits, synthetic_shapes, templates_by_class,
    LabeledImages, StrokeTemplate,
};
use strokeforge_core::dip::{intrinsic_style_transfer, random_baseline, visualize_class, DipConfig, DipObjective, DipResult};
use strokeforge_core::oracle::{generate_dataset, index, render_stroke, Action, Dataset, DiscreteAction, OracleConfig};
use strokeforge_core::painter::{
    action_sweep, evaluate_painter, lift_check, train_gan_painter, train_vae_painter, GanPainterConfig, PainterCheckpoint, PainterKind,
    VaePainterConfig,
};
use strokeforge_core::vision::{train_classifier, ClassifierCheckpoint, ClassifierConfig, FeatureNetwork};
use strokeforge_core::Image;

use crate::error::{CliError, CliResult};
use crate::run::Run;

fn required<'a, T>(v: &'a Option<T>, key: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::Usage(format!("missing required setting {key:?}")))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn load_painter(run: &mut Run, path: &Path) -> CliResult<PainterCheckpoint> {
    run.input_path("painter", path)?;
    Ok(PainterCheckpoint::load(path, &Device::Cpu)?)
}

fn load_agent(run: &mut Run, path: &Path) -> CliResult<AgentCheckpoint> {
    run.input_path("agent", path)?;
    Ok(AgentCheckpoint::load(path)?)
}

fn load_classifier(run: &mut Run, path: &Path) -> CliResult<ClassifierCheckpoint> {
    run.input_path("classifier", path)?;
    Ok(ClassifierCheckpoint::load(path, &Device::Cpu)?)
}

fn images_digest(data: &LabeledImages) -> String {
    let mut h = Sha256::new();
    for img in &data.images {
        h.update(img.to_u8());
    }
    if let Some(l) = &data.labels {
        for v in l {
            h.update((*v as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Image sources: `synthetic-digits:N[:SEED]`, `synthetic-shapes:N[:SEED]`,
/// `idx:IMAGES[:LABELS]`, or a directory of PNGs (one subdirectory per class
/// for labeled sets).
pub fn load_data(run: &mut Run, spec: &str, size: usize, invert_idx: bool) -> CliResult<LabeledImages> {
    let parts: Vec<&str> = spec.split(':').collect();
    let parse_n = |s: &str| s.parse::<usize>().map_err(|_| CliError::Usage(format!("bad count in data source {spec:?}")));
    let parse_seed = |s: Option<&&str>| s.map_or(Ok(0), |s| s.parse::<u64>().map_err(|_| CliError::Usage(format!("bad seed in data source {spec:?}"))));
    let data = match parts[0] {
        "synthetic-digits" if parts.len() >= 2 => synthetic_digits(parse_n(parts[1])?, size, parse_seed(parts.get(2))?)?,
        "synthetic-shapes" if parts.len() >= 2 => synthetic_shapes(parse_n(parts[1])?, size, parse_seed(parts.get(2))?)?,
        "idx" if parts.len() >= 2 => {
            let images = PathBuf::from(parts[1]);
            let labels = parts.get(2).map(PathBuf::from);
            run.input_path("idx-images", &images)?;
            if let Some(l) = &labels {
                run.input_path("idx-labels", l)?;
            }
            load_idx(&images, labels.as_deref(), size, invert_idx)?
        }
        "synthetic-digits" | "synthetic-shapes" | "idx" => return Err(CliError::Usage(format!("incomplete data source {spec:?}"))),
        _ => {
            let dir = PathBuf::from(spec);
            if !dir.is_dir() {
                return Err(CliError::Usage(format!("data source {spec:?} is neither a known generator nor a directory")));
            }
            run.input_path("image-dir", &dir)?;
            load_png_dir(&dir, size)?
        }
    };
    run.input_digest("images", spec, images_digest(&data));
    Ok(data)
}

fn oracle_for(size: usize, given: &Option<OracleConfig>) -> CliResult<OracleConfig> {
    let cfg = given.clone().unwrap_or_else(|| OracleConfig::scaled_to(size));
    if cfg.canvas_size != size {
        return Err(CliError::Usage(format!("oracle canvas {} differs from checkpoint canvas {size}", cfg.canvas_size)));
    }
    Ok(OracleConfig { noise_scale: 0.0, ..cfg })
}

// ---------------------------------------------------------------- datasets

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDatasetConfig {
    pub n: usize,
    pub seed: u64,
    pub canvas_size: usize,
    pub discrete: bool,
    pub noise_scale: f32,
    /// Unset geometry is scaled from the 64 px defaults.
    pub max_radius_px: Option<f32>,
    pub min_radius_px: Option<f32>,
    pub dab_spacing_factor: Option<f32>,
}

impl Default for GenDatasetConfig {
    fn default() -> Self {
        Self {
            n: 100_000,
            seed: 0,
            canvas_size: 64,
            discrete: false,
            noise_scale: 0.0,
            max_radius_px: None,
            min_radius_px: None,
            dab_spacing_factor: None,
        }
    }
}

impl GenDatasetConfig {
    /// Fills unset geometry so that the recorded config is complete.
    pub fn resolved(mut self) -> (Self, OracleConfig) {
        let base = OracleConfig::scaled_to(self.canvas_size);
        let oracle = OracleConfig {
            canvas_size: self.canvas_size,
            max_radius_px: self.max_radius_px.unwrap_or(base.max_radius_px),
            min_radius_px: self.min_radius_px.unwrap_or(base.min_radius_px),
            dab_spacing_factor: self.dab_spacing_factor.unwrap_or(base.dab_spacing_factor),
            noise_scale: self.noise_scale,
            seed: self.seed,
        };
        self.max_radius_px = Some(oracle.max_radius_px);
        self.min_radius_px = Some(oracle.min_radius_px);
        self.dab_spacing_factor = Some(oracle.dab_spacing_factor);
        (self, oracle)
    }
}

pub fn gen_dataset(run: &mut Run, cfg: &GenDatasetConfig, oracle: &OracleConfig) -> CliResult<Value> {
    let out = run.primary_file().to_path_buf();
    let header = generate_dataset(cfg.n, oracle, &out, cfg.discrete)?;
    let ds = Dataset::load(&out)?;
    Ok(json!({
        "records": cfg.n,
        "canvas_size": oracle.canvas_size,
        "action_dim": header.action_dim,
        "fingerprint": ds.fingerprint(),
        "oracle": oracle,
    }))
}

// ---------------------------------------------------------------- painters

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainPainterConfig {
    pub dataset: Option<PathBuf>,
    pub kind: PainterKind,
    pub vae: VaePainterConfig,
    pub gan: GanPainterConfig,
}

impl Default for TrainPainterConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            kind: PainterKind::Gan,
            vae: VaePainterConfig::default(),
            gan: GanPainterConfig::default(),
        }
    }
}

pub fn train_painter(run: &mut Run, cfg: &TrainPainterConfig) -> CliResult<Value> {
    let path = required(&cfg.dataset, "dataset")?;
    run.input_path("dataset", path)?;
    let ds = Dataset::load(path)?;
    let (ckpt, log) = match cfg.kind {
        PainterKind::Vae => {
            let (c, l) = train_vae_painter(&ds, &cfg.vae)?;
            (c, serde_json::to_value(l)?)
        }
        PainterKind::Gan => {
            let (c, l) = train_gan_painter(&ds, &cfg.gan)?;
            (c, serde_json::to_value(l)?)
        }
    };
    ckpt.save(run.output("painter.safetensors"))?;
    run.output("painter.json");
    write_json(&run.output("train_log.json"), &log)?;
    Ok(json!({
        "kind": cfg.kind,
        "canvas_size": ckpt.canvas_size(),
        "action_dim": ckpt.action_dim(),
        "weights_sha256": ckpt.weights_digest()?,
    }))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalPainterConfig {
    pub painter: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    /// Defaults to the standard geometry at the painter's canvas size.
    pub oracle: Option<OracleConfig>,
}

impl Default for EvalPainterConfig {
    fn default() -> Self {
        Self {
            painter: None,
            n: 500,
            seed: 0,
            oracle: None,
        }
    }
}

pub fn eval_painter(run: &mut Run, cfg: &EvalPainterConfig) -> CliResult<Value> {
    let painter = load_painter(run, required(&cfg.painter, "painter")?)?;
    let oracle = oracle_for(painter.canvas_size(), &cfg.oracle)?;
    let (m, grid) = evaluate_painter(&painter, &oracle, cfg.n, cfg.seed)?;
    grid.save_png(run.output("pairs.png"))?;
    write_json(&run.output("metrics.json"), &m)?;
    Ok(serde_json::to_value(m)?)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub painter: Option<PathBuf>,
    /// Defaults to the lift flag for discrete painters, brush size otherwise.
    pub dim: Option<usize>,
    pub steps: Option<usize>,
    pub base: Option<Vec<f32>>,
    pub oracle: Option<OracleConfig>,
}

const DEFAULT_SWEEP_BASE: [f32; 12] = [1.0, 1.0, 0.6, 0.0, 0.0, 0.0, 0.2, 0.5, 0.5, 0.2, 0.8, 0.5];

pub fn sweep(run: &mut Run, cfg: &SweepConfig) -> CliResult<Value> {
    let painter = load_painter(run, required(&cfg.painter, "painter")?)?;
    let oracle = oracle_for(painter.canvas_size(), &cfg.oracle)?;
    let discrete = painter.meta.discrete;
    let dim = cfg.dim.unwrap_or(if discrete { index::LIFT } else { index::BRUSH_SIZE });
    let steps = cfg.steps.unwrap_or(9);
    let mut base = cfg.base.clone().unwrap_or_else(|| DEFAULT_SWEEP_BASE.to_vec());
    if discrete && base.len() == 12 {
        base.push(0.0);
    }
    if discrete && dim == index::LIFT {
        let action = Action::from_slice(&base[..12])?;
        let dv = DiscreteAction::from_continuous(action, false);
        let check = lift_check(&painter, &dv, &oracle, steps)?;
        check.sweep.strip.save_png(run.output("strip.png"))?;
        check.oracle_stroke.save_png(run.output("oracle_lift0.png"))?;
        let summary = json!({
            "dim": dim,
            "values": check.sweep.values,
            "ink_mass": check.sweep.ink_mass,
            "lift0_mse_vs_oracle": check.lift0_mse,
            "lift1_ink_mass": check.lift1_ink_mass,
            "oracle_lift1_ink_mass": 0.0,
        });
        write_json(&run.output("sweep.json"), &summary)?;
        return Ok(summary);
    }
    let s = action_sweep(&painter, &base, dim, steps)?;
    s.strip.save_png(run.output("strip.png"))?;
    let mut summary = json!({"dim": dim, "values": s.values, "ink_mass": s.ink_mass});
    if !discrete {
        let mut oracle_imgs = Vec::new();
        let mut mse = Vec::new();
        for (v, img) in s.values.iter().zip(&s.images) {
            let mut a = base.clone();
            a[dim] = *v;
            let o = render_stroke(&Action::from_slice(&a)?, &oracle)?;
            mse.push(img.mse(&o)?);
            oracle_imgs.push(o);
        }
        Image::hstack(&oracle_imgs, 2)?.save_png(run.output("oracle_strip.png"))?;
        summary["mse_vs_oracle"] = json!(mse);
    }
    write_json(&run.output("sweep.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- agents

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainAgentConfig {
    pub data: Option<String>,
    pub painter: Option<PathBuf>,
    pub held_out_fraction: f64,
    pub invert_idx: bool,
    pub oracle: Option<OracleConfig>,
    pub agent: AgentConfig,
}

impl Default for TrainAgentConfig {
    fn default() -> Self {
        Self {
            data: None,
            painter: None,
            held_out_fraction: 0.1,
            invert_idx: true,
            oracle: None,
            agent: AgentConfig::default(),
        }
    }
}

fn triplet_grid(triplets: Vec<(Image, Image, Image)>) -> CliResult<Image> {
    let rows: Vec<Vec<Image>> = triplets.into_iter().map(|(t, n, o)| vec![t, n, o]).collect();
    Ok(Image::grid(&rows, 2)?)
}

fn reconstruction_report(
    run: &mut Run,
    agent: &AgentCheckpoint,
    painter: &PainterCheckpoint,
    held_out: &LabeledImages,
    oracle: &OracleConfig,
) -> CliResult<Value> {
    let (m, triplets) = evaluate_reconstruction(agent, painter, held_out, oracle)?;
    triplet_grid(triplets)?.save_png(run.output("triplets.png"))?;
    let (_, seqs) = rollout(agent, painter, &held_out.images[..1])?;
    export_strokes(&seqs[0], run.output("strokes.json"))?;
    let all = agent.act(&held_out.images, None)?;
    let (start_var, centroid_var) = stroke_order_stability(&all, &held_out.images);
    Ok(json!({
        "reconstruction": m,
        "l2_ratio": m.l2 / m.white_l2,
        "first_stroke_start_variance": start_var,
        "target_centroid_variance": centroid_var,
    }))
}

pub fn train_agent_cmd(run: &mut Run, cfg: &TrainAgentConfig) -> CliResult<Value> {
    let painter = load_painter(run, required(&cfg.painter, "painter")?)?;
    let data = load_data(run, required(&cfg.data, "data")?, painter.canvas_size(), cfg.invert_idx)?;
    let oracle = oracle_for(painter.canvas_size(), &cfg.oracle)?;
    let (train, held_out) = data.split(cfg.held_out_fraction);
    if held_out.is_empty() {
        return Err(CliError::Usage("held_out_fraction leaves no held-out images".into()));
    }
    let untrained = AgentCheckpoint::new(&cfg.agent, painter.canvas_size())?;
    let (before, _) = evaluate_reconstruction(&untrained, &painter, &held_out, &oracle)?;
    let (agent, log) = train_agent(&train, &painter, &cfg.agent)?;
    agent.save(run.output("agent.safetensors"))?;
    run.output("agent.json");
    write_json(&run.output("train_log.json"), &log)?;
    let mut summary = reconstruction_report(run, &agent, &painter, &held_out, &oracle)?;
    summary["untrained_reconstruction"] = serde_json::to_value(before)?;
    summary["train_images"] = json!(train.len());
    summary["held_out_images"] = json!(held_out.len());
    write_json(&run.output("metrics.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PreconditionCmdConfig {
    /// Starting agent; a fresh one built from `training` when unset.
    pub agent: Option<PathBuf>,
    pub data: Option<String>,
    /// JSON list of `{class_label, actions}`; the built-in digit set when unset.
    pub templates: Option<PathBuf>,
    pub image_size: Option<usize>,
    pub held_out_fraction: f64,
    pub invert_idx: bool,
    pub precondition: PreconditionConfig,
    /// Continue with adversarial training under the stroke-loss schedule.
    pub resume: bool,
    pub painter: Option<PathBuf>,
    pub schedule: StrokeLossSchedule,
    pub training: AgentConfig,
    pub oracle: Option<OracleConfig>,
}

impl Default for PreconditionCmdConfig {
    fn default() -> Self {
        Self {
            agent: None,
            data: None,
            templates: None,
            image_size: None,
            held_out_fraction: 0.1,
            invert_idx: true,
            precondition: PreconditionConfig::default(),
            resume: false,
            painter: None,
            schedule: StrokeLossSchedule::default(),
            training: AgentConfig::default(),
            oracle: None,
        }
    }
}

fn chirality_agreement(agent: &AgentCheckpoint, held_out: &LabeledImages, templates: &[StrokeTemplate]) -> CliResult<Value> {
    let labels = held_out.require_labels("chirality")?;
    let seqs = agent.act(&held_out.images, None)?;
    let mut per_class = Vec::new();
    for (c, t) in templates.iter().enumerate() {
        let want = chirality(&t.actions);
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let hits = idx.iter().filter(|&&i| chirality(&seqs[i]) == want).count();
        per_class.push(json!({
            "class": c,
            "template_chirality": want,
            "inputs": idx.len(),
            "agreement": if idx.is_empty() { Value::Null } else { json!(hits as f64 / idx.len() as f64) },
        }));
    }
    Ok(Value::Array(per_class))
}

pub fn precondition_cmd(run: &mut Run, cfg: &PreconditionCmdConfig) -> CliResult<Value> {
    let painter = match &cfg.painter {
        Some(p) => Some(load_painter(run, p)?),
        None => None,
    };
    if cfg.resume && painter.is_none() {
        return Err(CliError::Usage("resume needs a painter".into()));
    }
    let start = match &cfg.agent {
        Some(p) => load_agent(run, p)?,
        None => {
            let size = cfg
                .image_size
                .or(painter.as_ref().map(PainterCheckpoint::canvas_size))
                .ok_or_else(|| CliError::Usage("set agent, painter or image_size".into()))?;
            AgentCheckpoint::new(&cfg.training, size)?
        }
    };
    let templates = match &cfg.templates {
        Some(p) => {
            run.input_path("templates", p)?;
            load_templates(p)?
        }
        None => digit_templates(),
    };
    let data = load_data(run, required(&cfg.data, "data")?, start.canvas_size(), cfg.invert_idx)?;
    let (train, held_out) = data.split(cfg.held_out_fraction);
    let (pre, plog) = precondition_agent(&start, &templates, &train, &cfg.precondition)?;
    write_json(&run.output("precondition_log.json"), &plog)?;
    let by_class = templates_by_class(&templates, data.num_classes())?;
    let mut summary = json!({
        "converged": plog.converged,
        "train_template_mse": plog.checks.last().map(|c| c.1),
        "held_out_template_mse": if held_out.is_empty() { Value::Null } else { json!(template_mse(&pre, &held_out, &templates)?) },
        "preconditioned_chirality": if held_out.is_empty() { Value::Null } else { chirality_agreement(&pre, &held_out, &by_class)? },
    });
    let out = if cfg.resume {
        let painter = painter.as_ref().expect("checked above");
        let (res, rlog) = resume_adversarial(&pre, painter, &train, &templates, &cfg.training, &cfg.schedule)?;
        write_json(&run.output("resume_log.json"), &rlog)?;
        if !held_out.is_empty() {
            summary["resumed_chirality"] = chirality_agreement(&res, &held_out, &by_class)?;
            let oracle = oracle_for(painter.canvas_size(), &cfg.oracle)?;
            summary["resumed"] = reconstruction_report(run, &res, painter, &held_out, &oracle)?;
        }
        res
    } else {
        pre
    };
    out.save(run.output("agent.safetensors"))?;
    run.output("agent.json");
    write_json(&run.output("metrics.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PaintImageConfig {
    pub painter: Option<PathBuf>,
    /// Stroke file to paint, or…
    pub strokes: Option<PathBuf>,
    /// …an agent and a target image to reconstruct.
    pub agent: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub oracle: Option<OracleConfig>,
}

pub fn paint_image(run: &mut Run, cfg: &PaintImageConfig) -> CliResult<Value> {
    let painter = load_painter(run, required(&cfg.painter, "painter")?)?;
    let oracle = oracle_for(painter.canvas_size(), &cfg.oracle)?;
    let size = painter.canvas_size();
    let (target, seq, neural) = match (&cfg.strokes, &cfg.agent, &cfg.target) {
        (Some(s), None, None) => {
            run.input_path("strokes", s)?;
            let seq = import_strokes(s)?;
            let flat: Vec<f32> = seq.iter().flat_map(|a| a.to_array()).collect();
            let t = candle_core::Tensor::from_vec(flat, (1, seq.len(), 12), &Device::Cpu).map_err(strokeforge_core::Error::from)?;
            let canvas = Image::from_tensor(&paint_actions(&painter, &t)?)?;
            (None, seq, canvas)
        }
        (None, Some(a), Some(t)) => {
            let agent = load_agent(run, a)?;
            run.input_path("target", t)?;
            let img = Image::load_png(t)?;
            let img = if img.height() != size || img.width() != size { img.resize(size, size) } else { img };
            let (mut canvases, mut seqs) = rollout(&agent, &painter, std::slice::from_ref(&img))?;
            (Some(img), seqs.remove(0), canvases.remove(0))
        }
        _ => return Err(CliError::Usage("give either strokes, or agent and target".into())),
    };
    let transferred = render_sequence(&seq, &oracle)?;
    neural.save_png(run.output("canvas.png"))?;
    transferred.save_png(run.output("oracle.png"))?;
    export_strokes(&seq, run.output("strokes.json"))?;
    let mut row = Vec::new();
    let mut summary = json!({"strokes": seq.len(), "transfer_mse": neural.mse(&transferred)?});
    if let Some(t) = target {
        summary["target_mse"] = json!(neural.mse(&t)?);
        row.push(t);
    }
    row.push(neural);
    row.push(transferred);
    Image::hstack(&row, 2)?.save_png(run.output("triplets.png"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- vision

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainClassifierConfig {
    pub data: Option<String>,
    pub arch: String,
    pub image_size: usize,
    pub invert_idx: bool,
    pub classifier: ClassifierConfig,
}

impl Default for TrainClassifierConfig {
    fn default() -> Self {
        Self {
            data: None,
            arch: "a".into(),
            image_size: 32,
            invert_idx: true,
            classifier: ClassifierConfig::default(),
        }
    }
}

pub fn train_classifier_cmd(run: &mut Run, cfg: &TrainClassifierConfig) -> CliResult<Value> {
    let data = load_data(run, required(&cfg.data, "data")?, cfg.image_size, cfg.invert_idx)?;
    let ckpt = train_classifier(&data, &cfg.arch, &cfg.classifier)?;
    ckpt.save(run.output("classifier.safetensors"))?;
    run.output("classifier.json");
    if !ckpt.meta.usable {
        eprintln!(
            "warning: held-out accuracy {:.3} is below the gate {}; checkpoint marked unusable",
            ckpt.meta.held_out_accuracy, cfg.classifier.accuracy_gate
        );
    }
    let summary = json!({
        "held_out_accuracy": ckpt.meta.held_out_accuracy,
        "usable": ckpt.meta.usable,
        "classes": ckpt.meta.class_names,
        "taps": ckpt.meta.taps,
        "default_tap": ckpt.meta.default_tap,
    });
    write_json(&run.output("metrics.json"), &summary)?;
    Ok(summary)
}

fn save_dip(run: &mut Run, res: &DipResult) -> CliResult<()> {
    res.canvas.save_png(run.output("canvas.png"))?;
    write_json(&run.output("trace.json"), &json!({"objective": res.trace}))?;
    if res.actions.len() == 1 {
        export_strokes(&res.actions[0], run.output("strokes.json"))?;
    } else {
        write_json(&run.output("strokes.json"), &res.actions)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct VisualizeClassConfig {
    pub painter: Option<PathBuf>,
    /// Ensemble members; their target-class logits are averaged.
    pub classifiers: Vec<PathBuf>,
    pub class_id: usize,
    pub dip: DipConfig,
    /// Random stroke sequences to compare against (0 disables).
    pub baseline_samples: usize,
    pub baseline_seed: u64,
}

impl Default for VisualizeClassConfig {
    fn default() -> Self {
        Self {
            painter: None,
            classifiers: Vec::new(),
            class_id: 0,
            dip: DipConfig::default(),
            baseline_samples: 0,
            baseline_seed: 1,
        }
    }
}

pub fn visualize_class_cmd(run: &mut Run, cfg: &VisualizeClassConfig) -> CliResult<Value> {
    let painter = load_painter(run, required(&cfg.painter, "painter")?)?;
    if cfg.classifiers.is_empty() {
        return Err(CliError::Usage("at least one classifier is required".into()));
    }
    let mut nets = Vec::new();
    for p in &cfg.classifiers {
        nets.push(load_classifier(run, p)?);
    }
    for n in &nets {
        if !n.meta.usable {
            eprintln!("warning: classifier below its accuracy gate is part of the ensemble");
        }
    }
    let ensemble: Vec<&dyn FeatureNetwork> = nets.iter().map(|n| n as &dyn FeatureNetwork).collect();
    let dip = DipConfig {
        objective: DipObjective::MaximizeClass { class_id: cfg.class_id },
        ..cfg.dip.clone()
    };
    let res = visualize_class(&painter, &ensemble, &dip)?;
    save_dip(run, &res)?;
    let mut summary = json!({
        "class_id": cfg.class_id,
        "initial_objective": res.initial_objective,
        "final_objective": res.final_objective,
    });
    if cfg.baseline_samples > 0 {
        let b = random_baseline(&painter, &ensemble, None, &dip, cfg.baseline_samples, cfg.baseline_seed)?;
        summary["baseline_p95"] = json!(b.percentile(95.0));
        summary["baseline_mean"] = json!(b.mean);
        summary["baseline_max"] = json!(b.max);
    }
    write_json(&run.output("result.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct IntrinsicStyleConfig {
    pub painter: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    pub content: Option<PathBuf>,
    /// Feature tap; the classifier's default when unset.
    pub tap: Option<String>,
    pub rows: usize,
    pub cols: usize,
    pub overlap: f32,
    pub dip: DipConfig,
    pub baseline_samples: usize,
    pub baseline_seed: u64,
}

impl Default for IntrinsicStyleConfig {
    fn default() -> Self {
        Self {
            painter: None,
            classifier: None,
            content: None,
            tap: None,
            rows: 1,
            cols: 1,
            overlap: 0.5,
            // Translation jitter keeps the canvas from lining up with the content features.
            dip: DipConfig {
                jitter_px: 0,
                ..DipConfig::default()
            },
            baseline_samples: 0,
            baseline_seed: 1,
        }
    }
}

pub fn intrinsic_style_cmd(run: &mut Run, cfg: &IntrinsicStyleConfig) -> CliResult<Value> {
    let painter = load_painter(run, required(&cfg.painter, "painter")?)?;
    let net = load_classifier(run, required(&cfg.classifier, "classifier")?)?;
    let content_path = required(&cfg.content, "content")?;
    run.input_path("content", content_path)?;
    if cfg.dip.grid.is_some() {
        return Err(CliError::Usage("set rows, cols and overlap instead of dip.grid".into()));
    }
    let grid = if cfg.rows * cfg.cols > 1 {
        Some(GridSpec::new(painter.canvas_size(), cfg.overlap, cfg.rows, cfg.cols)?)
    } else {
        None
    };
    let dip = DipConfig {
        objective: DipObjective::ContentLoss { tap: cfg.tap.clone() },
        grid,
        ..cfg.dip.clone()
    };
    let (h, w) = dip.output_size(&painter)?;
    let content = Image::load_png(content_path)?;
    let content = if content.height() != h || content.width() != w { content.resize(h, w) } else { content };
    let res = intrinsic_style_transfer(&painter, &net, &content, &dip)?;
    save_dip(run, &res)?;
    Image::hstack(&[content.clone(), res.canvas.clone()], 2)?.save_png(run.output("comparison.png"))?;
    let mut summary = json!({
        "output_size": [h, w],
        "initial_loss": res.initial_objective,
        "final_loss": res.final_objective,
    });
    if let Some(g) = &dip.grid {
        let sums = g.weight_sum()?;
        let dev = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0f32, f32::max);
        summary["stitch_weight_max_deviation"] = json!(dev);
    }
    if cfg.baseline_samples > 0 {
        let nets: [&dyn FeatureNetwork; 1] = [&net];
        let b = random_baseline(&painter, &nets, Some(&content), &dip, cfg.baseline_samples, cfg.baseline_seed)?;
        summary["baseline_best"] = json!(b.min);
        summary["baseline_mean"] = json!(b.mean);
    }
    write_json(&run.output("result.json"), &summary)?;
    Ok(summary)
}
