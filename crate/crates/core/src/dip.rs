//! Stroke parameters optimized through a frozen painter against frozen
//! classifiers: class visualization and content-only ("intrinsic") style
//! transfer, optionally over an overlapping grid of canvases.

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canvas::{composite_strokes, stitch_tensor, GridSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn;
use crate::oracle::{Action, ACTION_DIM};
use crate::painter::PainterCheckpoint;
use crate::vision::FeatureNetwork;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DipObjective {
    MaximizeClass { class_id: usize },
    /// `tap: None` uses the network's default content tap.
    ContentLoss { tap: Option<String> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorConstraint {
    #[default]
    None,
    /// One shared intensity replaces the three colour parameters.
    Grayscale,
}

impl std::str::FromStr for ColorConstraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "grayscale" => Ok(Self::Grayscale),
            other => Err(Error::InvalidArgument(format!("unknown color constraint {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DipConfig {
    pub n_strokes: usize,
    pub steps: usize,
    pub step_size: f64,
    pub objective: DipObjective,
    pub grid: Option<GridSpec>,
    pub jitter_px: usize,
    pub seed: u64,
    pub color_constraint: ColorConstraint,
    /// Standard deviation of the initial (pre-sigmoid) parameters.
    pub init_std: f64,
}

impl Default for DipConfig {
    fn default() -> Self {
        Self {
            n_strokes: 16,
            steps: 500,
            step_size: 0.05,
            objective: DipObjective::MaximizeClass { class_id: 0 },
            grid: None,
            jitter_px: 2,
            seed: 0,
            color_constraint: ColorConstraint::None,
            init_std: 1.0,
        }
    }
}

impl DipConfig {
    fn validate(&self, painter: &PainterCheckpoint) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidArgument("step_size must be positive".into()));
        }
        if painter.action_dim() != ACTION_DIM {
            return Err(Error::CheckpointMismatch("stroke optimization needs a 12-dim painter".into()));
        }
        if let Some(g) = &self.grid {
            g.stride()?;
            if g.tile_size != painter.canvas_size() {
                return Err(Error::InvalidGrid(format!(
                    "tile size {} differs from painter canvas {}",
                    g.tile_size,
                    painter.canvas_size()
                )));
            }
        }
        Ok(())
    }

    pub fn tiles(&self) -> usize {
        self.grid.as_ref().map_or(1, GridSpec::tile_count)
    }

    fn params_per_stroke(&self) -> usize {
        match self.color_constraint {
            ColorConstraint::None => ACTION_DIM,
            ColorConstraint::Grayscale => ACTION_DIM - 2,
        }
    }

    /// `(height, width)` of the optimized canvas.
    pub fn output_size(&self, painter: &PainterCheckpoint) -> Result<(usize, usize)> {
        match &self.grid {
            Some(g) => g.output_size(),
            None => Ok((painter.canvas_size(), painter.canvas_size())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DipResult {
    /// Final actions, one sequence per tile (row-major).
    pub actions: Vec<Vec<Action>>,
    pub canvas: Image,
    /// Objective at every step, as seen by the optimizer (with jitter).
    pub trace: Vec<f32>,
    /// Objective of the initial and final parameters, without jitter.
    pub initial_objective: f64,
    pub final_objective: f64,
}

/// Maps unconstrained parameters `(B, P)` to actions `(B, 12)` in `(0, 1)`.
pub fn params_to_actions(params: &Tensor, constraint: ColorConstraint) -> Result<Tensor> {
    let s = candle_nn::ops::sigmoid(params)?;
    Ok(match constraint {
        ColorConstraint::None => s,
        ColorConstraint::Grayscale => {
            let (b, _) = s.dims2()?;
            let i = s.narrow(1, 3, 1)?.broadcast_as((b, 3))?;
            Tensor::cat(&[&s.narrow(1, 0, 3)?, &i, &s.narrow(1, 4, ACTION_DIM - 6)?], 1)?
        }
    })
}

/// Renders `(B, tiles, n, 12)` actions to `(B, 3, H, W)` canvases.
fn render_actions(painter: &PainterCheckpoint, actions: &Tensor, grid: Option<&GridSpec>) -> Result<Tensor> {
    let (b, tiles, n, d) = actions.dims4()?;
    let s = painter.canvas_size();
    let strokes = painter
        .paint(&actions.reshape((b * tiles * n, d))?)?
        .reshape((b * tiles, n, 3, s, s))?;
    let canvases = composite_strokes(&strokes)?.reshape((b, tiles, 3, s, s))?;
    match grid {
        None => Ok(canvases.squeeze(1)?),
        Some(g) => {
            let tiles: Vec<Tensor> = (0..tiles)
                .map(|t| canvases.narrow(1, t, 1)?.squeeze(1))
                .collect::<candle_core::Result<_>>()?;
            stitch_tensor(&tiles, g, actions.device())
        }
    }
}

/// Shifts `(B, 3, H, W)` by `(dy, dx)` pixels, filling with white.
fn translate(x: &Tensor, dy: i64, dx: i64, pad: usize) -> Result<Tensor> {
    if dy == 0 && dx == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let inv = x.affine(-1.0, 1.0)?.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?;
    let y0 = (pad as i64 - dy) as usize;
    let x0 = (pad as i64 - dx) as usize;
    Ok(inv.narrow(2, y0, h)?.narrow(3, x0, w)?.affine(-1.0, 1.0)?)
}

/// The scalar being optimized, with a sign making larger values better for
/// class objectives; content objectives report the loss itself.
struct Objective<'a> {
    networks: Vec<&'a dyn FeatureNetwork>,
    kind: ObjectiveKind,
}

enum ObjectiveKind {
    Class(usize),
    Content { tap: String, target: Tensor },
}

impl<'a> Objective<'a> {
    fn new(networks: &[&'a dyn FeatureNetwork], cfg: &DipConfig, content: Option<&Image>, out: (usize, usize)) -> Result<Self> {
        if networks.is_empty() {
            return Err(Error::InvalidArgument("at least one classifier is required".into()));
        }
        let kind = match &cfg.objective {
            DipObjective::MaximizeClass { class_id } => {
                for n in networks {
                    if *class_id >= n.num_classes() {
                        return Err(Error::InvalidClass {
                            class_id: *class_id,
                            num_classes: n.num_classes(),
                        });
                    }
                }
                ObjectiveKind::Class(*class_id)
            }
            DipObjective::ContentLoss { tap } => {
                if networks.len() != 1 {
                    return Err(Error::InvalidArgument("content loss uses exactly one network".into()));
                }
                let content = content.ok_or_else(|| Error::InvalidArgument("content objective needs a content image".into()))?;
                if (content.height(), content.width()) != out {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{}x{} content image", out.0, out.1),
                        got: format!("{}x{}", content.height(), content.width()),
                    });
                }
                let tap = tap.clone().unwrap_or_else(|| networks[0].default_tap().to_string());
                let target = networks[0].features(&content.to_tensor(&Device::Cpu)?, &tap)?.detach();
                ObjectiveKind::Content { tap, target }
            }
        };
        Ok(Self {
            networks: networks.to_vec(),
            kind,
        })
    }

    fn maximize(&self) -> bool {
        matches!(self.kind, ObjectiveKind::Class(_))
    }

    /// Per-image objective values `(B,)`.
    fn values(&self, canvas: &Tensor) -> Result<Tensor> {
        match &self.kind {
            ObjectiveKind::Class(c) => {
                let mut acc: Option<Tensor> = None;
                for n in &self.networks {
                    let l = n.logits(canvas)?.narrow(1, *c, 1)?.squeeze(1)?;
                    acc = Some(match acc {
                        None => l,
                        Some(a) => (a + l)?,
                    });
                }
                Ok(acc.expect("non-empty ensemble").affine(1.0 / self.networks.len() as f64, 0.0)?)
            }
            ObjectiveKind::Content { tap, target } => {
                let f = self.networks[0].features(canvas, tap)?;
                Ok(f.broadcast_sub(target)?.sqr()?.flatten_from(1)?.mean(1)?)
            }
        }
    }
}

fn run(painter: &PainterCheckpoint, networks: &[&dyn FeatureNetwork], content: Option<&Image>, cfg: &DipConfig) -> Result<DipResult> {
    cfg.validate(painter)?;
    let out = cfg.output_size(painter)?;
    let objective = Objective::new(networks, cfg, content, out)?;
    let dev = painter.device().clone();
    let tiles = cfg.tiles();
    let p = cfg.params_per_stroke();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = nn::seeded_randn(&mut rng, &[tiles * cfg.n_strokes, p], &dev)?.affine(cfg.init_std, 0.0)?;
    let params = Var::from_tensor(&init)?;
    let mut opt = AdamW::new(
        vec![params.clone()],
        ParamsAdamW {
            lr: cfg.step_size,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let render = |params: &Tensor| -> Result<Tensor> {
        let a = params_to_actions(params, cfg.color_constraint)?.reshape((1, tiles, cfg.n_strokes, ACTION_DIM))?;
        render_actions(painter, &a, cfg.grid.as_ref())
    };
    let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.mean_all()?.to_scalar::<f64>()?) };

    let initial_objective = scalar(&objective.values(&render(params.as_tensor())?)?)?;
    let mut trace = Vec::with_capacity(cfg.steps);
    let j = cfg.jitter_px as i64;
    for step in 0..cfg.steps {
        let mut canvas = render(params.as_tensor())?;
        if j > 0 {
            let (dy, dx) = (rng.random_range(-j..=j), rng.random_range(-j..=j));
            canvas = translate(&canvas, dy, dx, cfg.jitter_px)?;
        }
        let value = objective.values(&canvas)?.mean(0)?;
        let v = nn::checked_scalar(&value, "stroke objective", step, &trace)?;
        trace.push(v);
        let loss = if objective.maximize() { value.neg()? } else { value };
        opt.backward_step(&loss)?;
    }
    let final_canvas = render(params.as_tensor())?;
    let final_objective = scalar(&objective.values(&final_canvas)?)?;
    let acts = params_to_actions(params.as_tensor(), cfg.color_constraint)?.to_vec2::<f32>()?;
    let actions = acts
        .chunks(cfg.n_strokes)
        .map(|seq| seq.iter().map(|a| Action::from_slice(a)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(DipResult {
        actions,
        canvas: Image::from_tensor(&final_canvas.squeeze(0)?.unsqueeze(0)?)?,
        trace,
        initial_objective,
        final_objective,
    })
}

/// Gradient ascent on the mean target-class logit of an ensemble.
pub fn visualize_class(painter: &PainterCheckpoint, ensemble: &[&dyn FeatureNetwork], cfg: &DipConfig) -> Result<DipResult> {
    if !matches!(cfg.objective, DipObjective::MaximizeClass { .. }) {
        return Err(Error::InvalidArgument("visualize_class needs a maximize_class objective".into()));
    }
    run(painter, ensemble, None, cfg)
}

/// Gradient descent on the content loss against `content`.
pub fn intrinsic_style_transfer(
    painter: &PainterCheckpoint,
    network: &dyn FeatureNetwork,
    content: &Image,
    cfg: &DipConfig,
) -> Result<DipResult> {
    if !matches!(cfg.objective, DipObjective::ContentLoss { .. }) {
        return Err(Error::InvalidArgument("intrinsic_style_transfer needs a content_loss objective".into()));
    }
    run(painter, &[network], Some(content), cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl BaselineSummary {
    fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        Self {
            mean: values.iter().sum::<f64>() / n,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            values,
        }
    }

    /// Linearly interpolated percentile, `q` in `[0, 100]`.
    pub fn percentile(&self, q: f64) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let pos = (q.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    }
}

/// Objective values of `n_samples` uniformly random stroke sequences shaped
/// like `cfg` (same stroke count, grid and colour constraint), without jitter.
pub fn random_baseline(
    painter: &PainterCheckpoint,
    networks: &[&dyn FeatureNetwork],
    content: Option<&Image>,
    cfg: &DipConfig,
    n_samples: usize,
    seed: u64,
) -> Result<BaselineSummary> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    cfg.validate(painter)?;
    let objective = Objective::new(networks, cfg, content, cfg.output_size(painter)?)?;
    let tiles = cfg.tiles();
    let per = tiles * cfg.n_strokes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunk = (256 / per.max(1)).max(1);
    let mut values = Vec::with_capacity(n_samples);
    let mut done = 0;
    while done < n_samples {
        let b = chunk.min(n_samples - done);
        let mut flat = Vec::with_capacity(b * per * ACTION_DIM);
        for _ in 0..b * per {
            let mut a = [0f32; ACTION_DIM];
            for v in a.iter_mut() {
                *v = rng.random::<f32>();
            }
            if cfg.color_constraint == ColorConstraint::Grayscale {
                a[4] = a[3];
                a[5] = a[3];
            }
            flat.extend_from_slice(&a);
        }
        let acts = Tensor::from_vec(flat, (b, tiles, cfg.n_strokes, ACTION_DIM), painter.device())?;
        let canvas = render_actions(painter, &acts, cfg.grid.as_ref())?;
        values.extend(objective.values(&canvas)?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        done += b;
    }
    Ok(BaselineSummary::from_values(values))
}

/// Objective value of given stroke sequences (one per tile), without jitter.
pub fn evaluate_sequence(
    painter: &PainterCheckpoint,
    networks: &[&dyn FeatureNetwork],
    content: Option<&Image>,
    cfg: &DipConfig,
    actions: &[Vec<Action>],
) -> Result<(f64, Image)> {
    cfg.validate(painter)?;
    let objective = Objective::new(networks, cfg, content, cfg.output_size(painter)?)?;
    let n = actions.first().map_or(0, Vec::len);
    if actions.len() != cfg.tiles() || actions.iter().any(|s| s.len() != n) {
        return Err(Error::ShapeMismatch {
            expected: format!("{} equal-length sequences", cfg.tiles()),
            got: actions.len().to_string(),
        });
    }
    let flat: Vec<f32> = actions.iter().flatten().flat_map(|a| a.to_array()).collect();
    let t = Tensor::from_vec(flat, (1, actions.len(), n, ACTION_DIM), painter.device())?;
    let canvas = render_actions(painter, &t, cfg.grid.as_ref())?;
    let v = objective.values(&canvas)?.to_dtype(DType::F64)?.to_vec1::<f64>()?[0];
    Ok((v, Image::from_tensor(&canvas)?))
}
