//! Painter-vs-oracle evaluation and single-dimension action sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PainterCheckpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::oracle::dataset::LIFT_PROBABILITY;
use crate::oracle::{index, render_stroke, render_stroke_discrete, sample_action, DiscreteAction, OracleConfig};

/// Brush sizes above this form the high-texture subset.
pub const HIGH_TEXTURE_BRUSH_SIZE: f32 = 0.7;

const GRID_PAIRS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PainterMetrics {
    pub n: usize,
    pub mse: f64,
    pub baseline_mse: f64,
    pub high_texture_n: usize,
    pub high_texture_mse: f64,
    pub high_texture_baseline_mse: f64,
    /// Mean Laplacian magnitude on the high-texture subset.
    pub painter_laplacian: f64,
    pub oracle_laplacian: f64,
}

/// Mean absolute 4-neighbour Laplacian over interior pixels and channels.
pub fn laplacian_energy(img: &Image) -> f64 {
    let (h, w) = (img.height(), img.width());
    if h < 3 || w < 3 {
        return 0.0;
    }
    let d = img.data();
    let at = |y: usize, x: usize, c: usize| d[(y * w + x) * 3 + c] as f64;
    let mut sum = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let l = at(y - 1, x, c) + at(y + 1, x, c) + at(y, x - 1, c) + at(y, x + 1, c) - 4.0 * at(y, x, c);
                sum += l.abs();
            }
        }
    }
    sum / ((h - 2) * (w - 2) * 3) as f64
}

/// Compares the painter with the noise-free oracle on `n` fresh actions.
///
/// Discrete-variant painters are evaluated on discrete actions (with lifts).
/// Returns the metrics and a grid of up to eight oracle | painter pairs.
pub fn evaluate_painter(ckpt: &PainterCheckpoint, cfg: &OracleConfig, n: usize, seed: u64) -> Result<(PainterMetrics, Image)> {
    if n == 0 {
        return Err(Error::InvalidArgument("evaluation needs n >= 1".into()));
    }
    let cfg = OracleConfig {
        noise_scale: 0.0,
        ..cfg.clone()
    };
    cfg.validate()?;
    if cfg.canvas_size != ckpt.canvas_size() {
        return Err(Error::CheckpointMismatch(format!(
            "oracle canvas {} differs from painter canvas {}",
            cfg.canvas_size,
            ckpt.canvas_size()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Vec::with_capacity(n);
    let mut oracle = Vec::with_capacity(n);
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        if ckpt.meta.discrete {
            let dv = DiscreteAction::sample(&mut rng, LIFT_PROBABILITY);
            oracle.push(render_stroke_discrete(&dv, &cfg)?);
            let v = dv.to_vector()?;
            sizes.push(v[index::BRUSH_SIZE]);
            vectors.push(v.to_vec());
        } else {
            let a = sample_action(&mut rng);
            oracle.push(render_stroke(&a, &cfg)?);
            sizes.push(a.brush_size);
            vectors.push(a.to_array().to_vec());
        }
    }
    let mut painted = Vec::with_capacity(n);
    for chunk in vectors.chunks(128) {
        painted.extend(ckpt.paint_vectors(chunk)?);
    }

    let white = Image::white(cfg.canvas_size, cfg.canvas_size);
    let (mut mse, mut base) = (0.0, 0.0);
    let (mut hn, mut hmse, mut hbase, mut plap, mut olap) = (0usize, 0.0, 0.0, 0.0, 0.0);
    for ((p, o), &s) in painted.iter().zip(&oracle).zip(&sizes) {
        let e = p.mse(o)? as f64;
        let b = white.mse(o)? as f64;
        mse += e;
        base += b;
        if s > HIGH_TEXTURE_BRUSH_SIZE {
            hn += 1;
            hmse += e;
            hbase += b;
            plap += laplacian_energy(p);
            olap += laplacian_energy(o);
        }
    }
    let hd = hn.max(1) as f64;
    let metrics = PainterMetrics {
        n,
        mse: mse / n as f64,
        baseline_mse: base / n as f64,
        high_texture_n: hn,
        high_texture_mse: hmse / hd,
        high_texture_baseline_mse: hbase / hd,
        painter_laplacian: plap / hd,
        oracle_laplacian: olap / hd,
    };
    let rows: Vec<Vec<Image>> = oracle
        .iter()
        .zip(&painted)
        .take(GRID_PAIRS)
        .map(|(o, p)| vec![o.clone(), p.clone()])
        .collect();
    Ok((metrics, Image::grid(&rows, 2)?))
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub values: Vec<f32>,
    pub ink_mass: Vec<f32>,
    pub images: Vec<Image>,
    pub strip: Image,
}

/// Paints `base` with dimension `dim` swept from 0 to 1 in `steps` equal
/// increments (`steps == 1` paints only the value 0).
pub fn action_sweep(ckpt: &PainterCheckpoint, base: &[f32], dim: usize, steps: usize) -> Result<Sweep> {
    let d = ckpt.action_dim();
    if dim >= d {
        return Err(Error::InvalidArgument(format!("sweep dim {dim} outside 0..{d}")));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("sweep needs steps >= 1".into()));
    }
    if base.len() != d {
        return Err(Error::CheckpointMismatch(format!("expected {d}-dim base action, got {}", base.len())));
    }
    let values: Vec<f32> = (0..steps)
        .map(|k| if steps == 1 { 0.0 } else { k as f32 / (steps - 1) as f32 })
        .collect();
    let vectors: Vec<Vec<f32>> = values
        .iter()
        .map(|&v| {
            let mut a = base.to_vec();
            a[dim] = v;
            a
        })
        .collect();
    let images = ckpt.paint_vectors(&vectors)?;
    let ink_mass = images.iter().map(Image::ink_mass).collect();
    let strip = Image::hstack(&images, 2)?;
    Ok(Sweep {
        values,
        ink_mass,
        images,
        strip,
    })
}

/// Lift-dimension sweep of a discrete-variant painter, with its endpoints
/// compared against the oracle.
#[derive(Clone, Debug)]
pub struct LiftCheck {
    pub sweep: Sweep,
    /// Painter at lift 0 against the oracle stroke of the same action.
    pub lift0_mse: f64,
    /// Painter ink mass at lift 1 (the oracle paints nothing).
    pub lift1_ink_mass: f64,
    pub oracle_stroke: Image,
}

pub fn lift_check(ckpt: &PainterCheckpoint, base: &DiscreteAction, cfg: &OracleConfig, steps: usize) -> Result<LiftCheck> {
    if !ckpt.meta.discrete {
        return Err(Error::InvalidArgument("lift sweep needs a discrete-variant painter".into()));
    }
    if steps < 2 {
        return Err(Error::InvalidArgument("lift sweep needs steps >= 2".into()));
    }
    let cfg = OracleConfig {
        noise_scale: 0.0,
        ..cfg.clone()
    };
    let v = base.to_vector()?;
    let sweep = action_sweep(ckpt, &v, index::LIFT, steps)?;
    let oracle_stroke = render_stroke_discrete(&DiscreteAction { lift: false, ..*base }, &cfg)?;
    let lift0_mse = sweep.images[0].mse(&oracle_stroke)? as f64;
    let lift1_ink_mass = sweep.ink_mass[steps - 1] as f64;
    Ok(LiftCheck {
        sweep,
        lift0_mse,
        lift1_ink_mass,
        oracle_stroke,
    })
}
