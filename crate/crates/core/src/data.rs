//! Image sets for agents and classifiers: procedural digit and shape sets,
//! PNG directories and IDX archives, plus the per-class stroke templates.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canvas::composite;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::oracle::{render_stroke, Action, OracleConfig};

const DIGIT_TEMPLATES_JSON: &str = include_str!("../assets/digit_templates.json");

/// Images with optional class labels.
#[derive(Clone, Debug, Default)]
pub struct LabeledImages {
    pub images: Vec<Image>,
    pub labels: Option<Vec<usize>>,
    pub class_names: Vec<String>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.images.first().map(|i| (i.height(), i.width()))
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// Labels, or an error naming `what` needed them.
    pub fn require_labels(&self, what: &str) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("{what} needs a labeled image set")))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            class_names: self.class_names.clone(),
        }
    }

    /// Splits by index: the last `held_out_fraction` of records are held out.
    pub fn split(&self, held_out_fraction: f64) -> (Self, Self) {
        let n = self.len();
        let held = ((n as f64 * held_out_fraction).round() as usize).min(n.saturating_sub(1));
        let cut = n - held;
        let train: Vec<usize> = (0..cut).collect();
        let test: Vec<usize> = (cut..n).collect();
        (self.subset(&train), self.subset(&test))
    }

    /// Indices of records labeled `class`.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        match &self.labels {
            Some(l) => l.iter().enumerate().filter(|(_, &c)| c == class).map(|(i, _)| i).collect(),
            None => Vec::new(),
        }
    }

    /// Resizes every image to `size × size`.
    pub fn resized(&self, size: usize) -> Self {
        Self {
            images: self
                .images
                .iter()
                .map(|i| if i.height() == size && i.width() == size { i.clone() } else { i.resize(size, size) })
                .collect(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }
}

/// A human-authored stroke sequence for one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeTemplate {
    pub class_label: usize,
    pub actions: Vec<Action>,
}

/// The built-in templates for the ten digit classes (four strokes each,
/// the 0 drawn counter-clockwise from the top).
pub fn digit_templates() -> Vec<StrokeTemplate> {
    serde_json::from_str(DIGIT_TEMPLATES_JSON).expect("embedded digit templates are valid")
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<Vec<StrokeTemplate>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Orders templates by class, requiring exactly one per class and equal lengths.
pub fn templates_by_class(templates: &[StrokeTemplate], num_classes: usize) -> Result<Vec<StrokeTemplate>> {
    let mut slots: Vec<Option<StrokeTemplate>> = vec![None; num_classes];
    for t in templates {
        if t.class_label >= num_classes {
            return Err(Error::InvalidClass {
                class_id: t.class_label,
                num_classes,
            });
        }
        if slots[t.class_label].replace(t.clone()).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate template for class {}", t.class_label)));
        }
    }
    let out = slots
        .into_iter()
        .enumerate()
        .map(|(c, t)| t.ok_or(Error::MissingTemplate(c)))
        .collect::<Result<Vec<_>>>()?;
    let len = out[0].actions.len();
    if out.iter().any(|t| t.actions.len() != len) {
        return Err(Error::InvalidArgument("templates must all have the same stroke count".into()));
    }
    Ok(out)
}

/// Renders a stroke sequence with the oracle onto a white canvas.
pub fn render_sequence(actions: &[Action], cfg: &OracleConfig) -> Result<Image> {
    let mut canvas = Image::white(cfg.canvas_size, cfg.canvas_size);
    for a in actions {
        canvas = composite(&canvas, &render_stroke(a, cfg)?)?;
    }
    Ok(canvas)
}

/// A randomly perturbed copy of a template: a similarity transform about the
/// centre (orientation preserving), per-point noise and brush jitter.
pub fn jitter_template<R: Rng + ?Sized>(actions: &[Action], rng: &mut R) -> Vec<Action> {
    let scale = rng.random_range(0.85..1.05f32);
    let theta = rng.random_range(-0.14..0.14f32);
    let (dx, dy) = (rng.random_range(-0.06..0.06f32), rng.random_range(-0.06..0.06f32));
    let size = rng.random_range(0.45..0.75f32);
    let (s, c) = theta.sin_cos();
    actions
        .iter()
        .map(|a| {
            let mut v = a.to_array();
            for k in 0..3 {
                let (x, y) = (v[6 + 2 * k] - 0.5, v[7 + 2 * k] - 0.5);
                let nx = scale * (c * x - s * y) + 0.5 + dx + rng.random_range(-0.015..0.015f32);
                let ny = scale * (s * x + c * y) + 0.5 + dy + rng.random_range(-0.015..0.015f32);
                v[6 + 2 * k] = nx.clamp(0.0, 1.0);
                v[7 + 2 * k] = ny.clamp(0.0, 1.0);
            }
            v[2] = size;
            v[0] = rng.random_range(0.85..=1.0f32);
            v[1] = rng.random_range(0.85..=1.0f32);
            Action::from_array(v).expect("jittered action stays in range")
        })
        .collect()
}

/// Procedural ten-class digit set: jittered templates rendered by the
/// oracle. Classes cycle so every prefix is roughly balanced.
pub fn synthetic_digits(n: usize, size: usize, seed: u64) -> Result<LabeledImages> {
    let cfg = OracleConfig::scaled_to(size);
    cfg.validate()?;
    let templates = templates_by_class(&digit_templates(), 10)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 10;
        let actions = jitter_template(&templates[class].actions, &mut rng);
        images.push(render_sequence(&actions, &cfg)?);
        labels.push(class);
    }
    Ok(LabeledImages {
        images,
        labels: Some(labels),
        class_names: (0..10).map(|c| c.to_string()).collect(),
    })
}

pub const SHAPE_CLASSES: [&str; 10] = [
    "disc", "ring", "square", "triangle", "hstripes", "vstripes", "plus", "cross", "checker", "dots",
];

fn shape_inside(class: usize, u: f32, v: f32) -> bool {
    // (u, v) are shape-local coordinates in [-1, 1].
    let r = (u * u + v * v).sqrt();
    match class {
        0 => r <= 1.0,
        1 => (0.6..=1.0).contains(&r),
        2 => u.abs() <= 0.85 && v.abs() <= 0.85,
        3 => v <= 0.8 && v >= -0.9 + 2.0 * u.abs() * 0.95,
        4 => u.abs() <= 1.0 && v.abs() <= 1.0 && ((v + 1.0) * 2.5).floor() as i32 % 2 == 0,
        5 => u.abs() <= 1.0 && v.abs() <= 1.0 && ((u + 1.0) * 2.5).floor() as i32 % 2 == 0,
        6 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
        7 => r <= 1.1 && ((u - v).abs() <= 0.35 || (u + v).abs() <= 0.35),
        8 => u.abs() <= 1.0 && v.abs() <= 1.0 && (((u + 1.0) * 2.0).floor() as i32 + ((v + 1.0) * 2.0).floor() as i32) % 2 == 0,
        _ => ((u - 0.5).powi(2) + v * v).sqrt() <= 0.4 || ((u + 0.5).powi(2) + v * v).sqrt() <= 0.4,
    }
}

/// Procedural ten-class shape set: one random-coloured shape per image on a
/// light random background, with random position and scale.
pub fn synthetic_shapes(n: usize, size: usize, seed: u64) -> Result<LabeledImages> {
    if size < 8 {
        return Err(Error::InvalidArgument("shape images need size >= 8".into()));
    }
    const SS: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % SHAPE_CLASSES.len();
        let bg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.7..1.0f32));
        let fg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.5f32));
        let half = rng.random_range(0.25..0.4f32);
        let cx = rng.random_range(half..1.0 - half);
        let cy = rng.random_range(half..1.0 - half);
        let mut img = Image::white(size, size);
        for py in 0..size {
            for px in 0..size {
                let mut hits = 0;
                for sy in 0..SS {
                    for sx in 0..SS {
                        let x = (px as f32 + (sx as f32 + 0.5) / SS as f32) / size as f32;
                        let y = (py as f32 + (sy as f32 + 0.5) / SS as f32) / size as f32;
                        if shape_inside(class, (x - cx) / half, (y - cy) / half) {
                            hits += 1;
                        }
                    }
                }
                let t = hits as f32 / (SS * SS) as f32;
                img.set_pixel(py, px, [0, 1, 2].map(|c| bg[c] + t * (fg[c] - bg[c])));
            }
        }
        images.push(img);
        labels.push(class);
    }
    Ok(LabeledImages {
        images,
        labels: Some(labels),
        class_names: SHAPE_CLASSES.iter().map(|s| s.to_string()).collect(),
    })
}

fn png_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads PNGs resized to `size × size`.
///
/// `dir/<class>/*.png` gives a labeled set (classes in name order); PNGs
/// directly in `dir` give an unlabeled set.
pub fn load_png_dir(dir: impl AsRef<Path>, size: usize) -> Result<LabeledImages> {
    let dir = dir.as_ref();
    let mut class_dirs: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    let mut out = LabeledImages::default();
    if class_dirs.is_empty() {
        for f in png_files(dir)? {
            out.images.push(Image::load_png(&f)?.resize(size, size));
        }
    } else {
        let mut labels = Vec::new();
        for (c, d) in class_dirs.iter().enumerate() {
            out.class_names.push(d.file_name().unwrap_or_default().to_string_lossy().into_owned());
            for f in png_files(d)? {
                out.images.push(Image::load_png(&f)?.resize(size, size));
                labels.push(c);
            }
        }
        out.labels = Some(labels);
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG images under {}", dir.display())));
    }
    Ok(out)
}

fn read_idx(path: &Path, expected_dims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let bad = |reason: String| Error::MalformedDataset {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(bad("not an unsigned-byte IDX file".into()));
    }
    let ndims = bytes[3] as usize;
    if ndims != expected_dims {
        return Err(bad(format!("expected {expected_dims} dimensions, found {ndims}")));
    }
    let head = 4 + 4 * ndims;
    if bytes.len() < head {
        return Err(bad("truncated header".into()));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let total: usize = dims.iter().product();
    if bytes.len() != head + total {
        return Err(bad(format!("payload {} bytes, expected {total}", bytes.len() - head)));
    }
    Ok((dims, bytes[head..].to_vec()))
}

/// Loads an IDX image archive (and optional label archive) as RGB images
/// resized to `size × size`. With `invert`, light-on-dark digits become
/// dark ink on white.
pub fn load_idx(images: impl AsRef<Path>, labels: Option<&Path>, size: usize, invert: bool) -> Result<LabeledImages> {
    let (dims, pixels) = read_idx(images.as_ref(), 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let mut out = LabeledImages::default();
    for chunk in pixels.chunks_exact(h * w) {
        let rgb: Vec<u8> = chunk
            .iter()
            .flat_map(|&p| {
                let v = if invert { 255 - p } else { p };
                [v, v, v]
            })
            .collect();
        out.images.push(Image::from_u8(h, w, &rgb)?.resize(size, size));
    }
    if let Some(lp) = labels {
        let (ldims, l) = read_idx(lp, 1)?;
        if ldims[0] != n {
            return Err(Error::MalformedDataset {
                path: lp.to_path_buf(),
                reason: format!("{} labels for {n} images", ldims[0]),
            });
        }
        let labels: Vec<usize> = l.iter().map(|&v| v as usize).collect();
        let k = labels.iter().max().map_or(0, |m| m + 1);
        out.class_names = (0..k).map(|c| c.to_string()).collect();
        out.labels = Some(labels);
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}
