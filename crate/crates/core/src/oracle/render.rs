//! Dab-based brushstroke rasterizer.
//!
//! A stroke is a sequence of antialiased disc stamps ("dabs") placed along a
//! quadratic Bézier at roughly constant arc-length spacing. Pressure is
//! interpolated linearly from start to end and drives both dab radius and
//! dab opacity. Dabs are composited source-over onto a white canvas with
//! exact pixel-area coverage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::action::{Action, DiscreteAction};
use crate::error::{Error, Result};
use crate::image::{Image, StrokeImage};

/// Uniform-t samples used to tabulate the curve's arc length.
const ARC_SAMPLES: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub canvas_size: usize,
    /// Distance between consecutive dab centers as a fraction of the radius.
    pub dab_spacing_factor: f32,
    /// Radius at brush size 1 and pressure 1.
    pub max_radius_px: f32,
    pub min_radius_px: f32,
    /// Std-dev of per-dab center jitter (px) and relative radius jitter.
    pub noise_scale: f32,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            canvas_size: 64,
            dab_spacing_factor: 0.5,
            max_radius_px: 8.0,
            min_radius_px: 0.5,
            noise_scale: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    /// Default geometry rescaled to another canvas size.
    pub fn scaled_to(canvas_size: usize) -> Self {
        let base = Self::default();
        let k = canvas_size as f32 / base.canvas_size as f32;
        Self {
            canvas_size,
            max_radius_px: base.max_radius_px * k,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas_size < 8 {
            return Err(Error::InvalidOracleConfig(format!(
                "canvas_size must be >= 8, got {}",
                self.canvas_size
            )));
        }
        if !(self.max_radius_px > self.min_radius_px && self.min_radius_px > 0.0) {
            return Err(Error::InvalidOracleConfig(format!(
                "need max_radius_px > min_radius_px > 0, got {} and {}",
                self.max_radius_px, self.min_radius_px
            )));
        }
        if !(self.dab_spacing_factor > 0.0 && self.dab_spacing_factor.is_finite()) {
            return Err(Error::InvalidOracleConfig("dab_spacing_factor must be positive".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidOracleConfig("noise_scale must be >= 0".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    fn radius(&self, brush_size: f64, pressure: f64) -> f64 {
        let (lo, hi) = (self.min_radius_px as f64, self.max_radius_px as f64);
        lo + (hi - lo) * brush_size * pressure
    }
}

/// One placed disc stamp, in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dab {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub opacity: f64,
}

/// Places dabs along the stroke's Bézier path.
pub fn place_dabs(action: &Action, cfg: &OracleConfig) -> Vec<Dab> {
    let s = cfg.canvas_size as f64;
    let pts = action
        .control_points()
        .map(|(x, y)| (x as f64 * s, y as f64 * s));
    let bezier = |t: f64| {
        let u = 1.0 - t;
        let (a, b, c) = (u * u, 2.0 * u * t, t * t);
        (
            a * pts[0].0 + b * pts[1].0 + c * pts[2].0,
            a * pts[0].1 + b * pts[1].1 + c * pts[2].1,
        )
    };

    // Arc-length table over uniform t.
    let mut cumulative = Vec::with_capacity(ARC_SAMPLES + 1);
    cumulative.push(0.0f64);
    let mut prev = bezier(0.0);
    for i in 1..=ARC_SAMPLES {
        let p = bezier(i as f64 / ARC_SAMPLES as f64);
        let d = ((p.0 - prev.0).powi(2) + (p.1 - prev.1).powi(2)).sqrt();
        cumulative.push(cumulative[i - 1] + d);
        prev = p;
    }
    let length = cumulative[ARC_SAMPLES];
    let t_at = |arc: f64| -> f64 {
        if length <= 0.0 {
            return 0.0;
        }
        let k = cumulative.partition_point(|&c| c < arc).clamp(1, ARC_SAMPLES);
        let (c0, c1) = (cumulative[k - 1], cumulative[k]);
        let frac = if c1 > c0 { ((arc - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
        ((k - 1) as f64 + frac) / ARC_SAMPLES as f64
    };

    let (p0, p1) = (action.start_pressure as f64, action.end_pressure as f64);
    let size = action.brush_size as f64;
    let dab_at = |t: f64| {
        let pressure = (1.0 - t) * p0 + t * p1;
        let (cx, cy) = bezier(t);
        Dab {
            cx,
            cy,
            radius: cfg.radius(size, pressure),
            opacity: pressure,
        }
    };

    let spacing = cfg.dab_spacing_factor as f64;
    let mut dabs = Vec::new();
    let mut arc = 0.0;
    let mut last_arc = 0.0;
    while arc <= length {
        let dab = dab_at(t_at(arc));
        last_arc = arc;
        arc += (spacing * dab.radius).max(1e-3);
        dabs.push(dab);
    }
    if length - last_arc > 1e-9 {
        dabs.push(dab_at(1.0));
    }
    dabs
}

/// Renders one action as a stroke on a white canvas.
pub fn render_stroke(action: &Action, cfg: &OracleConfig) -> Result<StrokeImage> {
    cfg.validate()?;
    action.validate()?;
    let mut img = Image::white(cfg.canvas_size, cfg.canvas_size);
    let mut dabs = place_dabs(action, cfg);
    if cfg.noise_scale > 0.0 {
        jitter_dabs(&mut dabs, cfg.noise_scale as f64, cfg.seed);
    }
    let color = action.color().map(|c| crate::image::quantize_u8(c) as f64 / 255.0);
    for dab in &dabs {
        stamp_dab(&mut img, dab, color);
    }
    Ok(img)
}

/// Renders a discrete-variant action; a lifted brush leaves the canvas white.
pub fn render_stroke_discrete(dv: &DiscreteAction, cfg: &OracleConfig) -> Result<StrokeImage> {
    let snapped = dv.snapped()?;
    if dv.lift {
        cfg.validate()?;
        return Ok(Image::white(cfg.canvas_size, cfg.canvas_size));
    }
    render_stroke(&snapped, cfg)
}

fn jitter_dabs(dabs: &mut [Dab], sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for dab in dabs {
        let nx: f64 = StandardNormal.sample(&mut rng);
        let ny: f64 = StandardNormal.sample(&mut rng);
        let nr: f64 = StandardNormal.sample(&mut rng);
        dab.cx += sigma * nx;
        dab.cy += sigma * ny;
        dab.radius = (dab.radius * (1.0 + sigma * nr)).max(0.0);
    }
}

/// Composites one dab source-over onto `img`.
pub fn stamp_dab(img: &mut Image, dab: &Dab, color: [f64; 3]) {
    if dab.opacity <= 0.0 || dab.radius <= 0.0 {
        return;
    }
    let (h, w) = (img.height() as i64, img.width() as i64);
    let x_lo = ((dab.cx - dab.radius).floor() as i64).max(0);
    let x_hi = ((dab.cx + dab.radius).ceil() as i64).min(w);
    let y_lo = ((dab.cy - dab.radius).floor() as i64).max(0);
    let y_hi = ((dab.cy + dab.radius).ceil() as i64).min(h);
    for py in y_lo..y_hi {
        for px in x_lo..x_hi {
            let cov = disc_pixel_coverage(dab.cx, dab.cy, dab.radius, px as f64, py as f64);
            if cov <= 0.0 {
                continue;
            }
            let a = cov * dab.opacity;
            let (y, x) = (py as usize, px as usize);
            let p = img.pixel(y, x);
            let blended = [0, 1, 2].map(|c| (p[c] as f64 * (1.0 - a) + color[c] * a) as f32);
            img.set_pixel(y, x, blended.map(|v| v.clamp(0.0, 1.0)));
        }
    }
}

/// Exact area of the unit pixel `[px, px+1] × [py, py+1]` covered by a disc.
pub fn disc_pixel_coverage(cx: f64, cy: f64, r: f64, px: f64, py: f64) -> f64 {
    let (x0, x1, y0, y1) = (px - cx, px + 1.0 - cx, py - cy, py + 1.0 - cy);
    // Nearest and farthest rectangle points from the center.
    let nearest = |lo: f64, hi: f64| if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
    let (nx, ny) = (nearest(x0, x1), nearest(y0, y1));
    if nx * nx + ny * ny >= r * r {
        return 0.0;
    }
    let fx = x0.abs().max(x1.abs());
    let fy = y0.abs().max(y1.abs());
    if fx * fx + fy * fy <= r * r {
        return 1.0;
    }
    let area = quadrant_area(x1, y1, r) - quadrant_area(x0, y1, r) - quadrant_area(x1, y0, r)
        + quadrant_area(x0, y0, r);
    area.clamp(0.0, 1.0)
}

/// `∫_{-r}^{x} sqrt(r² − t²) dt` for `x ∈ [-r, r]`.
fn half_chord_integral(x: f64, r: f64) -> f64 {
    let x = x.clamp(-r, r);
    let s = (r * r - x * x).max(0.0).sqrt();
    0.5 * (x * s + r * r * (x / r).clamp(-1.0, 1.0).asin()) + std::f64::consts::FRAC_PI_4 * r * r
}

/// Area of the origin-centered disc restricted to `X ≤ a, Y ≤ b`.
fn quadrant_area(a: f64, b: f64, r: f64) -> f64 {
    let a = a.min(r);
    if a <= -r || b <= -r {
        return 0.0;
    }
    let s = |x: f64| half_chord_integral(x, r);
    // Integral of the full chord (2s) and of the partial chord (b + s) over [lo, hi] ∩ [-r, a].
    let full = |lo: f64, hi: f64| {
        let hi = hi.min(a);
        if hi <= lo { 0.0 } else { 2.0 * (s(hi) - s(lo)) }
    };
    let partial = |lo: f64, hi: f64| {
        let hi = hi.min(a);
        if hi <= lo { 0.0 } else { b * (hi - lo) + s(hi) - s(lo) }
    };
    if b >= r {
        return full(-r, r);
    }
    let w = (r * r - b * b).sqrt();
    if b >= 0.0 {
        full(-r, -w) + partial(-w, w) + full(w, r)
    } else {
        partial(-w, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::action::sample_action;

    /// Independent coverage estimate: midpoint quadrature of the vertical
    /// chord overlap across the pixel.
    fn coverage_by_quadrature(cx: f64, cy: f64, r: f64, px: f64, py: f64) -> f64 {
        let n = 4000;
        let mut area = 0.0;
        for i in 0..n {
            let x = px + (i as f64 + 0.5) / n as f64;
            let dx = x - cx;
            if dx.abs() >= r {
                continue;
            }
            let h = (r * r - dx * dx).sqrt();
            let lo = (cy - h).max(py);
            let hi = (cy + h).min(py + 1.0);
            area += (hi - lo).max(0.0);
        }
        area / n as f64
    }

    #[test]
    fn coverage_matches_quadrature() {
        for &(cx, cy, r) in &[(5.3, 4.7, 2.2), (10.0, 10.0, 8.0), (3.5, 3.5, 0.4), (7.1, 2.9, 3.33)] {
            for py in 0..16 {
                for px in 0..16 {
                    let exact = disc_pixel_coverage(cx, cy, r, px as f64, py as f64);
                    let approx = coverage_by_quadrature(cx, cy, r, px as f64, py as f64);
                    assert!((exact - approx).abs() < 1e-5, "{cx},{cy},{r} @ {px},{py}: {exact} vs {approx}");
                }
            }
        }
    }

    #[test]
    fn coverage_sums_to_disc_area() {
        let (cx, cy, r) = (8.25, 7.6, 5.1);
        let total: f64 = (0..20)
            .flat_map(|y| (0..20).map(move |x| (x, y)))
            .map(|(x, y)| disc_pixel_coverage(cx, cy, r, x as f64, y as f64))
            .sum();
        assert!((total - std::f64::consts::PI * r * r).abs() < 1e-9);
    }

    #[test]
    fn zero_length_stroke_places_single_dab() {
        let a = Action::from_array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let dabs = place_dabs(&a, &OracleConfig::default());
        assert_eq!(dabs.len(), 1);
        assert_eq!(dabs[0].radius, 8.0);
    }

    #[test]
    fn dab_spacing_follows_radius() {
        let a = Action::from_array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.1, 0.5, 0.5, 0.5, 0.9, 0.5]).unwrap();
        let dabs = place_dabs(&a, &OracleConfig::default());
        for pair in dabs.windows(2).take(dabs.len() - 2) {
            let d = ((pair[1].cx - pair[0].cx).powi(2) + (pair[1].cy - pair[0].cy).powi(2)).sqrt();
            assert!((d - 4.0).abs() < 0.05, "spacing {d}");
        }
        let last = dabs.last().unwrap();
        assert!((last.cx - 0.9f32 as f64 * 64.0).abs() < 1e-9);
    }

    #[test]
    fn noise_is_seeded() {
        let cfg = OracleConfig {
            noise_scale: 0.5,
            seed: 9,
            ..OracleConfig::default()
        };
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(1);
        let mut a = sample_action(&mut rng);
        a.start_pressure = 1.0;
        a.brush_size = 0.8;
        let x = render_stroke(&a, &cfg).unwrap();
        assert_eq!(x, render_stroke(&a, &cfg).unwrap());
        let y = render_stroke(&a, &cfg.with_seed(10)).unwrap();
        assert_ne!(x, y);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = OracleConfig {
            canvas_size: 4,
            ..OracleConfig::default()
        };
        assert!(render_stroke(&Action::blank(), &cfg).is_err());
        let cfg = OracleConfig {
            min_radius_px: 9.0,
            ..OracleConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
