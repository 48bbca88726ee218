//! Stroke compositing and tile stitching.
//!
//! Painter outputs are strokes on white. A stroke is split into a coverage
//! matte and an ink color (`alpha_from_white`) and laid source-over onto the
//! canvas. Both a plain `Image` path and a tensor path (usable inside a
//! training graph) are provided; they agree to float precision.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Matte threshold below which ink is undefined and taken as white.
pub const ALPHA_EPS: f32 = 1e-6;

/// A blank (all-white) canvas.
pub fn blank_canvas(height: usize, width: usize) -> Image {
    Image::white(height, width)
}

/// Splits a stroke-on-white image into `(alpha, ink)`.
///
/// `alpha(p) = max_c (1 − stroke(p, c))` and
/// `ink(p, c) = 1 − (1 − stroke(p, c)) / alpha(p)`, white where `alpha ≤ ε`.
pub fn alpha_from_white(stroke: &Image) -> (Vec<f32>, Image) {
    let mut alpha = Vec::with_capacity(stroke.height() * stroke.width());
    let mut ink = Image::white(stroke.height(), stroke.width());
    for y in 0..stroke.height() {
        for x in 0..stroke.width() {
            let p = stroke.pixel(y, x);
            let a = p.iter().map(|v| 1.0 - v).fold(0.0f32, f32::max).clamp(0.0, 1.0);
            alpha.push(a);
            if a > ALPHA_EPS {
                ink.set_pixel(y, x, p.map(|v| (1.0 - (1.0 - v) / a).clamp(0.0, 1.0)));
            }
        }
    }
    (alpha, ink)
}

/// Lays `stroke` over `canvas`: `out = (1 − α)·canvas + α·ink`.
pub fn composite(canvas: &Image, stroke: &Image) -> Result<Image> {
    canvas.same_shape(stroke)?;
    let (alpha, ink) = alpha_from_white(stroke);
    let mut out = canvas.clone();
    for y in 0..canvas.height() {
        for x in 0..canvas.width() {
            let a = alpha[y * canvas.width() + x];
            let (c, k) = (canvas.pixel(y, x), ink.pixel(y, x));
            out.set_pixel(y, x, [0, 1, 2].map(|i| ((1.0 - a) * c[i] + a * k[i]).clamp(0.0, 1.0)));
        }
    }
    Ok(out)
}

/// Differentiable composite over `(N, 3, H, W)` tensors.
///
/// Where `α > ε` the matte decomposition simplifies to
/// `stroke − (1 − α)(1 − canvas)`, which avoids dividing by `α`; elsewhere
/// the ink is white and `out = (1 − α)·canvas + α`.
pub fn composite_tensor(canvas: &Tensor, stroke: &Tensor) -> Result<Tensor> {
    if canvas.dims() != stroke.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", canvas.dims()),
            got: format!("{:?}", stroke.dims()),
        });
    }
    let alpha = stroke.min_keepdim(1)?.affine(-1.0, 1.0)?.broadcast_as(stroke.shape())?;
    let one_minus_alpha = alpha.affine(-1.0, 1.0)?;
    let inked = (stroke - (&one_minus_alpha * canvas.affine(-1.0, 1.0)?)?)?;
    let blank = ((&one_minus_alpha * canvas)? + &alpha)?;
    let mask = alpha.gt(ALPHA_EPS as f64)?;
    Ok(mask.where_cond(&inked, &blank)?)
}

/// Composites a batch of stroke sequences `(B, n, 3, H, W)` in order onto
/// white canvases, giving `(B, 3, H, W)`.
pub fn composite_strokes(strokes: &Tensor) -> Result<Tensor> {
    let (b, n, c, h, w) = strokes.dims5()?;
    let mut canvas = Tensor::ones((b, c, h, w), strokes.dtype(), strokes.device())?;
    for t in 0..n {
        canvas = composite_tensor(&canvas, &strokes.narrow(1, t, 1)?.squeeze(1)?)?;
    }
    Ok(canvas)
}

/// Layout of overlapping square tiles forming a larger canvas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub tile_size: usize,
    pub overlap_fraction: f32,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(tile_size: usize, overlap_fraction: f32, rows: usize, cols: usize) -> Result<Self> {
        let spec = Self {
            tile_size,
            overlap_fraction,
            rows,
            cols,
        };
        spec.stride()?;
        Ok(spec)
    }

    /// Tile-to-tile offset, which must come out integral.
    pub fn stride(&self) -> Result<usize> {
        if self.rows == 0 || self.cols == 0 || self.tile_size == 0 {
            return Err(Error::InvalidGrid("rows, cols and tile_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::InvalidGrid(format!(
                "overlap_fraction {} outside [0, 1)",
                self.overlap_fraction
            )));
        }
        let stride = self.tile_size as f64 * (1.0 - self.overlap_fraction as f64);
        if (stride - stride.round()).abs() > 1e-9 || stride.round() < 1.0 {
            return Err(Error::InvalidGrid(format!(
                "stride {stride} = tile_size·(1 − overlap) is not a positive integer"
            )));
        }
        Ok(stride.round() as usize)
    }

    /// `(height, width)` of the stitched output.
    pub fn output_size(&self) -> Result<(usize, usize)> {
        let s = self.stride()?;
        Ok((
            self.tile_size + (self.rows - 1) * s,
            self.tile_size + (self.cols - 1) * s,
        ))
    }

    pub fn tile_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Top-left output coordinate of tile `(r, c)`.
    pub fn tile_origin(&self, r: usize, c: usize) -> Result<(usize, usize)> {
        let s = self.stride()?;
        Ok((r * s, c * s))
    }

    /// Normalized 1-D feathering weights for each of `n` tiles along an axis.
    fn axis_weights(&self, n: usize) -> Result<Vec<Vec<f32>>> {
        let t = self.tile_size;
        let stride = self.stride()?;
        let band = t - stride;
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..t)
                    .map(|k| {
                        let mut w = 1.0;
                        if band > 0 && i > 0 && k < band {
                            w *= (k as f64 + 0.5) / band as f64;
                        }
                        if band > 0 && i + 1 < n && k >= t - band {
                            w *= (t - k) as f64 - 0.5;
                            w /= band as f64;
                        }
                        w
                    })
                    .collect()
            })
            .collect();
        let len = t + (n - 1) * stride;
        let mut total = vec![0.0f64; len];
        for (i, w) in raw.iter().enumerate() {
            for (k, v) in w.iter().enumerate() {
                total[i * stride + k] += v;
            }
        }
        Ok(raw
            .iter()
            .enumerate()
            .map(|(i, w)| {
                w.iter()
                    .enumerate()
                    .map(|(k, v)| (v / total[i * stride + k]) as f32)
                    .collect()
            })
            .collect())
    }

    /// Per-tile weight maps (`tile_size²`, row-major), indexed `r * cols + c`.
    pub fn tile_weights(&self) -> Result<Vec<Vec<f32>>> {
        let wy = self.axis_weights(self.rows)?;
        let wx = self.axis_weights(self.cols)?;
        let t = self.tile_size;
        let mut out = Vec::with_capacity(self.tile_count());
        for ry in &wy {
            for cx in &wx {
                let mut m = Vec::with_capacity(t * t);
                for y in 0..t {
                    for x in 0..t {
                        m.push(ry[y] * cx[x]);
                    }
                }
                out.push(m);
            }
        }
        Ok(out)
    }

    /// Sum of all tile weights at each output pixel (should be 1 everywhere).
    pub fn weight_sum(&self) -> Result<Vec<f32>> {
        let (h, w) = self.output_size()?;
        let t = self.tile_size;
        let mut sum = vec![0.0f32; h * w];
        for (i, m) in self.tile_weights()?.iter().enumerate() {
            let (oy, ox) = self.tile_origin(i / self.cols, i % self.cols)?;
            for y in 0..t {
                for x in 0..t {
                    sum[(oy + y) * w + ox + x] += m[y * t + x];
                }
            }
        }
        Ok(sum)
    }
}

/// Blends row-major tiles into one canvas with linear feathering in the
/// overlap bands.
pub fn stitch(tiles: &[Image], spec: &GridSpec) -> Result<Image> {
    check_tiles(tiles.len(), spec)?;
    let t = spec.tile_size;
    for tile in tiles {
        if tile.height() != t || tile.width() != t {
            return Err(Error::ShapeMismatch {
                expected: format!("{t}x{t} tile"),
                got: format!("{}x{}", tile.height(), tile.width()),
            });
        }
    }
    let (h, w) = spec.output_size()?;
    let mut acc = vec![0.0f32; h * w * 3];
    for (i, (tile, m)) in tiles.iter().zip(spec.tile_weights()?).enumerate() {
        let (oy, ox) = spec.tile_origin(i / spec.cols, i % spec.cols)?;
        for y in 0..t {
            for x in 0..t {
                let wgt = m[y * t + x];
                let p = tile.pixel(y, x);
                let o = ((oy + y) * w + ox + x) * 3;
                for c in 0..3 {
                    acc[o + c] += wgt * p[c];
                }
            }
        }
    }
    Image::from_vec(h, w, acc.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Tensor version of [`stitch`]: tiles are `(N, 3, T, T)`, output `(N, 3, H, W)`.
pub fn stitch_tensor(tiles: &[Tensor], spec: &GridSpec, device: &Device) -> Result<Tensor> {
    check_tiles(tiles.len(), spec)?;
    let (h, w) = spec.output_size()?;
    let t = spec.tile_size;
    let mut out: Option<Tensor> = None;
    for (i, (tile, m)) in tiles.iter().zip(spec.tile_weights()?).enumerate() {
        let (oy, ox) = spec.tile_origin(i / spec.cols, i % spec.cols)?;
        let wt = Tensor::from_vec(m, (1, 1, t, t), device)?.to_dtype(tile.dtype())?;
        let weighted = tile.broadcast_mul(&wt)?;
        let placed = weighted
            .pad_with_zeros(2, oy, h - oy - t)?
            .pad_with_zeros(3, ox, w - ox - t)?;
        out = Some(match out {
            None => placed,
            Some(acc) => (acc + placed)?,
        });
    }
    Ok(out.expect("at least one tile"))
}

fn check_tiles(n: usize, spec: &GridSpec) -> Result<()> {
    spec.stride()?;
    if n != spec.tile_count() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} tiles", spec.tile_count()),
            got: n.to_string(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{render_stroke, sample_action, OracleConfig};
    use candle_core::{DType, Var};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_stroke(seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = sample_action(&mut rng);
        a.start_pressure = 0.9;
        a.end_pressure = 0.7;
        a.brush_size = 0.8;
        render_stroke(&a, &OracleConfig::scaled_to(16)).unwrap()
    }

    #[test]
    fn white_stroke_has_zero_alpha() {
        let (alpha, _) = alpha_from_white(&Image::white(4, 4));
        assert!(alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn black_pixel_is_opaque_black() {
        let mut s = Image::white(1, 1);
        s.set_pixel(0, 0, [0.0; 3]);
        let (alpha, ink) = alpha_from_white(&s);
        assert_eq!(alpha[0], 1.0);
        assert_eq!(ink.pixel(0, 0), [0.0; 3]);
    }

    #[test]
    fn mid_gray_is_half_alpha_black_ink() {
        let mut s = Image::white(1, 1);
        s.set_pixel(0, 0, [0.5; 3]);
        let (alpha, ink) = alpha_from_white(&s);
        assert_eq!(alpha[0], 0.5);
        assert_eq!(ink.pixel(0, 0), [0.0; 3]);
    }

    #[test]
    fn white_stroke_leaves_canvas() {
        let canvas = random_stroke(1);
        assert_eq!(composite(&canvas, &Image::white(16, 16)).unwrap(), canvas);
    }

    #[test]
    fn stroke_on_blank_reproduces_stroke() {
        let s = random_stroke(2);
        let out = composite(&blank_canvas(16, 16), &s).unwrap();
        assert!(out.max_abs_diff(&s).unwrap() <= 1e-6);
    }

    #[test]
    fn opaque_stroke_is_idempotent() {
        let mut s = Image::white(4, 4);
        s.set_pixel(1, 1, [0.0, 0.3, 0.6]);
        s.set_pixel(2, 3, [0.0, 0.0, 0.0]);
        let canvas = random_stroke(3).resize(4, 4);
        let once = composite(&canvas, &s).unwrap();
        let twice = composite(&once, &s).unwrap();
        assert!(once.max_abs_diff(&twice).unwrap() <= 1e-6);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(composite(&Image::white(4, 4), &Image::white(4, 5)).is_err());
    }

    #[test]
    fn tensor_path_matches_image_path() {
        let dev = Device::Cpu;
        let (canvas, stroke) = (random_stroke(4), random_stroke(5));
        let expected = composite(&canvas, &stroke).unwrap();
        let got = composite_tensor(&canvas.to_tensor(&dev).unwrap(), &stroke.to_tensor(&dev).unwrap()).unwrap();
        let got = Image::from_tensor(&got).unwrap();
        assert!(got.max_abs_diff(&expected).unwrap() <= 1e-6);
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let dev = Device::Cpu;
        let canvas = random_stroke(6).to_tensor(&dev).unwrap().to_dtype(DType::F64).unwrap();
        let stroke = random_stroke(7).to_tensor(&dev).unwrap().to_dtype(DType::F64).unwrap();
        // Keep every pixel away from the matte threshold.
        let stroke = stroke.affine(0.9, 0.0).unwrap();
        let weights = Tensor::rand(0f64, 1.0, canvas.shape(), &dev).unwrap();
        let objective = |s: &Tensor| -> Tensor {
            let out = composite_tensor(&canvas, s).unwrap();
            (out.sqr().unwrap() * &weights).unwrap().sum_all().unwrap()
        };
        let var = Var::from_tensor(&stroke).unwrap();
        let grads = objective(var.as_tensor()).backward().unwrap();
        let analytic = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let base = stroke.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let h = 1e-6;
        for idx in (0..base.len()).step_by(37) {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[idx] += h;
            minus[idx] -= h;
            let f = |v: Vec<f64>| {
                objective(&Tensor::from_vec(v, stroke.shape(), &dev).unwrap())
                    .to_scalar::<f64>()
                    .unwrap()
            };
            let numeric = (f(plus) - f(minus)) / (2.0 * h);
            let denom = numeric.abs().max(analytic[idx].abs()).max(1e-8);
            assert!((numeric - analytic[idx]).abs() / denom < 1e-4, "idx {idx}: {numeric} vs {}", analytic[idx]);
        }
    }

    #[test]
    fn grid_size_formula() {
        let spec = GridSpec::new(64, 0.5, 2, 2).unwrap();
        assert_eq!(spec.output_size().unwrap(), (96, 96));
        assert!(GridSpec::new(64, 0.3, 2, 2).is_err());
        assert!(GridSpec::new(64, 1.0, 2, 2).is_err());
    }

    #[test]
    fn single_tile_stitch_is_identity() {
        let t = random_stroke(8);
        let spec = GridSpec::new(16, 0.5, 1, 1).unwrap();
        assert_eq!(stitch(&[t.clone()], &spec).unwrap(), t);
    }

    #[test]
    fn equal_tiles_blend_to_same_value() {
        let gray = Image::filled(16, 16, [0.4; 3]);
        let spec = GridSpec::new(16, 0.5, 1, 2).unwrap();
        let out = stitch(&[gray.clone(), gray], &spec).unwrap();
        assert_eq!(out.width(), 24);
        assert!(out.data().iter().all(|v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn weights_sum_to_one() {
        for (t, o, r, c) in [(64, 0.5, 2, 2), (16, 0.75, 3, 2), (8, 0.0, 2, 3), (32, 0.25, 4, 4)] {
            let spec = GridSpec::new(t, o, r, c).unwrap();
            for s in spec.weight_sum().unwrap() {
                assert!((s - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn tensor_stitch_matches_image_stitch() {
        let dev = Device::Cpu;
        let spec = GridSpec::new(16, 0.5, 2, 2).unwrap();
        let tiles: Vec<Image> = (0..4).map(|i| random_stroke(20 + i)).collect();
        let expected = stitch(&tiles, &spec).unwrap();
        let tt: Vec<Tensor> = tiles.iter().map(|t| t.to_tensor(&dev).unwrap()).collect();
        let got = Image::from_tensor(&stitch_tensor(&tt, &spec, &dev).unwrap()).unwrap();
        assert!(got.max_abs_diff(&expected).unwrap() < 1e-6);
    }

    #[test]
    fn tile_count_mismatch_is_rejected() {
        let spec = GridSpec::new(16, 0.5, 2, 2).unwrap();
        assert!(stitch(&[Image::white(16, 16)], &spec).is_err());
    }
}
