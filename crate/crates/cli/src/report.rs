//! Report bundles: copies of a run's images, loss-curve plots, a single
//! stacked PNG and an HTML index.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use strokeforge_core::Image;

use crate::error::{CliError, CliResult};
use crate::run::Run;

const PLOT_W: usize = 320;
const PLOT_H: usize = 120;
const MIN_WIDTH: usize = 256;

fn caption(name: &str) -> &'static str {
    match name {
        "pairs.png" => "Oracle stroke (left) and painter stroke (right) for the same action.",
        "triplets.png" => "Target (left), neural painter canvas (middle), the same actions re-rendered by the oracle (right).",
        "strip.png" => "Painter output while one action dimension is swept from 0 to 1.",
        "oracle_strip.png" => "Oracle output for the same sweep.",
        "oracle_lift0.png" => "Oracle stroke at lift 0.",
        "canvas.png" => "Optimized canvas.",
        "oracle.png" => "Oracle re-render of the painted strokes.",
        "comparison.png" => "Content image (left) and stroke rendering (right).",
        _ => "",
    }
}

/// Numeric series (length ≥ 2) found at the top level of a JSON object.
fn series(v: &Value) -> Vec<(String, Vec<f64>)> {
    let Some(obj) = v.as_object() else { return Vec::new() };
    obj.iter()
        .filter_map(|(k, v)| {
            let arr = v.as_array()?;
            let vals: Vec<f64> = arr.iter().filter_map(Value::as_f64).collect();
            (vals.len() >= 2 && vals.len() == arr.len()).then(|| (k.clone(), vals))
        })
        .collect()
}

fn draw_line(img: &mut Image, (x0, y0): (f64, f64), (x1, y1): (f64, f64), rgb: [f32; 3]) {
    let n = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let (x, y) = (x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
        if x >= 0.0 && y >= 0.0 && (x as usize) < img.width() && (y as usize) < img.height() {
            img.set_pixel(y as usize, x as usize, rgb);
        }
    }
}

/// Line plot of one series with a frame; non-finite values are skipped.
pub fn plot(values: &[f64]) -> Image {
    let mut img = Image::white(PLOT_H, PLOT_W);
    let grey = [0.6, 0.6, 0.6];
    let (l, r, t, b) = (4.0, (PLOT_W - 5) as f64, 4.0, (PLOT_H - 5) as f64);
    for (p, q) in [((l, t), (r, t)), ((r, t), (r, b)), ((r, b), (l, b)), ((l, b), (l, t))] {
        draw_line(&mut img, p, q, grey);
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return img;
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pt = |i: usize, v: f64| {
        let x = l + 1.0 + (r - l - 2.0) * i as f64 / (values.len() - 1).max(1) as f64;
        let y = b - 1.0 - (b - t - 2.0) * (v - lo) / span;
        (x, y)
    };
    let mut prev: Option<(f64, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            prev = None;
            continue;
        }
        let p = pt(i, v);
        if let Some(q) = prev {
            draw_line(&mut img, q, p, [0.1, 0.3, 0.8]);
        }
        prev = Some(p);
    }
    img
}

fn upscale(img: &Image) -> Image {
    let k = MIN_WIDTH.div_ceil(img.width().max(1)).max(1);
    if k == 1 {
        return img.clone();
    }
    let mut out = Image::white(img.height() * k, img.width() * k);
    for y in 0..out.height() {
        for x in 0..out.width() {
            out.set_pixel(y, x, img.pixel(y / k, x / k));
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn sorted_entries(dir: &Path, ext: &str) -> CliResult<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    Ok(v)
}

pub fn report(run: &mut Run, run_dir: &Path) -> CliResult<Value> {
    if !run_dir.is_dir() {
        return Err(anyhow::anyhow!("{} is not a directory", run_dir.display()).into());
    }
    let pngs = sorted_entries(run_dir, "png")?;
    let jsons = sorted_entries(run_dir, "json")?;
    let manifest_path = run_dir.join("manifest.json");
    if pngs.is_empty() && !manifest_path.exists() {
        return Err(CliError::Runtime(anyhow::anyhow!("{} has no run artifacts", run_dir.display())));
    }
    run.input_path("run_dir", run_dir)?;
    let manifest: Option<Value> = std::fs::read_to_string(&manifest_path).ok().and_then(|s| serde_json::from_str(&s).ok());

    let mut html = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>strokeforge report</title>\n<style>body{font-family:sans-serif;max-width:60em;margin:2em auto}img{image-rendering:pixelated;border:1px solid #ccc}pre{background:#f6f6f6;padding:1em;overflow:auto}</style></head><body>\n");
    html.push_str(&format!("<h1>Report for {}</h1>\n", escape(&run_dir.display().to_string())));
    let mut panels = Vec::new();
    if let Some(m) = &manifest {
        html.push_str(&format!(
            "<p>Command <code>{}</code>, status <b>{}</b>, {:.1} s.</p>\n",
            escape(m["command"].as_str().unwrap_or("?")),
            escape(m["status"].as_str().unwrap_or("?")),
            m["wall_clock_secs"].as_f64().unwrap_or(0.0)
        ));
        if !m["summary"].is_null() {
            html.push_str(&format!("<h2>Summary</h2>\n<pre>{}</pre>\n", escape(&serde_json::to_string_pretty(&m["summary"])?)));
        }
    }

    html.push_str("<h2>Images</h2>\n");
    let mut copied = Vec::new();
    for p in &pngs {
        let name = p.file_name().expect("file").to_string_lossy().to_string();
        let img = Image::load_png(p)?;
        let big = upscale(&img);
        big.save_png(run.output(&name))?;
        html.push_str(&format!(
            "<figure><img src=\"{name}\" width=\"{}\"><figcaption><code>{name}</code> {}</figcaption></figure>\n",
            big.width(),
            caption(&name)
        ));
        panels.push(big);
        copied.push(name);
    }

    html.push_str("<h2>Curves</h2>\n");
    let mut plots = Vec::new();
    for p in &jsons {
        if p == &manifest_path {
            continue;
        }
        let Ok(v) = serde_json::from_str::<Value>(&std::fs::read_to_string(p)?) else { continue };
        let stem = p.file_stem().expect("file").to_string_lossy().to_string();
        for (key, vals) in series(&v) {
            let name = format!("plot_{stem}_{key}.png");
            let img = plot(&vals);
            img.save_png(run.output(&name))?;
            let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            html.push_str(&format!(
                "<figure><img src=\"{name}\"><figcaption><code>{stem}.{key}</code>: {} points, first {:.4}, last {:.4}, range [{lo:.4}, {hi:.4}]</figcaption></figure>\n",
                vals.len(),
                vals[0],
                vals[vals.len() - 1]
            ));
            panels.push(img);
            plots.push(name);
        }
    }
    if let Some(m) = &manifest {
        html.push_str(&format!("<h2>Manifest</h2>\n<pre>{}</pre>\n", escape(&serde_json::to_string_pretty(m)?)));
    }
    html.push_str("</body></html>\n");
    std::fs::write(run.output("report.html"), html)?;

    if !panels.is_empty() {
        let rows: Vec<Vec<Image>> = panels.into_iter().map(|p| vec![p]).collect();
        Image::grid(&rows, 8)?.save_png(run.output("report.png"))?;
    }
    Ok(json!({"images": copied, "plots": plots}))
}
