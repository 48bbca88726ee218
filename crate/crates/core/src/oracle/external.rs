//! Plug-in interface for substituting another painting program.
//!
//! An external oracle is any executable that reads one action from stdin as
//! 12 little-endian `f32` values (48 bytes, in [`Action`] layout order) and
//! writes exactly one raw frame to stdout: `size × size × 3` bytes of
//! row-major 8-bit RGB, white background. Non-zero exit status is an error.
//! The program is spawned once per stroke.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};

use super::action::Action;
use super::render::{render_stroke, OracleConfig};
use crate::error::{Error, Result};
use crate::image::{Image, StrokeImage};

/// Anything that turns an action into a stroke image.
pub trait StrokeRenderer {
    fn canvas_size(&self) -> usize;
    fn render(&self, action: &Action) -> Result<StrokeImage>;
}

/// The built-in dab rasterizer.
#[derive(Clone, Debug, Default)]
pub struct DabOracle {
    pub config: OracleConfig,
}

impl StrokeRenderer for DabOracle {
    fn canvas_size(&self) -> usize {
        self.config.canvas_size
    }

    fn render(&self, action: &Action) -> Result<StrokeImage> {
        render_stroke(action, &self.config)
    }
}

#[derive(Clone, Debug)]
pub struct ExternalOracle {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub canvas_size: usize,
}

impl StrokeRenderer for ExternalOracle {
    fn canvas_size(&self) -> usize {
        self.canvas_size
    }

    fn render(&self, action: &Action) -> Result<StrokeImage> {
        action.validate()?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::ExternalOracle(format!("spawn {}: {e}", self.program.display())))?;
        let payload: Vec<u8> = action.to_array().iter().flat_map(|v| v.to_le_bytes()).collect();
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            // A program that ignores its input may close stdin early.
            let _ = stdin.write_all(&payload);
        }
        let mut frame = Vec::new();
        child
            .stdout
            .take()
            .expect("piped stdout")
            .read_to_end(&mut frame)?;
        let status = child.wait()?;
        if !status.success() {
            let mut err = String::new();
            if let Some(mut e) = child.stderr.take() {
                let _ = e.read_to_string(&mut err);
            }
            return Err(Error::ExternalOracle(format!("exit {status}: {}", err.trim())));
        }
        let expected = self.canvas_size * self.canvas_size * 3;
        if frame.len() != expected {
            return Err(Error::ExternalOracle(format!(
                "frame has {} bytes, expected {expected}",
                frame.len()
            )));
        }
        Image::from_u8(self.canvas_size, self.canvas_size, &frame)
    }
}
