//! Binary `(action, stroke)` dataset files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "NPDS" | version u32 = 1 | count u64 | action_dim u32 | height u32 | width u32 | flags u32
//! count × { action: action_dim × f32 | image: height × width × 3 × u8 (row-major RGB) }
//! ```
//!
//! Flag bit 0 marks a discrete-variant dataset, whose actions carry a
//! trailing lift component (`action_dim = 13`).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::action::{sample_action, DiscreteAction, ACTION_DIM};
use super::render::{render_stroke, render_stroke_discrete, OracleConfig};
use crate::error::{Error, Result};
use crate::image::Image;

pub const MAGIC: &[u8; 4] = b"NPDS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
pub const FLAG_DISCRETE: u32 = 1;

/// Fraction of discrete-variant records drawn with the brush lifted.
pub const LIFT_PROBABILITY: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub count: u64,
    pub action_dim: u32,
    pub height: u32,
    pub width: u32,
    pub flags: u32,
}

impl DatasetHeader {
    pub fn is_discrete(&self) -> bool {
        self.flags & FLAG_DISCRETE != 0
    }

    pub fn image_bytes(&self) -> usize {
        self.height as usize * self.width as usize * 3
    }

    pub fn record_size(&self) -> usize {
        self.action_dim as usize * 4 + self.image_bytes()
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(MAGIC);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..16].copy_from_slice(&self.count.to_le_bytes());
        out[16..20].copy_from_slice(&self.action_dim.to_le_bytes());
        out[20..24].copy_from_slice(&self.height.to_le_bytes());
        out[24..28].copy_from_slice(&self.width.to_le_bytes());
        out[28..32].copy_from_slice(&self.flags.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::MalformedDataset {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let header = Self {
            version: u32_at(4),
            count: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
            action_dim: u32_at(16),
            height: u32_at(20),
            width: u32_at(24),
            flags: u32_at(28),
        };
        if header.version != VERSION {
            return Err(bad(&format!("unsupported version {}", header.version)));
        }
        let expected_dim = if header.is_discrete() { ACTION_DIM + 1 } else { ACTION_DIM };
        if header.action_dim as usize != expected_dim {
            return Err(bad(&format!("action_dim {} (expected {expected_dim})", header.action_dim)));
        }
        Ok(header)
    }
}

/// Per-record noise seed, so records can be rendered independently.
pub fn record_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders `n` sampled actions with the oracle and writes them to `out_path`.
pub fn generate_dataset(
    n: usize,
    cfg: &OracleConfig,
    out_path: impl AsRef<Path>,
    discrete: bool,
) -> Result<DatasetHeader> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let header = DatasetHeader {
        version: VERSION,
        count: n as u64,
        action_dim: if discrete { ACTION_DIM as u32 + 1 } else { ACTION_DIM as u32 },
        height: cfg.canvas_size as u32,
        width: cfg.canvas_size as u32,
        flags: if discrete { FLAG_DISCRETE } else { 0 },
    };
    let mut w = BufWriter::new(File::create(out_path)?);
    w.write_all(&header.to_bytes())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for i in 0..n {
        let record_cfg = cfg.with_seed(record_seed(cfg.seed, i as u64));
        let (action, image): (Vec<f32>, Image) = if discrete {
            let dv = DiscreteAction::sample(&mut rng, LIFT_PROBABILITY);
            (dv.to_vector()?.to_vec(), render_stroke_discrete(&dv, &record_cfg)?)
        } else {
            let a = sample_action(&mut rng);
            (a.to_array().to_vec(), render_stroke(&a, &record_cfg)?)
        };
        for v in action {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&image.to_u8())?;
    }
    w.flush()?;
    Ok(header)
}

/// A dataset loaded fully into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    header: DatasetHeader,
    actions: Vec<f32>,
    images: Vec<u8>,
    fingerprint: String,
}

impl Dataset {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let header = DatasetHeader::parse(&bytes, path)?;
        let n = header.count as usize;
        let expected = HEADER_LEN + n * header.record_size();
        if bytes.len() != expected {
            return Err(Error::MalformedDataset {
                path: path.to_path_buf(),
                reason: format!("length {} (expected {expected})", bytes.len()),
            });
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let dim = header.action_dim as usize;
        let img_len = header.image_bytes();
        let mut actions = Vec::with_capacity(n * dim);
        let mut images = Vec::with_capacity(n * img_len);
        for rec in bytes[HEADER_LEN..].chunks_exact(header.record_size()) {
            actions.extend(
                rec[..dim * 4]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
            );
            images.extend_from_slice(&rec[dim * 4..]);
        }
        let fingerprint = hex::encode(Sha256::digest(&bytes));
        Ok(Self {
            header,
            actions,
            images,
            fingerprint,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.header.count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn action_dim(&self) -> usize {
        self.header.action_dim as usize
    }

    pub fn canvas_size(&self) -> usize {
        self.header.height as usize
    }

    /// SHA-256 of the file contents, hex-encoded.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn action(&self, i: usize) -> &[f32] {
        let d = self.action_dim();
        &self.actions[i * d..(i + 1) * d]
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        let n = self.header.image_bytes();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> Image {
        Image::from_u8(self.header.height as usize, self.header.width as usize, self.image_bytes(i))
            .expect("record size checked on load")
    }

    /// Deterministic 95/5 split by record index: `(train, held_out)`.
    pub fn split_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.len();
        let held = (n / 20).max(if n > 1 { 1 } else { 0 });
        let cut = n - held;
        ((0..cut).collect(), (cut..n).collect())
    }
}
