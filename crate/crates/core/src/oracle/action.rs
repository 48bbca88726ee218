use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of real parameters in a continuous brushstroke action.
pub const ACTION_DIM: usize = 12;

/// Number of discrete levels for brush size and pressures.
pub const DISCRETE_LEVELS: u8 = 10;

/// One brushstroke: pressures, brush size, RGB color and the three control
/// points of a quadratic Bézier, all in `[0, 1]`.
///
/// The serialized layout is the field order below, also used by
/// [`Action::to_array`] and the JSON stroke export.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Action {
    pub start_pressure: f32,
    pub end_pressure: f32,
    pub brush_size: f32,
    pub color_r: f32,
    pub color_g: f32,
    pub color_b: f32,
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

/// Field offsets within the serialized layout.
pub mod index {
    pub const START_PRESSURE: usize = 0;
    pub const END_PRESSURE: usize = 1;
    pub const BRUSH_SIZE: usize = 2;
    pub const COLOR_R: usize = 3;
    pub const COLOR_G: usize = 4;
    pub const COLOR_B: usize = 5;
    pub const X0: usize = 6;
    pub const Y0: usize = 7;
    pub const X1: usize = 8;
    pub const Y1: usize = 9;
    pub const X2: usize = 10;
    pub const Y2: usize = 11;
    /// Lift flag of discrete-variant painter inputs.
    pub const LIFT: usize = 12;
}

impl Action {
    pub fn to_array(&self) -> [f32; ACTION_DIM] {
        [
            self.start_pressure,
            self.end_pressure,
            self.brush_size,
            self.color_r,
            self.color_g,
            self.color_b,
            self.x0,
            self.y0,
            self.x1,
            self.y1,
            self.x2,
            self.y2,
        ]
    }

    /// Builds an action from an exact 12-component array, checking the range.
    pub fn from_array(a: [f32; ACTION_DIM]) -> Result<Self> {
        let action = Self::from_array_unchecked(a);
        action.validate()?;
        Ok(action)
    }

    fn from_array_unchecked(a: [f32; ACTION_DIM]) -> Self {
        Self {
            start_pressure: a[0],
            end_pressure: a[1],
            brush_size: a[2],
            color_r: a[3],
            color_g: a[4],
            color_b: a[5],
            x0: a[6],
            y0: a[7],
            x1: a[8],
            y1: a[9],
            x2: a[10],
            y2: a[11],
        }
    }

    pub fn from_slice(values: &[f32]) -> Result<Self> {
        let arr: [f32; ACTION_DIM] = values.try_into().map_err(|_| Error::ShapeMismatch {
            expected: format!("{ACTION_DIM} action components"),
            got: values.len().to_string(),
        })?;
        Self::from_array(arr)
    }

    pub fn validate(&self) -> Result<()> {
        for (index, value) in self.to_array().into_iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteAction { index, value });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ActionOutOfRange { index, value });
            }
        }
        Ok(())
    }

    /// A stroke with zero pressure, which renders as nothing.
    pub fn blank() -> Self {
        Self::from_array_unchecked([0.0; ACTION_DIM])
    }

    pub fn color(&self) -> [f32; 3] {
        [self.color_r, self.color_g, self.color_b]
    }

    pub fn control_points(&self) -> [(f32, f32); 3] {
        [(self.x0, self.y0), (self.x1, self.y1), (self.x2, self.y2)]
    }

    /// Reflects the control points about the vertical center line.
    pub fn mirrored_horizontally(&self) -> Self {
        Self {
            x0: 1.0 - self.x0,
            x1: 1.0 - self.x1,
            x2: 1.0 - self.x2,
            ..*self
        }
    }
}

impl TryFrom<Vec<f32>> for Action {
    type Error = Error;

    fn try_from(v: Vec<f32>) -> Result<Self> {
        Self::from_slice(&v)
    }
}

impl From<Action> for Vec<f32> {
    fn from(a: Action) -> Self {
        a.to_array().to_vec()
    }
}

/// Clamps every component of a raw 12-vector into `[0, 1]`.
pub fn clip_action(raw: &[f32]) -> Result<Action> {
    if raw.len() != ACTION_DIM {
        return Err(Error::ShapeMismatch {
            expected: format!("{ACTION_DIM} action components"),
            got: raw.len().to_string(),
        });
    }
    let mut out = [0.0f32; ACTION_DIM];
    for (index, (&value, slot)) in raw.iter().zip(out.iter_mut()).enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFiniteAction { index, value });
        }
        *slot = value.clamp(0.0, 1.0);
    }
    Ok(Action::from_array_unchecked(out))
}

/// Draws every component i.i.d. uniform in `[0, 1]`.
pub fn sample_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    let mut a = [0.0f32; ACTION_DIM];
    for v in a.iter_mut() {
        *v = rng.random::<f32>();
    }
    Action::from_array_unchecked(a)
}

/// An action whose brush size and pressures are restricted to a 10-level
/// grid, plus a flag that lifts the brush off the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteAction {
    pub base: Action,
    pub brush_size_level: u8,
    pub start_pressure_level: u8,
    pub end_pressure_level: u8,
    pub lift: bool,
}

/// Maps level `k` to `k / 9`.
pub fn level_value(level: u8) -> f32 {
    level as f32 / (DISCRETE_LEVELS - 1) as f32
}

/// Nearest grid level for a value in `[0, 1]`.
pub fn nearest_level(value: f32) -> u8 {
    (value.clamp(0.0, 1.0) * (DISCRETE_LEVELS - 1) as f32).round() as u8
}

impl DiscreteAction {
    pub fn new(
        base: Action,
        brush_size_level: u8,
        start_pressure_level: u8,
        end_pressure_level: u8,
        lift: bool,
    ) -> Result<Self> {
        let dv = Self {
            base,
            brush_size_level,
            start_pressure_level,
            end_pressure_level,
            lift,
        };
        dv.validate()?;
        Ok(dv)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, level) in [
            ("brush_size_level", self.brush_size_level),
            ("start_pressure_level", self.start_pressure_level),
            ("end_pressure_level", self.end_pressure_level),
        ] {
            if level >= DISCRETE_LEVELS {
                return Err(Error::InvalidLevel { field, level });
            }
        }
        self.base.validate()
    }

    /// Snaps a continuous action onto the level grid.
    pub fn from_continuous(base: Action, lift: bool) -> Self {
        Self {
            base,
            brush_size_level: nearest_level(base.brush_size),
            start_pressure_level: nearest_level(base.start_pressure),
            end_pressure_level: nearest_level(base.end_pressure),
            lift,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, lift_probability: f64) -> Self {
        let base = sample_action(rng);
        let lift = rng.random_bool(lift_probability);
        Self {
            base,
            brush_size_level: rng.random_range(0..DISCRETE_LEVELS),
            start_pressure_level: rng.random_range(0..DISCRETE_LEVELS),
            end_pressure_level: rng.random_range(0..DISCRETE_LEVELS),
            lift,
        }
    }

    /// The continuous action with brush size and pressures replaced by their
    /// grid values.
    pub fn snapped(&self) -> Result<Action> {
        self.validate()?;
        Ok(Action {
            brush_size: level_value(self.brush_size_level),
            start_pressure: level_value(self.start_pressure_level),
            end_pressure: level_value(self.end_pressure_level),
            ..self.base
        })
    }

    /// Painter input vector: the snapped action followed by the lift flag.
    pub fn to_vector(&self) -> Result<[f32; ACTION_DIM + 1]> {
        let snapped = self.snapped()?.to_array();
        let mut out = [0.0; ACTION_DIM + 1];
        out[..ACTION_DIM].copy_from_slice(&snapped);
        out[ACTION_DIM] = if self.lift { 1.0 } else { 0.0 };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clip_is_identity_on_zeros() {
        assert_eq!(clip_action(&[0.0; 12]).unwrap(), Action::blank());
    }

    #[test]
    fn clip_clamps_out_of_range() {
        let mut raw = [0.5f32; 12];
        raw[2] = 1.7;
        raw[9] = -0.2;
        let a = clip_action(&raw).unwrap().to_array();
        assert_eq!(a[2], 1.0);
        assert_eq!(a[9], 0.0);
        assert_eq!(a[0], 0.5);
    }

    #[test]
    fn clip_rejects_non_finite() {
        let mut raw = [0.5f32; 12];
        raw[4] = f32::NAN;
        let err = clip_action(&raw).unwrap_err();
        assert!(err.to_string().contains("non-finite action component"));
        raw[4] = f32::INFINITY;
        assert!(clip_action(&raw).is_err());
    }

    #[test]
    fn clip_is_idempotent_on_valid_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = sample_action(&mut rng);
            assert_eq!(clip_action(&a.to_array()).unwrap(), a);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = sample_action(&mut rng);
        let b = sample_action(&mut rng);
        assert_ne!(a, b);
        let mut fresh = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_action(&mut fresh), a);
    }

    #[test]
    fn sample_marginals_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sums = [0.0f64; 12];
        for _ in 0..n {
            for (s, v) in sums.iter_mut().zip(sample_action(&mut rng).to_array()) {
                *s += v as f64;
            }
        }
        for s in sums {
            let mean = s / n as f64;
            assert!((0.49..=0.51).contains(&mean), "marginal mean {mean}");
        }
    }

    #[test]
    fn levels_map_onto_even_grid() {
        assert_eq!(level_value(0), 0.0);
        assert_eq!(level_value(9), 1.0);
        assert_eq!(level_value(4), 4.0 / 9.0);
        assert_eq!(nearest_level(0.49), 4);
    }

    #[test]
    fn invalid_level_is_rejected() {
        let err = DiscreteAction::new(Action::blank(), 10, 0, 0, false).unwrap_err();
        assert!(matches!(err, Error::InvalidLevel { level: 10, .. }));
    }

    #[test]
    fn json_layout_is_flat_array() {
        let a = Action::from_array([0.0, 0.5, 1.0, 0.25, 0.0, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert!(s.starts_with("[0.0,0.5,1.0,0.25"));
        let back: Action = serde_json::from_str(&s).unwrap();
        assert_eq!(back, a);
        assert!(serde_json::from_str::<Action>("[1.5,0,0,0,0,0,0,0,0,0,0,0]").is_err());
    }
}
