//! The brushstroke action space and the reference stroke rasterizer.

pub mod action;
pub mod dataset;
pub mod external;
pub mod render;

pub use action::{
    clip_action, index, level_value, nearest_level, sample_action, Action, DiscreteAction, ACTION_DIM,
    DISCRETE_LEVELS,
};
pub use dataset::{generate_dataset, Dataset, DatasetHeader};
pub use external::{DabOracle, ExternalOracle, StrokeRenderer};
pub use render::{render_stroke, render_stroke_discrete, OracleConfig};
