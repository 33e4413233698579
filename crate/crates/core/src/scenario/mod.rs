//! Approach scenarios: configuration, distance schedules, the schematic
//! renderer, external frame ingestion and trial execution.

mod config;
mod manifest;
mod render;
mod trial;

pub use config::*;
pub use manifest::{load_frames, ExternalFrame, ManifestProblem};
pub use render::{render_frame, RenderedFrame};
pub use trial::*;
