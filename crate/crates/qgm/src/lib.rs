pub mod camera;
pub mod config;
pub mod field;
pub mod grid;
pub mod index;
pub mod keyframe;
pub mod linedetect;
pub mod nn;
pub mod octree;
pub mod render;
pub mod synthetic;
pub mod texture;
pub mod train;
pub mod warp;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QgmError {
    #[error("config error: {0}")]
    Config(String),
}
