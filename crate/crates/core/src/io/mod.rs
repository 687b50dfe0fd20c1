//! File formats: clouds, lineage sidecars, templates, cameras, poses,
//! configs, images, masks and graphs.

pub mod cameras;
pub mod config_file;
pub mod graph_file;
pub mod image;
pub mod lineage;
pub mod palette;
pub mod ply;
pub mod pose_file;
pub mod template_file;
