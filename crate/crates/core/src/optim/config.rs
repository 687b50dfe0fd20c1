use std::fmt::Write as _;

use crate::disentangle::ScoreMode;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    /// Final position rate; the rate decays exponentially towards it.
    pub position_final: f64,
    pub color: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub semantic: f64,
    pub embedding: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 2e-4,
            position_final: 2e-6,
            color: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            semantic: 1e-3,
            embedding: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_image: f64,
    pub lambda_semantic: f64,
    pub lambda_topology: f64,
    /// Neighborhood size of the semantic loss.
    pub k: usize,
    /// Out-degree of the inter-joint graph.
    pub graph_k: usize,
    pub contrastive_m: usize,
    pub top_fraction: f64,
    pub surface_disentangle: bool,
    pub highfreq_mode: ScoreMode,
    /// Bound on each semantic pixel adjoint in units of `1/N` (N included
    /// points); 0 disables the bound.
    pub semantic_clip: f64,
    /// Weight of `1 - SSIM` inside the image term.
    pub ssim_weight: f64,
    pub lr: LearningRates,
    pub iterations: usize,
    pub densify_interval: usize,
    pub densify_start: usize,
    /// `None` means 70% of `iterations`.
    pub densify_stop: Option<usize>,
    pub prune_opacity: f64,
    pub embed_dim: usize,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub negatives: usize,
    pub embed_epochs: usize,
    pub embed_learning_rate: f64,
    pub embed_refresh: usize,
    /// Checkpoint every this many iterations; 0 disables checkpoints.
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_image: 1.0,
            lambda_semantic: 0.1,
            lambda_topology: 0.05,
            k: 3,
            graph_k: 3,
            contrastive_m: 4,
            top_fraction: 0.05,
            surface_disentangle: true,
            highfreq_mode: ScoreMode::Difference,
            semantic_clip: 10.0,
            ssim_weight: 0.0,
            lr: LearningRates::default(),
            iterations: 2000,
            densify_interval: 100,
            densify_start: 100,
            densify_stop: None,
            prune_opacity: 0.005,
            embed_dim: 32,
            walk_length: 20,
            walks_per_node: 10,
            window: 5,
            negatives: 5,
            embed_epochs: 3,
            embed_learning_rate: 0.025,
            embed_refresh: 200,
            checkpoint_interval: 0,
            seed: 0,
        }
    }
}

pub const CONFIG_KEYS: [&str; 34] = [
    "lambda_image",
    "lambda_semantic",
    "lambda_topology",
    "k",
    "graph_k",
    "contrastive_m",
    "top_fraction",
    "surface_disentangle",
    "highfreq_mode",
    "semantic_clip",
    "ssim_weight",
    "lr_position",
    "lr_position_final",
    "lr_color",
    "lr_opacity",
    "lr_scale",
    "lr_rotation",
    "lr_semantic",
    "lr_embedding",
    "iterations",
    "densify_interval",
    "densify_start",
    "densify_stop",
    "prune_opacity",
    "embed_dim",
    "walk_length",
    "walks_per_node",
    "window",
    "negatives",
    "embed_epochs",
    "embed_learning_rate",
    "embed_refresh",
    "checkpoint_interval",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidInput(format!("invalid value '{value}' for key '{key}'")))
}

impl TrainConfig {
    pub fn densify_stop(&self) -> usize {
        self.densify_stop
            .unwrap_or((self.iterations as f64 * 0.7).floor() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.lambda_image,
            self.lambda_semantic,
            self.lambda_topology,
            self.ssim_weight,
            self.semantic_clip,
        ];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        if self.ssim_weight > 1.0 {
            return Err(Error::InvalidInput("ssim_weight must be at most 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidInput("iterations must be at least 1".into()));
        }
        if self.densify_interval == 0 || self.embed_refresh == 0 {
            return Err(Error::InvalidInput("intervals must be positive".into()));
        }
        if self.k == 0 || self.graph_k == 0 || self.contrastive_m == 0 {
            return Err(Error::InvalidInput(
                "k, graph_k and contrastive_m must be positive".into(),
            ));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::InvalidInput("top_fraction must be in (0, 1]".into()));
        }
        if self.embed_dim < 2 || self.walk_length < 2 || self.walks_per_node == 0 {
            return Err(Error::InvalidInput(
                "embedding settings out of range".into(),
            ));
        }
        let lr = &self.lr;
        let rates = [
            lr.position,
            lr.position_final,
            lr.color,
            lr.opacity,
            lr.scale,
            lr.rotation,
            lr.semantic,
            lr.embedding,
            self.embed_learning_rate,
        ];
        if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidInput(
                "learning rates must be finite and nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.prune_opacity) {
            return Err(Error::InvalidInput(
                "prune_opacity must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Sets one key; unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda_image" => self.lambda_image = parse(key, value)?,
            "lambda_semantic" => self.lambda_semantic = parse(key, value)?,
            "lambda_topology" => self.lambda_topology = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "graph_k" => self.graph_k = parse(key, value)?,
            "contrastive_m" => self.contrastive_m = parse(key, value)?,
            "top_fraction" => self.top_fraction = parse(key, value)?,
            "surface_disentangle" => self.surface_disentangle = parse(key, value)?,
            "highfreq_mode" => {
                self.highfreq_mode = match value {
                    "difference" => ScoreMode::Difference,
                    "similarity" => ScoreMode::Similarity,
                    _ => {
                        return Err(Error::InvalidInput(format!(
                            "highfreq_mode must be 'difference' or 'similarity', got '{value}'"
                        )))
                    }
                }
            }
            "semantic_clip" => self.semantic_clip = parse(key, value)?,
            "ssim_weight" => self.ssim_weight = parse(key, value)?,
            "lr_position" => self.lr.position = parse(key, value)?,
            "lr_position_final" => self.lr.position_final = parse(key, value)?,
            "lr_color" => self.lr.color = parse(key, value)?,
            "lr_opacity" => self.lr.opacity = parse(key, value)?,
            "lr_scale" => self.lr.scale = parse(key, value)?,
            "lr_rotation" => self.lr.rotation = parse(key, value)?,
            "lr_semantic" => self.lr.semantic = parse(key, value)?,
            "lr_embedding" => self.lr.embedding = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "densify_interval" => self.densify_interval = parse(key, value)?,
            "densify_start" => self.densify_start = parse(key, value)?,
            "densify_stop" => self.densify_stop = Some(parse(key, value)?),
            "prune_opacity" => self.prune_opacity = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "walk_length" => self.walk_length = parse(key, value)?,
            "walks_per_node" => self.walks_per_node = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "embed_epochs" => self.embed_epochs = parse(key, value)?,
            "embed_learning_rate" => self.embed_learning_rate = parse(key, value)?,
            "embed_refresh" => self.embed_refresh = parse(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::InvalidInput(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.highfreq_mode {
            ScoreMode::Difference => "difference",
            ScoreMode::Similarity => "similarity",
        };
        let lr = &self.lr;
        let entries: Vec<(&str, String)> = vec![
            ("lambda_image", self.lambda_image.to_string()),
            ("lambda_semantic", self.lambda_semantic.to_string()),
            ("lambda_topology", self.lambda_topology.to_string()),
            ("k", self.k.to_string()),
            ("graph_k", self.graph_k.to_string()),
            ("contrastive_m", self.contrastive_m.to_string()),
            ("top_fraction", self.top_fraction.to_string()),
            ("surface_disentangle", self.surface_disentangle.to_string()),
            ("highfreq_mode", mode.to_string()),
            ("semantic_clip", self.semantic_clip.to_string()),
            ("ssim_weight", self.ssim_weight.to_string()),
            ("lr_position", lr.position.to_string()),
            ("lr_position_final", lr.position_final.to_string()),
            ("lr_color", lr.color.to_string()),
            ("lr_opacity", lr.opacity.to_string()),
            ("lr_scale", lr.scale.to_string()),
            ("lr_rotation", lr.rotation.to_string()),
            ("lr_semantic", lr.semantic.to_string()),
            ("lr_embedding", lr.embedding.to_string()),
            ("iterations", self.iterations.to_string()),
            ("densify_interval", self.densify_interval.to_string()),
            ("densify_start", self.densify_start.to_string()),
            ("densify_stop", self.densify_stop().to_string()),
            ("prune_opacity", self.prune_opacity.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("walk_length", self.walk_length.to_string()),
            ("walks_per_node", self.walks_per_node.to_string()),
            ("window", self.window.to_string()),
            ("negatives", self.negatives.to_string()),
            ("embed_epochs", self.embed_epochs.to_string()),
            ("embed_learning_rate", self.embed_learning_rate.to_string()),
            ("embed_refresh", self.embed_refresh.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
