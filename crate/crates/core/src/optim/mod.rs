//! Training: the combined loss, adaptive-moment updates in unconstrained
//! parameter space, densification / pruning and embedding refreshes.

mod ablation;
mod config;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::body::{pose_cloud, BodyTemplate, PriorTopology};
use crate::disentangle::{
    cluster_by_semantics, densify_indexed, select_high_frequency_with, HighFreqSelection,
};
use crate::error::{Error, Result};
use crate::gaussian::{validate_cloud, GaussianCloud, GaussianPoint};
use crate::graph::{
    build_graph, random_walks, sample_contrastive, topology_loss, train_embeddings,
    ContrastiveBatch, NodeEmbeddings, SkipGramConfig,
};
use crate::io::cameras::Split;
use crate::io::image::RgbImage;
use crate::knn::knn_table;
use crate::metrics::{mask_iou, psnr, ssim, ssim_with_grad, MetricReport, ViewMetrics};
use crate::render::{
    argmax_mask, BlendPath, PixelAdjoints, PointGrad, RenderFrame, RenderOutput,
    DEFAULT_MASK_THRESHOLD,
};
use crate::semantic::{semantic_loss_with_neighbors, SemanticSupervision};
use crate::synth::{quantized_image, SceneDataset};

pub use ablation::{run_ablation, AblationReport, AblationRow, AblationVariant, RunResult};
pub use config::{LearningRates, TrainConfig, CONFIG_KEYS};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-15;
/// Raw parameters per point: position 3, quaternion 4, log-scale 3,
/// logit-opacity 1, color 3, semantic 15.
pub const PARAMS_PER_POINT: usize = 29;

const OPACITY_LIMIT: f64 = 1e-7;

const GROUPS: [(&str, usize, usize); 6] = [
    ("position", 0, 3),
    ("rotation", 3, 7),
    ("scale", 7, 10),
    ("opacity", 10, 11),
    ("color", 11, 14),
    ("semantic", 14, 29),
];

// Stream tags for the derived random generators.
const STREAM_VIEWS: u64 = 1;
const STREAM_WALKS: u64 = 2;
const STREAM_SKIPGRAM: u64 = 3;
const STREAM_CONTRASTIVE: u64 = 4;

fn derived_seed(seed: u64, stream: u64, counter: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(counter as u128 * 16);
    rng.random()
}

/// First and second moment estimates for a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// Copies blocks of `width` entries in the order given by `rows`.
    pub fn gather(&self, rows: &[usize], width: usize) -> Moments {
        let pick = |v: &[f64]| {
            rows.iter()
                .flat_map(|&r| v[r * width..(r + 1) * width].iter().copied())
                .collect()
        };
        Moments {
            first: pick(&self.first),
            second: pick(&self.second),
        }
    }
}

/// One adaptive-moment update at step `t` (1-based). Returns whether any
/// parameter moved.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    lr: f64,
    t: u64,
) -> bool {
    let c1 = 1.0 - ADAM_BETA1.powf(t as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(t as f64);
    let mut moved = false;
    for i in 0..params.len() {
        first[i] = ADAM_BETA1 * first[i] + (1.0 - ADAM_BETA1) * grads[i];
        second[i] = ADAM_BETA2 * second[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
        let delta = lr * (first[i] / c1) / ((second[i] / c2).sqrt() + ADAM_EPSILON);
        if delta != 0.0 {
            params[i] -= delta;
            moved = true;
        }
    }
    moved
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(OPACITY_LIMIT, 1.0 - OPACITY_LIMIT);
    (p / (1.0 - p)).ln()
}

/// Unconstrained parameters of one point.
pub fn raw_parameters(p: &GaussianPoint) -> [f64; PARAMS_PER_POINT] {
    let mut r = [0.0; PARAMS_PER_POINT];
    r[0..3].copy_from_slice(p.position.as_slice());
    r[3..7].copy_from_slice(&[p.rotation.w, p.rotation.i, p.rotation.j, p.rotation.k]);
    for c in 0..3 {
        r[7 + c] = p.scale[c].ln();
    }
    r[10] = logit(p.opacity);
    r[11..14].copy_from_slice(p.color.as_slice());
    r[14..29].copy_from_slice(&p.semantic);
    r
}

/// Chain rule from natural-parameter gradients to raw-parameter gradients.
pub fn raw_gradient(p: &GaussianPoint, g: &PointGrad) -> [f64; PARAMS_PER_POINT] {
    let mut r = [0.0; PARAMS_PER_POINT];
    r[0..3].copy_from_slice(g.position.as_slice());
    r[3..7].copy_from_slice(&[g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k]);
    for c in 0..3 {
        r[7 + c] = g.scale[c] * p.scale[c];
    }
    r[10] = g.opacity * p.opacity * (1.0 - p.opacity);
    r[11..14].copy_from_slice(g.color.as_slice());
    r[14..29].copy_from_slice(&g.semantic);
    r
}

fn apply_group(p: &mut GaussianPoint, group: usize, raw: &[f64; PARAMS_PER_POINT]) {
    match group {
        0 => p.position.copy_from_slice(&raw[0..3]),
        1 => {
            let q = nalgebra::Quaternion::new(raw[3], raw[4], raw[5], raw[6]);
            let n = q.norm();
            if n > 0.0 && n.is_finite() {
                p.rotation = q / n;
            }
        }
        2 => {
            for c in 0..3 {
                p.scale[c] = raw[7 + c].exp().max(f64::MIN_POSITIVE);
            }
        }
        3 => p.opacity = sigmoid(raw[10]).clamp(OPACITY_LIMIT, 1.0 - OPACITY_LIMIT),
        4 => {
            for c in 0..3 {
                p.color[c] = raw[11 + c].clamp(0.0, 1.0);
            }
        }
        _ => {
            let mut s = [0.0; 15];
            for (o, v) in s.iter_mut().zip(&raw[14..29]) {
                *o = v.max(0.0);
            }
            let sum: f64 = s.iter().sum();
            if sum > 0.0 && sum.is_finite() {
                for v in s.iter_mut() {
                    *v /= sum;
                }
                p.semantic = s;
            }
        }
    }
}

/// Per-term loss values of one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub view: usize,
    pub image: f64,
    pub semantic: f64,
    pub topology: f64,
    pub total: f64,
    pub points: usize,
}

pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("iteration,view,image,semantic,topology,total,points\n");
    for r in log {
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{:e},{:e},{}",
            r.iteration, r.view, r.image, r.semantic, r.topology, r.total, r.points
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensifyEvent {
    pub iteration: usize,
    pub selected: usize,
    pub pruned: usize,
    pub points_before: usize,
    pub points_after: usize,
    /// Children whose semantic vector differs from their parent's at the
    /// moment of the split.
    pub inheritance_mismatches: usize,
}

/// L1 image loss and its pixel adjoints.
pub fn image_loss(render: &RenderOutput, target: &RgbImage) -> Result<(f64, PixelAdjoints)> {
    let (w, h) = (render.width, render.height);
    if target.width != w || target.height != h || target.data.len() != render.color.len() {
        return Err(Error::InvalidArgument(format!(
            "render is {w}x{h}, target is {}x{}",
            target.width, target.height
        )));
    }
    let n = (3 * w * h) as f64;
    let mut adj = PixelAdjoints::zeros(w, h);
    let mut total = 0.0;
    for (i, (&r, &t)) in render.color.iter().zip(&target.data).enumerate() {
        let d = r - t;
        total += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        adj.data[(i / 3) * crate::render::CHANNELS + i % 3] = sign / n;
    }
    Ok((total / n, adj))
}

/// `(1 - w)·L1 + w·(1 - SSIM)`; `w = 0` is plain L1.
pub fn image_loss_weighted(
    render: &RenderOutput,
    target: &RgbImage,
    ssim_weight: f64,
) -> Result<(f64, PixelAdjoints)> {
    let (l1, mut adj) = image_loss(render, target)?;
    if ssim_weight == 0.0 {
        return Ok((l1, adj));
    }
    let rendered = RgbImage::new(render.width, render.height, render.color.clone());
    let (s, grad) = ssim_with_grad(&rendered, target)?;
    for v in adj.data.iter_mut() {
        *v *= 1.0 - ssim_weight;
    }
    for (i, g) in grad.iter().enumerate() {
        adj.data[(i / 3) * crate::render::CHANNELS + i % 3] -= ssim_weight * g;
    }
    Ok(((1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - s), adj))
}

/// Loss terms and gradients for one view.
#[derive(Clone, Debug)]
pub struct LossEvaluation {
    pub view: usize,
    pub image: f64,
    pub semantic: f64,
    pub topology: f64,
    pub total: f64,
    /// Gradients on the canonical cloud.
    pub point_grads: Vec<PointGrad>,
    pub embedding_grads: Option<NodeEmbeddings>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    /// Canonical (unposed) cloud.
    pub cloud: GaussianCloud,
    /// Template vertex supplying each point's skinning weights.
    pub lineage: Vec<usize>,
    /// Index of each point's ancestor in the initial cloud.
    pub origin: Vec<usize>,
    pub moments: Moments,
    pub embeddings: Option<NodeEmbeddings>,
    pub embedding_moments: Moments,
    /// Semantic-loss neighbor table on the canonical cloud.
    pub neighbors: Vec<Vec<usize>>,
    pub iteration: usize,
    pub log: Vec<LossRecord>,
    pub densify_events: Vec<DensifyEvent>,
    view_rng: ChaCha8Rng,
}

impl TrainState {
    /// State for a cloud with one point per template vertex.
    pub fn new(
        template: &BodyTemplate,
        cloud: GaussianCloud,
        config: &TrainConfig,
    ) -> Result<Self> {
        if cloud.len() != template.vertices.len() {
            return Err(Error::InvalidArgument(format!(
                "initial cloud has {} points, template has {} vertices",
                cloud.len(),
                template.vertices.len()
            )));
        }
        let lineage: Vec<usize> = (0..cloud.len()).collect();
        Self::with_lineage(cloud, lineage, config)
    }

    pub fn with_lineage(
        cloud: GaussianCloud,
        lineage: Vec<usize>,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let violations = validate_cloud(&cloud);
        if let Some(v) = violations.first() {
            return Err(Error::Validation(format!(
                "point {} {}: {}",
                v.point, v.field, v.detail
            )));
        }
        if lineage.len() != cloud.len() {
            return Err(Error::InvalidArgument(
                "lineage length differs from the cloud".into(),
            ));
        }
        let n = cloud.len();
        let mut view_rng = ChaCha8Rng::seed_from_u64(config.seed);
        view_rng.set_stream(STREAM_VIEWS);
        let mut state = TrainState {
            lineage,
            origin: (0..n).collect(),
            moments: Moments::zeros(n * PARAMS_PER_POINT),
            embeddings: None,
            embedding_moments: Moments::zeros(0),
            neighbors: Vec::new(),
            iteration: 0,
            log: Vec::new(),
            densify_events: Vec::new(),
            view_rng,
            cloud,
        };
        state.rebuild_neighbors(config)?;
        Ok(state)
    }

    fn rebuild_neighbors(&mut self, config: &TrainConfig) -> Result<()> {
        self.neighbors = if config.lambda_semantic > 0.0 {
            knn_table(&self.cloud, config.k)?
        } else {
            Vec::new()
        };
        Ok(())
    }

    /// Rebuilds the graph, walks and skip-gram embeddings from the current
    /// canonical centers.
    pub fn refresh_embeddings(&mut self, config: &TrainConfig) -> Result<()> {
        let counter = self.iteration as u64;
        let graph = build_graph(&self.cloud, config.graph_k)?;
        let corpus = random_walks(
            &graph,
            config.walk_length,
            config.walks_per_node,
            derived_seed(config.seed, STREAM_WALKS, counter),
        )?;
        let emb = train_embeddings(
            &corpus,
            &SkipGramConfig {
                dim: config.embed_dim,
                window: config.window,
                negatives: config.negatives,
                epochs: config.embed_epochs,
                learning_rate: config.embed_learning_rate,
                seed: derived_seed(config.seed, STREAM_SKIPGRAM, counter),
            },
        )?;
        self.embedding_moments = Moments::zeros(emb.vectors.len());
        self.embeddings = Some(emb);
        Ok(())
    }

    /// The contrastive batch drawn at the current iteration.
    pub fn contrastive_batch(&self, config: &TrainConfig) -> Result<ContrastiveBatch> {
        sample_contrastive(
            &self.cloud,
            &PriorTopology::canonical(),
            config.contrastive_m,
            derived_seed(config.seed, STREAM_CONTRASTIVE, self.iteration as u64),
        )
    }

    /// Draws the next training view uniformly.
    pub fn sample_view(&mut self, train_views: &[usize]) -> Result<usize> {
        if train_views.is_empty() {
            return Err(Error::InvalidInput("dataset has no training views".into()));
        }
        Ok(train_views[self.view_rng.random_range(0..train_views.len())])
    }

    /// Densifies the selected high-frequency points (when enabled), prunes
    /// transparent points and carries every per-point buffer along.
    pub fn densify_and_prune(&mut self, config: &TrainConfig) -> Result<DensifyEvent> {
        let before = self.cloud.len();
        let selection = if config.surface_disentangle {
            select_high_frequency_with(
                &self.cloud,
                &cluster_by_semantics(&self.cloud),
                config.top_fraction,
                config.highfreq_mode,
            )?
        } else {
            HighFreqSelection::default()
        };
        let (dense, parents) = densify_indexed(&self.cloud, &selection);
        let mismatches = dense
            .points
            .iter()
            .zip(&parents)
            .filter(|(p, &src)| p.semantic != self.cloud.points[src].semantic)
            .count();
        let mut keep: Vec<usize> = (0..dense.len())
            .filter(|&i| dense.points[i].opacity >= config.prune_opacity)
            .collect();
        let floor = config.k.max(config.graph_k) + 1;
        if keep.len() <= floor {
            keep = (0..dense.len()).collect();
        }
        let rows: Vec<usize> = keep.iter().map(|&i| parents[i]).collect();
        let after = keep.len();
        self.cloud = GaussianCloud {
            points: keep.iter().map(|&i| dense.points[i].clone()).collect(),
            generation: dense.generation,
        };
        self.lineage = rows.iter().map(|&r| self.lineage[r]).collect();
        self.origin = rows.iter().map(|&r| self.origin[r]).collect();
        self.moments = self.moments.gather(&rows, PARAMS_PER_POINT);
        if let Some(emb) = &self.embeddings {
            let dim = emb.dim;
            self.embeddings = Some(emb.gather(&rows));
            self.embedding_moments = self.embedding_moments.gather(&rows, dim);
        }
        self.rebuild_neighbors(config)?;
        let event = DensifyEvent {
            iteration: self.iteration,
            selected: selection.len(),
            pruned: before + selection.len() - after,
            points_before: before,
            points_after: after,
            inheritance_mismatches: mismatches,
        };
        self.densify_events.push(event.clone());
        Ok(event)
    }
}

/// Loss terms and gradients for one chosen view.
pub fn total_loss_for_view(
    state: &TrainState,
    dataset: &SceneDataset,
    config: &TrainConfig,
    view_index: usize,
) -> Result<LossEvaluation> {
    let view = dataset
        .views
        .get(view_index)
        .ok_or_else(|| Error::InvalidArgument(format!("view {view_index} does not exist")))?;
    let camera = &dataset.cameras[view.camera].camera;
    let posed = pose_cloud(
        &state.cloud,
        &dataset.template,
        &state.lineage,
        &dataset.poses[view.frame],
    )?;
    let frame = RenderFrame::new(&posed.cloud, camera, BlendPath::Tiled)?;
    let output = frame.output();
    let (image, image_adj) = image_loss_weighted(output, &view.image, config.ssim_weight)?;
    let mut adjoints = PixelAdjoints::zeros(output.width, output.height);
    adjoints.add_scaled(&image_adj, config.lambda_image);
    let mut semantic = 0.0;
    if config.lambda_semantic > 0.0 {
        let sup = SemanticSupervision::new(
            view.image.width,
            view.image.height,
            view.mask.clone(),
            view_index,
        )?;
        let loss =
            semantic_loss_with_neighbors(&posed.cloud, output, &sup, camera, &state.neighbors)?;
        semantic = loss.value;
        let mut sem_adj = loss.adjoints;
        if config.semantic_clip > 0.0 {
            let limit = config.semantic_clip / loss.included.max(1) as f64;
            for v in sem_adj.data.iter_mut() {
                *v = v.clamp(-limit, limit);
            }
        }
        adjoints.add_scaled(&sem_adj, config.lambda_semantic);
    }
    let posed_grads = frame.backward(&adjoints)?;
    let point_grads: Vec<PointGrad> = posed_grads
        .par_iter()
        .zip(&posed.skins)
        .map(|(g, skin)| skin.pull_back(g))
        .collect();
    let mut topology = 0.0;
    let mut embedding_grads = None;
    if config.lambda_topology > 0.0 {
        if let Some(emb) = &state.embeddings {
            let batch = state.contrastive_batch(config)?;
            let (value, mut grads) = topology_loss(emb, &batch)?;
            for v in grads.vectors.iter_mut() {
                *v *= config.lambda_topology;
            }
            topology = value;
            embedding_grads = Some(grads);
        }
    }
    let total = config.lambda_image * image
        + config.lambda_semantic * semantic
        + config.lambda_topology * topology;
    Ok(LossEvaluation {
        view: view_index,
        image,
        semantic,
        topology,
        total,
        point_grads,
        embedding_grads,
    })
}

/// Samples a training view and evaluates the combined loss on it.
pub fn total_loss(
    state: &mut TrainState,
    dataset: &SceneDataset,
    train_views: &[usize],
    config: &TrainConfig,
) -> Result<LossEvaluation> {
    let view = state.sample_view(train_views)?;
    total_loss_for_view(state, dataset, config, view)
}

/// Position learning rate after `iteration` of `total` steps.
pub fn position_learning_rate(lr: &LearningRates, iteration: usize, total: usize) -> f64 {
    if lr.position == 0.0 || lr.position_final == 0.0 || total == 0 {
        return lr.position;
    }
    let t = (iteration as f64 / total as f64).min(1.0);
    lr.position * (lr.position_final / lr.position).powf(t)
}

/// One adaptive-moment step for every point (and the embedding table when
/// its gradients are present).
pub fn step(
    state: &mut TrainState,
    point_grads: &[PointGrad],
    embedding_grads: Option<&NodeEmbeddings>,
    config: &TrainConfig,
) -> Result<()> {
    let n = state.cloud.len();
    if point_grads.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {n} points",
            point_grads.len()
        )));
    }
    let iteration = state.iteration;
    for (i, g) in point_grads.iter().enumerate() {
        let raw = raw_gradient(&state.cloud.points[i], g);
        for &(name, lo, hi) in &GROUPS {
            if raw[lo..hi].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    parameter: name,
                    point: i,
                    iteration,
                });
            }
        }
    }
    let lr = &config.lr;
    let rates = [
        position_learning_rate(lr, iteration, config.iterations),
        lr.rotation,
        lr.scale,
        lr.opacity,
        lr.color,
        lr.semantic,
    ];
    let t = iteration as u64 + 1;
    state
        .cloud
        .points
        .par_iter_mut()
        .zip(point_grads.par_iter())
        .zip(state.moments.first.par_chunks_mut(PARAMS_PER_POINT))
        .zip(state.moments.second.par_chunks_mut(PARAMS_PER_POINT))
        .for_each(|(((p, g), m1), m2)| {
            let grad = raw_gradient(p, g);
            let mut raw = raw_parameters(p);
            for (gi, &(_, lo, hi)) in GROUPS.iter().enumerate() {
                let moved = adam_update(
                    &mut raw[lo..hi],
                    &grad[lo..hi],
                    &mut m1[lo..hi],
                    &mut m2[lo..hi],
                    rates[gi],
                    t,
                );
                if moved {
                    apply_group(p, gi, &raw);
                }
            }
        });
    if let (Some(grads), Some(emb)) = (embedding_grads, state.embeddings.as_mut()) {
        if grads.vectors.len() != emb.vectors.len() {
            return Err(Error::InvalidArgument(
                "embedding gradients do not match the table".into(),
            ));
        }
        if let Some(pos) = grads.vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                parameter: "embedding",
                point: pos / emb.dim,
                iteration,
            });
        }
        let m = &mut state.embedding_moments;
        adam_update(
            &mut emb.vectors,
            &grads.vectors,
            &mut m.first,
            &mut m.second,
            lr.embedding,
            t,
        );
    }
    Ok(())
}

/// Runs the training loop; the state keeps the loss log even when a step fails.
pub struct Trainer<'a> {
    pub dataset: &'a SceneDataset,
    pub config: TrainConfig,
    pub state: TrainState,
    train_views: Vec<usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        dataset: &'a SceneDataset,
        init: GaussianCloud,
        config: TrainConfig,
    ) -> Result<Self> {
        let state = TrainState::new(&dataset.template, init, &config)?;
        Self::from_state(dataset, state, config)
    }

    pub fn from_state(
        dataset: &'a SceneDataset,
        state: TrainState,
        config: TrainConfig,
    ) -> Result<Self> {
        if let Some(&bad) = state
            .lineage
            .iter()
            .find(|&&v| v >= dataset.template.vertices.len())
        {
            return Err(Error::InvalidInput(format!(
                "lineage references vertex {bad} outside the template"
            )));
        }
        let train_views = dataset.split_views(Split::Train);
        if train_views.is_empty() {
            return Err(Error::InvalidInput("dataset has no training views".into()));
        }
        Ok(Trainer {
            dataset,
            config,
            state,
            train_views,
        })
    }

    /// One full iteration: refresh, loss, step, log, densify, validate.
    pub fn iterate(&mut self) -> Result<LossRecord> {
        let config = &self.config;
        let it = self.state.iteration;
        if config.lambda_topology > 0.0 && it.is_multiple_of(config.embed_refresh) {
            self.state.refresh_embeddings(config)?;
        }
        let eval = total_loss(&mut self.state, self.dataset, &self.train_views, config)?;
        if !eval.total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        step(
            &mut self.state,
            &eval.point_grads,
            eval.embedding_grads.as_ref(),
            config,
        )?;
        let record = LossRecord {
            iteration: it,
            view: eval.view,
            image: eval.image,
            semantic: eval.semantic,
            topology: eval.topology,
            total: eval.total,
            points: self.state.cloud.len(),
        };
        self.state.log.push(record.clone());
        self.state.iteration += 1;
        let done = self.state.iteration;
        if done >= config.densify_start
            && done <= config.densify_stop()
            && done.is_multiple_of(config.densify_interval)
        {
            self.state.densify_and_prune(config)?;
        }
        if let Some(v) = validate_cloud(&self.state.cloud).first() {
            return Err(Error::Validation(format!(
                "iteration {it}: point {} {}: {}",
                v.point, v.field, v.detail
            )));
        }
        Ok(record)
    }

    /// Runs `count` iterations, calling `checkpoint` at every checkpoint
    /// interval.
    pub fn run_iterations(
        &mut self,
        count: usize,
        checkpoint: &mut dyn FnMut(usize, &TrainState) -> Result<()>,
    ) -> Result<()> {
        for _ in 0..count {
            self.iterate()?;
            let done = self.state.iteration;
            if self.config.checkpoint_interval > 0
                && done.is_multiple_of(self.config.checkpoint_interval)
            {
                checkpoint(done, &self.state)?;
            }
        }
        Ok(())
    }

    pub fn run(
        &mut self,
        checkpoint: &mut dyn FnMut(usize, &TrainState) -> Result<()>,
    ) -> Result<()> {
        let remaining = self.config.iterations.saturating_sub(self.state.iteration);
        self.run_iterations(remaining, checkpoint)
    }
}

/// Final state after `config.iterations` iterations.
pub fn train(
    dataset: &SceneDataset,
    init: GaussianCloud,
    config: &TrainConfig,
) -> Result<TrainState> {
    let mut trainer = Trainer::new(dataset, init, config.clone())?;
    trainer.run(&mut |_, _| Ok(()))?;
    Ok(trainer.state)
}

/// Renders `cloud` into every view of `split` and scores it against the
/// ground truth (8-bit quantized, like images on disk).
pub fn evaluate_split(
    cloud: &GaussianCloud,
    lineage: &[usize],
    dataset: &SceneDataset,
    split: Split,
) -> Result<MetricReport> {
    let views = dataset.split_views(split);
    let results: Vec<ViewMetrics> = views
        .par_iter()
        .map(|&vi| {
            let view = &dataset.views[vi];
            let cam = &dataset.cameras[view.camera];
            let posed = pose_cloud(
                cloud,
                &dataset.template,
                lineage,
                &dataset.poses[view.frame],
            )?;
            let out = crate::render::render(&posed.cloud, &cam.camera)?;
            let image = quantized_image(&out);
            let mask = argmax_mask(&out, DEFAULT_MASK_THRESHOLD);
            Ok(ViewMetrics {
                view: format!("frame_{:04}_{}", dataset.frame_ids[view.frame], cam.id),
                psnr: psnr(&image, &view.image)?,
                ssim: ssim(&image, &view.image)?,
                iou: mask_iou(&mask, &view.mask)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { views: results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = [1.0, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        assert!(adam_update(&mut p, &[3.0, -0.5], &mut m, &mut v, 0.1, 1));
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] + 1.9).abs() < 1e-12);
        let before = p;
        let (mut m0, mut v0) = ([0.0; 2], [0.0; 2]);
        assert!(!adam_update(&mut p, &[0.0, 0.0], &mut m0, &mut v0, 0.1, 1));
        assert_eq!(p, before);
    }

    #[test]
    fn raw_parameters_round_trip() {
        let mut p = GaussianPoint::isotropic(Vector3::new(0.1, 0.2, 0.3), 0.05, 4);
        p.opacity = 0.3;
        let raw = raw_parameters(&p);
        let mut q = p.clone();
        for g in 0..6 {
            apply_group(&mut q, g, &raw);
        }
        assert!((q.opacity - 0.3).abs() < 1e-15);
        assert!((q.scale - p.scale).norm() < 1e-15);
        assert_eq!(q.semantic, p.semantic);
    }

    #[test]
    fn image_loss_extremes() {
        let mut out = RenderOutput::background(4, 3);
        let white = RgbImage::constant(4, 3, 1.0);
        let (l, adj) = image_loss(&out, &white).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(adj.pixel(0, 0)[0], -1.0 / 36.0);
        out.color = white.data.clone();
        assert_eq!(image_loss(&out, &white).unwrap().0, 0.0);
        assert!(image_loss(&out, &RgbImage::constant(3, 3, 1.0)).is_err());
    }

    #[test]
    fn position_rate_decays_to_final() {
        let lr = LearningRates::default();
        assert_eq!(position_learning_rate(&lr, 0, 100), lr.position);
        assert!((position_learning_rate(&lr, 100, 100) - lr.position_final).abs() < 1e-18);
    }
}
