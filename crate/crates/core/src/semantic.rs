//! Semantic alignment loss: every Gaussian's rendered part distribution, and
//! those of its nearest 3D neighbors, should match the ground-truth label at
//! the Gaussian's pixel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, GaussianPoint};
use crate::knn::knn_table;
use crate::parts::NUM_PARTS;
use crate::render::{Camera, PixelAdjoints, RenderOutput, NEAR_PLANE};

pub const EPSILON: f64 = 1e-8;
pub const DEFAULT_K: usize = 3;

/// Ground-truth part mask for one view: 0 is background, 1..=15 are parts.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticSupervision {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
    pub view: usize,
}

impl SemanticSupervision {
    pub fn new(width: usize, height: usize, labels: Vec<u8>, view: usize) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "mask has {} labels for a {width}x{height} image",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize > NUM_PARTS) {
            return Err(Error::InvalidInput(format!(
                "mask label {l} outside 0..=15"
            )));
        }
        Ok(SemanticSupervision {
            width,
            height,
            labels,
            view,
        })
    }

    pub fn label(&self, pixel: (usize, usize)) -> u8 {
        self.labels[pixel.1 * self.width + pixel.0]
    }
}

/// Cross-entropy `-Σ t log(p + ε)` and its gradient with respect to `p`.
pub fn label_divergence(pixel: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; pixel.len()];
    for ((p, t), g) in pixel.iter().zip(target).zip(grad.iter_mut()) {
        if *t != 0.0 {
            value -= t * (p + EPSILON).ln();
            *g = -t / (p + EPSILON);
        }
    }
    (value, grad)
}

/// The pixel containing the projected center, or `None` when the center is
/// behind the near plane or outside the image.
pub fn pixel_of_gaussian(point: &GaussianPoint, camera: &Camera) -> Option<(usize, usize)> {
    let c = camera.to_camera_space(&point.position);
    if c.z <= NEAR_PLANE {
        return None;
    }
    let u = camera.fx * c.x / c.z + camera.cx;
    let v = camera.fy * c.y / c.z + camera.cy;
    if !(u >= 0.0 && v >= 0.0 && u < camera.width as f64 && v < camera.height as f64) {
        return None;
    }
    Some((u.floor() as usize, v.floor() as usize))
}

#[derive(Clone, Debug)]
pub struct SemanticLoss {
    pub value: f64,
    /// Adjoints on the semantic channels of the render.
    pub adjoints: PixelAdjoints,
    /// Points that landed on a foreground pixel.
    pub included: usize,
}

pub fn semantic_loss(
    cloud: &GaussianCloud,
    render: &RenderOutput,
    supervision: &SemanticSupervision,
    camera: &Camera,
    k: usize,
) -> Result<SemanticLoss> {
    let neighbors = knn_table(cloud, k)?;
    semantic_loss_with_neighbors(cloud, render, supervision, camera, &neighbors)
}

/// Same loss with a precomputed neighbor table (row `i` lists `Q_i`), so a
/// table built on the canonical cloud can be reused for posed renders.
/// Neighbors that project off-screen drop out while the `1/k` weight stays.
pub fn semantic_loss_with_neighbors(
    cloud: &GaussianCloud,
    render: &RenderOutput,
    supervision: &SemanticSupervision,
    camera: &Camera,
    neighbors: &[Vec<usize>],
) -> Result<SemanticLoss> {
    let (w, h) = (render.width, render.height);
    if supervision.width != w || supervision.height != h || camera.width != w || camera.height != h
    {
        return Err(Error::InvalidArgument(format!(
            "render {w}x{h}, mask {}x{}, camera {}x{} disagree",
            supervision.width, supervision.height, camera.width, camera.height
        )));
    }
    if neighbors.len() != cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "neighbor table has {} rows for {} points",
            neighbors.len(),
            cloud.len()
        )));
    }
    let pixels: Vec<Option<(usize, usize)>> = cloud
        .points
        .par_iter()
        .map(|p| pixel_of_gaussian(p, camera))
        .collect();

    // Each term is D at a pixel with a one-hot target, so only the
    // target channel carries loss and gradient.
    let mut value = 0.0;
    let mut included = 0;
    let mut terms: Vec<(usize, usize, f64)> = Vec::new();
    for (i, px) in pixels.iter().enumerate() {
        let Some(px) = *px else { continue };
        let label = supervision.label(px);
        if label == 0 {
            continue;
        }
        included += 1;
        let part = label as usize - 1;
        let pixel_index = px.1 * w + px.0;
        terms.push((pixel_index, part, 1.0));
        let weight = 1.0 / neighbors[i].len().max(1) as f64;
        for &j in &neighbors[i] {
            if let Some(q) = pixels[j] {
                terms.push((q.1 * w + q.0, part, weight));
            }
        }
    }
    let mut adjoints = PixelAdjoints::zeros(w, h);
    if included == 0 {
        return Ok(SemanticLoss {
            value: 0.0,
            adjoints,
            included,
        });
    }
    let scale = 1.0 / included as f64;
    for (pixel, part, weight) in terms {
        let p = render.semantic[NUM_PARTS * pixel + part];
        value -= weight * (p + EPSILON).ln();
        adjoints.data[crate::render::CHANNELS * pixel + 3 + part] -= scale * weight / (p + EPSILON);
    }
    Ok(SemanticLoss {
        value: value * scale,
        adjoints,
        included,
    })
}
