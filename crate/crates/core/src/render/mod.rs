//! CPU splatting renderer: projection, depth-ordered α-blending of color and
//! semantic distributions, and the exact reverse-mode pass.

mod camera;
mod project;

use nalgebra::{Matrix2, Matrix3, Quaternion, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{rotation_matrix, rotation_matrix_backward, GaussianCloud};
use crate::parts::{argmax, Semantic, NUM_PARTS};

pub use camera::Camera;
pub use project::{project, Splat2D, CHANNELS, LOW_PASS, NEAR_PLANE, SUPPORT_SIGMAS};
use project::{project_point, Projected};

pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;
const SUPPORT_Q: f64 = SUPPORT_SIGMAS * SUPPORT_SIGMAS;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Row-major `H × W × 3`.
    pub color: Vec<f64>,
    /// Row-major `H × W × 15`; each pixel sums to its alpha.
    pub semantic: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Alpha-normalized expected camera depth; zero where nothing was drawn.
    pub depth: Vec<f64>,
}

impl RenderOutput {
    pub fn background(width: usize, height: usize) -> Self {
        let n = width * height;
        RenderOutput {
            width,
            height,
            color: vec![0.0; 3 * n],
            semantic: vec![0.0; NUM_PARTS * n],
            alpha: vec![0.0; n],
            depth: vec![0.0; n],
        }
    }

    pub fn color_at(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.color[i], self.color[i + 1], self.color[i + 2]]
    }

    pub fn semantic_at(&self, x: usize, y: usize) -> &[f64] {
        let i = NUM_PARTS * (y * self.width + x);
        &self.semantic[i..i + NUM_PARTS]
    }

    pub fn alpha_at(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }
}

/// Per-pixel loss adjoints, row-major `H × W × (3 color + 15 semantic)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelAdjoints {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl PixelAdjoints {
    pub fn zeros(width: usize, height: usize) -> Self {
        PixelAdjoints {
            width,
            height,
            data: vec![0.0; width * height * CHANNELS],
        }
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = CHANNELS * (y * self.width + x);
        &mut self.data[i..i + CHANNELS]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = CHANNELS * (y * self.width + x);
        &self.data[i..i + CHANNELS]
    }

    pub fn add_scaled(&mut self, other: &PixelAdjoints, factor: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }
}

/// Gradient of a scalar loss with respect to one Gaussian's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PointGrad {
    pub position: Vector3<f64>,
    /// With respect to the raw (w, i, j, k) components.
    pub rotation: Quaternion<f64>,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub semantic: Semantic,
}

impl PointGrad {
    pub fn zero() -> Self {
        PointGrad {
            position: Vector3::zeros(),
            rotation: Quaternion::new(0.0, 0.0, 0.0, 0.0),
            scale: Vector3::zeros(),
            opacity: 0.0,
            color: Vector3::zeros(),
            semantic: [0.0; NUM_PARTS],
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == PointGrad::zero()
    }

    pub fn add_scaled(&mut self, other: &PointGrad, factor: f64) {
        self.position += other.position * factor;
        self.rotation += other.rotation * factor;
        self.scale += other.scale * factor;
        self.opacity += other.opacity * factor;
        self.color += other.color * factor;
        for (a, b) in self.semantic.iter_mut().zip(&other.semantic) {
            *a += b * factor;
        }
    }

    /// Every component in a fixed order:
    /// position, rotation (w,i,j,k), scale, opacity, color, semantic.
    pub fn components(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(29);
        v.extend_from_slice(self.position.as_slice());
        v.extend_from_slice(&[
            self.rotation.w,
            self.rotation.i,
            self.rotation.j,
            self.rotation.k,
        ]);
        v.extend_from_slice(self.scale.as_slice());
        v.push(self.opacity);
        v.extend_from_slice(self.color.as_slice());
        v.extend_from_slice(&self.semantic);
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BlendPath {
    /// 16×16 tiles, each with its own depth-ordered splat list.
    #[default]
    Tiled,
    /// Every pixel walks the global depth-ordered list.
    Reference,
}

struct Tile {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    splats: Vec<u32>,
}

struct Contribution {
    local: usize,
    alpha: f64,
    transmittance: f64,
    falloff: f64,
    delta: Vector2<f64>,
    clamped: bool,
}

#[inline]
fn evaluate(p: &Projected, px: f64, py: f64) -> Option<(f64, f64, Vector2<f64>, bool)> {
    let d = Vector2::new(px - p.splat.mean2d.x, py - p.splat.mean2d.y);
    let c = &p.conic;
    let q = c[(0, 0)] * d.x * d.x + 2.0 * c[(0, 1)] * d.x * d.y + c[(1, 1)] * d.y * d.y;
    if !(q <= SUPPORT_Q) {
        return None;
    }
    let falloff = (-0.5 * q).exp();
    let raw = p.opacity * falloff;
    if raw > MAX_ALPHA {
        Some((MAX_ALPHA, falloff, d, true))
    } else {
        Some((raw, falloff, d, false))
    }
}

/// A rendered view that keeps what the reverse pass needs.
pub struct RenderFrame<'a> {
    cloud: &'a GaussianCloud,
    camera: Camera,
    projected: Vec<Projected>,
    tiles: Vec<Tile>,
    /// Number of list entries each pixel consumed before terminating.
    consumed: Vec<u32>,
    output: RenderOutput,
    path: BlendPath,
}

impl<'a> RenderFrame<'a> {
    pub fn new(cloud: &'a GaussianCloud, camera: &Camera, path: BlendPath) -> Result<Self> {
        camera.validate()?;
        let (w, h) = (camera.width, camera.height);
        let mut projected: Vec<Projected> = cloud
            .points
            .par_iter()
            .enumerate()
            .filter_map(|(i, p)| project_point(p, i, camera))
            .collect();
        projected.sort_by(|a, b| {
            a.splat
                .depth
                .total_cmp(&b.splat.depth)
                .then(a.splat.source_index.cmp(&b.splat.source_index))
        });

        let tiles = match path {
            BlendPath::Reference => {
                vec![Tile {
                    x0: 0,
                    y0: 0,
                    x1: w,
                    y1: h,
                    splats: (0..projected.len() as u32).collect(),
                }]
            }
            BlendPath::Tiled => {
                let tx = w.div_ceil(TILE_SIZE);
                let ty = h.div_ceil(TILE_SIZE);
                let mut tiles: Vec<Tile> = (0..tx * ty)
                    .map(|t| {
                        let (cx, cy) = (t % tx, t / tx);
                        Tile {
                            x0: cx * TILE_SIZE,
                            y0: cy * TILE_SIZE,
                            x1: ((cx + 1) * TILE_SIZE).min(w),
                            y1: ((cy + 1) * TILE_SIZE).min(h),
                            splats: Vec::new(),
                        }
                    })
                    .collect();
                for (k, p) in projected.iter().enumerate() {
                    for cy in p.y_range.0 / TILE_SIZE..=p.y_range.1 / TILE_SIZE {
                        for cx in p.x_range.0 / TILE_SIZE..=p.x_range.1 / TILE_SIZE {
                            tiles[cy * tx + cx].splats.push(k as u32);
                        }
                    }
                }
                tiles
            }
        };

        let mut frame = RenderFrame {
            cloud,
            camera: camera.clone(),
            projected,
            tiles,
            consumed: vec![0; w * h],
            output: RenderOutput::background(w, h),
            path,
        };
        frame.forward();
        Ok(frame)
    }

    fn forward(&mut self) {
        let projected = &self.projected;
        let results: Vec<Vec<PixelBlend>> = self
            .tiles
            .par_iter()
            .map(|tile| {
                let mut out = Vec::with_capacity((tile.x1 - tile.x0) * (tile.y1 - tile.y0));
                for y in tile.y0..tile.y1 {
                    for x in tile.x0..tile.x1 {
                        out.push(blend_pixel(
                            &tile.splats,
                            projected,
                            x as f64 + 0.5,
                            y as f64 + 0.5,
                        ));
                    }
                }
                out
            })
            .collect();
        let width = self.output.width;
        for (tile, pixels) in self.tiles.iter().zip(results) {
            let mut it = pixels.into_iter();
            for y in tile.y0..tile.y1 {
                for x in tile.x0..tile.x1 {
                    let (features, alpha, depth, consumed) =
                        it.next().expect("one result per pixel");
                    let i = y * width + x;
                    self.output.color[3 * i..3 * i + 3].copy_from_slice(&features[..3]);
                    self.output.semantic[NUM_PARTS * i..NUM_PARTS * (i + 1)]
                        .copy_from_slice(&features[3..]);
                    self.output.alpha[i] = alpha;
                    self.output.depth[i] = depth;
                    self.consumed[i] = consumed;
                }
            }
        }
    }

    pub fn output(&self) -> &RenderOutput {
        &self.output
    }

    pub fn into_output(self) -> RenderOutput {
        self.output
    }

    pub fn path(&self) -> BlendPath {
        self.path
    }

    /// Screen-space splats in blend (front-to-back) order.
    pub fn splats(&self) -> impl Iterator<Item = &Splat2D> {
        self.projected.iter().map(|p| &p.splat)
    }

    /// Reverse pass: per-point gradients of `Σ adjoint · pixel value`.
    pub fn backward(&self, adjoints: &PixelAdjoints) -> Result<Vec<PointGrad>> {
        let (w, h) = (self.output.width, self.output.height);
        if adjoints.width != w || adjoints.height != h || adjoints.data.len() != w * h * CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "adjoints are {}x{} ({} values), image is {w}x{h}",
                adjoints.width,
                adjoints.height,
                adjoints.data.len()
            )));
        }
        let projected = &self.projected;
        // Per-tile accumulators: mean (2), conic (a, b, c), opacity, features.
        const ACC: usize = 6 + CHANNELS;
        let tile_grads: Vec<Vec<[f64; ACC]>> = self
            .tiles
            .par_iter()
            .map(|tile| {
                let mut acc = vec![[0.0; ACC]; tile.splats.len()];
                let mut contributions: Vec<Contribution> = Vec::new();
                for y in tile.y0..tile.y1 {
                    for x in tile.x0..tile.x1 {
                        let adj = adjoints.pixel(x, y);
                        if adj.iter().all(|&a| a == 0.0) {
                            continue;
                        }
                        let consumed = self.consumed[y * w + x] as usize;
                        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                        contributions.clear();
                        let mut t = 1.0;
                        for (local, &k) in tile.splats[..consumed].iter().enumerate() {
                            if let Some((alpha, falloff, delta, clamped)) =
                                evaluate(&projected[k as usize], px, py)
                            {
                                contributions.push(Contribution {
                                    local,
                                    alpha,
                                    transmittance: t,
                                    falloff,
                                    delta,
                                    clamped,
                                });
                                t *= 1.0 - alpha;
                            }
                        }
                        let mut suffix = 0.0;
                        for c in contributions.iter().rev() {
                            let p = &projected[tile.splats[c.local] as usize];
                            let g_dot_f: f64 =
                                adj.iter().zip(&p.features).map(|(a, f)| a * f).sum();
                            let weight = c.alpha * c.transmittance;
                            let d_alpha = c.transmittance * g_dot_f - suffix / (1.0 - c.alpha);
                            suffix += weight * g_dot_f;
                            let slot = &mut acc[c.local];
                            for ch in 0..CHANNELS {
                                slot[6 + ch] += adj[ch] * weight;
                            }
                            if c.clamped {
                                continue;
                            }
                            slot[5] += d_alpha * c.falloff;
                            let d_q = d_alpha * p.opacity * c.falloff * -0.5;
                            let conic_d = p.conic * c.delta;
                            slot[0] += d_q * -2.0 * conic_d.x;
                            slot[1] += d_q * -2.0 * conic_d.y;
                            slot[2] += d_q * c.delta.x * c.delta.x;
                            slot[3] += d_q * 2.0 * c.delta.x * c.delta.y;
                            slot[4] += d_q * c.delta.y * c.delta.y;
                        }
                    }
                }
                acc
            })
            .collect();

        // Merge in tile order so the sums do not depend on scheduling.
        let mut screen = vec![[0.0; ACC]; projected.len()];
        for (tile, grads) in self.tiles.iter().zip(&tile_grads) {
            for (&k, g) in tile.splats.iter().zip(grads) {
                let dst = &mut screen[k as usize];
                for (a, b) in dst.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }

        let mut out = vec![PointGrad::zero(); self.cloud.len()];
        let camera = &self.camera;
        let per_splat: Vec<(usize, PointGrad)> = projected
            .par_iter()
            .zip(screen.par_iter())
            .map(|(p, g)| (p.splat.source_index, self.chain_to_world(p, g, camera)))
            .collect();
        for (i, g) in per_splat {
            out[i] = g;
        }
        Ok(out)
    }

    fn chain_to_world(&self, p: &Projected, g: &[f64], camera: &Camera) -> PointGrad {
        let point = &self.cloud.points[p.splat.source_index];
        let mut grad = PointGrad::zero();
        grad.opacity = g[5];
        grad.color = Vector3::new(g[6], g[7], g[8]);
        grad.semantic.copy_from_slice(&g[9..9 + NUM_PARTS]);

        let g_conic = Matrix2::new(g[2], 0.5 * g[3], 0.5 * g[3], g[4]);
        let g_cov = -(p.conic * g_conic * p.conic);
        let jac = &p.jacobian;
        let g_view = jac.transpose() * g_cov * jac;
        let g_jac = (g_cov + g_cov.transpose()) * jac * p.view_cov;
        let w = &camera.rotation;
        let g_sigma = w.transpose() * g_view * w;

        let r = rotation_matrix(&point.rotation);
        let s = Matrix3::from_diagonal(&point.scale);
        let m = r * s;
        let g_m = (g_sigma + g_sigma.transpose()) * m;
        let g_r = g_m * s;
        for k in 0..3 {
            grad.scale[k] = (0..3).map(|i| g_m[(i, k)] * r[(i, k)]).sum();
        }
        grad.rotation = rotation_matrix_backward(&point.rotation, &g_r);

        let (x, y, z) = (p.cam_position.x, p.cam_position.y, p.cam_position.z);
        let (fx, fy) = (camera.fx, camera.fy);
        let (gu, gv) = (g[0], g[1]);
        let z2 = z * z;
        let z3 = z2 * z;
        let g_cam = Vector3::new(
            gu * fx / z + g_jac[(0, 2)] * (-fx / z2),
            gv * fy / z + g_jac[(1, 2)] * (-fy / z2),
            -gu * fx * x / z2 - gv * fy * y / z2
                + g_jac[(0, 0)] * (-fx / z2)
                + g_jac[(0, 2)] * (2.0 * fx * x / z3)
                + g_jac[(1, 1)] * (-fy / z2)
                + g_jac[(1, 2)] * (2.0 * fy * y / z3),
        );
        grad.position = w.transpose() * g_cam;
        grad
    }
}

/// Channels, alpha, depth sum and number of contributing splats.
type PixelBlend = ([f64; CHANNELS], f64, f64, u32);

fn blend_pixel(list: &[u32], projected: &[Projected], px: f64, py: f64) -> PixelBlend {
    let mut features = [0.0; CHANNELS];
    let mut t = 1.0;
    let mut depth = 0.0;
    let mut consumed = list.len();
    for (n, &k) in list.iter().enumerate() {
        let p = &projected[k as usize];
        let Some((alpha, _, _, _)) = evaluate(p, px, py) else {
            continue;
        };
        let weight = alpha * t;
        for (f, v) in features.iter_mut().zip(&p.features) {
            *f += v * weight;
        }
        depth += weight * p.splat.depth;
        t *= 1.0 - alpha;
        if t < MIN_TRANSMITTANCE {
            consumed = n + 1;
            break;
        }
    }
    let alpha = 1.0 - t;
    let depth = if alpha > 0.0 { depth / alpha } else { 0.0 };
    (features, alpha, depth, consumed as u32)
}

/// Renders color, semantic distribution, alpha and depth.
pub fn render(cloud: &GaussianCloud, camera: &Camera) -> Result<RenderOutput> {
    Ok(RenderFrame::new(cloud, camera, BlendPath::Tiled)?.into_output())
}

pub fn render_with_path(
    cloud: &GaussianCloud,
    camera: &Camera,
    path: BlendPath,
) -> Result<RenderOutput> {
    Ok(RenderFrame::new(cloud, camera, path)?.into_output())
}

/// Gradients of `Σ_pixels adjoint · (color, semantic)` with respect to
/// every point; culled points receive zeros.
pub fn render_with_grads(
    cloud: &GaussianCloud,
    camera: &Camera,
    pixel_loss_grads: &PixelAdjoints,
) -> Result<Vec<PointGrad>> {
    RenderFrame::new(cloud, camera, BlendPath::Tiled)?.backward(pixel_loss_grads)
}

/// Hard labels: 0 for background (alpha below threshold), otherwise one
/// plus the most probable part.
pub fn argmax_mask(output: &RenderOutput, alpha_threshold: f64) -> Vec<u8> {
    (0..output.width * output.height)
        .map(|i| {
            if output.alpha[i] < alpha_threshold {
                0
            } else {
                1 + argmax(&output.semantic[NUM_PARTS * i..NUM_PARTS * (i + 1)]) as u8
            }
        })
        .collect()
}

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

#[cfg(test)]
mod tests;
