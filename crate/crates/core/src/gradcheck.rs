//! Central finite-difference checks for per-point gradients, plus small
//! random scenes to run them on.

use nalgebra::{Matrix3, Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gaussian::{GaussianCloud, GaussianPoint};
use crate::parts::NUM_PARTS;
use crate::render::{Camera, PointGrad};

/// Number of scalar parameters per point, in [`PointGrad::components`] order.
pub const COMPONENTS: usize = 29;

pub fn component_name(c: usize) -> &'static str {
    match c {
        0..=2 => "position",
        3..=6 => "rotation",
        7..=9 => "scale",
        10 => "opacity",
        11..=13 => "color",
        _ => "semantic",
    }
}

/// Copy of `cloud` with one raw component of one point shifted by `h`.
pub fn perturb_component(
    cloud: &GaussianCloud,
    point: usize,
    component: usize,
    h: f64,
) -> GaussianCloud {
    let mut out = cloud.clone();
    let p = &mut out.points[point];
    match component {
        0..=2 => p.position[component] += h,
        3 => p.rotation.w += h,
        4 => p.rotation.i += h,
        5 => p.rotation.j += h,
        6 => p.rotation.k += h,
        7..=9 => p.scale[component - 7] += h,
        10 => p.opacity += h,
        11..=13 => p.color[component - 11] += h,
        c => p.semantic[c - 14] += h,
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub worst_relative: f64,
    /// `(point, component, analytic, numeric)` for every mismatch beyond the
    /// tolerances passed to [`FdReport::passed`]; filled by `passed`.
    pub entries: Vec<(usize, usize, f64, f64)>,
}

impl FdReport {
    pub fn failures(&self, relative: f64, absolute: f64) -> Vec<(usize, usize, f64, f64)> {
        self.entries
            .iter()
            .copied()
            .filter(|&(_, _, a, n)| !close(a, n, relative, absolute))
            .collect()
    }

    pub fn passed(&self, relative: f64, absolute: f64) -> bool {
        self.failures(relative, absolute).is_empty()
    }
}

pub fn close(analytic: f64, numeric: f64, relative: f64, absolute: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= absolute || diff <= relative * analytic.abs().max(numeric.abs())
}

/// Compares `grads` against central differences of `loss` for every
/// component of every point.
pub fn finite_difference_check<F>(
    cloud: &GaussianCloud,
    grads: &[PointGrad],
    h: f64,
    loss: F,
) -> FdReport
where
    F: Fn(&GaussianCloud) -> f64,
{
    let mut report = FdReport::default();
    for (i, g) in grads.iter().enumerate() {
        let analytic = g.components();
        for (c, &a) in analytic.iter().enumerate() {
            let plus = loss(&perturb_component(cloud, i, c, h));
            let minus = loss(&perturb_component(cloud, i, c, -h));
            let numeric = (plus - minus) / (2.0 * h);
            let denom = a.abs().max(numeric.abs());
            if denom > 0.0 {
                report.worst_relative = report.worst_relative.max((a - numeric).abs() / denom);
            }
            report.entries.push((i, c, a, numeric));
            report.checked += 1;
        }
    }
    report
}

/// `n` random Gaussians in front of an axis-aligned camera rendering a
/// `size × size` image.
pub fn random_scene(seed: u64, n: usize, size: usize) -> (GaussianCloud, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let focal = 1.2 * size as f64;
    let camera = Camera {
        fx: focal,
        fy: focal,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
        width: size,
        height: size,
    };
    let points = (0..n)
        .map(|_| {
            let z = rng.random_range(2.0..4.0);
            let q = Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let raw: Vec<f64> = (0..NUM_PARTS)
                .map(|_| rng.random_range(0.01..1.0))
                .collect();
            let sum: f64 = raw.iter().sum();
            let mut semantic = [0.0; NUM_PARTS];
            for (s, r) in semantic.iter_mut().zip(&raw) {
                *s = r / sum;
            }
            GaussianPoint {
                position: Vector3::new(
                    rng.random_range(-0.35..0.35) * z,
                    rng.random_range(-0.35..0.35) * z,
                    z,
                ),
                rotation: q / q.norm(),
                scale: Vector3::new(
                    rng.random_range(0.04..0.25),
                    rng.random_range(0.04..0.25),
                    rng.random_range(0.04..0.25),
                ),
                opacity: rng.random_range(0.1..0.9),
                color: Vector3::new(rng.random(), rng.random(), rng.random()),
                semantic,
            }
        })
        .collect();
    (GaussianCloud::new(points), camera)
}
