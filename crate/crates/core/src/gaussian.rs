//! Gaussian points with semantic attributes, and the geometry shared by the
//! rest of the pipeline.

use nalgebra::{Matrix3, Quaternion, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::parts::{one_hot, Semantic, NUM_PARTS};

pub const UNIT_TOLERANCE: f64 = 1e-6;
const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPoint {
    pub position: Vector3<f64>,
    /// Unit quaternion, stored as (w, i, j, k).
    pub rotation: Quaternion<f64>,
    /// Linear, strictly positive standard deviations along the local axes.
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub semantic: Semantic,
}

impl GaussianPoint {
    /// An isotropic, axis-aligned point labelled with a single part.
    pub fn isotropic(position: Vector3<f64>, scale: f64, part: usize) -> Self {
        GaussianPoint {
            position,
            rotation: Quaternion::identity(),
            scale: Vector3::repeat(scale),
            opacity: 0.1,
            color: Vector3::repeat(0.5),
            semantic: one_hot(part),
        }
    }

    pub fn label(&self) -> usize {
        crate::parts::argmax(&self.semantic)
    }

    pub fn covariance(&self) -> Result<Covariance3> {
        covariance_from_rs(&self.rotation, &self.scale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub points: Vec<GaussianPoint>,
    /// Incremented by every densify or prune pass.
    pub generation: u32,
}

impl GaussianCloud {
    pub fn new(points: Vec<GaussianPoint>) -> Self {
        GaussianCloud {
            points,
            generation: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }
}

/// A symmetric positive-definite 3x3 covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance3 {
    pub matrix: Matrix3<f64>,
}

/// Rotation matrix of `q / |q|`.
pub fn rotation_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on `rotation_matrix(q)` back onto the raw quaternion
/// components (w, i, j, k), including the normalization.
pub fn rotation_matrix_backward(q: &Quaternion<f64>, grad: &Matrix3<f64>) -> Quaternion<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    let g = |r: usize, c: usize| grad[(r, c)];
    let dw =
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let dot = w * dw + x * dx + y * dy + z * dz;
    Quaternion::new(
        (dw - w * dot) / n,
        (dx - x * dot) / n,
        (dy - y * dot) / n,
        (dz - z * dot) / n,
    )
}

/// Builds `R S Sᵀ Rᵀ` from a unit quaternion and positive scales.
pub fn covariance_from_rs(rotation: &Quaternion<f64>, scale: &Vector3<f64>) -> Result<Covariance3> {
    let norm = rotation.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "rotation quaternion norm {norm} is not 1"
        )));
    }
    if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "scale ({}, {}, {}) must be strictly positive",
            scale.x, scale.y, scale.z
        )));
    }
    Ok(Covariance3 {
        matrix: covariance_unchecked(rotation, scale),
    })
}

pub(crate) fn covariance_unchecked(
    rotation: &Quaternion<f64>,
    scale: &Vector3<f64>,
) -> Matrix3<f64> {
    let m = rotation_matrix(rotation) * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// Normalized 3D Gaussian density of `point` evaluated at `x`.
pub fn evaluate_density(point: &GaussianPoint, x: &Vector3<f64>) -> Result<f64> {
    let sigma = point.covariance()?.matrix;
    let eigen = SymmetricEigen::new(sigma);
    let max = eigen.eigenvalues.max();
    let min = eigen.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::DegenerateCovariance { condition });
    }
    let det: f64 = eigen.eigenvalues.iter().product();
    let inverse = sigma
        .try_inverse()
        .ok_or(Error::DegenerateCovariance { condition })?;
    let d = x - point.position;
    let mahalanobis = d.dot(&(inverse * d));
    let norm = (2.0 * std::f64::consts::PI).powf(-1.5) / det.sqrt();
    Ok(norm * (-0.5 * mahalanobis).exp())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub point: usize,
    pub field: &'static str,
    pub detail: String,
}

/// Lists every invariant violation; an empty report means the cloud is valid.
pub fn validate_cloud(cloud: &GaussianCloud) -> Vec<Violation> {
    let mut out = Vec::new();
    if cloud.points.is_empty() {
        out.push(Violation {
            point: 0,
            field: "points",
            detail: "cloud is empty".into(),
        });
    }
    for (i, p) in cloud.points.iter().enumerate() {
        let mut push = |field: &'static str, detail: String| {
            out.push(Violation {
                point: i,
                field,
                detail,
            })
        };
        if p.position.iter().any(|v| !v.is_finite()) {
            push("position", "non-finite".into());
        }
        let qn = p.rotation.norm();
        if !qn.is_finite() || (qn - 1.0).abs() > UNIT_TOLERANCE {
            push("rotation", format!("norm {qn}"));
        }
        if p.scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            push("scale", format!("{:?}", p.scale.as_slice()));
        }
        if !(0.0..=1.0).contains(&p.opacity) {
            push("opacity", format!("{}", p.opacity));
        }
        if p.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            push("color", format!("{:?}", p.color.as_slice()));
        }
        let sum: f64 = p.semantic.iter().sum();
        if p.semantic.iter().any(|&s| !(s >= 0.0)) || !((sum - 1.0).abs() <= UNIT_TOLERANCE) {
            push("semantic", format!("sum {sum}"));
        }
    }
    out
}

pub(crate) fn quaternion_from_axis_angle(axis_angle: &Vector3<f64>) -> Quaternion<f64> {
    let angle = axis_angle.norm();
    if angle < 1e-300 {
        return Quaternion::identity();
    }
    let axis = axis_angle / angle;
    let (s, c) = (0.5 * angle).sin_cos();
    Quaternion::new(c, axis.x * s, axis.y * s, axis.z * s)
}

/// Checks that a semantic vector is a distribution over [`NUM_PARTS`] parts.
pub fn is_distribution(v: &[f64]) -> bool {
    v.len() == NUM_PARTS
        && v.iter().all(|&x| x >= 0.0)
        && (v.iter().sum::<f64>() - 1.0).abs() <= UNIT_TOLERANCE
}
