//! Perspective projection of 3D Gaussians to screen-space splats.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::camera::Camera;
use crate::gaussian::{covariance_unchecked, GaussianPoint};
use crate::parts::NUM_PARTS;

pub const NEAR_PLANE: f64 = 0.01;
/// Isotropic screen-space low-pass added to every projected covariance.
pub const LOW_PASS: f64 = 0.3;
/// Support radius in standard deviations.
pub const SUPPORT_SIGMAS: f64 = 3.0;
pub const CHANNELS: usize = 3 + NUM_PARTS;

#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub source_index: usize,
}

/// A visible splat together with everything the blend and its backward
/// pass need.
#[derive(Clone, Debug)]
pub(crate) struct Projected {
    pub splat: Splat2D,
    pub conic: Matrix2<f64>,
    pub cam_position: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub view_cov: Matrix3<f64>,
    pub opacity: f64,
    pub features: [f64; CHANNELS],
    /// Inclusive pixel index ranges that may fall inside the support.
    pub x_range: (usize, usize),
    pub y_range: (usize, usize),
}

pub(crate) fn project_point(
    point: &GaussianPoint,
    index: usize,
    camera: &Camera,
) -> Option<Projected> {
    let cam_position = camera.to_camera_space(&point.position);
    let (x, y, z) = (cam_position.x, cam_position.y, cam_position.z);
    if !(z > NEAR_PLANE) {
        return None;
    }
    let mean2d = Vector2::new(camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy);
    let jacobian = Matrix2x3::new(
        camera.fx / z,
        0.0,
        -camera.fx * x / (z * z),
        0.0,
        camera.fy / z,
        -camera.fy * y / (z * z),
    );
    let sigma = covariance_unchecked(&point.rotation, &point.scale);
    let view_cov = camera.rotation * sigma * camera.rotation.transpose();
    let cov2d = jacobian * view_cov * jacobian.transpose() + Matrix2::identity() * LOW_PASS;
    let cov2d = (cov2d + cov2d.transpose()) * 0.5;
    let det = cov2d.determinant();
    if !(det > 0.0) {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;

    let ex = SUPPORT_SIGMAS * cov2d[(0, 0)].sqrt();
    let ey = SUPPORT_SIGMAS * cov2d[(1, 1)].sqrt();
    let (w, h) = (camera.width as f64, camera.height as f64);
    if mean2d.x + ex < 0.0 || mean2d.x - ex > w || mean2d.y + ey < 0.0 || mean2d.y - ey > h {
        return None;
    }
    // Pixel centers sit at integer + 0.5; pad one pixel against rounding.
    let lo_x = ((mean2d.x - ex - 0.5).ceil() - 1.0).max(0.0);
    let hi_x = ((mean2d.x + ex - 0.5).floor() + 1.0).min(w - 1.0);
    let lo_y = ((mean2d.y - ey - 0.5).ceil() - 1.0).max(0.0);
    let hi_y = ((mean2d.y + ey - 0.5).floor() + 1.0).min(h - 1.0);

    let mut features = [0.0; CHANNELS];
    features[..3].copy_from_slice(point.color.as_slice());
    features[3..].copy_from_slice(&point.semantic);

    Some(Projected {
        splat: Splat2D {
            mean2d,
            cov2d,
            depth: z,
            source_index: index,
        },
        conic,
        cam_position,
        jacobian,
        view_cov,
        opacity: point.opacity,
        features,
        x_range: (lo_x as usize, hi_x.max(lo_x) as usize),
        y_range: (lo_y as usize, hi_y.max(lo_y) as usize),
    })
}

/// Projects a Gaussian; `None` means culled (behind the near plane or
/// entirely off-image).
pub fn project(point: &GaussianPoint, camera: &Camera) -> Option<Splat2D> {
    project_point(point, 0, camera).map(|p| p.splat)
}
