use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera with OpenCV axes (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r * r.transpose() - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-6) || !((r.determinant() - 1.0).abs() <= 1e-6) {
            return Err(Error::InvalidInput(
                "camera rotation must be orthonormal with determinant +1".into(),
            ));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(
                "camera focal lengths must be positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(
                "camera image size must be positive".into(),
            ));
        }
        if self
            .translation
            .iter()
            .chain([self.cx, self.cy].iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput(
                "camera parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` pointing towards the
    /// top of the image.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Camera {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            translation: -(rotation * eye),
            rotation,
            width,
            height,
        }
    }

    pub fn to_camera_space(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-space point at camera depth `depth` on the ray through image
    /// coordinates `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let cam = Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        );
        self.rotation.transpose() * (cam - self.translation)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}
