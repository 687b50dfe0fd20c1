//! Posing a canonical Gaussian cloud with the template's skinning weights.

use nalgebra::{Matrix3, Quaternion};

use super::{BodyTemplate, JointTransforms, PoseParams};
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::render::PointGrad;

/// Per-point Jacobian data needed to pull posed-space gradients back to the
/// canonical parameters.
#[derive(Clone, Copy, Debug)]
pub struct PointSkin {
    pub linear: Matrix3<f64>,
    pub rotation: Quaternion<f64>,
}

impl PointSkin {
    pub fn pull_back(&self, grad: &PointGrad) -> PointGrad {
        PointGrad {
            position: self.linear.transpose() * grad.position,
            rotation: self.rotation.conjugate() * grad.rotation,
            ..grad.clone()
        }
    }
}

pub struct PosedCloud {
    pub cloud: GaussianCloud,
    pub skins: Vec<PointSkin>,
}

/// Poses every point with the skin weights of the template vertex it
/// descends from (`lineage[i]`). Positions follow the blended affine
/// transform; orientations are pre-multiplied by the blended joint rotation.
pub fn pose_cloud(
    canonical: &GaussianCloud,
    template: &BodyTemplate,
    lineage: &[usize],
    pose: &PoseParams,
) -> Result<PosedCloud> {
    if lineage.len() != canonical.len() {
        return Err(Error::InvalidArgument(format!(
            "lineage has {} entries for {} points",
            lineage.len(),
            canonical.len()
        )));
    }
    if let Some(&bad) = lineage.iter().find(|&&v| v >= template.vertices.len()) {
        return Err(Error::InvalidArgument(format!(
            "lineage references vertex {bad} outside the template"
        )));
    }
    let transforms = JointTransforms::new(template, pose);
    let mut points = Vec::with_capacity(canonical.len());
    let mut skins = Vec::with_capacity(canonical.len());
    for (p, &v) in canonical.points.iter().zip(lineage) {
        let weights = &template.skin_weights[v];
        let (linear, offset) = transforms.blend(weights);
        let rotation = transforms.blend_rotation(weights);
        let mut posed = p.clone();
        posed.position = linear * p.position + offset;
        posed.rotation = rotation * p.rotation;
        points.push(posed);
        skins.push(PointSkin { linear, rotation });
    }
    Ok(PosedCloud {
        cloud: GaussianCloud {
            points,
            generation: canonical.generation,
        },
        skins,
    })
}
