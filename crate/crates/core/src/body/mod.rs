//! Articulated body prior: rest template, skeleton, linear blend skinning,
//! Gaussian initialization and the part adjacency graph.

mod skinning;
mod topology;

use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::{quaternion_from_axis_angle, rotation_matrix, GaussianCloud, GaussianPoint};
use crate::knn::SpatialIndex;
use crate::parts::{one_hot, NUM_PARTS};

pub use skinning::{pose_cloud, PointSkin, PosedCloud};
pub use topology::{prior_adjacent, PriorTopology};

pub const NUM_VERTICES: usize = 6890;
pub const NUM_JOINTS: usize = 24;
pub const NUM_BETAS: usize = 10;
pub const MAX_INFLUENCES: usize = 4;
const WEIGHT_TOLERANCE: f64 = 1e-6;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

/// Parent of each joint in the canonical 24-joint skeleton; the root is -1.
pub const PARENTS: [i32; NUM_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

/// Up to [`MAX_INFLUENCES`] `(joint, weight)` pairs.
pub type SkinWeights = Vec<(usize, f64)>;

#[derive(Clone, Debug, PartialEq)]
pub struct BodyTemplate {
    pub vertices: Vec<Vector3<f64>>,
    pub part_labels: Vec<u8>,
    pub skin_weights: Vec<SkinWeights>,
    pub joints: Vec<Vector3<f64>>,
    pub parents: Vec<i32>,
    /// Per-subject shape coefficients; kept as metadata.
    pub betas: [f64; NUM_BETAS],
}

impl BodyTemplate {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_template(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() != NUM_VERTICES {
            return Err(Error::Validation(format!(
                "vertex count: expected {NUM_VERTICES}, found {}",
                self.vertices.len()
            )));
        }
        if self.part_labels.len() != self.vertices.len()
            || self.skin_weights.len() != self.vertices.len()
        {
            return Err(Error::Validation(
                "vertex count: labels and skin weights must match vertices".into(),
            ));
        }
        if self.joints.len() != NUM_JOINTS || self.parents.len() != NUM_JOINTS {
            return Err(Error::Validation(format!(
                "joint count: expected {NUM_JOINTS}, found {}",
                self.joints.len()
            )));
        }
        if self.parents[0] != -1 {
            return Err(Error::Validation(
                "parents: joint 0 must be the root".into(),
            ));
        }
        for (j, &p) in self.parents.iter().enumerate().skip(1) {
            // Parents precede children, which also rules out cycles.
            if p < 0 || p as usize >= j {
                return Err(Error::Validation(format!(
                    "parents: joint {j} has invalid parent {p}"
                )));
            }
        }
        let mut seen = [false; NUM_PARTS];
        for (i, &l) in self.part_labels.iter().enumerate() {
            if l as usize >= NUM_PARTS {
                return Err(Error::Validation(format!(
                    "part labels: vertex {i} has label {l}"
                )));
            }
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "part labels: part {missing} has no vertices"
            )));
        }
        for (i, w) in self.skin_weights.iter().enumerate() {
            if w.is_empty() || w.len() > MAX_INFLUENCES {
                return Err(Error::Validation(format!(
                    "skin weights: vertex {i} has {} influences",
                    w.len()
                )));
            }
            if w.iter().any(|&(j, x)| j >= NUM_JOINTS || !(x >= 0.0)) {
                return Err(Error::Validation(format!(
                    "skin weights: vertex {i} has an invalid joint or weight"
                )));
            }
            let sum: f64 = w.iter().map(|&(_, x)| x).sum();
            if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
                return Err(Error::Validation(format!(
                    "skin weights: vertex {i} sums to {sum}"
                )));
            }
        }
        for v in self.vertices.iter().chain(self.joints.iter()) {
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::Validation("coordinates: non-finite value".into()));
            }
        }
        Ok(())
    }

    /// Height of the rest pose along the vertical axis.
    pub fn height(&self) -> f64 {
        let (lo, hi) = self
            .vertices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v.y), hi.max(v.y))
            });
        hi - lo
    }
}

pub fn load_template(path: impl AsRef<Path>) -> Result<BodyTemplate> {
    let template = crate::io::template_file::read_template(path.as_ref())?;
    template.validate()?;
    Ok(template)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseParams {
    /// Axis-angle rotation of each joint relative to its parent, radians.
    pub joint_rotations: [Vector3<f64>; NUM_JOINTS],
    pub root_translation: Vector3<f64>,
}

impl Default for PoseParams {
    fn default() -> Self {
        PoseParams {
            joint_rotations: [Vector3::zeros(); NUM_JOINTS],
            root_translation: Vector3::zeros(),
        }
    }
}

impl PoseParams {
    pub fn validate(&self) -> Result<()> {
        for (j, r) in self.joint_rotations.iter().enumerate() {
            if !(r.norm() < std::f64::consts::PI) {
                return Err(Error::Validation(format!(
                    "pose: joint {j} rotation magnitude {} outside [0, pi)",
                    r.norm()
                )));
            }
        }
        if self.root_translation.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation("pose: non-finite translation".into()));
        }
        Ok(())
    }

    /// The 75 pose values in file order: 24 axis-angle triples, then translation.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * NUM_JOINTS + 3);
        for r in &self.joint_rotations {
            out.extend_from_slice(r.as_slice());
        }
        out.extend_from_slice(self.root_translation.as_slice());
        out
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != 3 * NUM_JOINTS + 3 {
            return Err(Error::InvalidInput(format!(
                "pose needs {} values, got {}",
                3 * NUM_JOINTS + 3,
                values.len()
            )));
        }
        let mut pose = PoseParams::default();
        for j in 0..NUM_JOINTS {
            pose.joint_rotations[j] = Vector3::from_column_slice(&values[3 * j..3 * j + 3]);
        }
        pose.root_translation = Vector3::from_column_slice(&values[3 * NUM_JOINTS..]);
        Ok(pose)
    }
}

/// Rest-relative skinning transform of each joint: `x ↦ rotation·x + translation`.
#[derive(Clone, Debug)]
pub struct JointTransforms {
    pub rotations: Vec<Matrix3<f64>>,
    pub quaternions: Vec<Quaternion<f64>>,
    pub translations: Vec<Vector3<f64>>,
}

impl JointTransforms {
    pub fn new(template: &BodyTemplate, pose: &PoseParams) -> Self {
        let n = template.joints.len();
        let mut world_q: Vec<Quaternion<f64>> = Vec::with_capacity(n);
        let mut world_r: Vec<Matrix3<f64>> = Vec::with_capacity(n);
        let mut rest_t: Vec<Vector3<f64>> = Vec::with_capacity(n);
        for j in 0..n {
            let local_q = quaternion_from_axis_angle(&pose.joint_rotations[j]);
            let local_r = rotation_matrix(&local_q);
            let pivot = template.joints[j];
            let local_t = pivot - local_r * pivot;
            match template.parents[j] {
                p if p < 0 => {
                    world_q.push(local_q);
                    world_r.push(local_r);
                    rest_t.push(local_t);
                }
                p => {
                    let p = p as usize;
                    world_q.push(world_q[p] * local_q);
                    world_r.push(world_r[p] * local_r);
                    rest_t.push(rest_t[p] + world_r[p] * local_t);
                }
            }
        }
        let translations = rest_t
            .into_iter()
            .map(|t| t + pose.root_translation)
            .collect();
        JointTransforms {
            rotations: world_r,
            quaternions: world_q,
            translations,
        }
    }

    /// Weighted affine transform `(linear, offset)` for one skinned point.
    pub fn blend(&self, weights: &[(usize, f64)]) -> (Matrix3<f64>, Vector3<f64>) {
        let mut linear = Matrix3::identity();
        let mut offset = Vector3::zeros();
        for &(j, w) in weights {
            linear += (self.rotations[j] - Matrix3::identity()) * w;
            offset += self.translations[j] * w;
        }
        (linear, offset)
    }

    /// Weighted quaternion average (sign-aligned to the dominant joint).
    pub fn blend_rotation(&self, weights: &[(usize, f64)]) -> Quaternion<f64> {
        let Some(&(lead, _)) = weights
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        else {
            return Quaternion::identity();
        };
        let reference = self.quaternions[lead];
        let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
        for &(j, w) in weights {
            let q = self.quaternions[j];
            let sign = if q.dot(&reference) < 0.0 { -1.0 } else { 1.0 };
            acc += q * (w * sign);
        }
        *UnitQuaternion::from_quaternion(acc).quaternion()
    }
}

/// Linear blend skinning of every template vertex.
pub fn pose_vertices(template: &BodyTemplate, pose: &PoseParams) -> Vec<Vector3<f64>> {
    let transforms = JointTransforms::new(template, pose);
    template
        .vertices
        .iter()
        .zip(&template.skin_weights)
        .map(|(v, w)| {
            let (linear, offset) = transforms.blend(w);
            linear * v + offset
        })
        .collect()
}

/// Mean distance from each vertex to its three nearest rest-pose neighbours.
pub fn neighbor_scales(vertices: &[Vector3<f64>]) -> Vec<f64> {
    let index = SpatialIndex::build(vertices);
    (0..vertices.len())
        .map(|i| {
            let nn = index
                .nearest(i, 3)
                .expect("template has more than 3 vertices");
            nn.iter()
                .map(|&j| (vertices[j] - vertices[i]).norm())
                .sum::<f64>()
                / 3.0
        })
        .collect()
}

/// One Gaussian per template vertex, labelled with the vertex's part.
pub fn init_gaussians(template: &BodyTemplate, posed: Option<&PoseParams>) -> GaussianCloud {
    let scales = neighbor_scales(&template.vertices);
    let positions = match posed {
        Some(pose) => pose_vertices(template, pose),
        None => template.vertices.clone(),
    };
    let points = positions
        .into_iter()
        .zip(scales)
        .zip(&template.part_labels)
        .map(|((position, scale), &label)| GaussianPoint {
            position,
            rotation: Quaternion::identity(),
            scale: Vector3::repeat(scale),
            opacity: 0.1,
            color: Vector3::repeat(0.5),
            semantic: one_hot(label as usize),
        })
        .collect();
    GaussianCloud::new(points)
}
