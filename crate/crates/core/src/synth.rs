//! Procedural capsule-limb humanoid, smooth pose trajectories, camera rigs
//! and rendered ground-truth datasets.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::body::{
    init_gaussians, neighbor_scales, pose_vertices, BodyTemplate, PoseParams, NUM_BETAS,
    NUM_JOINTS, NUM_VERTICES, PARENTS,
};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, GaussianPoint};
use crate::io::cameras::{read_cameras, write_cameras, CameraEntry, Split};
use crate::io::image::{read_mask, read_rgb, to_u8, write_mask, write_rgb, RgbImage};
use crate::io::pose_file::{read_pose, write_pose};
use crate::io::template_file::write_template;
use crate::parts::{one_hot, Part, NUM_PARTS};
use crate::render::{argmax_mask, render, Camera, RenderOutput, DEFAULT_MASK_THRESHOLD, MAX_ALPHA};

pub const PROPORTION_NAMES: [&str; NUM_BETAS] = [
    "height",
    "shoulder_width",
    "hip_width",
    "arm_length",
    "leg_length",
    "torso_length",
    "head_size",
    "limb_girth",
    "torso_girth",
    "extremity_size",
];
pub const PROPORTION_RANGE: (f64, f64) = (0.5, 2.0);

/// Multipliers on the default body, each within [`PROPORTION_RANGE`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proportions(pub [f64; NUM_BETAS]);

impl Default for Proportions {
    fn default() -> Self {
        Proportions([1.0; NUM_BETAS])
    }
}

impl Proportions {
    pub fn validate(&self) -> Result<()> {
        for (name, &v) in PROPORTION_NAMES.iter().zip(&self.0) {
            if !(PROPORTION_RANGE.0..=PROPORTION_RANGE.1).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "proportion {name} = {v} outside [{}, {}]",
                    PROPORTION_RANGE.0, PROPORTION_RANGE.1
                )));
            }
        }
        Ok(())
    }

    fn get(&self, name: &str) -> f64 {
        self.0[PROPORTION_NAMES
            .iter()
            .position(|n| *n == name)
            .expect("known proportion")]
    }
}

/// A capsule body part: segment `start → end` with radius `radius`, rigidly
/// bound to `joint` and blended with `blend_joint` near its start.
#[derive(Clone, Debug, PartialEq)]
pub struct Capsule {
    pub part: Part,
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub radius: f64,
    pub joint: usize,
    pub blend_joint: usize,
}

impl Capsule {
    pub fn area(&self) -> f64 {
        2.0 * PI * self.radius * ((self.end - self.start).norm() + 2.0 * self.radius)
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        let d = self.end - self.start;
        let t = ((p - self.start).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        (p - (self.start + d * t)).norm() - self.radius
    }
}

/// Maps the unit layout (about 1.91 tall) to a 1.72 m body.
const LAYOUT_SCALE: f64 = 0.9;

/// Fraction of the segment over which a part blends into its parent joint.
const BLEND_SPAN: f64 = 0.2;

/// Rest-pose joints and body capsules for the given proportions.
pub fn body_layout(proportions: &Proportions) -> (Vec<Vector3<f64>>, Vec<Capsule>) {
    let p = |n: &str| proportions.get(n);
    let (hw, sw, al, ll, tl) = (
        p("hip_width"),
        p("shoulder_width"),
        p("arm_length"),
        p("leg_length"),
        p("torso_length"),
    );
    let (hs, lg, tg, ex) = (
        p("head_size"),
        p("limb_girth"),
        p("torso_girth"),
        p("extremity_size"),
    );

    let ankle_y = 0.10;
    let knee_y = ankle_y + 0.40 * ll;
    let hip_y = knee_y + 0.38 * ll;
    let pelvis_y = hip_y + 0.07;
    let spine = [
        pelvis_y + 0.10 * tl,
        pelvis_y + 0.23 * tl,
        pelvis_y + 0.37 * tl,
    ];
    let neck_y = spine[2] + 0.16;
    let mut j = vec![Vector3::zeros(); NUM_JOINTS];
    j[0] = Vector3::new(0.0, pelvis_y, 0.0);
    j[3] = Vector3::new(0.0, spine[0], 0.0);
    j[6] = Vector3::new(0.0, spine[1], 0.0);
    j[9] = Vector3::new(0.0, spine[2], 0.0);
    j[12] = Vector3::new(0.0, neck_y, 0.0);
    j[15] = Vector3::new(0.0, neck_y + 0.10 * hs, 0.0);
    for (side, s) in [(0usize, 1.0), (1, -1.0)] {
        j[1 + side] = Vector3::new(s * 0.09 * hw, hip_y, 0.0);
        j[4 + side] = Vector3::new(s * 0.09 * hw, knee_y, 0.0);
        j[7 + side] = Vector3::new(s * 0.09 * hw, ankle_y, 0.0);
        j[10 + side] = Vector3::new(s * 0.09 * hw, ankle_y - 0.07, 0.12 * ex);
        j[13 + side] = Vector3::new(s * 0.08 * sw, spine[2] + 0.08, 0.0);
        let shoulder_x = 0.18 * sw;
        j[16 + side] = Vector3::new(s * shoulder_x, spine[2] + 0.10, 0.0);
        j[18 + side] = Vector3::new(s * (shoulder_x + 0.27 * al), spine[2] + 0.10, 0.0);
        j[20 + side] = Vector3::new(s * (shoulder_x + 0.52 * al), spine[2] + 0.10, 0.0);
        j[22 + side] = Vector3::new(
            s * (shoulder_x + 0.52 * al + 0.10 * ex),
            spine[2] + 0.10,
            0.0,
        );
    }

    let cap = |part, start: Vector3<f64>, end: Vector3<f64>, radius, joint, blend_joint| Capsule {
        part,
        start,
        end,
        radius,
        joint,
        blend_joint,
    };
    let head_r = 0.10 * hs;
    let mut capsules = vec![
        cap(
            Part::Head,
            j[15] + Vector3::new(0.0, head_r, 0.0),
            j[15] + Vector3::new(0.0, head_r + 0.12 * hs, 0.0),
            head_r,
            15,
            12,
        ),
        cap(Part::Neck, j[12], j[15], 0.05 * lg, 12, 9),
        cap(
            Part::Torso,
            Vector3::new(0.0, pelvis_y - 0.03, 0.0),
            Vector3::new(0.0, spine[2] + 0.01, 0.0),
            0.13 * tg,
            0,
            0,
        ),
    ];
    let limbs = [
        (
            Part::LeftUpperArm,
            Part::RightUpperArm,
            16,
            18,
            13,
            0.05 * lg,
            0.0,
        ),
        (
            Part::LeftForearm,
            Part::RightForearm,
            18,
            20,
            16,
            0.04 * lg,
            0.0,
        ),
        (
            Part::LeftHand,
            Part::RightHand,
            20,
            22,
            18,
            0.035 * ex,
            0.05 * ex,
        ),
        (Part::LeftThigh, Part::RightThigh, 1, 4, 0, 0.07 * lg, 0.0),
        (Part::LeftCalf, Part::RightCalf, 4, 7, 1, 0.05 * lg, 0.0),
        (Part::LeftFoot, Part::RightFoot, 7, 10, 4, 0.04 * ex, 0.0),
    ];
    for (left, right, a, b, parent, radius, extend) in limbs {
        for (side, part) in [(0, left), (1, right)] {
            let (a, b, parent) = (
                a + side,
                b + side,
                if parent == 0 { 0 } else { parent + side },
            );
            let dir = (j[b] - j[a]).normalize();
            capsules.push(cap(part, j[a], j[b] + dir * extend, radius, a, parent));
        }
    }

    let h = p("height") * LAYOUT_SCALE;
    for v in j.iter_mut() {
        *v *= h;
    }
    for c in capsules.iter_mut() {
        c.start *= h;
        c.end *= h;
        c.radius *= h;
    }
    capsules.sort_by_key(|c| c.part.index());
    (j, capsules)
}

/// Largest-remainder split of `total` proportional to `weights`.
pub fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

fn perpendicular_basis(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if d.z.abs() < 0.9 {
        Vector3::z()
    } else {
        Vector3::x()
    };
    let e1 = d.cross(&helper).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

/// Skin weights along a capsule: rigid to its joint, blending linearly into
/// the parent joint over the first [`BLEND_SPAN`] of the segment (50/50 at
/// the joint itself).
fn capsule_weights(c: &Capsule, t: f64) -> Vec<(usize, f64)> {
    if c.blend_joint == c.joint || t >= BLEND_SPAN {
        return vec![(c.joint, 1.0)];
    }
    let parent = 0.5 * (1.0 - t.max(0.0) / BLEND_SPAN);
    vec![(c.joint, 1.0 - parent), (c.blend_joint, parent)]
}

/// Torso weights interpolate along the spine chain by height.
fn torso_weights(joints: &[Vector3<f64>], y: f64) -> Vec<(usize, f64)> {
    let chain = [0usize, 3, 6, 9];
    if y <= joints[chain[0]].y {
        return vec![(0, 1.0)];
    }
    for w in chain.windows(2) {
        let (lo, hi) = (joints[w[0]].y, joints[w[1]].y);
        if y <= hi {
            let t = (y - lo) / (hi - lo);
            return if t == 0.0 {
                vec![(w[0], 1.0)]
            } else {
                vec![(w[0], 1.0 - t), (w[1], t)]
            };
        }
    }
    vec![(9, 1.0)]
}

/// Capsule-limb humanoid with exactly [`NUM_VERTICES`] surface points,
/// allotted to parts by surface area and placed on a jittered spiral
/// lattice. The proportions are stored as `betas = proportion - 1`.
pub fn generate_template(seed: u64, proportions: &Proportions) -> Result<BodyTemplate> {
    proportions.validate()?;
    let (joints, capsules) = body_layout(proportions);
    let areas: Vec<f64> = capsules.iter().map(|c| c.area()).collect();
    let counts = apportion(&areas, NUM_VERTICES);
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = Vec::with_capacity(NUM_VERTICES);
    let mut part_labels = Vec::with_capacity(NUM_VERTICES);
    let mut skin_weights = Vec::with_capacity(NUM_VERTICES);
    for (c, &n) in capsules.iter().zip(&counts) {
        let axis = c.end - c.start;
        let length = axis.norm();
        let d = axis / length;
        let (e1, e2) = perpendicular_basis(&d);
        let r = c.radius;
        // Axial position is uniform in area on a capsule (hat-box theorem).
        let span = length + 2.0 * r;
        for i in 0..n {
            let jitter: f64 = rng.random_range(-0.4..0.4);
            let z = -r + span * (i as f64 + 0.5 + jitter) / n as f64;
            let phi = i as f64 * golden + rng.random_range(-0.2..0.2);
            let ring = if z < 0.0 {
                (r * r - z * z).max(0.0).sqrt()
            } else if z > length {
                (r * r - (z - length) * (z - length)).max(0.0).sqrt()
            } else {
                r
            };
            let v = c.start + d * z + (e1 * phi.cos() + e2 * phi.sin()) * ring;
            let t = z / length;
            let weights = if c.part == Part::Torso {
                torso_weights(&joints, v.y)
            } else {
                capsule_weights(c, t)
            };
            vertices.push(v);
            part_labels.push(c.part.index() as u8);
            skin_weights.push(weights);
        }
    }
    let mut betas = [0.0; NUM_BETAS];
    for (b, p) in betas.iter_mut().zip(&proportions.0) {
        *b = p - 1.0;
    }
    let template = BodyTemplate {
        vertices,
        part_labels,
        skin_weights,
        joints,
        parents: PARENTS.to_vec(),
        betas,
    };
    template.validate()?;
    Ok(template)
}

const PART_COLORS: [[f64; 3]; NUM_PARTS] = [
    [0.85, 0.70, 0.55],
    [0.80, 0.62, 0.50],
    [0.20, 0.45, 0.80],
    [0.85, 0.25, 0.25],
    [0.25, 0.70, 0.30],
    [0.90, 0.55, 0.20],
    [0.60, 0.30, 0.75],
    [0.95, 0.85, 0.30],
    [0.30, 0.80, 0.80],
    [0.35, 0.35, 0.45],
    [0.55, 0.40, 0.25],
    [0.75, 0.75, 0.80],
    [0.45, 0.65, 0.35],
    [0.15, 0.15, 0.20],
    [0.80, 0.40, 0.55],
];

/// Ground-truth albedo: a per-part base color with horizontal stripes on
/// the torso and limbs.
pub fn vertex_color(part: usize, rest: &Vector3<f64>) -> Vector3<f64> {
    let base = Vector3::from(PART_COLORS[part]);
    let stripe = (rest.y * 28.0).sin() > 0.55 || (rest.x * 24.0).sin() > 0.8;
    if stripe && part != Part::Head.index() {
        base * 0.45
    } else {
        base
    }
}

/// Opaque ground-truth Gaussians: one per vertex, sized by the mean
/// distance to its three nearest neighbors.
pub fn ground_truth_cloud(template: &BodyTemplate, pose: &PoseParams) -> GaussianCloud {
    let scales = neighbor_scales(&template.vertices);
    let posed = pose_vertices(template, pose);
    let points = posed
        .into_iter()
        .enumerate()
        .map(|(i, position)| {
            let part = template.part_labels[i] as usize;
            GaussianPoint {
                position,
                rotation: Quaternion::identity(),
                scale: Vector3::repeat(scales[i]),
                opacity: MAX_ALPHA,
                color: vertex_color(part, &template.vertices[i]),
                semantic: one_hot(part),
            }
        })
        .collect();
    GaussianCloud::new(points)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigSpec {
    pub cameras: usize,
    pub train_cameras: usize,
    pub radius: f64,
    pub height: f64,
    pub target: Vector3<f64>,
    pub width: usize,
    pub image_height: usize,
    /// Focal length as a multiple of the image width.
    pub focal_factor: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        RigSpec {
            cameras: 8,
            train_cameras: 1,
            radius: 3.0,
            height: 1.0,
            target: Vector3::new(0.0, 0.9, 0.0),
            width: 64,
            image_height: 64,
            focal_factor: 1.5,
        }
    }
}

/// Cameras evenly spaced on a horizontal ring, camera 0 in front (+z).
pub fn camera_ring(rig: &RigSpec) -> Result<Vec<CameraEntry>> {
    if rig.cameras == 0 || rig.train_cameras > rig.cameras {
        return Err(Error::InvalidArgument(
            "rig needs at least one camera".into(),
        ));
    }
    Ok((0..rig.cameras)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / rig.cameras as f64;
            let eye = Vector3::new(rig.radius * a.sin(), rig.height, rig.radius * a.cos());
            CameraEntry {
                id: format!("cam{i}"),
                camera: Camera::look_at(
                    eye,
                    rig.target,
                    Vector3::y(),
                    rig.focal_factor * rig.width as f64,
                    rig.width,
                    rig.image_height,
                ),
                split: if i < rig.train_cameras {
                    Split::Train
                } else {
                    Split::Test
                },
            }
        })
        .collect())
}

/// Per-joint amplitude (radians) of the band-limited pose noise.
fn joint_amplitude(joint: usize) -> [f64; 3] {
    match joint {
        0 => [0.12, 0.0, 0.08],
        1 | 2 => [0.45, 0.15, 0.2],
        3 | 6 | 9 => [0.12, 0.12, 0.08],
        4 | 5 => [0.5, 0.05, 0.05],
        7 | 8 => [0.2, 0.1, 0.1],
        10 | 11 => [0.1, 0.05, 0.05],
        12 | 15 => [0.2, 0.25, 0.15],
        13 | 14 => [0.05, 0.1, 0.1],
        16 | 17 => [0.5, 0.3, 0.6],
        18 | 19 => [0.2, 0.6, 0.2],
        20 | 21 => [0.3, 0.2, 0.3],
        _ => [0.1, 0.1, 0.1],
    }
}

/// Root yaw amplitude; the body turns through almost a full circle so a
/// single training camera sees every side.
pub const ROOT_YAW_AMPLITUDE: f64 = 2.6;

/// Smooth pose sequence: each rotation component is a sum of three
/// low-frequency sinusoids (at most 1.5 cycles over the sequence); the root
/// additionally sweeps its yaw once.
pub fn pose_trajectory(source_frames: usize, seed: u64) -> Vec<PoseParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    type Wave = [(f64, f64, f64); 3];
    let mut wave = |amplitude: f64| -> Wave {
        let raw: [f64; 3] = [
            rng.random_range(0.2..1.0),
            rng.random_range(0.2..1.0),
            rng.random_range(0.2..1.0),
        ];
        let sum: f64 = raw.iter().sum();
        let mut out = [(0.0, 0.0, 0.0); 3];
        for (o, r) in out.iter_mut().zip(raw) {
            *o = (
                amplitude * r / sum,
                rng.random_range(0.25..1.5),
                rng.random_range(0.0..2.0 * PI),
            );
        }
        out
    };
    let joints: Vec<[Wave; 3]> = (0..NUM_JOINTS)
        .map(|j| {
            let a = joint_amplitude(j);
            [wave(a[0]), wave(a[1]), wave(a[2])]
        })
        .collect();
    let drift = [wave(0.1), wave(0.0), wave(0.1)];
    let yaw_phase = rng.random_range(0.0..2.0 * PI);
    let eval = |w: &Wave, s: f64| {
        w.iter()
            .map(|(a, f, ph)| a * (2.0 * PI * f * s + ph).sin())
            .sum::<f64>()
    };
    let span = source_frames.max(1) as f64;
    (0..source_frames)
        .map(|frame| {
            let s = frame as f64 / span;
            let mut pose = PoseParams::default();
            for (j, waves) in joints.iter().enumerate() {
                pose.joint_rotations[j] =
                    Vector3::new(eval(&waves[0], s), eval(&waves[1], s), eval(&waves[2], s));
            }
            pose.joint_rotations[0].y += ROOT_YAW_AMPLITUDE * (2.0 * PI * s + yaw_phase).sin();
            pose.root_translation = Vector3::new(eval(&drift[0], s), 0.0, eval(&drift[2], s));
            pose
        })
        .collect()
}

/// One ground-truth observation.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    /// Index into [`SceneDataset::poses`].
    pub frame: usize,
    /// Index into [`SceneDataset::cameras`].
    pub camera: usize,
    pub image: RgbImage,
    pub mask: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub template: BodyTemplate,
    pub cameras: Vec<CameraEntry>,
    /// Source frame number of each kept frame.
    pub frame_ids: Vec<usize>,
    pub poses: Vec<PoseParams>,
    /// Frame-major, camera-minor.
    pub views: Vec<View>,
}

impl SceneDataset {
    pub fn view_split(&self, view: &View) -> Split {
        self.cameras[view.camera].split
    }

    pub fn split_views(&self, split: Split) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| self.view_split(&self.views[i]) == split)
            .collect()
    }
}

/// Quantizes a render to 8 bits so in-memory and on-disk datasets agree.
pub fn quantized_image(out: &RenderOutput) -> RgbImage {
    RgbImage::new(
        out.width,
        out.height,
        out.color.iter().map(|&v| to_u8(v) as f64 / 255.0).collect(),
    )
}

pub fn render_view(
    template: &BodyTemplate,
    pose: &PoseParams,
    camera: &Camera,
) -> Result<(RgbImage, Vec<u8>, RenderOutput)> {
    let out = render(&ground_truth_cloud(template, pose), camera)?;
    Ok((
        quantized_image(&out),
        argmax_mask(&out, DEFAULT_MASK_THRESHOLD),
        out,
    ))
}

/// Keeps every `frame_stride`-th frame of a smooth trajectory until
/// `n_frames` are collected and renders each through every camera.
pub fn generate_dataset(
    template: &BodyTemplate,
    n_frames: usize,
    frame_stride: usize,
    rig: &RigSpec,
    seed: u64,
) -> Result<SceneDataset> {
    if n_frames == 0 || frame_stride == 0 {
        return Err(Error::InvalidArgument(
            "need at least one frame and a positive stride".into(),
        ));
    }
    template.validate()?;
    let cameras = camera_ring(rig)?;
    let trajectory = pose_trajectory(n_frames * frame_stride, seed);
    let frame_ids: Vec<usize> = (0..n_frames).map(|i| i * frame_stride).collect();
    let poses: Vec<PoseParams> = frame_ids.iter().map(|&f| trajectory[f].clone()).collect();
    let jobs: Vec<(usize, usize)> = (0..n_frames)
        .flat_map(|f| (0..cameras.len()).map(move |c| (f, c)))
        .collect();
    let views = jobs
        .par_iter()
        .map(|&(frame, camera)| {
            let (image, mask, _) = render_view(template, &poses[frame], &cameras[camera].camera)?;
            Ok(View {
                frame,
                camera,
                image,
                mask,
            })
        })
        .collect::<Result<Vec<View>>>()?;
    Ok(SceneDataset {
        template: template.clone(),
        cameras,
        frame_ids,
        poses,
        views,
    })
}

/// Same trajectory with every frame replaced by one static pose.
pub fn static_dataset(
    template: &BodyTemplate,
    pose: &PoseParams,
    rig: &RigSpec,
) -> Result<SceneDataset> {
    let cameras = camera_ring(rig)?;
    let views = (0..cameras.len())
        .map(|c| {
            let (image, mask, _) = render_view(template, pose, &cameras[c].camera)?;
            Ok(View {
                frame: 0,
                camera: c,
                image,
                mask,
            })
        })
        .collect::<Result<Vec<View>>>()?;
    Ok(SceneDataset {
        template: template.clone(),
        cameras,
        frame_ids: vec![0],
        poses: vec![pose.clone()],
        views,
    })
}

pub const TEMPLATE_FILE: &str = "template.tmpl";
pub const CAMERAS_FILE: &str = "cameras.txt";
pub const MANIFEST_FILE: &str = "manifest.csv";

fn pose_path(frame_id: usize) -> String {
    format!("poses/frame_{frame_id:04}.txt")
}

fn image_path(frame_id: usize, camera: &str) -> String {
    format!("images/frame_{frame_id:04}_{camera}.png")
}

fn mask_path(frame_id: usize, camera: &str) -> String {
    format!("masks/frame_{frame_id:04}_{camera}.png")
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the template, cameras, poses, images, masks and the manifest
/// (`frame,camera,pose,image,mask,split`).
pub fn write_dataset(dataset: &SceneDataset, dir: &Path) -> Result<()> {
    for sub in ["poses", "images", "masks"] {
        create_dir(&dir.join(sub))?;
    }
    write_template(&dataset.template, &dir.join(TEMPLATE_FILE))?;
    write_cameras(&dataset.cameras, &dir.join(CAMERAS_FILE))?;
    for (pose, &id) in dataset.poses.iter().zip(&dataset.frame_ids) {
        write_pose(pose, &dir.join(pose_path(id)))?;
    }
    let mut manifest = String::from("frame,camera,pose,image,mask,split\n");
    for v in &dataset.views {
        let id = dataset.frame_ids[v.frame];
        let cam = &dataset.cameras[v.camera];
        let (image, mask) = (image_path(id, &cam.id), mask_path(id, &cam.id));
        write_rgb(&dir.join(&image), &v.image)?;
        write_mask(&dir.join(&mask), v.image.width, v.image.height, &v.mask)?;
        let _ = writeln!(
            manifest,
            "{id},{},{},{image},{mask},{}",
            cam.id,
            pose_path(id),
            cam.split.as_str()
        );
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset written by [`write_dataset`] (or any directory with the
/// same manifest layout).
pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let template = crate::body::load_template(dir.join(TEMPLATE_FILE))?;
    let cameras = read_cameras(&dir.join(CAMERAS_FILE))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut reader = csv::Reader::from_path(&manifest_path).map_err(|e| Error::Parse {
        location: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut frame_ids: Vec<usize> = Vec::new();
    let mut poses: Vec<PoseParams> = Vec::new();
    let mut views = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::parse_line(line, e.to_string()))?;
        if record.len() != 6 {
            return Err(Error::parse_line(line, "manifest rows need 6 fields"));
        }
        let id: usize = record[0]
            .parse()
            .map_err(|_| Error::parse_line(line, format!("invalid frame '{}'", &record[0])))?;
        let camera = cameras
            .iter()
            .position(|c| c.id == record[1])
            .ok_or_else(|| Error::parse_line(line, format!("unknown camera '{}'", &record[1])))?;
        let frame = match frame_ids.iter().position(|&f| f == id) {
            Some(f) => f,
            None => {
                frame_ids.push(id);
                poses.push(read_pose(&dir.join(&record[2]))?);
                frame_ids.len() - 1
            }
        };
        let image = read_rgb(&dir.join(&record[3]))?;
        let (w, h, mask) = read_mask(&dir.join(&record[4]))?;
        let cam = &cameras[camera].camera;
        if (w, h) != (image.width, image.height) || (w, h) != (cam.width, cam.height) {
            return Err(Error::parse_line(
                line,
                "image, mask and camera sizes differ",
            ));
        }
        let split: Split = record[5]
            .parse()
            .map_err(|e: Error| Error::parse_line(line, e.to_string()))?;
        if split != cameras[camera].split {
            return Err(Error::parse_line(
                line,
                "split disagrees with the cameras file",
            ));
        }
        views.push(View {
            frame,
            camera,
            image,
            mask,
        });
    }
    Ok(SceneDataset {
        template,
        cameras,
        frame_ids,
        poses,
        views,
    })
}

/// Every path referenced by the manifest, relative to the dataset root.
pub fn dataset_files(dataset: &SceneDataset) -> Vec<PathBuf> {
    let mut files = vec![
        PathBuf::from(TEMPLATE_FILE),
        PathBuf::from(CAMERAS_FILE),
        PathBuf::from(MANIFEST_FILE),
    ];
    for &id in &dataset.frame_ids {
        files.push(PathBuf::from(pose_path(id)));
    }
    for v in &dataset.views {
        let id = dataset.frame_ids[v.frame];
        let cam = &dataset.cameras[v.camera].id;
        files.push(PathBuf::from(image_path(id, cam)));
        files.push(PathBuf::from(mask_path(id, cam)));
    }
    files
}

/// Template-initialized cloud with Gaussian position noise of standard
/// deviation `sigma_fraction × body height`.
pub fn perturbed_init(template: &BodyTemplate, sigma_fraction: f64, seed: u64) -> GaussianCloud {
    let mut cloud = init_gaussians(template, None);
    let sigma = sigma_fraction * template.height();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    for p in cloud.points.iter_mut() {
        for c in 0..3 {
            p.position[c] += rng.sample(normal);
        }
    }
    cloud
}
