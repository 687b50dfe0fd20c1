#![allow(clippy::needless_range_loop)]
use super::*;
use crate::gaussian::GaussianPoint;
use crate::gradcheck::{finite_difference_check, perturb_component, random_scene};
use crate::parts::one_hot;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn axis_camera(size: usize, focal: f64) -> Camera {
    Camera {
        fx: focal,
        fy: focal,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
        width: size,
        height: size,
    }
}

/// Straightforward per-pixel blender used as an oracle: evaluates every
/// splat at every pixel with no tiles and no early termination.
fn oracle_render(cloud: &GaussianCloud, camera: &Camera) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut splats: Vec<(usize, Splat2D)> = cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| project(p, camera).map(|s| (i, s)))
        .collect();
    splats.sort_by(|a, b| {
        a.1.depth
            .partial_cmp(&b.1.depth)
            .unwrap()
            .then(a.0.cmp(&b.0))
    });
    let n = camera.width * camera.height;
    let mut color = vec![0.0; 3 * n];
    let mut semantic = vec![0.0; NUM_PARTS * n];
    let mut alpha = vec![0.0; n];
    for y in 0..camera.height {
        for x in 0..camera.width {
            let pix = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let i = y * camera.width + x;
            for (src, s) in &splats {
                let inv = s.cov2d.try_inverse().unwrap();
                let d = pix - s.mean2d;
                let q = (d.transpose() * inv * d)[(0, 0)];
                if q > 9.0 {
                    continue;
                }
                let p = &cloud.points[*src];
                let a = (p.opacity * (-0.5 * q).exp()).min(0.99);
                for c in 0..3 {
                    color[3 * i + c] += p.color[c] * a * t;
                }
                for l in 0..NUM_PARTS {
                    semantic[NUM_PARTS * i + l] += p.semantic[l] * a * t;
                }
                alpha[i] += a * t;
                t *= 1.0 - a;
            }
        }
    }
    (color, semantic, alpha)
}

#[test]
fn single_opaque_gaussian() {
    let cam = axis_camera(8, 20.0);
    let mut p = GaussianPoint::isotropic(Vector3::new(0.025, 0.025, 1.0), 0.05, 4);
    p.opacity = 1.0;
    p.color = Vector3::new(1.0, 0.0, 0.0);
    let out = render(&GaussianCloud::new(vec![p]), &cam).unwrap();
    // Mean projects to (4.5, 4.5), the center of pixel (4, 4).
    let c = out.color_at(4, 4);
    assert!((c[0] - 0.99).abs() < 1e-12 && c[1] == 0.0 && c[2] == 0.0);
    assert!((out.semantic_at(4, 4)[4] - 0.99).abs() < 1e-12);
    assert!((out.alpha_at(4, 4) - 0.99).abs() < 1e-12);
}

#[test]
fn two_coincident_half_opaque_gaussians() {
    let cam = axis_camera(8, 20.0);
    let mut a = GaussianPoint::isotropic(Vector3::new(0.025, 0.025, 1.0), 0.05, 0);
    a.opacity = 0.5;
    a.color = Vector3::new(1.0, 0.0, 0.0);
    let mut b = a.clone();
    b.color = Vector3::new(0.0, 1.0, 0.0);
    let out = render(&GaussianCloud::new(vec![a, b]), &cam).unwrap();
    let c = out.color_at(4, 4);
    assert!((c[0] - 0.5).abs() < 1e-12);
    assert!((c[1] - 0.25).abs() < 1e-12);
    assert_eq!(c[2], 0.0);
}

#[test]
fn empty_view_is_background() {
    let cam = axis_camera(8, 20.0);
    let p = GaussianPoint::isotropic(Vector3::new(0.0, 0.0, -1.0), 0.05, 0);
    let out = render(&GaussianCloud::new(vec![p]), &cam).unwrap();
    assert_eq!(out, RenderOutput::background(8, 8));
}

#[test]
fn matches_reference_blender_on_random_scenes() {
    for seed in 0..20 {
        let (cloud, cam) = random_scene(seed, 10, 8);
        let out = render(&cloud, &cam).unwrap();
        let (color, semantic, alpha) = oracle_render(&cloud, &cam);
        let max_err = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        assert!(max_err(&out.color, &color) < 1e-5, "seed {seed}");
        assert!(max_err(&out.semantic, &semantic) < 1e-5, "seed {seed}");
        assert!(max_err(&out.alpha, &alpha) < 1e-5, "seed {seed}");
    }
}

#[test]
fn tiled_and_reference_paths_agree() {
    for seed in 0..10 {
        let (cloud, cam) = random_scene(100 + seed, 200, 40);
        let tiled = render_with_path(&cloud, &cam, BlendPath::Tiled).unwrap();
        let reference = render_with_path(&cloud, &cam, BlendPath::Reference).unwrap();
        for (a, b) in tiled.color.iter().zip(&reference.color) {
            assert!((a - b).abs() <= 1e-5);
        }
        for (a, b) in tiled.semantic.iter().zip(&reference.semantic) {
            assert!((a - b).abs() <= 1e-5);
        }
    }
}

#[test]
fn blend_weights_sum_to_alpha() {
    for seed in 0..50 {
        let (cloud, cam) = random_scene(500 + seed, 30, 16);
        let out = render(&cloud, &cam).unwrap();
        for i in 0..cam.pixel_count() {
            let mass: f64 = out.semantic[NUM_PARTS * i..NUM_PARTS * (i + 1)]
                .iter()
                .sum();
            assert!((mass - out.alpha[i]).abs() < 1e-5);
            assert!(out.alpha[i] <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn renders_are_bit_reproducible() {
    let (cloud, cam) = random_scene(3, 100, 32);
    let a = render(&cloud, &cam).unwrap();
    let b = render(&cloud, &cam).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_adjoints_give_zero_gradients() {
    let (cloud, cam) = random_scene(4, 5, 16);
    let grads = render_with_grads(&cloud, &cam, &PixelAdjoints::zeros(16, 16)).unwrap();
    assert!(grads.iter().all(PointGrad::is_zero));
}

#[test]
fn mismatched_adjoints_are_rejected() {
    let (cloud, cam) = random_scene(4, 5, 16);
    assert!(matches!(
        render_with_grads(&cloud, &cam, &PixelAdjoints::zeros(8, 16)),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn color_gradient_equals_blend_weight() {
    let cam = axis_camera(8, 20.0);
    let mut p = GaussianPoint::isotropic(Vector3::new(0.01, 0.02, 1.0), 0.05, 0);
    p.opacity = 0.6;
    let cloud = GaussianCloud::new(vec![p]);
    let out = render(&cloud, &cam).unwrap();
    let mut adj = PixelAdjoints::zeros(8, 8);
    adj.pixel_mut(3, 5)[1] = 1.0;
    let g = render_with_grads(&cloud, &cam, &adj).unwrap();
    assert!((g[0].color[1] - out.alpha_at(3, 5)).abs() < 1e-15);
    assert_eq!(g[0].color[0], 0.0);
}

#[test]
fn culled_points_get_zero_gradient() {
    let (mut cloud, cam) = random_scene(9, 4, 16);
    cloud.points[2].position.z = -3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut adj = PixelAdjoints::zeros(16, 16);
    adj.data
        .iter_mut()
        .for_each(|a| *a = rng.random_range(-1.0..1.0));
    let g = render_with_grads(&cloud, &cam, &adj).unwrap();
    assert!(g[2].is_zero());
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        let (cloud, cam) = random_scene(40 + seed, 5, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adj = PixelAdjoints::zeros(16, 16);
        adj.data
            .iter_mut()
            .for_each(|a| *a = rng.random_range(-1.0..1.0));
        let loss = |c: &GaussianCloud| -> f64 {
            let out = render(c, &cam).unwrap();
            let mut total = 0.0;
            for i in 0..cam.pixel_count() {
                for ch in 0..3 {
                    total += adj.data[CHANNELS * i + ch] * out.color[3 * i + ch];
                }
                for l in 0..NUM_PARTS {
                    total += adj.data[CHANNELS * i + 3 + l] * out.semantic[NUM_PARTS * i + l];
                }
            }
            total
        };
        let grads = render_with_grads(&cloud, &cam, &adj).unwrap();
        let report = finite_difference_check(&cloud, &grads, 1e-4, loss);
        assert!(
            report.passed(1e-3, 1e-6),
            "seed {seed}: {:?}",
            report.failures(1e-3, 1e-6)
        );
    }
}

#[test]
fn finite_difference_helper_perturbs_each_component() {
    let (cloud, _) = random_scene(1, 1, 8);
    let base = PointGrad::zero().components().len();
    for c in 0..base {
        let moved = perturb_component(&cloud, 0, c, 1e-3);
        assert_ne!(moved, cloud, "component {c}");
    }
}

#[test]
fn argmax_mask_cases() {
    let mut out = RenderOutput::background(2, 1);
    assert_eq!(argmax_mask(&out, 0.5), vec![0, 0]);
    out.alpha[1] = 0.9;
    let s = one_hot(3);
    for l in 0..NUM_PARTS {
        out.semantic[NUM_PARTS + l] = 0.9 * s[l];
    }
    assert_eq!(argmax_mask(&out, 0.5), vec![0, 4]);
}

#[test]
fn argmax_mask_matches_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = RenderOutput::background(12, 9);
    for i in 0..12 * 9 {
        let a: f64 = rng.random();
        out.alpha[i] = a;
        let raw: Vec<f64> = (0..NUM_PARTS).map(|_| rng.random::<f64>()).collect();
        let sum: f64 = raw.iter().sum();
        for l in 0..NUM_PARTS {
            out.semantic[NUM_PARTS * i + l] = a * raw[l] / sum;
        }
    }
    let mask = argmax_mask(&out, 0.3);
    for i in 0..12 * 9 {
        let expected = if out.alpha[i] < 0.3 {
            0
        } else {
            let px = &out.semantic[NUM_PARTS * i..NUM_PARTS * (i + 1)];
            let mut best = 0;
            for l in 0..NUM_PARTS {
                if px[l] > px[best] {
                    best = l;
                }
            }
            best as u8 + 1
        };
        assert_eq!(mask[i], expected);
    }
}

#[test]
fn palette_colored_render_matches_mask_where_one_gaussian_dominates() {
    use crate::io::palette::PALETTE;
    let (mut cloud, cam) = random_scene(77, 12, 24);
    for p in cloud.points.iter_mut() {
        let rgb = PALETTE[1 + p.label()];
        p.color = Vector3::new(
            rgb[0] as f64 / 255.0,
            rgb[1] as f64 / 255.0,
            rgb[2] as f64 / 255.0,
        );
        p.opacity = 1.0;
        p.semantic = crate::parts::one_hot(p.label());
    }
    let frame = RenderFrame::new(&cloud, &cam, BlendPath::Tiled).unwrap();
    let out = frame.output();
    let mask = argmax_mask(out, 0.5);
    let mut checked = 0;
    for i in 0..cam.pixel_count() {
        let mass: f64 = out.semantic[NUM_PARTS * i..NUM_PARTS * (i + 1)]
            .iter()
            .copied()
            .fold(0.0, f64::max);
        if mass > 0.95 && mask[i] > 0 {
            let rgb = PALETTE[mask[i] as usize];
            for c in 0..3 {
                let expected = rgb[c] as f64 / 255.0 * out.alpha[i];
                assert!((out.color[3 * i + c] - expected).abs() < 0.05 + 1e-9);
            }
            checked += 1;
        }
    }
    assert!(checked > 0);
}
