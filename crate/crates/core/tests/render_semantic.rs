#![allow(clippy::needless_range_loop)]
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semsplat::gradcheck::{finite_difference_check, random_scene};
use semsplat::parts::{one_hot, NUM_PARTS};
use semsplat::render::{
    argmax_mask, project, render, render_with_grads, render_with_path, BlendPath, Camera,
    RenderOutput, LOW_PASS, MAX_ALPHA,
};
use semsplat::semantic::{label_divergence, semantic_loss, SemanticSupervision, EPSILON};
use semsplat::{GaussianCloud, GaussianPoint};

/// Every pixel walks every splat front to back with no early exit.
fn oracle_blend(
    cloud: &GaussianCloud,
    camera: &Camera,
) -> (Vec<[f64; 3]>, Vec<[f64; NUM_PARTS]>, Vec<f64>) {
    let mut splats: Vec<(usize, _)> = cloud
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
    let mut colors = vec![[0.0; 3]; n];
    let mut sems = vec![[0.0; NUM_PARTS]; n];
    let mut alphas = vec![0.0; n];
    for y in 0..camera.height {
        for x in 0..camera.width {
            let i = y * camera.width + x;
            let mut t = 1.0;
            for (src, s) in &splats {
                let d = nalgebra::Vector2::new(x as f64 + 0.5, y as f64 + 0.5) - s.mean2d;
                let q = d.dot(&(s.cov2d.try_inverse().unwrap() * d));
                if q > 9.0 {
                    continue;
                }
                let p = &cloud.points[*src];
                let a = (p.opacity * (-0.5 * q).exp()).min(MAX_ALPHA);
                let w = a * t;
                for c in 0..3 {
                    colors[i][c] += w * p.color[c];
                }
                for l in 0..NUM_PARTS {
                    sems[i][l] += w * p.semantic[l];
                }
                alphas[i] += w;
                t *= 1.0 - a;
            }
        }
    }
    (colors, sems, alphas)
}

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

#[test]
fn isotropic_projection_matches_hand_jacobian() {
    let cam = axis_camera(100, 100.0);
    for sigma in [0.01, 0.05, 0.2] {
        let p = GaussianPoint::isotropic(Vector3::new(0.0, 0.0, 2.0), sigma, 0);
        let s = project(&p, &cam).unwrap();
        let expected = (100.0 * sigma / 2.0f64).powi(2) + LOW_PASS;
        assert!((s.cov2d[(0, 0)] - expected).abs() < 1e-6);
        assert!((s.cov2d[(1, 1)] - expected).abs() < 1e-6);
        assert!(s.cov2d[(0, 1)].abs() < 1e-12);
    }
}

#[test]
fn both_blend_paths_match_the_oracle_blender() {
    for seed in 0..50 {
        let (cloud, cam) = random_scene(seed, 10, 8);
        let (colors, sems, alphas) = oracle_blend(&cloud, &cam);
        for path in [BlendPath::Tiled, BlendPath::Reference] {
            let out = render_with_path(&cloud, &cam, path).unwrap();
            for i in 0..64 {
                let (x, y) = (i % 8, i / 8);
                assert!((out.alpha[i] - alphas[i]).abs() < 1e-5, "seed {seed}");
                for c in 0..3 {
                    assert!(
                        (out.color_at(x, y)[c] - colors[i][c]).abs() < 1e-5,
                        "seed {seed}"
                    );
                }
                for l in 0..NUM_PARTS {
                    assert!(
                        (out.semantic_at(x, y)[l] - sems[i][l]).abs() < 1e-5,
                        "seed {seed}"
                    );
                }
            }
        }
    }
}

#[test]
fn blend_mass_equals_alpha_on_1000_scenes() {
    for seed in 0..1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..40);
        let (cloud, cam) = random_scene(10_000 + seed, n, 8);
        let out = render(&cloud, &cam).unwrap();
        for i in 0..64 {
            let a = out.alpha[i];
            assert!((0.0..=1.0).contains(&a));
            let mass: f64 = out.semantic[NUM_PARTS * i..NUM_PARTS * (i + 1)]
                .iter()
                .sum();
            assert!(
                (mass - a).abs() < 1e-5,
                "seed {seed} pixel {i}: {mass} vs {a}"
            );
        }
    }
}

#[test]
fn mask_matches_direct_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut out = RenderOutput::background(12, 7);
    for i in 0..84 {
        out.alpha[i] = rng.random();
        for l in 0..NUM_PARTS {
            out.semantic[NUM_PARTS * i + l] = rng.random::<f64>() * out.alpha[i];
        }
    }
    let mask = argmax_mask(&out, 0.5);
    for i in 0..84 {
        let s = &out.semantic[NUM_PARTS * i..NUM_PARTS * (i + 1)];
        let mut best = 0;
        for l in 1..NUM_PARTS {
            if s[l] > s[best] {
                best = l;
            }
        }
        let expected = if out.alpha[i] < 0.5 {
            0
        } else {
            best as u8 + 1
        };
        assert_eq!(mask[i], expected);
    }
}

#[test]
fn divergence_matches_formula_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let p: Vec<f64> = (0..NUM_PARTS).map(|_| rng.random::<f64>()).collect();
        let ps: f64 = p.iter().sum::<f64>() * rng.random_range(1.0..2.0);
        let p: Vec<f64> = p.iter().map(|v| v / ps).collect();
        let t: Vec<f64> = (0..NUM_PARTS).map(|_| rng.random::<f64>()).collect();
        let ts: f64 = t.iter().sum();
        let t: Vec<f64> = t.iter().map(|v| v / ts).collect();
        let oracle: f64 = -(0..NUM_PARTS)
            .map(|l| t[l] * (p[l] + EPSILON).ln())
            .sum::<f64>();
        let (d, g) = label_divergence(&p, &t);
        assert!((d - oracle).abs() < 1e-12);
        for l in 0..NUM_PARTS {
            assert!((g[l] + t[l] / (p[l] + EPSILON)).abs() < 1e-9 * g[l].abs().max(1.0));
        }
    }
    let (d, _) = label_divergence(&[1.0 / 15.0; NUM_PARTS], &one_hot(4));
    assert!((d - 15f64.ln()).abs() < 1e-6);
}

/// A cloud in front of a 16×16 axis camera whose centers land inside the
/// image, with a random foreground mask.
fn labelled_scene(seed: u64, n: usize) -> (GaussianCloud, Camera, SemanticSupervision) {
    let (mut cloud, cam) = random_scene(seed, n, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for p in &mut cloud.points {
        p.position.x = p.position.x.clamp(-0.3 * p.position.z, 0.3 * p.position.z);
        p.position.y = p.position.y.clamp(-0.3 * p.position.z, 0.3 * p.position.z);
    }
    let labels = (0..256)
        .map(|_| {
            if rng.random::<f64>() < 0.2 {
                0
            } else {
                rng.random_range(1..=15)
            }
        })
        .collect();
    (
        cloud,
        cam.clone(),
        SemanticSupervision::new(16, 16, labels, 0).unwrap(),
    )
}

#[test]
fn semantic_loss_matches_term_by_term_sum() {
    let (cloud, cam, sup) = labelled_scene(21, 20);
    let out = render(&cloud, &cam).unwrap();
    let k = 3;
    let pixel = |p: &GaussianPoint| {
        let u = cam.fx * p.position.x / p.position.z + cam.cx;
        let v = cam.fy * p.position.y / p.position.z + cam.cy;
        (u.floor() as usize, v.floor() as usize)
    };
    let semantic_at = |px: (usize, usize)| out.semantic_at(px.0, px.1).to_vec();
    let pts = cloud.positions();
    let mut total = 0.0;
    let mut n = 0;
    for i in 0..cloud.len() {
        let px = pixel(&cloud.points[i]);
        let label = sup.labels[px.1 * 16 + px.0];
        if label == 0 {
            continue;
        }
        n += 1;
        let target = one_hot(label as usize - 1);
        let mut term = label_divergence(&semantic_at(px), &target).0;
        let mut order: Vec<usize> = (0..cloud.len()).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            (pts[a] - pts[i])
                .norm_squared()
                .partial_cmp(&(pts[b] - pts[i]).norm_squared())
                .unwrap()
                .then(a.cmp(&b))
        });
        for &j in &order[..k] {
            term += label_divergence(&semantic_at(pixel(&cloud.points[j])), &target).0 / k as f64;
        }
        total += term;
    }
    assert!(n > 5);
    let oracle = total / n as f64;
    let got = semantic_loss(&cloud, &out, &sup, &cam, k).unwrap();
    assert_eq!(got.included, n);
    assert!(
        (got.value - oracle).abs() < 1e-10,
        "{} vs {oracle}",
        got.value
    );
}

#[test]
fn semantic_loss_gradients_match_finite_differences() {
    for seed in [30, 31] {
        let (cloud, cam, sup) = labelled_scene(seed, 10);
        let loss = |c: &GaussianCloud| {
            let out = render(c, &cam).unwrap();
            semantic_loss(c, &out, &sup, &cam, 3).unwrap().value
        };
        let out = render(&cloud, &cam).unwrap();
        let sl = semantic_loss(&cloud, &out, &sup, &cam, 3).unwrap();
        assert!(sl.included > 0);
        let grads = render_with_grads(&cloud, &cam, &sl.adjoints).unwrap();
        let report = finite_difference_check(&cloud, &grads, 1e-5, loss);
        assert!(
            report.passed(1e-3, 1e-6),
            "{:?}",
            report.failures(1e-3, 1e-6)
        );
    }
}

#[test]
fn semantic_loss_is_permutation_equivariant() {
    let (cloud, cam, sup) = labelled_scene(40, 15);
    let out = render(&cloud, &cam).unwrap();
    let base = semantic_loss(&cloud, &out, &sup, &cam, 3).unwrap();
    let base_grads = render_with_grads(&cloud, &cam, &base.adjoints).unwrap();

    let perm: Vec<usize> = (0..15).map(|i| (i * 7 + 3) % 15).collect();
    let shuffled = GaussianCloud::new(perm.iter().map(|&i| cloud.points[i].clone()).collect());
    let out2 = render(&shuffled, &cam).unwrap();
    let moved = semantic_loss(&shuffled, &out2, &sup, &cam, 3).unwrap();
    assert!((moved.value - base.value).abs() < 1e-12 * base.value.abs().max(1.0));
    let grads = render_with_grads(&shuffled, &cam, &moved.adjoints).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        let a = grads[new].components();
        let b = base_grads[old].components();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1e-6));
        }
    }
}

#[test]
fn doubling_k_on_uniform_neighborhoods_keeps_the_loss() {
    let cam = axis_camera(16, 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cloud = GaussianCloud::new(
        (0..30)
            .map(|_| {
                let z = rng.random_range(2.0..3.0);
                let pos = Vector3::new(
                    rng.random_range(-0.3..0.3) * z,
                    rng.random_range(-0.3..0.3) * z,
                    z,
                );
                GaussianPoint::isotropic(pos, 0.05, 4)
            })
            .collect(),
    );
    let mut out = RenderOutput::background(16, 16);
    for i in 0..256 {
        out.alpha[i] = 0.8;
        out.semantic[NUM_PARTS * i + 4] = 0.7;
        out.semantic[NUM_PARTS * i + 1] = 0.1;
    }
    let sup = SemanticSupervision::new(16, 16, vec![5; 256], 0).unwrap();
    let l3 = semantic_loss(&cloud, &out, &sup, &cam, 3).unwrap().value;
    let l6 = semantic_loss(&cloud, &out, &sup, &cam, 6).unwrap().value;
    assert!((l3 - l6).abs() < 1e-9);
    assert!((l3 + 2.0 * (0.7 + EPSILON).ln()).abs() < 1e-9);
}

#[test]
fn semantic_loss_vanishes_on_a_perfect_match() {
    let cam = axis_camera(16, 20.0);
    let mut out = RenderOutput::background(16, 16);
    for i in 0..256 {
        out.alpha[i] = 1.0;
        out.semantic[NUM_PARTS * i + 2] = 1.0;
    }
    let cloud = GaussianCloud::new(
        (0..8)
            .map(|i| {
                GaussianPoint::isotropic(Vector3::new(0.05 * i as f64 - 0.2, 0.0, 2.0), 0.05, 2)
            })
            .collect(),
    );
    let sup = SemanticSupervision::new(16, 16, vec![3; 256], 0).unwrap();
    let l = semantic_loss(&cloud, &out, &sup, &cam, 3).unwrap();
    assert!(l.value.abs() < 1e-7);
    assert_eq!(l.included, 8);
}
