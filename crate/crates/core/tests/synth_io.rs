use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsplat::body::{JointTransforms, PoseParams, NUM_VERTICES};
use semsplat::graph::{build_graph, initial_embeddings};
use semsplat::io::cameras::{format_cameras, parse_cameras, Split};
use semsplat::io::config_file::parse_config;
use semsplat::io::graph_file::{decode_graph, encode_graph};
use semsplat::io::palette::{label_of, PALETTE};
use semsplat::io::ply::{decode_cloud, encode_cloud, read_cloud, write_cloud};
use semsplat::io::pose_file::{format_pose, parse_pose};
use semsplat::io::template_file::{format_template, parse_template, write_template};
use semsplat::optim::TrainConfig;
use semsplat::synth::{
    body_layout, camera_ring, dataset_files, generate_dataset, generate_template, load_dataset,
    perturbed_init, pose_trajectory, static_dataset, write_dataset, Proportions, RigSpec,
    PROPORTION_NAMES,
};
use semsplat::{Error, Part, NUM_PARTS};

fn small_rig(cameras: usize, size: usize) -> RigSpec {
    RigSpec {
        cameras,
        width: size,
        image_height: size,
        ..RigSpec::default()
    }
}

#[test]
fn default_template_round_trips_through_file() {
    let t = generate_template(3, &Proportions::default()).unwrap();
    assert_eq!(t.vertices.len(), NUM_VERTICES);
    t.validate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("body.tmpl");
    write_template(&t, &path).unwrap();
    let back = semsplat::body::load_template(&path).unwrap();
    assert_eq!(back, t);
    assert_eq!(parse_template(&format_template(&t)).unwrap(), t);
}

#[test]
fn template_counts_cover_every_part() {
    let t = generate_template(0, &Proportions::default()).unwrap();
    let mut counts = [0usize; NUM_PARTS];
    for &l in &t.part_labels {
        counts[l as usize] += 1;
    }
    assert_eq!(counts.iter().sum::<usize>(), 6890);
    assert!(counts.iter().all(|&c| c > 0));
}

#[test]
fn longer_arms_move_forearms_away_from_shoulders() {
    let mean_distance = |proportions: &Proportions| {
        let t = generate_template(11, proportions).unwrap();
        let mut total = 0.0;
        let mut n = 0;
        for (v, &l) in t.vertices.iter().zip(&t.part_labels) {
            let shoulder = match Part::from_index(l as usize).unwrap() {
                Part::LeftForearm => 16,
                Part::RightForearm => 17,
                _ => continue,
            };
            total += (v - t.joints[shoulder]).norm();
            n += 1;
        }
        total / n as f64
    };
    let mut long = Proportions::default();
    let arm = PROPORTION_NAMES
        .iter()
        .position(|&n| n == "arm_length")
        .unwrap();
    long.0[arm] = 2.0;
    assert!(mean_distance(&long) > mean_distance(&Proportions::default()));
}

#[test]
fn proportions_outside_range_are_rejected() {
    let mut p = Proportions::default();
    p.0[0] = 2.5;
    assert!(generate_template(0, &p).is_err());
    p.0[0] = 0.4;
    assert!(generate_template(0, &p).is_err());
}

#[test]
fn same_seed_gives_identical_template_bytes() {
    let a = format_template(&generate_template(42, &Proportions::default()).unwrap());
    let b = format_template(&generate_template(42, &Proportions::default()).unwrap());
    assert_eq!(a, b);
    let c = format_template(&generate_template(43, &Proportions::default()).unwrap());
    assert_ne!(a, c);
}

#[test]
fn trajectories_stay_in_pose_range() {
    for seed in 0..5 {
        let frames = pose_trajectory(300, seed);
        assert_eq!(frames.len(), 300);
        for pose in &frames {
            pose.validate().unwrap();
        }
        assert_eq!(frames, pose_trajectory(300, seed));
    }
}

#[test]
fn stride_keeps_requested_frames() {
    let t = generate_template(0, &Proportions::default()).unwrap();
    let rig = RigSpec {
        train_cameras: 1,
        ..small_rig(1, 8)
    };
    let d = generate_dataset(&t, 100, 5, &rig, 9).unwrap();
    assert_eq!(d.frame_ids.len(), 100);
    assert_eq!(d.frame_ids[0], 0);
    assert_eq!(*d.frame_ids.last().unwrap(), 495);
    assert!(d.frame_ids.windows(2).all(|w| w[1] - w[0] == 5));
    assert_eq!(d.views.len(), 100);
    let source = pose_trajectory(500, 9);
    for (pose, &id) in d.poses.iter().zip(&d.frame_ids) {
        assert_eq!(*pose, source[id]);
    }
    assert!(generate_dataset(&t, 0, 5, &rig, 9).is_err());
    assert!(generate_dataset(&t, 3, 0, &rig, 9).is_err());
}

#[test]
fn two_static_views_differ_but_share_labels() {
    let t = generate_template(0, &Proportions::default()).unwrap();
    let rig = RigSpec {
        train_cameras: 1,
        ..small_rig(2, 48)
    };
    let d = static_dataset(&t, &PoseParams::default(), &rig).unwrap();
    assert_eq!(d.views.len(), 2);
    assert_ne!(d.views[0].image, d.views[1].image);
    let labels = |m: &[u8]| {
        m.iter()
            .copied()
            .filter(|&l| l > 0)
            .collect::<BTreeSet<u8>>()
    };
    assert_eq!(labels(&d.views[0].mask), labels(&d.views[1].mask));
    assert_eq!(d.cameras[0].split, Split::Train);
    assert_eq!(d.cameras[1].split, Split::Test);
}

/// Pixels whose 3x3 neighborhood carries one label; at silhouettes the
/// expected depth mixes in whatever lies behind.
fn interior_pixels(mask: &[u8], w: usize, h: usize) -> Vec<usize> {
    (0..mask.len())
        .filter(|&i| {
            let (x, y) = (i % w, i / w);
            mask[i] > 0
                && x > 0
                && y > 0
                && x + 1 < w
                && y + 1 < h
                && (0..9).all(|k| mask[(y + k / 3 - 1) * w + x + k % 3 - 1] == mask[i])
        })
        .collect()
}

#[test]
fn mask_pixels_back_project_onto_their_part() {
    const SIZE: usize = 128;
    let t = generate_template(5, &Proportions::default()).unwrap();
    let (_, capsules) = body_layout(&Proportions::default());
    let rig = RigSpec {
        train_cameras: 1,
        ..small_rig(3, SIZE)
    };
    let d = generate_dataset(&t, 4, 3, &rig, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (frame, pose) in d.poses.iter().enumerate() {
        let joints = JointTransforms::new(&t, pose);
        for (c, entry) in d.cameras.iter().enumerate() {
            let (_, mask, out) = semsplat::synth::render_view(&t, pose, &entry.camera).unwrap();
            let view = d
                .views
                .iter()
                .find(|v| v.frame == frame && v.camera == c)
                .unwrap();
            assert_eq!(view.mask, mask);
            let labelled = interior_pixels(&mask, SIZE, SIZE);
            assert!(labelled.len() > 100);
            for _ in 0..100 {
                let i = labelled[rng.random_range(0..labelled.len())];
                let (u, v) = ((i % SIZE) as f64 + 0.5, (i / SIZE) as f64 + 0.5);
                let world = entry.camera.unproject(u, v, out.depth[i]);
                let cap = &capsules[mask[i] as usize - 1];
                assert_eq!(cap.part.index() + 1, mask[i] as usize);
                let (r, tr) = (
                    &joints.rotations[cap.joint],
                    &joints.translations[cap.joint],
                );
                let a = r * cap.start + tr;
                let b = r * cap.end + tr;
                let s = ((world - a).dot(&(b - a)) / (b - a).norm_squared()).clamp(0.0, 1.0);
                let dist = (world - (a + (b - a) * s)).norm();
                assert!(
                    dist <= 2.0 * cap.radius,
                    "frame {frame} camera {c} pixel {i} label {}: {dist} > {}",
                    mask[i],
                    2.0 * cap.radius
                );
            }
        }
    }
}

#[test]
fn dataset_round_trips_through_directory() {
    let t = generate_template(1, &Proportions::default()).unwrap();
    let rig = RigSpec {
        train_cameras: 1,
        ..small_rig(2, 16)
    };
    let d = generate_dataset(&t, 3, 2, &rig, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&d, dir.path()).unwrap();
    for f in dataset_files(&d) {
        assert!(dir.path().join(&f).is_file(), "{}", f.display());
    }
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.frame_ids, d.frame_ids);
    assert_eq!(back.views, d.views);
    assert_eq!(back.cameras.len(), 2);

    let again = tempfile::tempdir().unwrap();
    write_dataset(&generate_dataset(&t, 3, 2, &rig, 4).unwrap(), again.path()).unwrap();
    for f in dataset_files(&d) {
        let a = std::fs::read(dir.path().join(&f)).unwrap();
        let b = std::fs::read(again.path().join(&f)).unwrap();
        assert_eq!(a, b, "{}", f.display());
    }
}

#[test]
fn perturbed_init_noise_matches_sigma() {
    let t = generate_template(2, &Proportions::default()).unwrap();
    let clean = perturbed_init(&t, 0.0, 1);
    let noisy = perturbed_init(&t, 0.02, 1);
    let sigma = 0.02 * t.height();
    let mut sq = 0.0;
    for (a, b) in clean.points.iter().zip(&noisy.points) {
        sq += (a.position - b.position).norm_squared();
    }
    let measured = (sq / (3.0 * clean.len() as f64)).sqrt();
    assert!(
        (measured / sigma - 1.0).abs() < 0.03,
        "{measured} vs {sigma}"
    );
    assert_eq!(noisy, perturbed_init(&t, 0.02, 1));
}

#[test]
fn cloud_file_round_trip_is_bitwise() {
    let t = generate_template(7, &Proportions::default()).unwrap();
    let cloud = semsplat::io::ply::quantize(&perturbed_init(&t, 0.02, 3));
    assert_eq!(cloud.len(), 6890);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.ply");
    write_cloud(&cloud, &path).unwrap();
    let back = read_cloud(&path).unwrap();
    assert_eq!(back, cloud);
    assert_eq!(encode_cloud(&back), std::fs::read(&path).unwrap());
}

#[test]
fn cloud_file_rejects_bad_semantics() {
    let t = generate_template(7, &Proportions::default()).unwrap();
    let mut cloud = perturbed_init(&t, 0.0, 3);
    for v in cloud.points[12].semantic.iter_mut() {
        *v *= 0.5;
    }
    match decode_cloud(&encode_cloud(&cloud)) {
        Err(Error::Validation(msg)) => {
            assert!(msg.contains("point 12"), "{msg}");
            assert!(msg.contains("sem"), "{msg}");
        }
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn truncated_cloud_reports_byte_offset() {
    let t = generate_template(7, &Proportions::default()).unwrap();
    let bytes = encode_cloud(&perturbed_init(&t, 0.0, 3));
    let cut = &bytes[..bytes.len() - 10];
    match decode_cloud(cut) {
        Err(Error::Parse { location, .. }) => {
            assert_eq!(location, format!("byte offset {}", cut.len()))
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    match decode_cloud(b"ply\nformat ascii 1.0\n") {
        Err(Error::Parse { location, .. }) => assert_eq!(location, "byte offset 4"),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn cameras_round_trip() {
    let cams = camera_ring(&RigSpec::default()).unwrap();
    let back = parse_cameras(&format_cameras(&cams)).unwrap();
    assert_eq!(back, cams);
    assert!(parse_cameras("cam0 1 2 3").is_err());
}

#[test]
fn pose_round_trip() {
    let pose = pose_trajectory(10, 3).remove(7);
    assert_eq!(parse_pose(&format_pose(&pose)).unwrap(), pose);
}

#[test]
fn config_round_trip_and_unknown_keys() {
    let mut config = TrainConfig::default();
    config.set("k", "32").unwrap();
    config.set("lambda_topology", "0.125").unwrap();
    let back = parse_config(&config.to_text()).unwrap();
    assert_eq!(back.to_text(), config.to_text());
    assert_eq!(back.densify_stop(), config.densify_stop());
    assert_eq!((back.k, back.lambda_topology), (32, 0.125));
    match parse_config("k = 4\nbogus_key = 1\n") {
        Err(e) => assert!(e.to_string().contains("bogus_key"), "{e}"),
        Ok(_) => panic!("unknown key accepted"),
    }
    match parse_config("k = 4\nseed = x\n") {
        Err(e) => assert!(e.to_string().contains("line 2"), "{e}"),
        Ok(_) => panic!("bad value accepted"),
    }
}

#[test]
fn graph_file_round_trip() {
    let t = generate_template(7, &Proportions::default()).unwrap();
    let mut cloud = perturbed_init(&t, 0.0, 3);
    cloud.points.truncate(200);
    let graph = build_graph(&cloud, 6).unwrap();
    let emb = initial_embeddings(200, 8, 1);
    let bytes = encode_graph(&graph, Some(&emb)).unwrap();
    let (g, e) = decode_graph(&bytes).unwrap();
    assert_eq!(g.k, 6);
    for (a, b) in g.adjacency.iter().zip(&graph.adjacency) {
        for (&(i, w), &(j, v)) in a.iter().zip(b) {
            assert_eq!((i, w), (j, v as f32 as f64));
        }
    }
    let e = e.unwrap();
    for (a, b) in e.vectors.iter().zip(&emb.vectors) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert_eq!(encode_graph(&g, Some(&e)).unwrap(), bytes);
    let (_, none) = decode_graph(&encode_graph(&graph, None).unwrap()).unwrap();
    assert!(none.is_none());
}

#[test]
fn palette_is_injective_with_black_background() {
    assert_eq!(PALETTE[0], [0, 0, 0]);
    let distinct: BTreeSet<[u8; 3]> = PALETTE.iter().copied().collect();
    assert_eq!(distinct.len(), 16);
    for (l, &c) in PALETTE.iter().enumerate() {
        assert_eq!(label_of(c), Some(l as u8));
    }
    assert_eq!(label_of([1, 2, 3]), None);
}
