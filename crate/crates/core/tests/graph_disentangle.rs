use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semsplat::body::PriorTopology;
use semsplat::disentangle::{
    cluster_by_semantics, densify, densify_indexed, raw_attributes, select_high_frequency,
    split_point, structural_difference, HighFreqSelection, ATTRIBUTE_DIM,
};
use semsplat::graph::{
    build_graph, random_walks, sample_contrastive, topology_loss, train_embeddings,
    ContrastiveBatch, NodeEmbeddings, PointGraph, SkipGramConfig,
};
use semsplat::parts::{one_hot, Part, NUM_PARTS};
use semsplat::{GaussianCloud, GaussianPoint};

fn random_cloud(n: usize, seed: u64, parts: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GaussianCloud::new(
        (0..n)
            .map(|_| {
                let mut p = GaussianPoint::isotropic(
                    Vector3::new(rng.random(), rng.random(), rng.random()),
                    0.01,
                    rng.random_range(0..parts),
                );
                p.scale = Vector3::new(
                    rng.random_range(0.01..0.1),
                    rng.random_range(0.01..0.1),
                    rng.random_range(0.01..0.1),
                );
                p.opacity = rng.random_range(0.05..0.95);
                p.color = Vector3::new(rng.random(), rng.random(), rng.random());
                p
            })
            .collect(),
    )
}

#[test]
fn graph_edges_match_exhaustive_neighbors() {
    let cloud = random_cloud(300, 8, 1);
    let pts = cloud.positions();
    let graph = build_graph(&cloud, 6).unwrap();
    for (i, edges) in graph.adjacency.iter().enumerate() {
        let mut order: Vec<usize> = (0..300).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            (pts[a] - pts[i])
                .norm_squared()
                .partial_cmp(&(pts[b] - pts[i]).norm_squared())
                .unwrap()
                .then(a.cmp(&b))
        });
        let got: Vec<usize> = edges.iter().map(|e| e.0).collect();
        assert_eq!(got, order[..6].to_vec());
        for &(j, d) in edges {
            assert!((d - (pts[i] - pts[j]).norm()).abs() < 1e-15);
        }
    }
}

#[test]
fn first_steps_follow_inverse_distance() {
    let graph = PointGraph {
        k: 1,
        adjacency: vec![vec![(1, 1.0)], vec![(0, 1.0), (2, 3.0)], vec![(1, 3.0)]],
    };
    let corpus = random_walks(&graph, 2, 10_000, 17).unwrap();
    let (mut near, mut far) = (0usize, 0usize);
    for w in corpus.walks.iter().filter(|w| w[0] == 1) {
        match w[1] {
            0 => near += 1,
            2 => far += 1,
            other => panic!("stepped to {other}"),
        }
    }
    assert_eq!(near + far, 10_000);
    let ratio = near as f64 / far as f64;
    assert!((ratio - 3.0).abs() <= 0.15, "ratio {ratio}");
    assert_eq!(corpus, random_walks(&graph, 2, 10_000, 17).unwrap());
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[test]
fn two_cliques_separate_in_embedding_space() {
    let mut adjacency = vec![Vec::new(); 40];
    for c in 0..2 {
        for i in 0..20 {
            for j in 0..20 {
                if i != j {
                    adjacency[20 * c + i].push((20 * c + j, 1.0));
                }
            }
        }
    }
    adjacency[0].push((20, 1.0));
    let graph = PointGraph { k: 19, adjacency };
    let corpus = random_walks(&graph, 20, 10, 3).unwrap();
    let config = SkipGramConfig {
        dim: 16,
        epochs: 5,
        seed: 3,
        ..SkipGramConfig::default()
    };
    let emb = train_embeddings(&corpus, &config).unwrap();
    assert_eq!(emb, train_embeddings(&corpus, &config).unwrap());
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
    for a in 0..40 {
        for b in (a + 1)..40 {
            let c = cosine(emb.row(a), emb.row(b));
            if a / 20 == b / 20 {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    let (intra, inter) = (intra / ni as f64, inter / nx as f64);
    assert!(intra > inter + 0.1, "intra {intra} inter {inter}");
}

#[test]
fn contrastive_pairs_pass_an_adjacency_recheck() {
    let mut cloud = random_cloud(100, 5, NUM_PARTS);
    for (i, p) in cloud.points.iter_mut().enumerate().take(2 * NUM_PARTS) {
        p.semantic = one_hot(i % NUM_PARTS);
    }
    let topo = PriorTopology::canonical();
    let batch = sample_contrastive(&cloud, &topo, 4, 9).unwrap();
    let labels: Vec<usize> = cloud.points.iter().map(|p| p.label()).collect();
    let related = |a: usize, b: usize| a == b || topo.adjacency[a][b];
    assert_eq!(batch.anchors.len(), 100);
    for (k, &anchor) in batch.anchors.iter().enumerate() {
        assert_eq!(batch.positives[k].len(), 4);
        assert_eq!(batch.negatives[k].len(), 4);
        for &p in &batch.positives[k] {
            assert_ne!(p, anchor);
            assert!(related(labels[anchor], labels[p]));
        }
        for &n in &batch.negatives[k] {
            assert!(!related(labels[anchor], labels[n]));
        }
        if labels[anchor] == Part::LeftForearm.index() {
            let allowed =
                [Part::LeftForearm, Part::LeftUpperArm, Part::LeftHand].map(|p| p.index());
            assert!(batch.positives[k]
                .iter()
                .all(|&p| allowed.contains(&labels[p])));
        }
        if labels[anchor] == Part::Head.index() {
            let banned = [Part::Head.index(), Part::Neck.index()];
            assert!(batch.negatives[k]
                .iter()
                .all(|&n| !banned.contains(&labels[n])));
        }
    }
    assert_eq!(batch, sample_contrastive(&cloud, &topo, 4, 9).unwrap());
}

fn random_batch(seed: u64, n: usize, m: usize, dim: usize) -> (NodeEmbeddings, ContrastiveBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = NodeEmbeddings {
        dim,
        vectors: (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let mut pick = |a: usize| loop {
        let j = rng.random_range(0..n);
        if j != a {
            break j;
        }
    };
    let positives = (0..n).map(|a| (0..m).map(|_| pick(a)).collect()).collect();
    let negatives = (0..n).map(|a| (0..m).map(|_| pick(a)).collect()).collect();
    let batch = ContrastiveBatch {
        m,
        anchors: (0..n).collect(),
        positives,
        negatives,
    };
    (emb, batch)
}

fn direct_topology_loss(emb: &NodeEmbeddings, batch: &ContrastiveBatch) -> f64 {
    let mut total = 0.0;
    for (k, &a) in batch.anchors.iter().enumerate() {
        for j in 0..batch.m {
            total += cosine(emb.row(a), emb.row(batch.negatives[k][j]))
                - cosine(emb.row(a), emb.row(batch.positives[k][j]));
        }
    }
    total / (batch.m * batch.anchors.len()) as f64
}

#[test]
fn topology_loss_matches_direct_sum_and_finite_differences() {
    let (emb, batch) = random_batch(12, 10, 3, 6);
    let (loss, grads) = topology_loss(&emb, &batch).unwrap();
    assert!((loss - direct_topology_loss(&emb, &batch)).abs() < 1e-12);
    let h = 1e-6;
    for idx in 0..emb.vectors.len() {
        let mut plus = emb.clone();
        plus.vectors[idx] += h;
        let mut minus = emb.clone();
        minus.vectors[idx] -= h;
        let numeric = (direct_topology_loss(&plus, &batch) - direct_topology_loss(&minus, &batch))
            / (2.0 * h);
        let analytic = grads.vectors[idx];
        let diff = (analytic - numeric).abs();
        assert!(
            diff < 1e-6 || diff < 1e-3 * analytic.abs().max(numeric.abs()),
            "{idx}: {analytic} vs {numeric}"
        );
    }
}

#[test]
fn topology_loss_is_bounded_and_scale_invariant() {
    for seed in 0..50 {
        let (emb, batch) = random_batch(100 + seed, 12, 4, 5);
        let (loss, _) = topology_loss(&emb, &batch).unwrap();
        assert!((-2.0..=2.0).contains(&loss));
        let scaled = NodeEmbeddings {
            dim: emb.dim,
            vectors: emb.vectors.iter().map(|v| v * 3.7).collect(),
        };
        assert!((topology_loss(&scaled, &batch).unwrap().0 - loss).abs() < 1e-9);
    }
    let (mut emb, batch) = random_batch(1, 6, 2, 4);
    emb.vectors.iter_mut().for_each(|v| *v = 0.5);
    assert!(topology_loss(&emb, &batch).unwrap().0.abs() < 1e-12);
}

#[test]
fn structural_difference_is_euclidean() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let a: Vec<f64> = (0..ATTRIBUTE_DIM)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let b: Vec<f64> = (0..ATTRIBUTE_DIM)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let oracle = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((structural_difference(&a, &b).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(
            structural_difference(&a, &b).unwrap(),
            structural_difference(&b, &a).unwrap()
        );
    }
    assert!(structural_difference(&[1.0], &[1.0, 2.0]).is_err());
}

fn brute_force_scores(cloud: &GaussianCloud, members: &[usize]) -> Vec<(usize, f64)> {
    let n = members.len();
    let raw: Vec<[f64; ATTRIBUTE_DIM]> = members
        .iter()
        .map(|&i| raw_attributes(&cloud.points[i]))
        .collect();
    let mut z = raw.clone();
    for d in 0..ATTRIBUTE_DIM {
        let mean = raw.iter().map(|a| a[d]).sum::<f64>() / n as f64;
        let var = raw
            .iter()
            .map(|a| (a[d] - mean) * (a[d] - mean))
            .sum::<f64>()
            / n as f64;
        for (zi, a) in z.iter_mut().zip(&raw) {
            zi[d] = if var > 0.0 {
                (a[d] - mean) / var.sqrt()
            } else {
                0.0
            };
        }
    }
    let mut scores: Vec<(usize, f64)> = (0..n)
        .map(|a| {
            let mut total = 0.0;
            for b in 0..n {
                if b != a {
                    total += z[a]
                        .iter()
                        .zip(&z[b])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt();
                }
            }
            (members[a], total / (n - 1) as f64)
        })
        .collect();
    scores.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    scores
}

#[test]
fn ranking_matches_pairwise_brute_force() {
    let cloud = random_cloud(50, 31, 1);
    let clusters = cluster_by_semantics(&cloud);
    assert_eq!(clusters.len(), 1);
    let sel = select_high_frequency(&cloud, &clusters, 0.1).unwrap();
    let oracle = brute_force_scores(&cloud, &clusters[&0]);
    assert_eq!(sel.clusters[0].ranking, oracle);
    let top: Vec<usize> = oracle[..5].iter().map(|r| r.0).collect();
    assert_eq!(sel.clusters[0].selected, top);
}

#[test]
fn selection_ignores_member_order() {
    let cloud = random_cloud(120, 44, 4);
    let clusters = cluster_by_semantics(&cloud);
    let base = select_high_frequency(&cloud, &clusters, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut shuffled: BTreeMap<usize, Vec<usize>> = clusters.clone();
    for members in shuffled.values_mut() {
        members.shuffle(&mut rng);
    }
    assert_eq!(
        select_high_frequency(&cloud, &shuffled, 0.2)
            .unwrap()
            .selected,
        base.selected
    );

    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.shuffle(&mut rng);
    let permuted = GaussianCloud::new(order.iter().map(|&i| cloud.points[i].clone()).collect());
    let sel = select_high_frequency(&permuted, &cluster_by_semantics(&permuted), 0.2).unwrap();
    let mut mapped: Vec<usize> = sel.selected.iter().map(|&i| order[i]).collect();
    mapped.sort_unstable();
    assert_eq!(mapped, base.selected);
}

#[test]
fn opacity_offset_leaves_scores_unchanged() {
    let cloud = random_cloud(60, 2, 1);
    let clusters = cluster_by_semantics(&cloud);
    let base = select_high_frequency(&cloud, &clusters, 0.1).unwrap();
    let mut shifted = cloud.clone();
    shifted.points.iter_mut().for_each(|p| p.opacity += 0.03);
    let moved = select_high_frequency(&shifted, &clusters, 0.1).unwrap();
    for (a, b) in base.clusters[0]
        .ranking
        .iter()
        .zip(&moved.clusters[0].ranking)
    {
        assert_eq!(a.0, b.0);
        assert!((a.1 - b.1).abs() < 1e-9);
    }
}

#[test]
fn outlier_tops_its_cluster_and_full_fraction_selects_all() {
    let mut cloud =
        GaussianCloud::new(vec![GaussianPoint::isotropic(Vector3::zeros(), 0.02, 3); 8]);
    cloud.points[5].color = Vector3::new(0.9, 0.1, 0.1);
    let clusters = cluster_by_semantics(&cloud);
    let sel = select_high_frequency(&cloud, &clusters, 0.1).unwrap();
    assert_eq!(sel.selected, vec![5]);
    let all = select_high_frequency(&cloud, &clusters, 1.0).unwrap();
    assert_eq!(all.selected, (0..8).collect::<Vec<_>>());
    assert!(select_high_frequency(&cloud, &clusters, 0.0).is_err());
}

#[test]
fn isotropic_split_separates_children_by_the_scale() {
    let p = GaussianPoint::isotropic(Vector3::new(1.0, 2.0, 3.0), 0.4, 6);
    let [a, b] = split_point(&p);
    assert!((a.position - b.position - Vector3::new(0.4, 0.0, 0.0)).norm() < 1e-15);
    for c in [&a, &b] {
        assert!((c.scale - Vector3::repeat(0.4 / 1.6)).norm() < 1e-15);
        assert_eq!(
            (c.rotation, c.opacity, c.color, c.semantic),
            (p.rotation, p.opacity, p.color, p.semantic)
        );
    }
    let cloud = GaussianCloud::new(vec![p]);
    let same = densify(&cloud, &HighFreqSelection::default());
    assert_eq!(same.points, cloud.points);
    assert_eq!(same.generation, 1);
}

#[test]
fn repeated_densification_preserves_ancestor_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut cloud = random_cloud(200, 13, 6);
    for p in &mut cloud.points {
        let raw: Vec<f64> = (0..NUM_PARTS).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        for (d, r) in p.semantic.iter_mut().zip(&raw) {
            *d = r / s;
        }
    }
    let initial = cloud.clone();
    let mut ancestor: Vec<usize> = (0..cloud.len()).collect();
    for round in 0..4 {
        let sel = select_high_frequency(&cloud, &cluster_by_semantics(&cloud), 0.1).unwrap();
        let (next, parents) = densify_indexed(&cloud, &sel);
        assert_eq!(next.len(), cloud.len() + sel.len(), "round {round}");
        ancestor = parents.iter().map(|&p| ancestor[p]).collect();
        cloud = next;
    }
    for (p, &a) in cloud.points.iter().zip(&ancestor) {
        assert_eq!(p.semantic, initial.points[a].semantic);
    }
}
