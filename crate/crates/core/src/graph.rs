//! Inter-joint graph: kNN graph over Gaussian centers, distance-weighted
//! random walks, skip-gram node embeddings, contrastive pair sampling
//! against the body-part prior, and the cosine topology loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::body::PriorTopology;
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::knn::SpatialIndex;
use crate::parts::{Part, NUM_PARTS};

/// Smallest edge weight used when turning distances into walk probabilities.
const MIN_WEIGHT: f64 = 1e-12;

/// Directed kNN graph; `adjacency[i]` holds `(neighbor, distance)` pairs in
/// ascending distance order.
#[derive(Clone, Debug, PartialEq)]
pub struct PointGraph {
    pub k: usize,
    pub adjacency: Vec<Vec<(usize, f64)>>,
}

impl PointGraph {
    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    /// Out-edges plus reversed in-edges, deduplicated and sorted by index.
    pub fn undirected(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj: Vec<Vec<(usize, f64)>> = self.adjacency.clone();
        for (i, edges) in self.adjacency.iter().enumerate() {
            for &(j, w) in edges {
                adj[j].push((i, w));
            }
        }
        for edges in adj.iter_mut() {
            edges.sort_by_key(|e| e.0);
            edges.dedup_by_key(|e| e.0);
        }
        adj
    }
}

pub fn build_graph(cloud: &GaussianCloud, k: usize) -> Result<PointGraph> {
    let positions = cloud.positions();
    let index = SpatialIndex::build(&positions);
    let table = index.table(k)?;
    let adjacency = table
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .map(|j| (j, (positions[i] - positions[j]).norm()))
                .collect()
        })
        .collect();
    Ok(PointGraph { k, adjacency })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkCorpus {
    pub walks: Vec<Vec<usize>>,
    pub length: usize,
    pub walks_per_node: usize,
    pub seed: u64,
    pub num_nodes: usize,
}

fn node_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Walks that step to a neighbor with probability proportional to the
/// inverse edge length. Each source node draws from its own RNG stream.
pub fn random_walks(
    graph: &PointGraph,
    length: usize,
    walks_per_node: usize,
    seed: u64,
) -> Result<WalkCorpus> {
    if length < 2 || walks_per_node == 0 {
        return Err(Error::InvalidArgument(
            "walks need length >= 2 and at least one walk per node".into(),
        ));
    }
    let adj = graph.undirected();
    let inverse: Vec<Vec<f64>> = adj
        .iter()
        .map(|edges| {
            let mut acc = 0.0;
            edges
                .iter()
                .map(|&(_, w)| {
                    acc += 1.0 / w.max(MIN_WEIGHT);
                    acc
                })
                .collect()
        })
        .collect();
    let walks: Vec<Vec<usize>> = (0..adj.len())
        .into_par_iter()
        .flat_map_iter(|start| {
            let mut rng = node_rng(seed, start as u64);
            let adj = &adj;
            let inverse = &inverse;
            (0..walks_per_node)
                .map(move |_| {
                    let mut walk = Vec::with_capacity(length);
                    walk.push(start);
                    let mut current = start;
                    for _ in 1..length {
                        let cumulative = &inverse[current];
                        let Some(&total) = cumulative.last() else {
                            break;
                        };
                        let r = rng.random::<f64>() * total;
                        let pick = cumulative
                            .partition_point(|&c| c <= r)
                            .min(cumulative.len() - 1);
                        current = adj[current][pick].0;
                        walk.push(current);
                    }
                    walk
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(WalkCorpus {
        walks,
        length,
        walks_per_node,
        seed,
        num_nodes: adj.len(),
    })
}

/// Row-major `n × dim` embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings {
    pub dim: usize,
    pub vectors: Vec<f64>,
}

impl NodeEmbeddings {
    pub fn zeros(n: usize, dim: usize) -> Self {
        NodeEmbeddings {
            dim,
            vectors: vec![0.0; n * dim],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Keeps the listed rows in order; used when points are pruned or split.
    pub fn gather(&self, rows: &[usize]) -> NodeEmbeddings {
        let mut vectors = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            vectors.extend_from_slice(self.row(r));
        }
        NodeEmbeddings {
            dim: self.dim,
            vectors,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 32,
            window: 5,
            negatives: 5,
            epochs: 3,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

/// Uniform `[-0.5, 0.5) / dim` initialization of the input vectors.
pub fn initial_embeddings(num_nodes: usize, dim: usize, seed: u64) -> NodeEmbeddings {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = (0..num_nodes * dim)
        .map(|_| (rng.random::<f64>() - 0.5) / dim as f64)
        .collect();
    NodeEmbeddings { dim, vectors }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Skip-gram with negative sampling over walk windows. Negatives follow the
/// unigram distribution raised to 3/4; the learning rate decays linearly.
pub fn train_embeddings(corpus: &WalkCorpus, config: &SkipGramConfig) -> Result<NodeEmbeddings> {
    let dim = config.dim;
    if dim < 2 {
        return Err(Error::InvalidArgument(
            "embedding dimension must be at least 2".into(),
        ));
    }
    if corpus.walks.is_empty() || corpus.num_nodes == 0 {
        return Err(Error::InvalidArgument("walk corpus is empty".into()));
    }
    let n = corpus.num_nodes;
    let mut input = initial_embeddings(n, dim, config.seed);
    if config.epochs == 0 {
        return Ok(input);
    }
    let mut output = vec![0.0; n * dim];

    let mut counts = vec![0.0f64; n];
    for walk in &corpus.walks {
        for &v in walk {
            counts[v] += 1.0;
        }
    }
    let weights: Vec<f64> = counts.iter().map(|c| c.powf(0.75)).collect();
    let noise = WeightedAliasIndex::new(weights)
        .map_err(|e| Error::InvalidArgument(format!("negative sampling table: {e}")))?;

    let total_tokens: usize = corpus.walks.iter().map(|w| w.len()).sum::<usize>() * config.epochs;
    let mut processed = 0usize;
    let mut rng = node_rng(config.seed, u64::MAX);
    let mut hidden_grad = vec![0.0; dim];
    for _ in 0..config.epochs {
        for walk in &corpus.walks {
            for (pos, &center) in walk.iter().enumerate() {
                let lr =
                    config.learning_rate * (1.0 - processed as f64 / total_tokens as f64).max(1e-4);
                processed += 1;
                let reach = if config.window > 1 {
                    rng.random_range(1..=config.window)
                } else {
                    1
                };
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(walk.len() - 1);
                for (ctx_pos, &context) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    hidden_grad.iter_mut().for_each(|g| *g = 0.0);
                    let h = &input.vectors[context * dim..(context + 1) * dim];
                    for s in 0..=config.negatives {
                        let (target, label) = if s == 0 {
                            (center, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == center {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let out = &mut output[target * dim..(target + 1) * dim];
                        let dot: f64 = h.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                        let g = lr * (label - sigmoid(dot));
                        for ((hg, o), hv) in hidden_grad.iter_mut().zip(out.iter_mut()).zip(h) {
                            *hg += g * *o;
                            *o += g * hv;
                        }
                    }
                    for (v, g) in input.row_mut(context).iter_mut().zip(&hidden_grad) {
                        *v += g;
                    }
                }
            }
        }
    }
    Ok(input)
}

/// Anchors with `m` positives (same or prior-adjacent part, anchor itself
/// excluded) and `m` negatives (every other part) each.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub m: usize,
    pub anchors: Vec<usize>,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

/// Samples uniformly with replacement for every point as an anchor.
pub fn sample_contrastive(
    cloud: &GaussianCloud,
    topology: &PriorTopology,
    m: usize,
    seed: u64,
) -> Result<ContrastiveBatch> {
    let labels: Vec<usize> = cloud.points.iter().map(|p| p.label()).collect();
    sample_contrastive_labels(&labels, topology, m, seed)
}

pub fn sample_contrastive_labels(
    labels: &[usize],
    topology: &PriorTopology,
    m: usize,
    seed: u64,
) -> Result<ContrastiveBatch> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "contrastive sample count must be positive".into(),
        ));
    }
    let mut positive_pool: Vec<Vec<usize>> = vec![Vec::new(); NUM_PARTS];
    let mut negative_pool: Vec<Vec<usize>> = vec![Vec::new(); NUM_PARTS];
    for (i, &l) in labels.iter().enumerate() {
        for part in 0..NUM_PARTS {
            if topology.related(part, l) {
                positive_pool[part].push(i);
            } else {
                negative_pool[part].push(i);
            }
        }
    }
    let mut present = [false; NUM_PARTS];
    for &l in labels {
        present[l] = true;
    }
    for part in (0..NUM_PARTS).filter(|&p| present[p]) {
        let name = Part::ALL[part].name().to_string();
        if positive_pool[part].len() < 2 {
            return Err(Error::Sampling {
                part: name,
                kind: "positive",
            });
        }
        if negative_pool[part].is_empty() {
            return Err(Error::Sampling {
                part: name,
                kind: "negative",
            });
        }
    }
    let (positives, negatives): (Vec<Vec<usize>>, Vec<Vec<usize>>) = labels
        .par_iter()
        .enumerate()
        .map(|(anchor, &part)| {
            let mut rng = node_rng(seed, anchor as u64);
            let pos_pool = &positive_pool[part];
            let own = pos_pool
                .binary_search(&anchor)
                .expect("anchor is in its own pool");
            let positives = (0..m)
                .map(|_| {
                    let r = rng.random_range(0..pos_pool.len() - 1);
                    pos_pool[if r >= own { r + 1 } else { r }]
                })
                .collect();
            let neg_pool = &negative_pool[part];
            let negatives = (0..m)
                .map(|_| neg_pool[rng.random_range(0..neg_pool.len())])
                .collect();
            (positives, negatives)
        })
        .unzip();
    Ok(ContrastiveBatch {
        m,
        anchors: (0..labels.len()).collect(),
        positives,
        negatives,
    })
}

/// Cosine similarity and its gradients with respect to both arguments; a
/// zero-norm argument gives zero similarity and zero gradients.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cos = dot / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - cos * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - cos * y / (nb * nb))
        .collect();
    (cos, ga, gb)
}

/// Mean over anchors and samples of `cos(t_i, t⁻) - cos(t_i, t⁺)`, with
/// gradients for the whole embedding table.
pub fn topology_loss(
    embeddings: &NodeEmbeddings,
    batch: &ContrastiveBatch,
) -> Result<(f64, NodeEmbeddings)> {
    let n = embeddings.len();
    if batch.positives.len() != batch.anchors.len() || batch.negatives.len() != batch.anchors.len()
    {
        return Err(Error::InvalidArgument(
            "batch sample lists do not match anchors".into(),
        ));
    }
    let bad = batch
        .anchors
        .iter()
        .chain(batch.positives.iter().flatten())
        .chain(batch.negatives.iter().flatten())
        .any(|&i| i >= n);
    if bad {
        return Err(Error::InvalidArgument(format!(
            "batch refers to nodes outside the {n}-row embedding table"
        )));
    }
    let mut grads = NodeEmbeddings::zeros(n, embeddings.dim);
    if batch.anchors.is_empty() {
        return Ok((0.0, grads));
    }
    let norm = 1.0 / (batch.m * batch.anchors.len()) as f64;
    let mut loss = 0.0;
    for (a, &anchor) in batch.anchors.iter().enumerate() {
        let ta = embeddings.row(anchor);
        let samples = batch.negatives[a]
            .iter()
            .map(|&j| (j, norm))
            .chain(batch.positives[a].iter().map(|&j| (j, -norm)));
        for (j, sign) in samples {
            let (cos, ga, gb) = cosine_with_grad(ta, embeddings.row(j));
            loss += sign * cos;
            for (g, v) in grads.row_mut(anchor).iter_mut().zip(&ga) {
                *g += sign * v;
            }
            for (g, v) in grads.row_mut(j).iter_mut().zip(&gb) {
                *g += sign * v;
            }
        }
    }
    Ok((loss, grads))
}
