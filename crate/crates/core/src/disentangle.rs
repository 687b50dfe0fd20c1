//! Surface disentanglement: per-part clusters, attribute outlier scoring and
//! split densification with semantic inheritance.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{rotation_matrix, GaussianCloud, GaussianPoint};

pub const ATTRIBUTE_DIM: usize = 7;
pub const DEFAULT_TOP_FRACTION: f64 = 0.05;
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

/// Raw attributes before standardization: color, opacity, log-scales.
pub fn raw_attributes(p: &GaussianPoint) -> [f64; ATTRIBUTE_DIM] {
    [
        p.color.x,
        p.color.y,
        p.color.z,
        p.opacity,
        p.scale.x.ln(),
        p.scale.y.ln(),
        p.scale.z.ln(),
    ]
}

/// Points grouped by the argmax of their semantic vector; empty parts are
/// absent and member lists are ascending.
pub fn cluster_by_semantics(cloud: &GaussianCloud) -> BTreeMap<usize, Vec<usize>> {
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        clusters.entry(p.label()).or_default().push(i);
    }
    clusters
}

pub fn structural_difference(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "attribute vectors have dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Standardized attributes of `members` (zero mean, unit population
/// variance per coordinate; constant coordinates become zero).
pub fn standardized_attributes(
    cloud: &GaussianCloud,
    members: &[usize],
) -> Vec<[f64; ATTRIBUTE_DIM]> {
    let raw: Vec<[f64; ATTRIBUTE_DIM]> = members
        .iter()
        .map(|&i| raw_attributes(&cloud.points[i]))
        .collect();
    let n = raw.len() as f64;
    let mut out = raw.clone();
    for d in 0..ATTRIBUTE_DIM {
        let mean = raw.iter().map(|a| a[d]).sum::<f64>() / n;
        let var = raw
            .iter()
            .map(|a| (a[d] - mean) * (a[d] - mean))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        for (o, a) in out.iter_mut().zip(&raw) {
            o[d] = if std > 0.0 { (a[d] - mean) / std } else { 0.0 };
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScoreMode {
    /// Highest mean distance to the rest of the cluster.
    #[default]
    Difference,
    /// Highest mean similarity, i.e. the negated distance.
    Similarity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterRanking {
    pub part: usize,
    /// `(node, score)` by descending score, ties by ascending node.
    pub ranking: Vec<(usize, f64)>,
    pub selected: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct HighFreqSelection {
    pub clusters: Vec<ClusterRanking>,
    /// Union of every cluster's selection, ascending.
    pub selected: Vec<usize>,
}

impl HighFreqSelection {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

pub fn select_high_frequency(
    cloud: &GaussianCloud,
    clusters: &BTreeMap<usize, Vec<usize>>,
    top_fraction: f64,
) -> Result<HighFreqSelection> {
    select_high_frequency_with(cloud, clusters, top_fraction, ScoreMode::Difference)
}

pub fn select_high_frequency_with(
    cloud: &GaussianCloud,
    clusters: &BTreeMap<usize, Vec<usize>>,
    top_fraction: f64,
    mode: ScoreMode,
) -> Result<HighFreqSelection> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top_fraction must be in (0, 1], got {top_fraction}"
        )));
    }
    let rankings: Vec<ClusterRanking> = clusters
        .par_iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|(&part, members)| {
            let mut members = members.clone();
            members.sort_unstable();
            let attrs = standardized_attributes(cloud, &members);
            let n = members.len();
            let mut ranking: Vec<(usize, f64)> = (0..n)
                .map(|a| {
                    let total: f64 = (0..n)
                        .filter(|&b| b != a)
                        .map(|b| {
                            structural_difference(&attrs[a], &attrs[b]).expect("equal dimensions")
                        })
                        .sum();
                    let score = total / (n - 1) as f64;
                    let score = match mode {
                        ScoreMode::Difference => score,
                        ScoreMode::Similarity => -score,
                    };
                    (members[a], score)
                })
                .collect();
            ranking.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            let count = ((top_fraction * n as f64).ceil() as usize).min(n);
            let selected = ranking[..count].iter().map(|r| r.0).collect();
            ClusterRanking {
                part,
                ranking,
                selected,
            }
        })
        .collect();
    let mut selected: Vec<usize> = rankings
        .iter()
        .flat_map(|r| r.selected.iter().copied())
        .collect();
    selected.sort_unstable();
    Ok(HighFreqSelection {
        clusters: rankings,
        selected,
    })
}

/// The two children of a split: offset ±half the largest standard
/// deviation along its axis (lowest axis index on ties), scales / 1.6.
pub fn split_point(p: &GaussianPoint) -> [GaussianPoint; 2] {
    let mut axis = 0;
    for a in 1..3 {
        if p.scale[a] > p.scale[axis] {
            axis = a;
        }
    }
    let direction = rotation_matrix(&p.rotation).column(axis).into_owned();
    let offset = direction * (0.5 * p.scale[axis]);
    let mut plus = p.clone();
    plus.position += offset;
    plus.scale /= SPLIT_SCALE_DIVISOR;
    let mut minus = plus.clone();
    minus.position = p.position - offset;
    [plus, minus]
}

/// Splits every selected point in place and returns the source index of
/// each output point.
pub fn densify_indexed(
    cloud: &GaussianCloud,
    selection: &HighFreqSelection,
) -> (GaussianCloud, Vec<usize>) {
    let mut chosen = vec![false; cloud.len()];
    for &i in &selection.selected {
        chosen[i] = true;
    }
    let mut points = Vec::with_capacity(cloud.len() + selection.selected.len());
    let mut parents = Vec::with_capacity(points.capacity());
    for (i, p) in cloud.points.iter().enumerate() {
        if chosen[i] {
            points.extend(split_point(p));
            parents.extend([i, i]);
        } else {
            points.push(p.clone());
            parents.push(i);
        }
    }
    (
        GaussianCloud {
            points,
            generation: cloud.generation + 1,
        },
        parents,
    )
}

pub fn densify(cloud: &GaussianCloud, selection: &HighFreqSelection) -> GaussianCloud {
    densify_indexed(cloud, selection).0
}

/// Writes `cluster,node,score` rows for every ranked node.
pub fn selection_csv(selection: &HighFreqSelection) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidInput(e.to_string());
    writer
        .write_record(["cluster", "node", "score", "selected"])
        .map_err(io)?;
    for c in &selection.clusters {
        for &(node, score) in &c.ranking {
            let sel = c.selected.contains(&node);
            writer
                .write_record([
                    c.part.to_string(),
                    node.to_string(),
                    format!("{score:.9}"),
                    (sel as u8).to_string(),
                ])
                .map_err(io)?;
        }
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
