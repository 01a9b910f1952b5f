use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const MIN_CLUSTER_SIZE: usize = 10;

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

/// Mean silhouette coefficient under cosine distance.
///
/// Needs at least two clusters of at least [`MIN_CLUSTER_SIZE`] nonzero
/// vectors each; a vector appearing under two labels is rejected.
pub fn separability(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if embeddings.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    if dim == 0 || embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::Dimension("embeddings must share a positive dimension".into()));
    }
    if embeddings.iter().any(|e| e.iter().all(|&x| x == 0.0) || e.iter().any(|x| !x.is_finite())) {
        return Err(Error::Parameter("cosine distance needs finite nonzero vectors".into()));
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        clusters.entry(l).or_default().push(i);
    }
    if clusters.len() < 2 {
        return Err(Error::Parameter(format!("need at least 2 clusters, got {}", clusters.len())));
    }
    if let Some((l, m)) = clusters.iter().find(|(_, m)| m.len() < MIN_CLUSTER_SIZE) {
        return Err(Error::Parameter(format!(
            "cluster {l} has {} points, fewer than {MIN_CLUSTER_SIZE}",
            m.len()
        )));
    }
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            if labels[i] != labels[j] && embeddings[i] == embeddings[j] {
                return Err(Error::Parameter(format!("points {i} and {j} are identical but labelled differently")));
            }
        }
    }

    let n = embeddings.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(&embeddings[i], &embeddings[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |members: &[usize]| -> f64 {
            let others: Vec<f64> = members.iter().filter(|&&j| j != i).map(|&j| dist[i * n + j]).collect();
            others.iter().sum::<f64>() / others.len() as f64
        };
        let a = mean_to(&clusters[&labels[i]]);
        let b = clusters
            .iter()
            .filter(|(l, _)| **l != labels[i])
            .map(|(_, m)| mean_to(m))
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    Ok(total / n as f64)
}
