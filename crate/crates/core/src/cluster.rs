//! Cosine k-means over segment embeddings and internal validity indices.
//!
//! Embeddings are standardized per dimension, then projected to the unit
//! sphere. On unit rows `|x - y|^2 = 2 (1 - cos(x, y))`, so ordinary Lloyd
//! iterations minimize a cosine objective.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LapsError, Result};
use crate::seed::keyed_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub data: Array2<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Zero-mean, unit-variance columns (population variance).
///
/// A column with no spread is copied through untouched and reported with
/// mean 0 and std 1, so `(x - mean) / std` still describes the transform.
pub fn standardize(x: &Array2<f64>) -> Result<Standardized> {
    let n = x.nrows();
    if n < 2 {
        return Err(LapsError::TooShort(format!(
            "standardize needs at least 2 rows, got {n}"
        )));
    }
    let mut data = x.clone();
    let mut means = Vec::with_capacity(x.ncols());
    let mut stds = Vec::with_capacity(x.ncols());
    for mut col in data.columns_mut() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            means.push(0.0);
            stds.push(1.0);
        } else {
            col.mapv_inplace(|v| (v - mean) / std);
            means.push(mean);
            stds.push(std);
        }
    }
    Ok(Standardized { data, means, stds })
}

/// Scales every row to unit length. `ids[i]` names row `i` in errors.
pub fn l2_normalize_rows(x: &Array2<f64>, ids: &[String]) -> Result<Array2<f64>> {
    let mut out = x.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            let id = ids.get(i).cloned().unwrap_or_else(|| format!("row {i}"));
            return Err(LapsError::DegenerateEmbedding(id));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 3,
            seed: 0,
            n_init: 10,
            max_iter: 300,
        }
    }
}

/// Result of one k-means run (or the best of several restarts).
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Objective after each assignment step, in order.
    pub history: Vec<f64>,
    /// Restart that produced this fit.
    pub restart: usize,
}

fn plus_plus_init<R: Rng>(x: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, centroids.row(0)))
        .collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // Every point already coincides with a centre.
            Err(_) => rng.random_range(0..n),
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (d, r) in d2.iter_mut().zip(x.rows()) {
            *d = d.min(sq_dist(r, centroids.row(c)));
        }
    }
    centroids
}

fn assign(x: &Array2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    x.rows()
        .into_iter()
        .map(|r| {
            let mut best = (0, f64::INFINITY);
            for (c, cen) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(r, cen);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

/// Gives each empty cluster the point farthest from its own centroid.
fn repair_empty(
    x: &Array2<f64>,
    centroids: &mut Array2<f64>,
    labels: &mut [usize],
    dists: &mut [f64],
) {
    let k = centroids.nrows();
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let far = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n leaves a cluster with a spare point");
        sizes[labels[far]] -= 1;
        sizes[empty] += 1;
        labels[far] = empty;
        dists[far] = 0.0;
        centroids.row_mut(empty).assign(&x.row(far));
    }
}

fn means(x: &Array2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (r, &l) in x.rows().into_iter().zip(labels) {
        let mut s = sums.row_mut(l);
        s += &r;
        counts[l] += 1;
    }
    for (mut s, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            s /= c as f64;
        }
    }
    sums
}

fn lloyd(x: &Array2<f64>, k: usize, max_iter: usize, seed: u64, restart: usize) -> KMeansFit {
    let mut rng = keyed_rng(seed, "kmeans", restart as u64);
    let mut centroids = plus_plus_init(x, k, &mut rng);
    let (mut labels, mut dists) = assign(x, &centroids);
    repair_empty(x, &mut centroids, &mut labels, &mut dists);
    let mut history = vec![dists.iter().sum()];
    for _ in 0..max_iter {
        centroids = means(x, &labels, k);
        let (mut next, mut d) = assign(x, &centroids);
        repair_empty(x, &mut centroids, &mut next, &mut d);
        history.push(d.iter().sum());
        let done = next == labels;
        labels = next;
        if done {
            break;
        }
    }
    let centroids = means(x, &labels, k);
    let inertia = x
        .rows()
        .into_iter()
        .zip(&labels)
        .map(|(r, &l)| sq_dist(r, centroids.row(l)))
        .sum();
    KMeansFit {
        assignments: labels,
        centroids,
        inertia,
        history,
        restart,
    }
}

/// Lloyd's algorithm with k-means++ seeding; the lowest-inertia restart wins,
/// ties going to the earliest restart.
pub fn kmeans(x: &Array2<f64>, cfg: &KMeansConfig) -> Result<KMeansFit> {
    let n = x.nrows();
    if cfg.k < 1 || cfg.k > n {
        return Err(LapsError::invalid(
            "k-means",
            format!("k = {} with {n} points", cfg.k),
        ));
    }
    if cfg.n_init < 1 {
        return Err(LapsError::Config("n_init must be >= 1".into()));
    }
    let fits: Vec<KMeansFit> = (0..cfg.n_init)
        .into_par_iter()
        .map(|i| lloyd(x, cfg.k, cfg.max_iter, cfg.seed, i))
        .collect();
    fits.into_iter()
        .reduce(|best, f| if f.inertia < best.inertia { f } else { best })
        .ok_or_else(|| LapsError::Internal("no k-means restarts ran".into()))
}

fn cluster_sizes(labels: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut sizes = vec![0usize; k];
    for &l in labels {
        *sizes.get_mut(l).ok_or_else(|| {
            LapsError::invalid("assignments", format!("label {l} outside [0, {k})"))
        })? += 1;
    }
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(LapsError::invalid(
            "assignments",
            format!("cluster {c} is empty"),
        ));
    }
    Ok(sizes)
}

/// Mean silhouette with Euclidean distance. Members of singleton clusters
/// score 0, as does any point with `a = b = 0`.
pub fn silhouette(x: &Array2<f64>, labels: &[usize], k: usize) -> Result<f64> {
    if k < 2 {
        return Err(LapsError::invalid(
            "silhouette",
            format!("needs k >= 2, got {k}"),
        ));
    }
    if labels.len() != x.nrows() {
        return Err(LapsError::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            x.nrows()
        )));
    }
    let sizes = cluster_sizes(labels, k)?;
    let total: f64 = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, r) in x.rows().into_iter().enumerate() {
                if j != i {
                    sums[labels[j]] += sq_dist(x.row(i), r).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / x.nrows() as f64)
}

/// Ratio of between- to within-cluster dispersion, each per degree of
/// freedom. Returns `+inf` when clusters are tight points but distinct.
pub fn calinski_harabasz(x: &Array2<f64>, labels: &[usize], k: usize) -> Result<f64> {
    let n = x.nrows();
    if k < 2 || k >= n {
        return Err(LapsError::invalid(
            "calinski-harabasz",
            format!("needs 2 <= k < n, got k = {k}, n = {n}"),
        ));
    }
    if labels.len() != n {
        return Err(LapsError::Shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let sizes = cluster_sizes(labels, k)?;
    let centroids = means(x, labels, k);
    let grand: Array1<f64> = x.mean_axis(Axis(0)).expect("n >= 1");
    let between: f64 = centroids
        .rows()
        .into_iter()
        .zip(&sizes)
        .map(|(c, &s)| s as f64 * sq_dist(c, grand.view()))
        .sum();
    let within: f64 = x
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(r, &l)| sq_dist(r, centroids.row(l)))
        .sum();
    Ok(match (within == 0.0, between > 0.0) {
        (true, true) => f64::INFINITY,
        (true, false) => 0.0,
        _ => (between / (k - 1) as f64) / (within / (n - k) as f64),
    })
}

/// Fraction of points whose label is the majority label of their cluster.
pub fn purity<L: Ord>(assignments: &[usize], labels: &[L]) -> f64 {
    if assignments.is_empty() {
        return 0.0;
    }
    let mut table: BTreeMap<usize, BTreeMap<&L, usize>> = BTreeMap::new();
    for (&a, l) in assignments.iter().zip(labels) {
        *table.entry(a).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = table
        .values()
        .map(|m| m.values().copied().max().unwrap_or(0))
        .sum();
    hits as f64 / assignments.len() as f64
}

pub(crate) mod inf_sentinel {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if *x == f64::INFINITY => s.serialize_str("inf"),
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Repr::Text(t)) => Err(de::Error::custom(format!(
                "expected number or \"inf\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    /// Primitive id to cluster index.
    pub assignments: BTreeMap<String, usize>,
    /// Centroids in the normalized space, one row per cluster.
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Absent when `k < 2`.
    pub silhouette: Option<f64>,
    /// Absent unless `2 <= k < n`; `"inf"` when within-cluster dispersion is zero.
    #[serde(with = "inf_sentinel")]
    pub calinski_harabasz: Option<f64>,
}

impl ClusterReport {
    pub fn members(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.k];
        for (id, &c) in &self.assignments {
            out[c].push(id.as_str());
        }
        out
    }
}

/// Standardize, normalize, cluster and score raw embeddings.
pub fn cluster_embeddings(
    ids: &[String],
    raw: &Array2<f64>,
    cfg: &KMeansConfig,
) -> Result<ClusterReport> {
    if ids.len() != raw.nrows() {
        return Err(LapsError::Shape(format!(
            "{} ids for {} embeddings",
            ids.len(),
            raw.nrows()
        )));
    }
    let std = standardize(raw)?;
    let x = l2_normalize_rows(&std.data, ids)?;
    let fit = kmeans(&x, cfg)?;
    let n = x.nrows();
    let silhouette = (cfg.k >= 2)
        .then(|| silhouette(&x, &fit.assignments, cfg.k))
        .transpose()?;
    let calinski_harabasz = (cfg.k >= 2 && cfg.k < n)
        .then(|| calinski_harabasz(&x, &fit.assignments, cfg.k))
        .transpose()?;
    Ok(ClusterReport {
        k: cfg.k,
        seed: cfg.seed,
        n_init: cfg.n_init,
        assignments: ids
            .iter()
            .cloned()
            .zip(fit.assignments.iter().copied())
            .collect(),
        centroids: fit
            .centroids
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        inertia: fit.inertia,
        silhouette,
        calinski_harabasz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn two_point_standardization() {
        let s = standardize(&array![[0.0], [2.0]]).unwrap();
        assert_eq!(s.data, array![[-1.0], [1.0]]);
        assert_eq!((s.means[0], s.stds[0]), (1.0, 1.0));
    }

    #[test]
    fn constant_column_is_unchanged() {
        let x = array![[5.0, 0.0], [5.0, 4.0], [5.0, 8.0]];
        let s = standardize(&x).unwrap();
        assert_eq!(s.data.column(0), x.column(0));
        assert!(standardize(&array![[1.0]]).is_err());
    }

    #[test]
    fn normalize_rows() {
        let x = l2_normalize_rows(&array![[3.0, 4.0]], &ids(1)).unwrap();
        assert_eq!(x, array![[0.6, 0.8]]);
        assert_eq!(l2_normalize_rows(&x, &ids(1)).unwrap(), x);
        let err = l2_normalize_rows(&array![[1.0, 0.0], [0.0, 0.0]], &ids(2)).unwrap_err();
        assert!(err.to_string().contains("p1"), "{err}");
    }

    #[test]
    fn one_point_per_cluster() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let fit = kmeans(
            &x,
            &KMeansConfig {
                k: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut seen = fit.assignments.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn antipodal_duplicates_split() {
        let x = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]];
        let fit = kmeans(
            &x,
            &KMeansConfig {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let a = &fit.assignments;
        assert!(a[0] == a[1] && a[1] == a[2] && a[3] == a[4] && a[0] != a[3]);
        assert_eq!(silhouette(&x, a, 2).unwrap(), 1.0);
        assert_eq!(calinski_harabasz(&x, a, 2).unwrap(), f64::INFINITY);
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let x = array![[1.0, 0.0]];
        assert!(kmeans(
            &x,
            &KMeansConfig {
                k: 2,
                ..Default::default()
            }
        )
        .is_err());
        assert!(kmeans(
            &x,
            &KMeansConfig {
                k: 0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn all_duplicates_silhouette_is_zero() {
        let x = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        assert_eq!(silhouette(&x, &[0, 0, 1, 1], 2).unwrap(), 0.0);
        assert_eq!(calinski_harabasz(&x, &[0, 0, 1, 1], 2).unwrap(), 0.0);
        // Duplicates still let k-means fill every cluster.
        let fit = kmeans(
            &x,
            &KMeansConfig {
                k: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            cluster_sizes(&fit.assignments, 3)
                .unwrap()
                .iter()
                .sum::<usize>(),
            4
        );
    }

    #[test]
    fn singleton_scores_zero() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [0.0, 1.2]];
        let s = silhouette(&x, &[0, 1, 1], 2).unwrap();
        // Point 0 is alone; points 1 and 2 have a = 0.2 and b = 1 or 1.2.
        let expected = (0.0 + 0.8 / 1.0 + 1.0 / 1.2) / 3.0;
        assert!((s - expected).abs() < 1e-12);
        assert!(silhouette(&x, &[0, 0, 0], 1).is_err());
    }

    #[test]
    fn six_point_calinski_harabasz() {
        // Clusters {(0,0),(0,2),(2,0)} and {(10,0),(10,2),(12,0)}.
        let x = array![
            [0.0, 0.0],
            [0.0, 2.0],
            [2.0, 0.0],
            [10.0, 0.0],
            [10.0, 2.0],
            [12.0, 0.0]
        ];
        let labels = [0, 0, 0, 1, 1, 1];
        // Centroids (2/3, 2/3) and (32/3, 2/3); grand mean (17/3, 2/3).
        // B = 3 * 25 + 3 * 25 = 150 and W = 16/3 per cluster.
        let within = 2.0 * (4.0 / 9.0 * 2.0 + (4.0 / 9.0 + 16.0 / 9.0) * 2.0);
        let expected = (150.0 / 1.0) / (within / 4.0);
        assert!((calinski_harabasz(&x, &labels, 2).unwrap() - expected).abs() < 1e-9);
        assert!(calinski_harabasz(&x, &labels, 6).is_err());
    }

    #[test]
    fn report_serializes_inf_as_string() {
        let x = array![
            [1.0, 0.0, 0.2],
            [1.0, 0.0, 0.2],
            [-1.0, 0.5, 0.0],
            [-1.0, 0.5, 0.0]
        ];
        let report = cluster_embeddings(
            &ids(4),
            &x,
            &KMeansConfig {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"calinski_harabasz\":\"inf\""), "{json}");
        let back: ClusterReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(report.members().iter().map(Vec::len).sum::<usize>(), 4);
    }

    #[test]
    fn purity_counts_majorities() {
        assert_eq!(purity(&[0, 0, 1, 1], &["a", "a", "b", "a"]), 0.75);
        assert_eq!(purity::<&str>(&[], &[]), 0.0);
    }
}
