//! Intra-cluster semantic similarity.
//!
//! Each primitive gets one descriptor pooled from externally computed frame
//! features. Within every cluster a random set of distinct pairs is scored by
//! cosine similarity and compared with pairs drawn from the whole corpus.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{LapsError, Result};
use crate::io::{FrameEmbeddingSet, Matrix};
use crate::seed::keyed_rng;

pub const DEFAULT_PAIR_BUDGET: usize = 2000;

/// `normalize(sum_f |u_f| * u_f / |u_f|)`, which is `normalize(sum_f u_f)`.
pub fn norm_weighted_pool(frames: &Matrix) -> Result<Vec<f64>> {
    if frames.rows == 0 {
        return Err(LapsError::invalid("frame set", "no frames to pool"));
    }
    let mut acc = vec![0.0f64; frames.cols];
    for (f, row) in frames.iter_rows().enumerate() {
        let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(LapsError::invalid(
                "frame set",
                format!("frame {f} is a zero vector"),
            ));
        }
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += norm * (v as f64 / norm);
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(LapsError::invalid(
            "frame set",
            "pooled frames cancel to zero",
        ));
    }
    acc.iter_mut().for_each(|v| *v /= norm);
    Ok(acc)
}

/// Descriptor for every primitive in the set, keyed by primitive id.
pub fn descriptors(set: &FrameEmbeddingSet) -> Result<BTreeMap<String, Vec<f64>>> {
    set.frames
        .iter()
        .map(|(id, m)| {
            norm_weighted_pool(m)
                .map(|v| (id.clone(), v))
                .map_err(|e| LapsError::invalid("frame set", format!("{id}: {e}")))
        })
        .collect()
}

/// Maps `r` in `[0, n(n-1)/2)` to the `r`-th pair `(i, j)`, `i < j`, in
/// row-major order.
fn unrank_pair(mut r: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    while r >= n - 1 - i {
        r -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + r)
}

/// Uniformly samples up to `budget` distinct unordered pairs of `0..members`
/// without replacement. `stream` keys the random stream so that different
/// clusters draw independently.
pub fn sample_pairs(
    members: usize,
    budget: usize,
    seed: u64,
    stream: &str,
    cluster: usize,
) -> Result<Vec<(usize, usize)>> {
    if members < 2 {
        return Err(LapsError::ClusterTooSmall { cluster, members });
    }
    let total = members * (members - 1) / 2;
    let mut pairs: Vec<(usize, usize)> = if budget >= total {
        (0..total).map(|r| unrank_pair(r, members)).collect()
    } else {
        let mut rng = keyed_rng(seed, stream, cluster as u64);
        index::sample(&mut rng, total, budget)
            .into_iter()
            .map(|r| unrank_pair(r, members))
            .collect()
    };
    pairs.sort_unstable();
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    /// Absent when no pairs were scored.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_pairs: usize,
}

impl PairStats {
    fn of(cosines: &[f64]) -> Self {
        if cosines.is_empty() {
            return PairStats {
                mean: None,
                std: None,
                n_pairs: 0,
            };
        }
        let n = cosines.len() as f64;
        let mean = cosines.iter().sum::<f64>() / n;
        let var = cosines.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
        PairStats {
            mean: Some(mean),
            std: Some(var.sqrt()),
            n_pairs: cosines.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterIcss {
    pub cluster: usize,
    pub members: usize,
    #[serde(flatten)]
    pub stats: PairStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcssReport {
    pub per_cluster: Vec<ClusterIcss>,
    pub overall: PairStats,
    pub baseline: PairStats,
    pub pair_budget: usize,
    pub seed: u64,
}

/// One scored pair, for audit output.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    /// Cluster index, or `None` for baseline pairs.
    pub cluster: Option<usize>,
    pub a: String,
    pub b: String,
    pub cosine: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

fn score(
    ids: &[&str],
    pairs: &[(usize, usize)],
    desc: &BTreeMap<String, Vec<f64>>,
    cluster: Option<usize>,
) -> Result<Vec<PairRecord>> {
    let lookup = |id: &str| {
        desc.get(id).ok_or_else(|| {
            LapsError::invalid(
                "frame set",
                format!("no frame embeddings for primitive {id}"),
            )
        })
    };
    pairs
        .iter()
        .map(|&(i, j)| {
            Ok(PairRecord {
                cluster,
                a: ids[i].to_string(),
                b: ids[j].to_string(),
                cosine: cosine(lookup(ids[i])?, lookup(ids[j])?),
            })
        })
        .collect()
}

/// Scores sampled pairs inside each cluster and across the corpus.
///
/// `clusters[c]` lists the primitive ids in cluster `c`. Clusters with fewer
/// than two members report zero pairs.
pub fn icss(
    desc: &BTreeMap<String, Vec<f64>>,
    clusters: &[Vec<&str>],
    budget: usize,
    seed: u64,
) -> Result<(IcssReport, Vec<PairRecord>)> {
    if budget == 0 {
        return Err(LapsError::Config("ICSS pair budget must be >= 1".into()));
    }
    let mut audit = Vec::new();
    let mut per_cluster = Vec::with_capacity(clusters.len());
    for (c, members) in clusters.iter().enumerate() {
        let records = match sample_pairs(members.len(), budget, seed, "icss.cluster", c) {
            Ok(pairs) => score(members, &pairs, desc, Some(c))?,
            Err(LapsError::ClusterTooSmall { .. }) => Vec::new(),
            Err(e) => return Err(e),
        };
        let cos: Vec<f64> = records.iter().map(|r| r.cosine).collect();
        per_cluster.push(ClusterIcss {
            cluster: c,
            members: members.len(),
            stats: PairStats::of(&cos),
        });
        audit.extend(records);
    }
    let overall = PairStats::of(&audit.iter().map(|r| r.cosine).collect::<Vec<_>>());

    let everyone: Vec<&str> = clusters.iter().flatten().copied().collect();
    let baseline_records = match sample_pairs(
        everyone.len(),
        budget * clusters.len().max(1),
        seed,
        "icss.baseline",
        0,
    ) {
        Ok(pairs) => score(&everyone, &pairs, desc, None)?,
        Err(LapsError::ClusterTooSmall { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };
    let baseline = PairStats::of(
        &baseline_records
            .iter()
            .map(|r| r.cosine)
            .collect::<Vec<_>>(),
    );
    audit.extend(baseline_records);

    Ok((
        IcssReport {
            per_cluster,
            overall,
            baseline,
            pair_budget: budget,
            seed,
        },
        audit,
    ))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `group,a,b,cosine` rows; `group` is the cluster index or `baseline`.
pub fn write_audit_csv(records: &[PairRecord], path: &Path) -> Result<()> {
    let mut out = String::from("group,a,b,cosine\n");
    for r in records {
        let group = r
            .cluster
            .map_or_else(|| "baseline".to_string(), |c| c.to_string());
        writeln!(
            out,
            "{group},{},{},{:?}",
            csv_field(&r.a),
            csv_field(&r.b),
            r.cosine
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(|e| LapsError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f32>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn pooling_single_and_repeated_frames() {
        let one = norm_weighted_pool(&m(&[vec![3.0, 4.0]])).unwrap();
        assert_eq!(one, vec![0.6, 0.8]);
        let many = norm_weighted_pool(&m(&vec![vec![3.0, 4.0]; 5])).unwrap();
        assert!(one.iter().zip(&many).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn pooling_weights_by_raw_norm() {
        let v = norm_weighted_pool(&m(&[vec![3.0, 0.0], vec![0.0, 1.0]])).unwrap();
        let n = 10f64.sqrt();
        assert!((v[0] - 3.0 / n).abs() < 1e-15 && (v[1] - 1.0 / n).abs() < 1e-15);
    }

    #[test]
    fn pooling_errors() {
        assert!(norm_weighted_pool(&m(&[vec![1.0, 0.0], vec![0.0, 0.0]])).is_err());
        assert!(norm_weighted_pool(&Matrix::new(0, 2, vec![]).unwrap()).is_err());
    }

    #[test]
    fn unranking_enumerates_all_pairs() {
        for n in 2..8 {
            let all: Vec<_> = (0..n * (n - 1) / 2).map(|r| unrank_pair(r, n)).collect();
            let expected: Vec<_> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect();
            assert_eq!(all, expected);
        }
    }

    #[test]
    fn sampling_rules() {
        assert_eq!(
            sample_pairs(3, 10, 0, "t", 0).unwrap(),
            vec![(0, 1), (0, 2), (1, 2)]
        );
        let one = sample_pairs(50, 1, 7, "t", 0).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].0 < one[0].1);
        let a = sample_pairs(40, 100, 7, "t", 2).unwrap();
        assert_eq!(a, sample_pairs(40, 100, 7, "t", 2).unwrap());
        let mut dedup = a.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 100);
        let err = sample_pairs(1, 10, 0, "t", 4).unwrap_err();
        assert!(err.to_string().contains("too small for ICSS"), "{err}");
    }

    fn desc(entries: &[(&str, Vec<f64>)]) -> BTreeMap<String, Vec<f64>> {
        entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn identical_descriptors_score_one() {
        let d = desc(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![1.0, 0.0]),
            ("c", vec![1.0, 0.0]),
        ]);
        let (r, _) = icss(&d, &[vec!["a", "b", "c"]], 10, 0).unwrap();
        assert_eq!(r.per_cluster[0].stats.mean, Some(1.0));
        assert_eq!(r.per_cluster[0].stats.std, Some(0.0));
    }

    #[test]
    fn orthogonal_clusters_beat_baseline() {
        let d = desc(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![1.0, 0.0]),
            ("c", vec![0.0, 1.0]),
            ("d", vec![0.0, 1.0]),
        ]);
        let (r, audit) = icss(&d, &[vec!["a", "b"], vec!["c", "d"]], 100, 0).unwrap();
        assert!(r.per_cluster.iter().all(|c| c.stats.mean == Some(1.0)));
        // All six corpus pairs: two intra (cos 1) and four cross (cos 0).
        assert_eq!(r.baseline.n_pairs, 6);
        assert!((r.baseline.mean.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(audit.len(), 2 + 6);
    }

    #[test]
    fn singleton_cluster_reports_no_pairs() {
        let d = desc(&[("a", vec![1.0]), ("b", vec![1.0]), ("c", vec![1.0])]);
        let (r, _) = icss(&d, &[vec!["a", "b"], vec!["c"]], 5, 0).unwrap();
        assert_eq!(r.per_cluster[1].stats.n_pairs, 0);
        assert_eq!(r.per_cluster[1].stats.mean, None);
        assert!(icss(&d, &[vec!["a", "zz"]], 5, 0).is_err());
    }

    #[test]
    fn audit_means_recompute() {
        let d: BTreeMap<String, Vec<f64>> = (0..30)
            .map(|i| {
                let t = i as f64 * 0.3;
                (format!("p,{i}"), vec![t.cos(), t.sin()])
            })
            .collect();
        let ids: Vec<&str> = d.keys().map(String::as_str).collect();
        let (r, audit) = icss(&d, &[ids[..15].to_vec(), ids[15..].to_vec()], 20, 3).unwrap();
        let c0: Vec<f64> = audit
            .iter()
            .filter(|p| p.cluster == Some(0))
            .map(|p| p.cosine)
            .collect();
        assert_eq!(c0.len(), 20);
        assert_eq!(
            r.per_cluster[0].stats.mean,
            Some(c0.iter().sum::<f64>() / 20.0)
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        write_audit_csv(&audit, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + audit.len());
        assert!(text.contains("\"p,"));
    }
}
