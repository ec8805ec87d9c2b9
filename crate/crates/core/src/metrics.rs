//! Partition comparison and posterior summaries of clustering draws.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mixture::Annotation;
use crate::partition::{FamilyVector, Partition};
use crate::stats::Interval;

fn choose2(k: usize) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

/// Adjusted Rand index under the permutation model. Two partitions with no
/// pair structure to compare (both all-singletons or both one cluster) score
/// 1.
pub fn adjusted_rand_index(c1: &Partition, c2: &Partition) -> Result<f64> {
    if c1.len() != c2.len() {
        return Err(Error::LengthMismatch {
            what: "partition",
            expected: c1.len(),
            found: c2.len(),
        });
    }
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&a, &b) in c1.labels().iter().zip(c2.labels()) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_rows: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_cols: f64 = cols.values().map(|&v| choose2(v)).sum();
    let expected = sum_rows * sum_cols / choose2(c1.len());
    let max = (sum_rows + sum_cols) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn check_family(x: &FamilyVector, f: usize) -> Result<()> {
    if x.contains(f) {
        Ok(())
    } else {
        Err(Error::UnknownFamily(f))
    }
}

/// Jaccard similarity of two families over clusters: clusters holding both
/// divided by clusters holding either.
pub fn jaccard_expert_pair(
    draw: &Partition,
    x: &FamilyVector,
    family_a: usize,
    family_b: usize,
) -> Result<f64> {
    check_family(x, family_a)?;
    check_family(x, family_b)?;
    if draw.len() != x.len() {
        return Err(Error::LengthMismatch {
            what: "family vector",
            expected: draw.len(),
            found: x.len(),
        });
    }
    let (mut both, mut either) = (0usize, 0usize);
    for cluster in draw.clusters() {
        let has_a = cluster.iter().any(|&i| x.get(i) == family_a);
        let has_b = cluster.iter().any(|&i| x.get(i) == family_b);
        both += (has_a && has_b) as usize;
        either += (has_a || has_b) as usize;
    }
    Ok(both as f64 / either as f64)
}

/// Pairwise Jaccard similarities of every pair of family slots in one
/// draw. Entries for absent families are zero.
pub fn jaccard_matrix(draw: &Partition, x: &FamilyVector) -> Vec<Vec<f64>> {
    let slots = x.num_slots();
    let mut both = vec![vec![0usize; slots]; slots];
    let mut fams = Vec::new();
    for cluster in draw.clusters() {
        fams.clear();
        fams.extend(cluster.iter().map(|&i| x.get(i)));
        fams.sort_unstable();
        fams.dedup();
        for (a, &fa) in fams.iter().enumerate() {
            both[fa][fa] += 1;
            for &fb in &fams[a + 1..] {
                both[fa][fb] += 1;
                both[fb][fa] += 1;
            }
        }
    }
    (0..slots)
        .map(|a| {
            (0..slots)
                .map(|b| {
                    let either = both[a][a] + both[b][b] - both[a][b];
                    if either == 0 {
                        0.0
                    } else {
                        both[a][b] as f64 / either as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Diameter cut points (px) splitting clusters into named bands. A cluster
/// falls in band `i` when its diameter is below `thresholds[i]` and at least
/// `thresholds[i - 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeBands {
    thresholds: Vec<f64>,
    names: Vec<String>,
}

impl Default for SizeBands {
    fn default() -> Self {
        Self::new(
            vec![50.0, 100.0],
            vec!["small".into(), "medium".into(), "large".into()],
        )
        .expect("valid defaults")
    }
}

impl SizeBands {
    pub fn new(thresholds: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != thresholds.len() + 1 {
            return Err(Error::param(
                "bands",
                "need exactly one more name than thresholds",
            ));
        }
        if thresholds.windows(2).any(|w| !(w[0] < w[1]))
            || thresholds.iter().any(|t| !t.is_finite())
        {
            return Err(Error::param(
                "bands",
                "thresholds must be finite and strictly increasing",
            ));
        }
        Ok(Self { thresholds, names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn band_of(&self, diameter: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= diameter)
    }
}

/// Mean original-scale diameter of each cluster, in canonical order.
pub fn cluster_diameters(draw: &Partition, data: &[Annotation]) -> Vec<f64> {
    draw.clusters()
        .iter()
        .map(|c| c.iter().map(|&i| data[i].diameter()).sum::<f64>() / c.len() as f64)
        .collect()
}

/// Clusters of at least `min_size` members counted per size band.
pub fn consensus_counts(
    draw: &Partition,
    data: &[Annotation],
    min_size: usize,
    bands: &SizeBands,
) -> Result<Vec<usize>> {
    if min_size == 0 {
        return Err(Error::param("min_size", "must be at least 1"));
    }
    if draw.len() != data.len() {
        return Err(Error::LengthMismatch {
            what: "annotations",
            expected: draw.len(),
            found: data.len(),
        });
    }
    let mut counts = vec![0; bands.len()];
    for c in draw.clusters() {
        if c.len() >= min_size {
            let d = c.iter().map(|&i| data[i].diameter()).sum::<f64>() / c.len() as f64;
            counts[bands.band_of(d)] += 1;
        }
    }
    Ok(counts)
}

/// Number of clusters with at least `min_size` members.
pub fn count_clusters_min_size(draw: &Partition, min_size: usize) -> usize {
    draw.cluster_sizes()
        .iter()
        .filter(|&&s| s >= min_size)
        .count()
}

/// Fraction of clusters that hold two members of one family.
pub fn duplicate_cluster_fraction(draw: &Partition, x: &FamilyVector) -> f64 {
    let clusters = draw.clusters();
    let bad = clusters
        .iter()
        .filter(|c| {
            c.iter()
                .enumerate()
                .any(|(a, &i)| c[a + 1..].iter().any(|&j| x.get(i) == x.get(j)))
        })
        .count();
    bad as f64 / clusters.len() as f64
}

/// Largest `(x, y)` distance between two members of each cluster.
pub fn cluster_spatial_spans(draw: &Partition, data: &[Annotation]) -> Vec<f64> {
    draw.clusters()
        .iter()
        .map(|c| {
            let mut span: f64 = 0.0;
            for (a, &i) in c.iter().enumerate() {
                for &j in &c[a + 1..] {
                    span = span.max((data[i].x - data[j].x).hypot(data[i].y - data[j].y));
                }
            }
            span
        })
        .collect()
}

/// Fraction of clusters in one draw with a member pair farther apart than
/// `rho`.
pub fn violating_proportion(draw: &Partition, data: &[Annotation], rho: f64) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::param(
            "rho",
            format!("must be non-negative, got {rho}"),
        ));
    }
    let spans = cluster_spatial_spans(draw, data);
    Ok(spans.iter().filter(|&&s| s > rho).count() as f64 / spans.len() as f64)
}

/// Average over draws of the violating-cluster proportion at each radius.
pub fn violating_cluster_curve(
    draws: &[Partition],
    data: &[Annotation],
    radii: &[f64],
) -> Result<Vec<f64>> {
    if let Some(r) = radii.iter().find(|r| !(**r >= 0.0)) {
        return Err(Error::param(
            "rho",
            format!("must be non-negative, got {r}"),
        ));
    }
    if draws.is_empty() {
        return Err(Error::param("draws", "need at least one draw"));
    }
    let per_draw: Vec<Vec<f64>> = draws
        .par_iter()
        .map(|d| {
            let spans = cluster_spatial_spans(d, data);
            radii
                .iter()
                .map(|&r| spans.iter().filter(|&&s| s > r).count() as f64 / spans.len() as f64)
                .collect()
        })
        .collect();
    Ok((0..radii.len())
        .map(|k| per_draw.iter().map(|v| v[k]).sum::<f64>() / draws.len() as f64)
        .collect())
}

/// Average violating-cluster proportion over draws at one radius.
pub fn violating_cluster_proportion(
    draws: &[Partition],
    data: &[Annotation],
    rho: f64,
) -> Result<f64> {
    Ok(violating_cluster_curve(draws, data, &[rho])?[0])
}

/// Per-family shares (percent) of singleton clusters and of clusters that
/// miss exactly one family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingletonExcludedStats {
    pub family: usize,
    /// Share of size-1 clusters belonging to the family.
    pub singleton: Interval,
    /// Share of size-(J-1) clusters from which the family is missing.
    pub excluded: Interval,
}

/// Singleton and excluded-family shares per family. Draws without any
/// cluster of the relevant size do not contribute to that statistic.
pub fn singleton_and_excluded_stats(
    draws: &[Partition],
    x: &FamilyVector,
) -> Result<Vec<SingletonExcludedStats>> {
    if draws.is_empty() {
        return Err(Error::param("draws", "need at least one draw"));
    }
    let present: Vec<usize> = (0..x.num_slots()).filter(|&f| x.contains(f)).collect();
    let j = present.len();
    let mut singleton: Vec<Vec<f64>> = vec![Vec::new(); x.num_slots()];
    let mut excluded: Vec<Vec<f64>> = vec![Vec::new(); x.num_slots()];
    for d in draws {
        let mut ones = vec![0usize; x.num_slots()];
        let mut missing = vec![0usize; x.num_slots()];
        let (mut total_ones, mut total_missing) = (0usize, 0usize);
        let mut inside = vec![false; x.num_slots()];
        for c in d.clusters() {
            if c.len() == 1 {
                ones[x.get(c[0])] += 1;
                total_ones += 1;
            }
            if j >= 2 && c.len() == j - 1 {
                inside.iter_mut().for_each(|v| *v = false);
                c.iter().for_each(|&i| inside[x.get(i)] = true);
                // a valid cluster of J-1 members misses exactly one family
                if let Some(&f) = present.iter().find(|&&f| !inside[f]) {
                    missing[f] += 1;
                    total_missing += 1;
                }
            }
        }
        for &f in &present {
            if total_ones > 0 {
                singleton[f].push(100.0 * ones[f] as f64 / total_ones as f64);
            }
            if total_missing > 0 {
                excluded[f].push(100.0 * missing[f] as f64 / total_missing as f64);
            }
        }
    }
    let summarize = |v: &[f64]| {
        if v.is_empty() {
            Interval {
                mean: f64::NAN,
                lower: f64::NAN,
                upper: f64::NAN,
            }
        } else {
            Interval::from_samples(v)
        }
    };
    Ok(present
        .iter()
        .map(|&f| SingletonExcludedStats {
            family: f,
            singleton: summarize(&singleton[f]),
            excluded: summarize(&excluded[f]),
        })
        .collect())
}

/// One row of the consensus-count table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsensusRow {
    pub band: String,
    pub min_size: usize,
    pub reference: Option<f64>,
    pub count: Interval,
}

/// Posterior mean and 95% interval of consensus counts for every band and
/// minimum size, grouped by band.
pub fn consensus_table(
    draws: &[Partition],
    data: &[Annotation],
    min_sizes: &[usize],
    bands: &SizeBands,
    reference: &HashMap<(String, usize), f64>,
) -> Result<Vec<ConsensusRow>> {
    if draws.is_empty() {
        return Err(Error::param("draws", "need at least one draw"));
    }
    let per_draw: Vec<Vec<Vec<usize>>> = draws
        .par_iter()
        .map(|d| {
            min_sizes
                .iter()
                .map(|&m| consensus_counts(d, data, m, bands))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (b, name) in bands.names().iter().enumerate() {
        for (k, &m) in min_sizes.iter().enumerate() {
            let values: Vec<f64> = per_draw.iter().map(|d| d[k][b] as f64).collect();
            rows.push(ConsensusRow {
                band: name.clone(),
                min_size: m,
                reference: reference.get(&(name.clone(), m)).copied(),
                count: Interval::from_samples(&values),
            });
        }
    }
    Ok(rows)
}

/// One row of the per-expert summary table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpertSummary {
    pub expert: String,
    pub count: usize,
    /// Average over other experts of the posterior mean pairwise Jaccard.
    pub jaccard: f64,
    pub singleton: Interval,
    pub excluded: Interval,
}

/// Posterior mean Jaccard similarity for every pair of family slots.
pub fn mean_jaccard_matrix(draws: &[Partition], x: &FamilyVector) -> Vec<Vec<f64>> {
    let slots = x.num_slots();
    let sum = draws.par_iter().map(|d| jaccard_matrix(d, x)).reduce(
        || vec![vec![0.0; slots]; slots],
        |mut acc, m| {
            for (a, row) in m.iter().enumerate() {
                for (b, v) in row.iter().enumerate() {
                    acc[a][b] += v;
                }
            }
            acc
        },
    );
    let n = draws.len() as f64;
    sum.into_iter()
        .map(|row| row.into_iter().map(|v| v / n).collect())
        .collect()
}

/// Per-expert summaries ordered by annotation count (ties by name).
pub fn expert_table(
    draws: &[Partition],
    x: &FamilyVector,
    names: &[String],
) -> Result<Vec<ExpertSummary>> {
    if names.len() != x.num_slots() {
        return Err(Error::LengthMismatch {
            what: "expert names",
            expected: x.num_slots(),
            found: names.len(),
        });
    }
    let stats = singleton_and_excluded_stats(draws, x)?;
    let jac = mean_jaccard_matrix(draws, x);
    let sizes = x.family_sizes();
    let present: Vec<usize> = stats.iter().map(|s| s.family).collect();
    let mut rows: Vec<ExpertSummary> = stats
        .into_iter()
        .map(|s| {
            let others: Vec<f64> = present
                .iter()
                .filter(|&&g| g != s.family)
                .map(|&g| jac[s.family][g])
                .collect();
            let jaccard = if others.is_empty() {
                f64::NAN
            } else {
                others.iter().sum::<f64>() / others.len() as f64
            };
            ExpertSummary {
                expert: names[s.family].clone(),
                count: sizes[s.family],
                jaccard,
                singleton: s.singleton,
                excluded: s.excluded,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.count.cmp(&b.count).then_with(|| a.expert.cmp(&b.expert)));
    Ok(rows)
}
