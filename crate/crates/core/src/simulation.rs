//! Synthetic multi-annotator datasets with known truth, and the study
//! comparing the constrained model with the unconstrained CRP on them.

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{adjusted_rand_index, count_clusters_min_size, duplicate_cluster_fraction};
use crate::mixture::{Annotation, Feature, Hyperparams};
use crate::partition::{FamilyVector, Partition};
use crate::sampler::{chain_rng, run_chain_in, ChainConfig, SamplerContext};
use crate::stats::FiveNumber;

/// Distribution of the number of false marks an expert makes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FalseCountModel {
    /// `Binomial(k_true, f_j)`.
    Binomial,
    /// `Poisson(k_true · f_j)`.
    Poisson,
}

/// Parameters of the data generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub k_true: usize,
    /// `[x_min, x_max, y_min, y_max]` in px.
    pub bounds: [f64; 4],
    /// Gamma shape and rate of true log-diameters.
    pub a_ld: f64,
    pub b_ld: f64,
    /// Per-expert probability of marking each true object.
    pub detect_probs: Vec<f64>,
    /// Per-expert false-mark rate.
    pub false_rates: Vec<f64>,
    /// Covariance of a mark around its object.
    pub noise_cov: [[f64; 3]; 3],
    pub false_count: FalseCountModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            k_true: 30,
            bounds: [0.0, 700.0, 0.0, 500.0],
            a_ld: 64.0,
            b_ld: 16.0,
            detect_probs: vec![0.98, 0.96, 0.94, 0.92, 0.90, 0.88],
            false_rates: vec![0.12, 0.10, 0.08, 0.06, 0.04, 0.02],
            noise_cov: [[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 0.01]],
            false_count: FalseCountModel::Binomial,
        }
    }
}

impl SimConfig {
    pub fn num_experts(&self) -> usize {
        self.detect_probs.len()
    }

    fn noise_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.noise_cov[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        if self.detect_probs.is_empty() {
            return Err(Error::param("detect_probs", "need at least one expert"));
        }
        if self.detect_probs.len() != self.false_rates.len() {
            return Err(Error::LengthMismatch {
                what: "false_rates",
                expected: self.detect_probs.len(),
                found: self.false_rates.len(),
            });
        }
        let probs = self.detect_probs.iter().chain(&self.false_rates);
        if probs.clone().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::param(
                "detect_probs/false_rates",
                "must lie in [0, 1]",
            ));
        }
        let [lx, ux, ly, uy] = self.bounds;
        if !(lx < ux && ly < uy) || self.bounds.iter().any(|b| !b.is_finite()) {
            return Err(Error::param(
                "bounds",
                "need finite x_min < x_max and y_min < y_max",
            ));
        }
        if !(self.a_ld > 0.0 && self.b_ld > 0.0) {
            return Err(Error::param("a_ld/b_ld", "must be positive"));
        }
        let m = self.noise_matrix();
        if m != m.transpose() || m.cholesky().is_none() {
            return Err(Error::param(
                "noise_cov",
                "must be symmetric positive definite",
            ));
        }
        Ok(())
    }
}

/// Annotations with the partition that generated them.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub annotations: Vec<Annotation>,
    pub truth: Partition,
}

impl LabeledDataset {
    pub fn families(&self) -> Result<FamilyVector> {
        FamilyVector::new(self.annotations.iter().map(|a| a.family).collect())
    }
}

fn uniform_point<R: Rng + ?Sized>(cfg: &SimConfig, ld: &Gamma<f64>, rng: &mut R) -> Feature {
    let [lx, ux, ly, uy] = cfg.bounds;
    let x = rng.random_range(lx..ux);
    let y = rng.random_range(ly..uy);
    Feature::new(x, y, ld.sample(rng))
}

/// Draws one dataset: true objects uniform in the box with Gamma
/// log-diameters; expert `j` marks each object with probability `t_j` at a
/// Gaussian offset kept inside the box, then adds false marks placed like
/// fresh objects. Annotations are ordered expert by expert.
pub fn generate_dataset<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<LabeledDataset> {
    cfg.validate()?;
    let ld = Gamma::new(cfg.a_ld, 1.0 / cfg.b_ld)
        .map_err(|e| Error::param("a_ld/b_ld", e.to_string()))?;
    let chol = cfg.noise_matrix().cholesky().expect("validated").unpack();
    let [lx, ux, ly, uy] = cfg.bounds;
    let centers: Vec<Feature> = (0..cfg.k_true)
        .map(|_| uniform_point(cfg, &ld, rng))
        .collect();

    let mut annotations = Vec::new();
    let mut labels = Vec::new();
    let mut next_false = cfg.k_true;
    for (j, (&t, &f)) in cfg.detect_probs.iter().zip(&cfg.false_rates).enumerate() {
        for (k, c) in centers.iter().enumerate() {
            if !rng.random_bool(t) {
                continue;
            }
            let y = loop {
                let z = Feature::from_fn(|_, _| rng.sample(StandardNormal));
                let y = c + chol * z;
                if (lx..=ux).contains(&y[0]) && (ly..=uy).contains(&y[1]) {
                    break y;
                }
            };
            annotations.push(Annotation {
                family: j,
                x: y[0],
                y: y[1],
                ld: y[2],
            });
            labels.push(k);
        }
        let k_false = match cfg.false_count {
            FalseCountModel::Binomial => Binomial::new(cfg.k_true as u64, f)
                .map_err(|e| Error::param("false_rates", e.to_string()))?
                .sample(rng),
            FalseCountModel::Poisson => {
                let lambda = cfg.k_true as f64 * f;
                if lambda > 0.0 {
                    Poisson::new(lambda)
                        .map_err(|e| Error::param("false_rates", e.to_string()))?
                        .sample(rng) as u64
                } else {
                    0
                }
            }
        };
        for _ in 0..k_false {
            let y = uniform_point(cfg, &ld, rng);
            annotations.push(Annotation {
                family: j,
                x: y[0],
                y: y[1],
                ld: y[2],
            });
            labels.push(next_false);
            next_false += 1;
        }
    }
    if annotations.is_empty() {
        return Err(Error::param("sim", "configuration produced no annotations"));
    }
    Ok(LabeledDataset {
        annotations,
        truth: Partition::new(labels)?.canonical(),
    })
}

/// Models compared in the study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StudyModel {
    #[serde(rename = "dfcrp")]
    Dfcrp,
    #[serde(rename = "dfcrp-radius")]
    DfcrpRadius,
    #[serde(rename = "crp")]
    Crp,
}

impl StudyModel {
    pub const ALL: [StudyModel; 3] = [StudyModel::Dfcrp, StudyModel::DfcrpRadius, StudyModel::Crp];

    pub fn label(self) -> &'static str {
        match self {
            StudyModel::Dfcrp => "DFCRP",
            StudyModel::DfcrpRadius => "DFCRP w/Radius",
            StudyModel::Crp => "CRP",
        }
    }
}

/// Settings of a simulation study.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub num_datasets: usize,
    pub sim: SimConfig,
    /// Chain settings shared by every fit; `chain.seed` is the master seed.
    pub chain: ChainConfig,
    /// Radius of the neighborhood-restricted model.
    pub radius: f64,
    pub models: Vec<StudyModel>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            num_datasets: 50,
            sim: SimConfig::default(),
            chain: ChainConfig {
                num_scans: 10_000,
                burn_in_scans: 2_000,
                thin_every: 10,
                hyper: Hyperparams::simulation(),
                ..ChainConfig::default()
            },
            radius: 75.0,
            models: StudyModel::ALL.to_vec(),
        }
    }
}

/// Largest minimum cluster size reported in the count table.
pub const MAX_MIN_SIZE: usize = 6;

/// Posterior summaries of one model fitted to one dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitSummary {
    pub model: StudyModel,
    /// Mean over draws of the ARI against the truth.
    pub mean_ari: f64,
    /// Mean over draws of the number of clusters of size ≥ m, m = 1..=6.
    pub cluster_counts: [f64; MAX_MIN_SIZE],
    /// Mean over draws of the fraction of clusters with a same-family pair.
    pub duplicate_fraction: f64,
    pub permutation_acceptance: f64,
    pub alpha_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetResult {
    pub dataset: usize,
    pub num_annotations: usize,
    pub true_clusters: usize,
    pub fits: Vec<FitSummary>,
}

impl DatasetResult {
    pub fn fit(&self, model: StudyModel) -> Option<&FitSummary> {
        self.fits.iter().find(|f| f.model == model)
    }
}

/// Per-dataset results of a study with table-style aggregates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyReport {
    pub models: Vec<StudyModel>,
    pub datasets: Vec<DatasetResult>,
}

fn seeds_for(master: u64, dataset: usize) -> (u64, u64) {
    let mut rng = chain_rng(master, dataset);
    (rng.random(), rng.random())
}

/// Regenerates dataset `index` of a study with master seed `master`.
pub fn study_dataset(cfg: &SimConfig, master: u64, index: usize) -> Result<LabeledDataset> {
    let (gen_seed, _) = seeds_for(master, index);
    generate_dataset(cfg, &mut chain_rng(gen_seed, 0))
}

/// Context in which `model` is fitted to `data`.
pub fn model_context(
    model: StudyModel,
    data: &LabeledDataset,
    hyper: &Hyperparams,
    radius: f64,
) -> Result<SamplerContext> {
    let n = data.annotations.len();
    match model {
        StudyModel::Dfcrp => SamplerContext::new(
            &data.annotations,
            &data.families()?,
            &Hyperparams {
                rho: f64::INFINITY,
                ..hyper.clone()
            },
        ),
        StudyModel::DfcrpRadius => SamplerContext::new(
            &data.annotations,
            &data.families()?,
            &Hyperparams {
                rho: radius,
                ..hyper.clone()
            },
        ),
        StudyModel::Crp => SamplerContext::new(
            &data.annotations,
            &FamilyVector::distinct(n)?,
            &Hyperparams {
                rho: f64::INFINITY,
                ..hyper.clone()
            },
        ),
    }
}

/// Fits one model to one dataset and summarizes its draws.
pub fn fit_and_summarize(
    model: StudyModel,
    data: &LabeledDataset,
    chain: &ChainConfig,
    radius: f64,
) -> Result<FitSummary> {
    let ctx = model_context(model, data, &chain.hyper, radius)?;
    let out = run_chain_in(&ctx, chain, 0)?;
    if out.draws.is_empty() {
        return Err(Error::param("chain", "no post-burn-in draws to summarize"));
    }
    let x = data.families()?;
    let m = out.draws.len() as f64;
    let (mut ari, mut dup, mut alpha) = (0.0, 0.0, 0.0);
    let mut counts = [0.0; MAX_MIN_SIZE];
    for d in &out.draws {
        let p = d.partition();
        ari += adjusted_rand_index(&p, &data.truth)?;
        dup += duplicate_cluster_fraction(&p, &x);
        alpha += d.alpha;
        for (k, c) in counts.iter_mut().enumerate() {
            *c += count_clusters_min_size(&p, k + 1) as f64;
        }
    }
    Ok(FitSummary {
        model,
        mean_ari: ari / m,
        cluster_counts: counts.map(|c| c / m),
        duplicate_fraction: dup / m,
        permutation_acceptance: out.counts.permutation_rate(),
        alpha_mean: alpha / m,
    })
}

/// Generates `num_datasets` datasets and fits every model to each. Datasets
/// are processed in parallel; the report does not depend on scheduling.
pub fn run_simulation_study(cfg: &StudyConfig) -> Result<StudyReport> {
    run_simulation_study_with(cfg, |_| {})
}

/// As [`run_simulation_study`], calling `progress` after each dataset.
pub fn run_simulation_study_with<F>(cfg: &StudyConfig, progress: F) -> Result<StudyReport>
where
    F: Fn(&DatasetResult) + Sync,
{
    if cfg.models.is_empty() {
        return Err(Error::param("models", "need at least one model"));
    }
    cfg.sim.validate()?;
    cfg.chain.validate()?;
    let datasets = (0..cfg.num_datasets)
        .into_par_iter()
        .map(|d| {
            let data = study_dataset(&cfg.sim, cfg.chain.seed, d)?;
            let (_, fit_seed) = seeds_for(cfg.chain.seed, d);
            let chain = ChainConfig {
                seed: fit_seed,
                ..cfg.chain.clone()
            };
            let fits = cfg
                .models
                .iter()
                .map(|&m| fit_and_summarize(m, &data, &chain, cfg.radius))
                .collect::<Result<Vec<_>>>()?;
            let result = DatasetResult {
                dataset: d,
                num_annotations: data.annotations.len(),
                true_clusters: data.truth.num_clusters(),
                fits,
            };
            progress(&result);
            Ok(result)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyReport {
        models: cfg.models.clone(),
        datasets,
    })
}

/// One row of the ARI summary table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AriRow {
    pub label: String,
    pub summary: FiveNumber,
}

/// One row of the cluster-count table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountRow {
    pub label: String,
    pub counts: [f64; MAX_MIN_SIZE],
}

impl StudyReport {
    fn values<F: Fn(&FitSummary) -> f64>(&self, model: StudyModel, f: F) -> Vec<f64> {
        self.datasets
            .iter()
            .filter_map(|d| d.fit(model).map(&f))
            .collect()
    }

    pub fn ari_values(&self, model: StudyModel) -> Vec<f64> {
        self.values(model, |f| f.mean_ari)
    }

    /// Paired DFCRP − CRP posterior-mean ARI per dataset.
    pub fn ari_differences(&self) -> Vec<f64> {
        self.datasets
            .iter()
            .filter_map(|d| {
                Some(d.fit(StudyModel::Dfcrp)?.mean_ari - d.fit(StudyModel::Crp)?.mean_ari)
            })
            .collect()
    }

    /// Datasets where DFCRP's ARI is strictly higher, and where it is at
    /// least as high, as CRP's.
    pub fn dfcrp_wins(&self) -> (usize, usize) {
        let diffs = self.ari_differences();
        (
            diffs.iter().filter(|&&d| d > 0.0).count(),
            diffs.iter().filter(|&&d| d >= 0.0).count(),
        )
    }

    pub fn ari_table(&self) -> Vec<AriRow> {
        let mut rows: Vec<AriRow> = self
            .models
            .iter()
            .filter(|m| !self.ari_values(**m).is_empty())
            .map(|&m| AriRow {
                label: m.label().to_string(),
                summary: FiveNumber::from_samples(&self.ari_values(m)),
            })
            .collect();
        let diffs = self.ari_differences();
        if !diffs.is_empty() {
            rows.push(AriRow {
                label: "Difference".to_string(),
                summary: FiveNumber::from_samples(&diffs),
            });
        }
        rows
    }

    pub fn count_table(&self) -> Vec<CountRow> {
        self.models
            .iter()
            .map(|&m| {
                let fits: Vec<&FitSummary> =
                    self.datasets.iter().filter_map(|d| d.fit(m)).collect();
                let mut counts = [0.0; MAX_MIN_SIZE];
                for f in &fits {
                    for (c, v) in counts.iter_mut().zip(f.cluster_counts) {
                        *c += v;
                    }
                }
                CountRow {
                    label: m.label().to_string(),
                    counts: counts.map(|c| c / fits.len().max(1) as f64),
                }
            })
            .collect()
    }

    /// Mean over datasets of the fraction of same-family-duplicate clusters.
    pub fn mean_duplicate_fraction(&self, model: StudyModel) -> f64 {
        let v = self.values(model, |f| f.duplicate_fraction);
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}
