//! Permutation-modified, neighborhood-modified Gibbs sampler.
//!
//! One iteration proposes a swap of a random position with the last
//! position of the allocation order, then reassigns the item that is last.
//! A scan is one concentration update, `n` iterations, and one sweep over
//! the parameters of every occupied cluster.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{
    alpha_mh_step, metropolis_covariance_step, sample_cluster_prior, sample_covariance_prior,
    sample_mu_posterior, Annotation, ClusterParams, Feature, GaussianKernel, Hyperparams,
};
use crate::partition::{
    canonical_labels, dfcrp_marginal_logprob_exact, enumerate_valid_partitions, Concentration,
    FamilyVector, Partition, Permutation, SeatingWorkspace, DEFAULT_ENUMERATION_CAP,
};
use crate::stats::{chi_square_gof, normalize_log_weights, sample_categorical};

/// Items within spatial distance `rho` of each item.
#[derive(Clone, Debug, PartialEq)]
pub enum NeighborIndex {
    /// No restriction: every item neighbors every other.
    All { n: usize },
    /// Sorted neighbor lists, each including the item itself.
    Radius { lists: Vec<Vec<usize>> },
}

impl NeighborIndex {
    pub fn len(&self) -> usize {
        match self {
            NeighborIndex::All { n } => *n,
            NeighborIndex::Radius { lists } => lists.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        match self {
            NeighborIndex::All { n } => i < *n && j < *n,
            NeighborIndex::Radius { lists } => lists[i].binary_search(&j).is_ok(),
        }
    }

    /// Neighbors of `i`, including `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        match self {
            NeighborIndex::All { n } => (0..*n).collect(),
            NeighborIndex::Radius { lists } => lists[i].clone(),
        }
    }
}

fn cell_of(v: f64, width: f64) -> i64 {
    (v / width).floor() as i64
}

/// Builds neighbor lists under Euclidean distance on `(x, y)`. An infinite
/// radius yields [`NeighborIndex::All`].
pub fn build_neighbor_index(data: &[Annotation], rho: f64) -> Result<NeighborIndex> {
    if !(rho >= 0.0) {
        return Err(Error::param(
            "rho",
            format!("must be non-negative or inf, got {rho}"),
        ));
    }
    if rho.is_infinite() {
        return Ok(NeighborIndex::All { n: data.len() });
    }
    let rho_sq = rho * rho;
    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); data.len()];
    if rho == 0.0 {
        let mut same: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
        for (i, a) in data.iter().enumerate() {
            // normalize -0.0 so it meets +0.0
            let key = ((a.x + 0.0).to_bits(), (a.y + 0.0).to_bits());
            same.entry(key).or_default().push(i);
        }
        for group in same.values() {
            for &i in group {
                lists[i] = group.clone();
            }
        }
    } else {
        let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, a) in data.iter().enumerate() {
            grid.entry((cell_of(a.x, rho), cell_of(a.y, rho)))
                .or_default()
                .push(i);
        }
        for (i, a) in data.iter().enumerate() {
            let (cx, cy) = (cell_of(a.x, rho), cell_of(a.y, rho));
            for gx in cx - 1..=cx + 1 {
                for gy in cy - 1..=cy + 1 {
                    let Some(cell) = grid.get(&(gx, gy)) else {
                        continue;
                    };
                    for &j in cell {
                        let (dx, dy) = (a.x - data[j].x, a.y - data[j].y);
                        if dx * dx + dy * dy <= rho_sq {
                            lists[i].push(j);
                        }
                    }
                }
            }
        }
    }
    for l in &mut lists {
        l.sort_unstable();
    }
    Ok(NeighborIndex::Radius { lists })
}

/// Largest Euclidean `(x, y)` distance between any two annotations.
pub fn max_pairwise_distance(data: &[Annotation]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in data.iter().enumerate() {
        for b in &data[i + 1..] {
            best = best.max((a.x - b.x).hypot(a.y - b.y));
        }
    }
    best
}

fn swap_index<R: Rng + ?Sized>(n: usize, rng: &mut R) -> usize {
    rng.random_range(0..n)
}

/// Swaps a uniformly chosen position (possibly the last itself) with the
/// last position.
pub fn propose_swap_with_last<R: Rng + ?Sized>(sigma: &Permutation, rng: &mut R) -> Permutation {
    let mut proposal = sigma.clone();
    let n = sigma.len();
    proposal.swap_positions(swap_index(n, rng), n - 1);
    proposal
}

/// Chain length, burn-in, thinning, seed and model constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub num_scans: usize,
    pub burn_in_scans: usize,
    pub thin_every: usize,
    pub seed: u64,
    pub initial_alpha: f64,
    #[serde(skip)]
    pub hyper: Hyperparams,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            num_scans: 10_000,
            burn_in_scans: 5_000,
            thin_every: 10,
            seed: 0,
            initial_alpha: 1.0,
            hyper: Hyperparams::default(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_scans == 0 {
            return Err(Error::param("num_scans", "must be at least 1"));
        }
        if self.burn_in_scans > self.num_scans {
            return Err(Error::param(
                "burn_in_scans",
                format!(
                    "{} exceeds num_scans {}",
                    self.burn_in_scans, self.num_scans
                ),
            ));
        }
        if self.thin_every == 0 {
            return Err(Error::param("thin_every", "must be at least 1"));
        }
        Concentration::new(self.initial_alpha)?;
        self.hyper.validate()
    }

    /// Number of draws a chain emits.
    pub fn draws_per_chain(&self) -> usize {
        (self.num_scans - self.burn_in_scans) / self.thin_every
    }
}

/// One retained posterior state.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub chain_id: usize,
    pub scan_index: usize,
    pub alpha: f64,
    /// Canonical cluster labels.
    pub labels: Vec<usize>,
}

impl Draw {
    pub fn partition(&self) -> Partition {
        Partition::new(self.labels.clone()).expect("draws are non-empty")
    }
}

/// Which factors of the model the sampler targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerOptions {
    /// Include the Gaussian likelihood and cluster parameters.
    pub likelihood: bool,
    /// Update the concentration once per scan.
    pub update_alpha: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            likelihood: true,
            update_alpha: true,
        }
    }
}

/// Everything a chain reads but never writes: data, families, neighbor
/// lists and constants. Shared by concurrent chains.
#[derive(Clone, Debug)]
pub struct SamplerContext {
    features: Vec<Feature>,
    families: FamilyVector,
    family_members: Vec<Vec<usize>>,
    all_distinct: bool,
    neighbors: NeighborIndex,
    hyper: Hyperparams,
    options: SamplerOptions,
}

impl SamplerContext {
    /// Full model on observed data, restricted to neighbors within
    /// `hyper.rho`.
    pub fn new(data: &[Annotation], families: &FamilyVector, hyper: &Hyperparams) -> Result<Self> {
        hyper.validate()?;
        if data.len() != families.len() {
            return Err(Error::LengthMismatch {
                what: "annotations",
                expected: families.len(),
                found: data.len(),
            });
        }
        let neighbors = build_neighbor_index(data, hyper.rho)?;
        Ok(Self::assemble(
            data.iter().map(Annotation::features).collect(),
            families.clone(),
            neighbors,
            hyper.clone(),
            SamplerOptions::default(),
        ))
    }

    /// Prior-only sampler over partitions: no data, no parameters, fixed
    /// concentration.
    pub fn prior_only(families: &FamilyVector) -> Self {
        Self::assemble(
            Vec::new(),
            families.clone(),
            NeighborIndex::All { n: families.len() },
            Hyperparams::default(),
            SamplerOptions {
                likelihood: false,
                update_alpha: false,
            },
        )
    }

    fn assemble(
        features: Vec<Feature>,
        families: FamilyVector,
        neighbors: NeighborIndex,
        hyper: Hyperparams,
        options: SamplerOptions,
    ) -> Self {
        let mut family_members = vec![Vec::new(); families.num_slots()];
        for (i, &f) in families.as_slice().iter().enumerate() {
            family_members[f].push(i);
        }
        Self {
            features,
            all_distinct: families.all_distinct(),
            families,
            family_members,
            neighbors,
            hyper,
            options,
        }
    }

    pub fn with_options(mut self, options: SamplerOptions) -> Self {
        self.options = options;
        self
    }

    pub fn len(&self) -> usize {
        self.families.len()
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }

    pub fn families(&self) -> &FamilyVector {
        &self.families
    }

    pub fn neighbors(&self) -> &NeighborIndex {
        &self.neighbors
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn options(&self) -> SamplerOptions {
        self.options
    }
}

#[derive(Clone, Debug)]
struct Cluster {
    members: Vec<usize>,
    params: Option<(ClusterParams, GaussianKernel)>,
}

impl Cluster {
    fn has_family(&self, families: &[usize], family: usize) -> bool {
        self.members.iter().any(|&m| families[m] == family)
    }

    fn loglik(&self, y: Option<&Feature>) -> f64 {
        match (y, &self.params) {
            (Some(y), Some((_, kernel))) => kernel.logpdf(y),
            _ => 0.0,
        }
    }
}

fn with_kernel(params: ClusterParams) -> Result<(ClusterParams, GaussianKernel)> {
    Ok((params, GaussianKernel::new(&params)?))
}

/// Acceptance tallies of the Metropolis kernels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AcceptanceCounts {
    pub permutation_proposed: u64,
    pub permutation_accepted: u64,
    pub alpha_proposed: u64,
    pub alpha_accepted: u64,
    pub covariance_proposed: u64,
    pub covariance_accepted: u64,
}

impl AcceptanceCounts {
    pub fn permutation_rate(&self) -> f64 {
        self.permutation_accepted as f64 / self.permutation_proposed.max(1) as f64
    }

    pub fn alpha_rate(&self) -> f64 {
        self.alpha_accepted as f64 / self.alpha_proposed.max(1) as f64
    }

    pub fn covariance_rate(&self) -> f64 {
        self.covariance_accepted as f64 / self.covariance_proposed.max(1) as f64
    }
}

/// Candidate clusters and their unnormalized log-weights at one
/// reassignment. The new-cluster candidate is last and labelled `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateWeights<'a> {
    pub item: usize,
    pub clusters: &'a [usize],
    pub log_weights: &'a [f64],
}

/// Current partition, order, concentration and cluster parameters of one
/// chain.
#[derive(Clone, Debug)]
pub struct SamplerState {
    labels: Vec<usize>,
    slab: Vec<Option<Cluster>>,
    free: Vec<usize>,
    sigma: Permutation,
    alpha: Concentration,
    scan_index: usize,
    joint_prefix: f64,
    joint_last: f64,
    counts: AcceptanceCounts,
    workspace: SeatingWorkspace,
    candidates: Vec<usize>,
    weights: Vec<f64>,
}

impl SamplerState {
    /// Every item in its own cluster with a random allocation order. With
    /// the likelihood on, each mean is the item's features and each
    /// covariance a prior draw.
    pub fn initial<R: Rng + ?Sized>(
        ctx: &SamplerContext,
        alpha: Concentration,
        rng: &mut R,
    ) -> Result<Self> {
        let n = ctx.len();
        let sigma = Permutation::random(n, rng);
        let mut slab = Vec::with_capacity(n);
        for i in 0..n {
            let params = if ctx.options.likelihood {
                let mu = ctx.features[i];
                let ld = ctx.hyper.conditioning_log_diameter(mu[2]);
                let cov = sample_covariance_prior(ld, &ctx.hyper, rng);
                Some(with_kernel(ClusterParams { mu, cov })?)
            } else {
                None
            };
            slab.push(Some(Cluster {
                members: vec![i],
                params,
            }));
        }
        Self::assemble(ctx, (0..n).collect(), slab, sigma, alpha)
    }

    /// A state with the given partition and order. Cluster parameters, when
    /// the likelihood is on, are drawn from the prior.
    pub fn from_partition<R: Rng + ?Sized>(
        ctx: &SamplerContext,
        partition: &Partition,
        sigma: Permutation,
        alpha: Concentration,
        rng: &mut R,
    ) -> Result<Self> {
        if partition.len() != ctx.len() || sigma.len() != ctx.len() {
            return Err(Error::LengthMismatch {
                what: "initial state",
                expected: ctx.len(),
                found: partition.len().min(sigma.len()),
            });
        }
        if !partition.is_valid(&ctx.families) {
            return Err(Error::InvalidPartition(
                "initial partition violates the family constraint".into(),
            ));
        }
        let labels = partition.canonical().labels().to_vec();
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut slab: Vec<Option<Cluster>> = Vec::with_capacity(k);
        for label in 0..k {
            let params = if ctx.options.likelihood {
                Some(with_kernel(sample_cluster_prior(&ctx.hyper, rng))?)
            } else {
                None
            };
            slab.push(Some(Cluster {
                members: (0..labels.len()).filter(|&i| labels[i] == label).collect(),
                params,
            }));
        }
        Self::assemble(ctx, labels, slab, sigma, alpha)
    }

    fn assemble(
        ctx: &SamplerContext,
        labels: Vec<usize>,
        slab: Vec<Option<Cluster>>,
        sigma: Permutation,
        alpha: Concentration,
    ) -> Result<Self> {
        let mut state = Self {
            labels,
            slab,
            free: Vec::new(),
            sigma,
            alpha,
            scan_index: 0,
            joint_prefix: 0.0,
            joint_last: 0.0,
            counts: AcceptanceCounts::default(),
            workspace: SeatingWorkspace::new(),
            candidates: Vec::new(),
            weights: Vec::new(),
        };
        state.refresh_joint_cache(ctx)?;
        Ok(state)
    }

    fn refresh_joint_cache(&mut self, ctx: &SamplerContext) -> Result<()> {
        let terms = self
            .workspace
            .joint_terms(
                &self.labels,
                ctx.families.as_slice(),
                self.sigma.order(),
                self.alpha.value(),
            )
            .ok_or_else(|| {
                Error::InvalidPartition("state violates the family constraint".into())
            })?;
        self.joint_prefix = terms.total - terms.last;
        self.joint_last = terms.last;
        Ok(())
    }

    pub fn partition(&self) -> Partition {
        Partition::new(canonical_labels(&self.labels)).expect("state is non-empty")
    }

    pub fn permutation(&self) -> &Permutation {
        &self.sigma
    }

    pub fn alpha(&self) -> Concentration {
        self.alpha
    }

    pub fn scan_index(&self) -> usize {
        self.scan_index
    }

    pub fn counts(&self) -> AcceptanceCounts {
        self.counts
    }

    pub fn num_clusters(&self) -> usize {
        self.slab.iter().filter(|c| c.is_some()).count()
    }

    /// Cached `ln p(c | α, x, σ)` of the current state.
    pub fn joint_logprob(&self) -> f64 {
        self.joint_prefix + self.joint_last
    }

    /// Parameters of every occupied cluster keyed by internal label, which
    /// matches the label vector returned by [`SamplerState::raw_labels`].
    pub fn cluster_params(&self) -> Vec<(usize, ClusterParams)> {
        self.slab
            .iter()
            .enumerate()
            .filter_map(|(k, c)| Some((k, c.as_ref()?.params?.0)))
            .collect()
    }

    pub fn raw_labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn draw(&self, chain_id: usize) -> Draw {
        Draw {
            chain_id,
            scan_index: self.scan_index,
            alpha: self.alpha.value(),
            labels: canonical_labels(&self.labels),
        }
    }

    /// Metropolis update of the allocation order. Returns whether the
    /// proposal was accepted.
    pub fn permutation_metropolis_step<R: Rng + ?Sized>(
        &mut self,
        ctx: &SamplerContext,
        rng: &mut R,
    ) -> bool {
        let n = self.sigma.len();
        let j = swap_index(n, rng);
        self.counts.permutation_proposed += 1;
        if j == n - 1 {
            self.counts.permutation_accepted += 1;
            return true;
        }
        self.sigma.swap_positions(j, n - 1);
        if ctx.all_distinct {
            // every order has the same joint
            self.counts.permutation_accepted += 1;
            self.refresh_joint_cache(ctx).expect("valid state");
            return true;
        }
        let proposed = self
            .workspace
            .joint_terms(
                &self.labels,
                ctx.families.as_slice(),
                self.sigma.order(),
                self.alpha.value(),
            )
            .expect("reordering keeps the partition valid");
        let log_ratio = proposed.total - self.joint_logprob();
        let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
        if accept {
            self.joint_prefix = proposed.total - proposed.last;
            self.joint_last = proposed.last;
            self.counts.permutation_accepted += 1;
        } else {
            self.sigma.swap_positions(j, n - 1);
        }
        accept
    }

    fn insert_cluster(&mut self, cluster: Cluster) -> usize {
        match self.free.pop() {
            Some(k) => {
                self.slab[k] = Some(cluster);
                k
            }
            None => {
                self.slab.push(Some(cluster));
                self.slab.len() - 1
            }
        }
    }

    /// Removes the last item of the order and reseats it by drawing from its
    /// full conditional over eligible clusters plus one new cluster.
    pub fn reassign_last_item<R: Rng + ?Sized>(
        &mut self,
        ctx: &SamplerContext,
        rng: &mut R,
    ) -> Result<()> {
        self.reassign_last_item_observed(ctx, rng, &mut |_: &CandidateWeights| {})
    }

    /// As [`SamplerState::reassign_last_item`], reporting the candidate
    /// weights before the draw.
    pub fn reassign_last_item_observed<R, F>(
        &mut self,
        ctx: &SamplerContext,
        rng: &mut R,
        observe: &mut F,
    ) -> Result<()>
    where
        R: Rng + ?Sized,
        F: FnMut(&CandidateWeights),
    {
        let n = self.labels.len();
        let item = self.sigma.last();
        let families = ctx.families.as_slice();
        let family = families[item];
        let y = if ctx.options.likelihood {
            Some(&ctx.features[item])
        } else {
            None
        };

        let old = self.labels[item];
        let cluster = self.slab[old].as_mut().expect("item's cluster is occupied");
        cluster.members.retain(|&m| m != item);
        // auxiliary parameters for the new-cluster candidate: the vacated
        // singleton's own, or a fresh prior draw
        let aux = if cluster.members.is_empty() {
            let emptied = self.slab[old].take().expect("occupied");
            self.free.push(old);
            emptied.params
        } else if ctx.options.likelihood {
            Some(with_kernel(sample_cluster_prior(&ctx.hyper, rng))?)
        } else {
            None
        };

        let occupied_with_family: usize = ctx.family_members[family]
            .iter()
            .filter(|&&m| m != item)
            .map(|&m| {
                self.slab[self.labels[m]]
                    .as_ref()
                    .expect("occupied")
                    .members
                    .len()
            })
            .sum();
        let excluded = (n - 1 - occupied_with_family) as f64;
        let alpha = self.alpha.value();
        let log_denominator = (excluded + alpha).ln();

        self.candidates.clear();
        match &ctx.neighbors {
            NeighborIndex::All { .. } => {
                self.candidates.extend(
                    self.slab
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| {
                            c.as_ref().is_some_and(|c| !c.has_family(families, family))
                        })
                        .map(|(k, _)| k),
                );
            }
            NeighborIndex::Radius { lists } => {
                for &m in &lists[item] {
                    if m != item {
                        self.candidates.push(self.labels[m]);
                    }
                }
                self.candidates.sort_unstable();
                self.candidates.dedup();
                let slab = &self.slab;
                self.candidates.retain(|&k| {
                    !slab[k]
                        .as_ref()
                        .expect("occupied")
                        .has_family(families, family)
                });
            }
        }

        self.weights.clear();
        for &k in &self.candidates {
            let c = self.slab[k].as_ref().expect("occupied");
            self.weights
                .push((c.members.len() as f64).ln() - log_denominator + c.loglik(y));
        }
        let new_prior = alpha.ln() - log_denominator;
        let new_loglik = match (y, &aux) {
            (Some(y), Some((_, kernel))) => kernel.logpdf(y),
            _ => 0.0,
        };
        self.weights.push(new_prior + new_loglik);

        observe(&CandidateWeights {
            item,
            clusters: &self.candidates,
            log_weights: &self.weights,
        });

        let log_weights = self.weights.clone();
        let choice = if normalize_log_weights(&mut self.weights) {
            sample_categorical(&self.weights, rng)
        } else {
            self.candidates.len()
        };

        let label = if choice == self.candidates.len() {
            self.joint_last = new_prior;
            self.insert_cluster(Cluster {
                members: vec![item],
                params: aux,
            })
        } else {
            let k = self.candidates[choice];
            let c = self.slab[k].as_mut().expect("occupied");
            self.joint_last = log_weights[choice] - c.loglik(y);
            c.members.push(item);
            k
        };
        self.labels[item] = label;
        Ok(())
    }

    /// One permutation proposal followed by one reassignment.
    pub fn gibbs_iteration<R: Rng + ?Sized>(
        &mut self,
        ctx: &SamplerContext,
        rng: &mut R,
    ) -> Result<()> {
        self.permutation_metropolis_step(ctx, rng);
        self.reassign_last_item(ctx, rng)
    }

    /// Metropolis-Hastings update of the concentration under the current
    /// order.
    pub fn update_alpha<R: Rng + ?Sized>(
        &mut self,
        ctx: &SamplerContext,
        rng: &mut R,
    ) -> Result<()> {
        let trace = self
            .workspace
            .trace(&self.labels, ctx.families.as_slice(), self.sigma.order())
            .ok_or_else(|| {
                Error::InvalidPartition("state violates the family constraint".into())
            })?;
        let before = self.alpha;
        self.alpha = alpha_mh_step(&trace, self.alpha, &ctx.hyper, rng);
        self.counts.alpha_proposed += 1;
        if self.alpha != before {
            self.counts.alpha_accepted += 1;
            self.joint_prefix =
                trace.log_prob(self.alpha.value()) - trace.last_step_log_prob(self.alpha.value());
            self.joint_last = trace.last_step_log_prob(self.alpha.value());
        }
        Ok(())
    }

    /// Covariance Metropolis step then conjugate mean draw for every
    /// occupied cluster.
    pub fn update_cluster_params<R: Rng + ?Sized>(
        &mut self,
        ctx: &SamplerContext,
        rng: &mut R,
    ) -> Result<()> {
        if !ctx.options.likelihood {
            return Ok(());
        }
        let mut data: Vec<Feature> = Vec::new();
        for slot in self.slab.iter_mut() {
            let Some(cluster) = slot.as_mut() else {
                continue;
            };
            data.clear();
            data.extend(cluster.members.iter().map(|&m| ctx.features[m]));
            let (params, _) = cluster
                .params
                .expect("likelihood clusters carry parameters");
            let ld = ctx.hyper.conditioning_log_diameter(params.mu[2]);
            let cov =
                metropolis_covariance_step(&data, &params.cov, &params.mu, ld, &ctx.hyper, rng)?;
            self.counts.covariance_proposed += 1;
            if cov != params.cov {
                self.counts.covariance_accepted += 1;
            }
            let mu = sample_mu_posterior(&data, &cov, &ctx.hyper, rng)?;
            cluster.params = Some(with_kernel(ClusterParams { mu, cov })?);
        }
        Ok(())
    }

    /// One full scan.
    pub fn gibbs_scan<R: Rng + ?Sized>(&mut self, ctx: &SamplerContext, rng: &mut R) -> Result<()> {
        self.gibbs_scan_observed(ctx, rng, &mut |_: &CandidateWeights| {})
    }

    pub fn gibbs_scan_observed<R, F>(
        &mut self,
        ctx: &SamplerContext,
        rng: &mut R,
        observe: &mut F,
    ) -> Result<()>
    where
        R: Rng + ?Sized,
        F: FnMut(&CandidateWeights),
    {
        if ctx.options.update_alpha {
            self.update_alpha(ctx, rng)?;
        }
        for _ in 0..self.labels.len() {
            self.permutation_metropolis_step(ctx, rng);
            self.reassign_last_item_observed(ctx, rng, observe)?;
        }
        self.update_cluster_params(ctx, rng)?;
        self.scan_index += 1;
        Ok(())
    }

    /// Checks the structural invariants; used by tests and debug runs.
    pub fn check_invariants(&self, ctx: &SamplerContext) -> bool {
        let families = ctx.families.as_slice();
        let mut seen = 0;
        for (k, slot) in self.slab.iter().enumerate() {
            let Some(c) = slot else {
                if !self.free.contains(&k) {
                    return false;
                }
                continue;
            };
            if c.members.is_empty() || c.members.iter().any(|&m| self.labels[m] != k) {
                return false;
            }
            for (a, &i) in c.members.iter().enumerate() {
                if c.members[a + 1..]
                    .iter()
                    .any(|&j| families[j] == families[i])
                {
                    return false;
                }
            }
            if c.params.is_some() != ctx.options.likelihood {
                return false;
            }
            seen += c.members.len();
        }
        let joint = SeatingWorkspace::new()
            .joint_terms(
                &self.labels,
                families,
                self.sigma.order(),
                self.alpha.value(),
            )
            .map(|t| t.total);
        seen == self.labels.len() && joint.is_some_and(|j| (j - self.joint_logprob()).abs() < 1e-8)
    }
}

/// Random stream of chain `chain_id` under a master seed.
pub fn chain_rng(seed: u64, chain_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_id as u64);
    rng
}

/// Draws of one chain together with its acceptance tallies.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub draws: Vec<Draw>,
    pub counts: AcceptanceCounts,
}

/// Runs chain `chain_id` from the all-singletons start.
pub fn run_chain_in(
    ctx: &SamplerContext,
    config: &ChainConfig,
    chain_id: usize,
) -> Result<ChainOutput> {
    config.validate()?;
    let mut rng = chain_rng(config.seed, chain_id);
    let mut state =
        SamplerState::initial(ctx, Concentration::new(config.initial_alpha)?, &mut rng)?;
    let mut draws = Vec::with_capacity(config.draws_per_chain());
    for scan in 1..=config.num_scans {
        state.gibbs_scan(ctx, &mut rng)?;
        if scan > config.burn_in_scans && (scan - config.burn_in_scans) % config.thin_every == 0 {
            draws.push(state.draw(chain_id));
        }
    }
    Ok(ChainOutput {
        draws,
        counts: state.counts(),
    })
}

/// Runs one chain of the full model on `data` with families `x`.
pub fn run_chain(data: &[Annotation], x: &FamilyVector, config: &ChainConfig) -> Result<Vec<Draw>> {
    let ctx = SamplerContext::new(data, x, &config.hyper)?;
    Ok(run_chain_in(&ctx, config, 0)?.draws)
}

/// Runs `num_chains` independent chains concurrently and concatenates their
/// draws in chain order.
pub fn run_chains_parallel(
    ctx: &SamplerContext,
    config: &ChainConfig,
    num_chains: usize,
) -> Result<Vec<ChainOutput>> {
    if num_chains == 0 {
        return Err(Error::param("num_chains", "must be at least 1"));
    }
    (0..num_chains)
        .into_par_iter()
        .map(|id| run_chain_in(ctx, config, id))
        .collect()
}

/// Prior-only sampling of partitions: `iterations` single-item iterations
/// at fixed concentration from the all-singletons start, keeping every
/// `thin`-th state.
pub fn sample_prior_chain<R: Rng + ?Sized>(
    x: &FamilyVector,
    alpha: Concentration,
    iterations: usize,
    thin: usize,
    rng: &mut R,
) -> Result<Vec<Partition>> {
    if thin == 0 {
        return Err(Error::param("thin", "must be at least 1"));
    }
    let ctx = SamplerContext::prior_only(x);
    let mut state = SamplerState::initial(&ctx, alpha, rng)?;
    let mut out = Vec::with_capacity(iterations / thin);
    for i in 1..=iterations {
        state.gibbs_iteration(&ctx, rng)?;
        if i % thin == 0 {
            out.push(state.partition());
        }
    }
    Ok(out)
}

/// One partition of the prior-recovery check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleRow {
    pub partition: Vec<usize>,
    pub empirical: f64,
    pub theoretical: f64,
}

/// Prior-only chain proportions against exact marginal probabilities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PriorRecovery {
    /// One row per valid partition in lexicographic order.
    pub rows: Vec<OracleRow>,
    pub draws: usize,
    pub chi_square: f64,
    pub p_value: f64,
}

impl PriorRecovery {
    pub fn max_abs_difference(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.empirical - r.theoretical).abs())
            .fold(0.0, f64::max)
    }
}

/// Runs [`sample_prior_chain`] and compares the visited partitions with the
/// exact marginal of every valid partition of `x`.
pub fn prior_recovery_check<R: Rng + ?Sized>(
    x: &FamilyVector,
    alpha: Concentration,
    iterations: usize,
    thin: usize,
    rng: &mut R,
) -> Result<PriorRecovery> {
    let support = enumerate_valid_partitions(x, DEFAULT_ENUMERATION_CAP)?;
    let index: HashMap<Vec<usize>, usize> = support
        .iter()
        .enumerate()
        .map(|(i, p)| (p.labels().to_vec(), i))
        .collect();
    let draws = sample_prior_chain(x, alpha, iterations, thin, rng)?;
    if draws.is_empty() {
        return Err(Error::param(
            "iterations",
            "fewer iterations than the thinning interval",
        ));
    }
    let mut counts = vec![0u64; support.len()];
    for d in &draws {
        let i = index
            .get(d.canonical().labels())
            .ok_or_else(|| Error::InvalidPartition("prior chain left the valid support".into()))?;
        counts[*i] += 1;
    }
    let theoretical = support
        .iter()
        .map(|p| Ok(dfcrp_marginal_logprob_exact(p, alpha, x, DEFAULT_ENUMERATION_CAP)?.exp()))
        .collect::<Result<Vec<f64>>>()?;
    let (chi_square, p_value) = if support.len() > 1 {
        chi_square_gof(&counts, &theoretical)
    } else {
        (0.0, 1.0)
    };
    let m = draws.len() as f64;
    let rows = support
        .iter()
        .zip(&counts)
        .zip(&theoretical)
        .map(|((p, &c), &t)| OracleRow {
            partition: p.labels().to_vec(),
            empirical: c as f64 / m,
            theoretical: t,
        })
        .collect();
    Ok(PriorRecovery {
        rows,
        draws: draws.len(),
        chi_square,
        p_value,
    })
}
