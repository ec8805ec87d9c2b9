//! Exact probability computations for the Chinese restaurant process and its
//! cannot-link variant, in which no table may seat two members of the same
//! family.
//!
//! The constrained process is not exchangeable: the probability of a
//! partition depends on the order in which items are seated. An explicit
//! allocation order ([`Permutation`]) is therefore part of the joint model,
//! and the order-invariant marginal averages over all orders under a uniform
//! prior. Everything here works in log space.

use std::collections::HashMap;
use std::hash::Hash;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::stats::{sample_categorical, LogSumExp};

/// Largest item count for which permutations or partitions are enumerated
/// unless the caller raises it.
pub const DEFAULT_ENUMERATION_CAP: usize = 9;

/// Family (cannot-link group) of every item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FamilyVector {
    ids: Vec<usize>,
    slots: usize,
}

impl FamilyVector {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyFamilies);
        }
        let slots = ids.iter().copied().max().unwrap_or(0) + 1;
        Ok(Self { ids, slots })
    }

    /// Maps arbitrary labels to dense ids in order of first appearance.
    /// Returns the family vector and the label of each dense id.
    pub fn from_labels<T: Eq + Hash + Clone>(labels: &[T]) -> Result<(Self, Vec<T>)> {
        let mut index: HashMap<T, usize> = HashMap::new();
        let mut names = Vec::new();
        let ids = labels
            .iter()
            .map(|l| {
                *index.entry(l.clone()).or_insert_with(|| {
                    names.push(l.clone());
                    names.len() - 1
                })
            })
            .collect();
        Ok((Self::new(ids)?, names))
    }

    /// Every item in its own family; the constraint then never binds and the
    /// process reduces to the ordinary CRP.
    pub fn distinct(n: usize) -> Result<Self> {
        Self::new((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.ids
    }

    pub fn get(&self, item: usize) -> usize {
        self.ids[item]
    }

    /// One past the largest family id.
    pub fn num_slots(&self) -> usize {
        self.slots
    }

    pub fn family_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.slots];
        for &f in &self.ids {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn num_distinct(&self) -> usize {
        self.family_sizes().iter().filter(|&&s| s > 0).count()
    }

    pub fn max_family_size(&self) -> usize {
        self.family_sizes().into_iter().max().unwrap_or(0)
    }

    pub fn contains(&self, family: usize) -> bool {
        self.ids.contains(&family)
    }

    /// True when no two items share a family.
    pub fn all_distinct(&self) -> bool {
        self.family_sizes().iter().all(|&s| s <= 1)
    }

    /// Applies an item reindexing: item `i` of the result is item
    /// `order[i]` of `self`.
    pub fn reindexed(&self, order: &Permutation) -> Self {
        Self {
            ids: order.order().iter().map(|&i| self.ids[i]).collect(),
            slots: self.slots,
        }
    }
}

/// Cluster label of every item.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidPartition("no items".into()));
        }
        Ok(Self { labels })
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            labels: (0..n).collect(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Relabels clusters 0, 1, 2, ... in order of first appearance.
    pub fn canonical(&self) -> Self {
        Self {
            labels: canonical_labels(&self.labels),
        }
    }

    pub fn is_canonical(&self) -> bool {
        let mut next = 0;
        for &l in &self.labels {
            if l > next {
                return false;
            }
            if l == next {
                next += 1;
            }
        }
        true
    }

    pub fn num_clusters(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Members of each cluster, clusters in order of first appearance.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let canon = canonical_labels(&self.labels);
        let k = canon.iter().copied().max().map_or(0, |m| m + 1);
        let mut out = vec![Vec::new(); k];
        for (item, &l) in canon.iter().enumerate() {
            out[l].push(item);
        }
        out
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters().iter().map(Vec::len).collect()
    }

    /// True when no cluster holds two members of the same family.
    pub fn is_valid(&self, families: &FamilyVector) -> bool {
        if families.len() != self.len() {
            return false;
        }
        let mut seen = std::collections::HashSet::with_capacity(self.len());
        self.labels
            .iter()
            .zip(families.as_slice())
            .all(|(&l, &f)| seen.insert((l, f)))
    }

    /// Applies an item reindexing: item `i` of the result is item
    /// `order[i]` of `self`.
    pub fn reindexed(&self, order: &Permutation) -> Self {
        Self {
            labels: order.order().iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

pub(crate) fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: HashMap<usize, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Allocation order: `order()[i]` is the item seated `i`-th.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || seen[i] {
                return Err(Error::InvalidPermutation(format!(
                    "{order:?} is not a bijection on 0..{n}"
                )));
            }
            seen[i] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn last(&self) -> usize {
        self.order[self.order.len() - 1]
    }

    pub fn swap_positions(&mut self, a: usize, b: usize) {
        self.order.swap(a, b);
    }
}

/// Concentration parameter of the restaurant process.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Concentration(f64);

impl Concentration {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha.is_finite() {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidConcentration(alpha))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Table occupancy: total seated per table and per family.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SeatingCounts {
    sizes: Vec<usize>,
    family_counts: Vec<HashMap<usize, usize>>,
}

impl SeatingCounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds counts from table membership, given as the family of each
    /// seated customer per table.
    pub fn from_tables(tables: &[Vec<usize>]) -> Self {
        let mut counts = Self::new();
        for table in tables {
            let mut k = None;
            for &f in table {
                k = Some(counts.seat_unchecked(k, f));
            }
        }
        counts
    }

    /// Seats a customer of `family` at table `table` (or a new table when
    /// `None`), returning the table index used.
    pub fn seat(&mut self, table: Option<usize>, family: usize) -> Result<usize> {
        if let Some(k) = table {
            if k >= self.sizes.len() {
                return Err(Error::param("table", format!("table {k} is not occupied")));
            }
        }
        Ok(self.seat_unchecked(table, family))
    }

    fn seat_unchecked(&mut self, table: Option<usize>, family: usize) -> usize {
        let k = match table {
            Some(k) => k,
            None => {
                self.sizes.push(0);
                self.family_counts.push(HashMap::new());
                self.sizes.len() - 1
            }
        };
        self.sizes[k] += 1;
        *self.family_counts[k].entry(family).or_insert(0) += 1;
        k
    }

    pub fn num_tables(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn family_count(&self, table: usize, family: usize) -> usize {
        self.family_counts[table].get(&family).copied().unwrap_or(0)
    }

    pub fn seated(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Customers seated at tables holding no member of `family`.
    pub fn excluding_family(&self, family: usize) -> usize {
        (0..self.sizes.len())
            .filter(|&k| self.family_count(k, family) == 0)
            .map(|k| self.sizes[k])
            .sum()
    }
}

/// Seating probabilities of the next customer under the CRP: one entry per
/// occupied table, then the new-table entry.
pub fn crp_step_probs(table_sizes: &[usize], alpha: Concentration) -> Vec<f64> {
    let a = alpha.value();
    let denom = table_sizes.iter().sum::<usize>() as f64 + a;
    table_sizes
        .iter()
        .map(|&s| s as f64 / denom)
        .chain(std::iter::once(a / denom))
        .collect()
}

/// Seating probabilities of the next customer of `family` under the
/// cannot-link process. Tables already holding the family get zero.
pub fn dfcrp_step_probs(counts: &SeatingCounts, family: usize, alpha: Concentration) -> Vec<f64> {
    let a = alpha.value();
    let denom = counts.excluding_family(family) as f64 + a;
    (0..counts.num_tables())
        .map(|k| {
            if counts.family_count(k, family) > 0 {
                0.0
            } else {
                counts.sizes()[k] as f64 / denom
            }
        })
        .chain(std::iter::once(a / denom))
        .collect()
}

/// One seating event during sequential allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeatingStep {
    /// Opened a new table while `excluded` customers sat at tables free of
    /// the newcomer's family.
    NewTable { excluded: usize },
    /// Joined a table of `size` customers.
    Joined { size: usize, excluded: usize },
}

impl SeatingStep {
    pub fn log_prob(self, alpha: f64) -> f64 {
        match self {
            SeatingStep::NewTable { excluded } => alpha.ln() - (excluded as f64 + alpha).ln(),
            SeatingStep::Joined { size, excluded } => {
                (size as f64).ln() - (excluded as f64 + alpha).ln()
            }
        }
    }
}

/// Reusable buffers for replaying a partition in a given allocation order.
///
/// Labels may be arbitrary (sparse) integers; the workspace maps them to
/// dense table slots and clears only what it touched.
#[derive(Clone, Debug, Default)]
pub struct SeatingWorkspace {
    slot_of_label: Vec<usize>,
    touched: Vec<usize>,
    sizes: Vec<usize>,
    table_families: Vec<Vec<usize>>,
    occupancy: Vec<usize>,
    occupancy_touched: Vec<usize>,
}

const UNSEEN: usize = usize::MAX;

impl SeatingWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replays the allocation, calling `visit` for every step. Returns
    /// `false` (and stops) as soon as an item would share a table with its
    /// own family.
    pub fn replay<F: FnMut(SeatingStep)>(
        &mut self,
        labels: &[usize],
        families: &[usize],
        order: &[usize],
        mut visit: F,
    ) -> bool {
        let mut seated = 0usize;
        let mut valid = true;
        for &item in order {
            let label = labels[item];
            let family = families[item];
            if label >= self.slot_of_label.len() {
                self.slot_of_label.resize(label + 1, UNSEEN);
            }
            if family >= self.occupancy.len() {
                self.occupancy.resize(family + 1, 0);
            }
            let excluded = seated - self.occupancy[family];
            let slot = self.slot_of_label[label];
            if slot == UNSEEN {
                let slot = self.touched.len();
                self.touched.push(label);
                self.slot_of_label[label] = slot;
                if self.sizes.len() <= slot {
                    self.sizes.push(0);
                    self.table_families.push(Vec::new());
                }
                self.sizes[slot] = 1;
                self.table_families[slot].clear();
                self.table_families[slot].push(family);
                if self.occupancy[family] == 0 {
                    self.occupancy_touched.push(family);
                }
                self.occupancy[family] += 1;
                visit(SeatingStep::NewTable { excluded });
            } else {
                if self.table_families[slot].contains(&family) {
                    valid = false;
                    break;
                }
                let size = self.sizes[slot];
                visit(SeatingStep::Joined { size, excluded });
                for &f in &self.table_families[slot] {
                    self.occupancy[f] += 1;
                }
                if self.occupancy[family] == 0 {
                    self.occupancy_touched.push(family);
                }
                self.occupancy[family] += size + 1;
                self.sizes[slot] = size + 1;
                self.table_families[slot].push(family);
            }
            seated += 1;
        }
        for &label in &self.touched {
            self.slot_of_label[label] = UNSEEN;
        }
        self.touched.clear();
        for &f in &self.occupancy_touched {
            self.occupancy[f] = 0;
        }
        self.occupancy_touched.clear();
        valid
    }

    /// Joint log-probability of `labels` seated in `order`, along with the
    /// contribution of the last seated item. `None` if the partition breaks
    /// the family constraint.
    pub fn joint_terms(
        &mut self,
        labels: &[usize],
        families: &[usize],
        order: &[usize],
        alpha: f64,
    ) -> Option<JointTerms> {
        let mut total = 0.0;
        let mut last = 0.0;
        let valid = self.replay(labels, families, order, |step| {
            last = step.log_prob(alpha);
            total += last;
        });
        valid.then_some(JointTerms { total, last })
    }

    /// Records every seating step so the joint can be re-evaluated at any
    /// concentration without replaying.
    pub fn trace(
        &mut self,
        labels: &[usize],
        families: &[usize],
        order: &[usize],
    ) -> Option<AllocationTrace> {
        let mut steps = Vec::with_capacity(order.len());
        let valid = self.replay(labels, families, order, |s| steps.push(s));
        valid.then_some(AllocationTrace { steps })
    }
}

/// Total joint log-probability and the last step's share of it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointTerms {
    pub total: f64,
    pub last: f64,
}

/// Seating steps of one partition under one allocation order.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationTrace {
    steps: Vec<SeatingStep>,
}

impl AllocationTrace {
    pub fn steps(&self) -> &[SeatingStep] {
        &self.steps
    }

    pub fn log_prob(&self, alpha: f64) -> f64 {
        self.steps.iter().map(|s| s.log_prob(alpha)).sum()
    }

    pub fn last_step_log_prob(&self, alpha: f64) -> f64 {
        self.steps.last().map_or(0.0, |s| s.log_prob(alpha))
    }
}

fn check_lengths(c: &Partition, x: &FamilyVector, sigma: Option<&Permutation>) -> Result<()> {
    if x.len() != c.len() {
        return Err(Error::LengthMismatch {
            what: "family vector",
            expected: c.len(),
            found: x.len(),
        });
    }
    if let Some(sigma) = sigma {
        if sigma.len() != c.len() {
            return Err(Error::LengthMismatch {
                what: "permutation",
                expected: c.len(),
                found: sigma.len(),
            });
        }
    }
    Ok(())
}

/// `ln p(c | α, x, σ)`: the product of sequential seating probabilities in
/// the order `sigma`. `-inf` when a cluster holds two members of one family.
pub fn dfcrp_joint_logprob(
    c: &Partition,
    alpha: Concentration,
    x: &FamilyVector,
    sigma: &Permutation,
) -> Result<f64> {
    check_lengths(c, x, Some(sigma))?;
    let mut ws = SeatingWorkspace::new();
    Ok(ws
        .joint_terms(c.labels(), x.as_slice(), sigma.order(), alpha.value())
        .map_or(f64::NEG_INFINITY, |t| t.total))
}

/// Visits every permutation of `0..n` once (Heap's algorithm).
pub fn for_each_permutation<F: FnMut(&[usize])>(n: usize, mut f: F) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut counters = vec![0usize; n];
    f(&order);
    let mut i = 0;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(counters[i], i);
            }
            f(&order);
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Order-invariant `ln p(c | α, x)`: the joint averaged over all `n!`
/// allocation orders. Refuses when `n` exceeds `cap`.
///
/// The numerators of the seating rule multiply to `α^K ∏ (n_k − 1)!` in
/// every order, so only the denominators are averaged. Their sum over
/// orders is accumulated over subsets of seated items, which takes
/// `O(2^n n)` time and `2^n` memory.
pub fn dfcrp_marginal_logprob_exact(
    c: &Partition,
    alpha: Concentration,
    x: &FamilyVector,
    cap: usize,
) -> Result<f64> {
    check_lengths(c, x, None)?;
    let n = c.len();
    if n > cap {
        return Err(Error::EnumerationCap { n, cap });
    }
    if n >= usize::BITS as usize - 1 {
        return Err(Error::EnumerationCap {
            n,
            cap: usize::BITS as usize - 2,
        });
    }
    if !c.is_valid(x) {
        return Ok(f64::NEG_INFINITY);
    }
    let a = alpha.value();
    let labels = c.labels();
    let fam = x.as_slice();
    let cluster_mask: Vec<usize> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| labels[j] == labels[i])
                .fold(0, |m, j| m | 1 << j)
        })
        .collect();
    // Items sharing a family with i, paired with the cluster each sits in.
    let kin: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && fam[j] == fam[i])
                .map(|j| (1 << j, cluster_mask[j]))
                .collect()
        })
        .collect();

    let mut g = vec![0.0f64; 1 << n];
    g[0] = 1.0;
    for s in 1usize..(1 << n) {
        let mut total = 0.0;
        let mut rest = s;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let before = s & !(1 << i);
            let mut seated = before.count_ones() as usize;
            for &(bit, mask) in &kin[i] {
                if before & bit != 0 {
                    seated -= (before & mask).count_ones() as usize;
                }
            }
            total += g[before] / (seated as f64 + a);
        }
        g[s] = total;
    }

    let numerator: f64 = c
        .cluster_sizes()
        .iter()
        .map(|&m| a.ln() + ln_factorial(m - 1))
        .sum();
    Ok(numerator + g[(1 << n) - 1].ln() - ln_factorial(n))
}

/// As [`dfcrp_marginal_logprob_exact`], but replays every one of the `n!`
/// orders through the seating rule.
pub fn dfcrp_marginal_logprob_enumerated(
    c: &Partition,
    alpha: Concentration,
    x: &FamilyVector,
    cap: usize,
) -> Result<f64> {
    check_lengths(c, x, None)?;
    let n = c.len();
    if n > cap {
        return Err(Error::EnumerationCap { n, cap });
    }
    if !c.is_valid(x) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut ws = SeatingWorkspace::new();
    let mut acc = LogSumExp::default();
    for_each_permutation(n, |order| {
        if let Some(t) = ws.joint_terms(c.labels(), x.as_slice(), order, alpha.value()) {
            acc.push(t.total);
        }
    });
    Ok(acc.value() - ln_factorial(n))
}

/// Averages `p(c | α, x, σ)` over the supplied allocation orders, returning
/// the log of the average.
pub fn average_over_permutations<'a, I>(
    c: &Partition,
    alpha: Concentration,
    x: &FamilyVector,
    orders: I,
) -> Result<f64>
where
    I: IntoIterator<Item = &'a Permutation>,
{
    check_lengths(c, x, None)?;
    let mut ws = SeatingWorkspace::new();
    let mut acc = LogSumExp::default();
    let mut count = 0usize;
    for sigma in orders {
        check_lengths(c, x, Some(sigma))?;
        count += 1;
        if let Some(t) = ws.joint_terms(c.labels(), x.as_slice(), sigma.order(), alpha.value()) {
            acc.push(t.total);
        }
    }
    if count == 0 {
        return Err(Error::param(
            "orders",
            "at least one permutation is required",
        ));
    }
    Ok(acc.value() - (count as f64).ln())
}

/// How allocation orders are drawn for the Monte Carlo marginal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PermutationAveraging {
    /// Independent uniform orders; unbiased for the marginal.
    #[default]
    Uniform,
    /// States of a swap-with-last Metropolis chain targeting
    /// `p(σ | c, α, x)`. Weighted towards high-probability orders, so it
    /// overestimates the marginal; kept for comparison.
    Metropolis,
}

/// Monte Carlo estimate of `ln p(c | α, x)`.
pub fn dfcrp_marginal_logprob_mc<R: Rng + ?Sized>(
    c: &Partition,
    alpha: Concentration,
    x: &FamilyVector,
    num_samples: usize,
    averaging: PermutationAveraging,
    rng: &mut R,
) -> Result<f64> {
    check_lengths(c, x, None)?;
    if num_samples == 0 {
        return Err(Error::param("num_samples", "must be at least 1"));
    }
    if !c.is_valid(x) {
        return Ok(f64::NEG_INFINITY);
    }
    let n = c.len();
    let a = alpha.value();
    let mut ws = SeatingWorkspace::new();
    let mut acc = LogSumExp::default();
    let mut eval = |order: &[usize]| {
        ws.joint_terms(c.labels(), x.as_slice(), order, a)
            .map_or(f64::NEG_INFINITY, |t| t.total)
    };
    match averaging {
        PermutationAveraging::Uniform => {
            let mut sigma = Permutation::identity(n);
            for _ in 0..num_samples {
                sigma.order.shuffle(rng);
                acc.push(eval(sigma.order()));
            }
        }
        PermutationAveraging::Metropolis => {
            let mut sigma = Permutation::random(n, rng);
            let mut current = eval(sigma.order());
            for _ in 0..num_samples {
                let j = rng.random_range(0..n);
                if j != n - 1 {
                    sigma.swap_positions(j, n - 1);
                    let proposed = eval(sigma.order());
                    let u: f64 = rng.random();
                    if u.ln() < proposed - current {
                        current = proposed;
                    } else {
                        sigma.swap_positions(j, n - 1);
                    }
                }
                acc.push(current);
            }
        }
    }
    Ok(acc.value() - (num_samples as f64).ln())
}

/// Every partition of the items with at most one member of each family per
/// cluster, canonically labelled, in lexicographic order of labels.
pub fn enumerate_valid_partitions(x: &FamilyVector, cap: usize) -> Result<Vec<Partition>> {
    let n = x.len();
    if n > cap {
        return Err(Error::EnumerationCap { n, cap });
    }
    let mut out = Vec::new();
    let mut labels = Vec::with_capacity(n);
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    grow(x.as_slice(), &mut labels, &mut blocks, &mut out);
    Ok(out)
}

fn grow(
    families: &[usize],
    labels: &mut Vec<usize>,
    blocks: &mut Vec<Vec<usize>>,
    out: &mut Vec<Partition>,
) {
    let i = labels.len();
    if i == families.len() {
        out.push(Partition {
            labels: labels.clone(),
        });
        return;
    }
    let f = families[i];
    for b in 0..=blocks.len() {
        if b < blocks.len() {
            if blocks[b].contains(&f) {
                continue;
            }
            blocks[b].push(f);
        } else {
            blocks.push(vec![f]);
        }
        labels.push(b);
        grow(families, labels, blocks, out);
        labels.pop();
        if b + 1 == blocks.len() && blocks[b].len() == 1 {
            blocks.pop();
        } else {
            blocks[b].pop();
        }
    }
}

/// Draws a partition from the order-invariant prior: a uniformly random
/// allocation order, then sequential seating.
pub fn sample_prior_partition<R: Rng + ?Sized>(
    alpha: Concentration,
    x: &FamilyVector,
    rng: &mut R,
) -> Partition {
    let sigma = Permutation::random(x.len(), rng);
    let mut counts = SeatingCounts::new();
    let mut labels = vec![0; x.len()];
    for &item in sigma.order() {
        let family = x.get(item);
        let probs = dfcrp_step_probs(&counts, family, alpha);
        let choice = sample_categorical(&probs, rng);
        let table = (choice < counts.num_tables()).then_some(choice);
        labels[item] = counts.seat_unchecked(table, family);
    }
    Partition::new(labels).expect("non-empty").canonical()
}
