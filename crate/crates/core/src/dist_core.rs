//! Distributions: dense pmfs, structured specs, samplers and basic functionals.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{domain, Error, Result};
use crate::numeric::{kahan_sum, ln_factorial};
use crate::rng::TestRng;

/// Upper bound on n·k (and on PMD support size) for exact convolution.
pub const CONVOLVE_LIMIT: u64 = 10_000_000;

const NORMALIZED_TOL: f64 = 1e-9;
const SUMMAND_TOL: f64 = 1e-12;

/// Dense mass function on the window `[offset, offset + len - 1]`.
///
/// `normalized == false` marks a pseudo-distribution: entries may be
/// negative and need not sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    offset: i64,
    weights: Vec<f64>,
    normalized: bool,
}

impl Pmf {
    /// Validated probability mass function.
    pub fn new(offset: i64, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return domain("pmf needs at least one weight");
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return domain(format!("weight {i} is {w}, expected a finite nonnegative value"));
        }
        let total = kahan_sum(weights.iter().copied());
        if (total - 1.0).abs() > NORMALIZED_TOL {
            return domain(format!("weights sum to {total}, expected 1"));
        }
        Ok(Pmf { offset, weights, normalized: true })
    }

    /// Nonnegative weights rescaled to unit mass.
    pub fn normalize_from(offset: i64, mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return domain("weights must be finite and nonnegative");
        }
        let total = kahan_sum(weights.iter().copied());
        if !(total > 0.0) {
            return domain("weights have zero total mass");
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(Pmf { offset, weights, normalized: true })
    }

    /// Pseudo-distribution; any finite values.
    pub fn pseudo(offset: i64, weights: Vec<f64>) -> Self {
        debug_assert!(weights.iter().all(|w| w.is_finite()));
        Pmf { offset, weights, normalized: false }
    }

    pub fn point(x: i64) -> Self {
        Pmf { offset: x, weights: vec![1.0], normalized: true }
    }

    /// Uniform on `{lo, ..., hi}`.
    pub fn uniform(lo: i64, hi: i64) -> Self {
        assert!(hi >= lo, "uniform needs lo <= hi");
        let len = (hi - lo + 1) as usize;
        Pmf { offset: lo, weights: vec![1.0 / len as f64; len], normalized: true }
    }

    /// Bin(n, p), computed by the ratio recurrence outward from the mode.
    pub fn binomial(n: u64, p: f64) -> Self {
        Self::shifted_binomial(0, n, p)
    }

    /// `shift + Bin(trials, p)`.
    pub fn shifted_binomial(shift: i64, trials: u64, p: f64) -> Self {
        assert!((0.0..=1.0).contains(&p), "binomial p outside [0,1]");
        let n = trials as usize;
        if p == 0.0 {
            return Pmf::point(shift);
        }
        if p == 1.0 {
            return Pmf::point(shift + trials as i64);
        }
        let mut w = vec![0.0; n + 1];
        let mode = (((trials + 1) as f64) * p).floor().min(trials as f64) as usize;
        let odds = p / (1.0 - p);
        w[mode] = 1.0;
        for j in mode..n {
            w[j + 1] = w[j] * ((n - j) as f64 / (j + 1) as f64) * odds;
        }
        for j in (1..=mode).rev() {
            w[j - 1] = w[j] * (j as f64 / (n - j + 1) as f64) / odds;
        }
        let total = kahan_sum(w.iter().copied());
        for x in &mut w {
            *x /= total;
        }
        Pmf { offset: shift, weights: w, normalized: true }
    }

    /// Geometric pmf (1-p)^x p restricted to `{0, ..., hi}` and renormalized.
    pub fn truncated_geometric(p: f64, hi: i64) -> Self {
        let w: Vec<f64> = (0..=hi).map(|x| (1.0 - p).powi(x as i32) * p).collect();
        Self::normalize_from(0, w).expect("geometric weights are positive")
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Last point of the window.
    pub fn hi(&self) -> i64 {
        self.offset + self.weights.len() as i64 - 1
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Weight at `x`; zero outside the window.
    pub fn get(&self, x: i64) -> f64 {
        let i = x - self.offset;
        if i < 0 || i >= self.weights.len() as i64 {
            0.0
        } else {
            self.weights[i as usize]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .map(move |(i, &w)| (self.offset + i as i64, w))
    }

    pub fn mass(&self) -> f64 {
        kahan_sum(self.weights.iter().copied())
    }

    pub fn l2_sq(&self) -> f64 {
        kahan_sum(self.weights.iter().map(|w| w * w))
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest and largest points with nonzero weight.
    pub fn support_bounds(&self) -> Option<(i64, i64)> {
        let first = self.weights.iter().position(|&w| w != 0.0)?;
        let last = self.weights.iter().rposition(|&w| w != 0.0)?;
        Some((self.offset + first as i64, self.offset + last as i64))
    }

    /// Drops zero weights at both ends of the window.
    pub fn trimmed(&self) -> Self {
        match self.support_bounds() {
            None => self.clone(),
            Some((lo, hi)) => Pmf {
                offset: lo,
                weights: self.weights[(lo - self.offset) as usize..=(hi - self.offset) as usize]
                    .to_vec(),
                normalized: self.normalized,
            },
        }
    }

    /// Translate by `d`.
    pub fn shifted(&self, d: i64) -> Self {
        Pmf { offset: self.offset + d, ..self.clone() }
    }

    /// Weights on `[lo, hi]`, zero-padded.
    pub fn window(&self, lo: i64, hi: i64) -> Vec<f64> {
        (lo..=hi).map(|x| self.get(x)).collect()
    }

    /// Distribution of the sum of independent draws.
    pub fn convolve(&self, other: &Pmf) -> Pmf {
        let mut out = vec![0.0; self.len() + other.len() - 1];
        for (i, &a) in self.weights.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.weights.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Pmf {
            offset: self.offset + other.offset,
            weights: out,
            normalized: self.normalized && other.normalized,
        }
    }

    /// n-fold self-convolution by repeated squaring.
    pub fn iid_sum(&self, n: u64) -> Pmf {
        let mut result = Pmf::point(0);
        let mut base = self.trimmed();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                result = result.convolve(&base).trimmed();
            }
            e >>= 1;
            if e > 0 {
                base = base.convolve(&base).trimmed();
            }
        }
        result.normalized = self.normalized;
        result
    }

    /// `w·self + (1-w)·other`.
    pub fn mixture(&self, other: &Pmf, w: f64) -> Pmf {
        let lo = self.offset.min(other.offset);
        let hi = self.hi().max(other.hi());
        let weights = (lo..=hi)
            .map(|x| w * self.get(x) + (1.0 - w) * other.get(x))
            .collect();
        Pmf {
            offset: lo,
            weights,
            normalized: self.normalized && other.normalized,
        }
    }
}

/// Sum of n independent variables on `{0, ..., k-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiirvSpec {
    k: usize,
    summands: Vec<Vec<f64>>,
}

fn check_summand(j: usize, q: &[f64], k: usize) -> Result<()> {
    if q.len() != k {
        return domain(format!("summands[{j}] has {} entries, expected k = {k}", q.len()));
    }
    if q.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return domain(format!("summands[{j}] has a negative or non-finite entry"));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > SUMMAND_TOL {
        return domain(format!("summands[{j}] sums to {total}, expected 1"));
    }
    Ok(())
}

impl SiirvSpec {
    pub fn new(k: usize, summands: Vec<Vec<f64>>) -> Result<Self> {
        if k < 2 {
            return domain(format!("k = {k}, expected k >= 2"));
        }
        if summands.is_empty() {
            return domain("a SIIRV needs at least one summand");
        }
        for (j, q) in summands.iter().enumerate() {
            check_summand(j, q, k)?;
        }
        Ok(SiirvSpec { k, summands })
    }

    /// n i.i.d. copies of `q`.
    pub fn iid(n: usize, q: &[f64]) -> Result<Self> {
        Self::new(q.len(), vec![q.to_vec(); n])
    }

    /// Poisson binomial with success probabilities `ps`.
    pub fn pbd(ps: &[f64]) -> Result<Self> {
        Self::new(2, ps.iter().map(|&p| vec![1.0 - p, p]).collect())
    }

    pub fn binomial(n: usize, p: f64) -> Result<Self> {
        Self::iid(n, &[1.0 - p, p])
    }

    pub fn n(&self) -> usize {
        self.summands.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn summands(&self) -> &[Vec<f64>] {
        &self.summands
    }

    pub fn mean(&self) -> f64 {
        self.summands
            .iter()
            .map(|q| q.iter().enumerate().map(|(x, w)| x as f64 * w).sum::<f64>())
            .sum()
    }

    pub fn variance(&self) -> f64 {
        self.summands
            .iter()
            .map(|q| {
                let m: f64 = q.iter().enumerate().map(|(x, w)| x as f64 * w).sum();
                q.iter()
                    .enumerate()
                    .map(|(x, w)| (x as f64 - m).powi(2) * w)
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Sum of n independent random vectors on the standard basis of Z^k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmdSpec {
    k: usize,
    summands: Vec<Vec<f64>>,
}

impl PmdSpec {
    pub fn new(k: usize, summands: Vec<Vec<f64>>) -> Result<Self> {
        if k < 2 {
            return domain(format!("k = {k}, expected k >= 2"));
        }
        if summands.is_empty() {
            return domain("a PMD needs at least one summand");
        }
        for (j, q) in summands.iter().enumerate() {
            check_summand(j, q, k)?;
        }
        Ok(PmdSpec { k, summands })
    }

    pub fn iid(n: usize, q: &[f64]) -> Result<Self> {
        Self::new(q.len(), vec![q.to_vec(); n])
    }

    pub fn n(&self) -> usize {
        self.summands.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn summands(&self) -> &[Vec<f64>] {
        &self.summands
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.k)
            .map(|i| self.summands.iter().map(|q| q[i]).sum())
            .collect()
    }

    /// Sum of per-summand categorical covariances diag(q) - q qᵀ.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let mut c = vec![vec![0.0; self.k]; self.k];
        for q in &self.summands {
            for i in 0..self.k {
                for j in 0..self.k {
                    c[i][j] += if i == j { q[i] } else { 0.0 } - q[i] * q[j];
                }
            }
        }
        c
    }
}

/// Sparse mass function on Z^k.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPmf {
    k: usize,
    entries: BTreeMap<Vec<i64>, f64>,
}

impl MultiPmf {
    pub fn new(k: usize, entries: BTreeMap<Vec<i64>, f64>) -> Result<Self> {
        if entries.keys().any(|x| x.len() != k) {
            return domain(format!("support point of wrong dimension, expected {k}"));
        }
        if entries.values().any(|w| !w.is_finite() || *w < 0.0) {
            return domain("multivariate pmf has a negative or non-finite weight");
        }
        let total = kahan_sum(entries.values().copied());
        if (total - 1.0).abs() > NORMALIZED_TOL {
            return domain(format!("multivariate weights sum to {total}, expected 1"));
        }
        Ok(MultiPmf { k, entries })
    }

    /// Empirical distribution of vector counts.
    pub fn from_counts(k: usize, counts: &BTreeMap<Vec<i64>, u64>) -> Result<Self> {
        let total: u64 = counts.values().sum();
        if total == 0 {
            return domain("empty sample set");
        }
        let entries = counts
            .iter()
            .map(|(x, &c)| (x.clone(), c as f64 / total as f64))
            .collect();
        Self::new(k, entries)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, x: &[i64]) -> f64 {
        self.entries.get(x).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<i64>, f64)> + '_ {
        self.entries.iter().map(|(x, &w)| (x, w))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn l2_sq(&self) -> f64 {
        kahan_sum(self.entries.values().map(|w| w * w))
    }

    /// (Σ p(x)^r)^(1/r).
    pub fn norm_r(&self, r: f64) -> f64 {
        kahan_sum(self.entries.values().map(|w| w.powf(r))).powf(1.0 / r)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.k];
        for (x, &w) in &self.entries {
            for i in 0..self.k {
                m[i] += w * x[i] as f64;
            }
        }
        m
    }

    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let m = self.mean();
        let mut c = vec![vec![0.0; self.k]; self.k];
        for (x, &w) in &self.entries {
            for i in 0..self.k {
                for j in 0..self.k {
                    c[i][j] += w * (x[i] as f64 - m[i]) * (x[j] as f64 - m[j]);
                }
            }
        }
        c
    }
}

/// Histogram of integer draws.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    map: BTreeMap<i64, u64>,
    total: u64,
}

impl Counts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_values(values: &[i64]) -> Self {
        let mut c = Counts::new();
        for &x in values {
            c.add(x, 1);
        }
        c
    }

    pub fn add(&mut self, x: i64, count: u64) {
        if count > 0 {
            *self.map.entry(x).or_insert(0) += count;
            self.total += count;
        }
    }

    pub fn merge(&mut self, other: &Counts) {
        for (&x, &c) in &other.map {
            self.add(x, c);
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn get(&self, x: i64) -> u64 {
        self.map.get(&x).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, u64)> + '_ {
        self.map.iter().map(|(&x, &c)| (x, c))
    }

    pub fn min(&self) -> Option<i64> {
        self.map.keys().next().copied()
    }

    pub fn max(&self) -> Option<i64> {
        self.map.keys().next_back().copied()
    }

    /// Sample mean and unbiased sample variance (0 for fewer than two draws).
    pub fn mean_var(&self) -> (f64, f64) {
        if self.total == 0 {
            return (f64::NAN, f64::NAN);
        }
        let n = self.total as f64;
        let mean = kahan_sum(self.map.iter().map(|(&x, &c)| x as f64 * c as f64)) / n;
        if self.total < 2 {
            return (mean, 0.0);
        }
        let ss = kahan_sum(
            self.map
                .iter()
                .map(|(&x, &c)| c as f64 * (x as f64 - mean).powi(2)),
        );
        (mean, ss / (n - 1.0))
    }

    /// Number of draws outside `[lo, hi]`.
    pub fn outside(&self, lo: i64, hi: i64) -> u64 {
        self.total - self.map.range(lo..=hi).map(|(_, &c)| c).sum::<u64>()
    }

    /// Dense counts on `[lo, hi]`; draws outside are dropped.
    pub fn window(&self, lo: i64, hi: i64) -> Vec<u64> {
        let mut out = vec![0u64; (hi - lo + 1).max(0) as usize];
        for (&x, &c) in self.map.range(lo..=hi) {
            out[(x - lo) as usize] = c;
        }
        out
    }

    /// Dense counts of residues, indexed so that slot i holds `anchor + i`.
    pub fn reduce_mod(&self, m: u64, anchor: i64) -> Vec<u64> {
        let mut out = vec![0u64; m as usize];
        for (&x, &c) in &self.map {
            out[(x - anchor).rem_euclid(m as i64) as usize] += c;
        }
        out
    }

    /// Empirical distribution on `[min, max]`.
    pub fn to_pmf(&self) -> Result<Pmf> {
        let (lo, hi) = match (self.min(), self.max()) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => return domain("empty sample set"),
        };
        let n = self.total as f64;
        let w = self.window(lo, hi).into_iter().map(|c| c as f64 / n).collect();
        Ok(Pmf { offset: lo, weights: w, normalized: true })
    }
}

/// Sample access to an unknown one-dimensional distribution.
pub trait Sampler: Send + Sync {
    fn draw(&self, rng: &mut TestRng) -> i64;

    /// Histogram of `count` independent draws.
    fn draw_counts(&self, count: u64, rng: &mut TestRng) -> Counts {
        let mut c = Counts::new();
        for _ in 0..count {
            c.add(self.draw(rng), 1);
        }
        c
    }
}

/// Sample access to an unknown distribution on Z^k.
pub trait VecSampler: Send + Sync {
    fn dim(&self) -> usize;

    fn draw(&self, rng: &mut TestRng) -> Vec<i64>;

    fn draw_counts(&self, count: u64, rng: &mut TestRng) -> BTreeMap<Vec<i64>, u64> {
        let mut c = BTreeMap::new();
        for _ in 0..count {
            *c.entry(self.draw(rng)).or_insert(0) += 1;
        }
        c
    }
}

/// Finite-support sampler over arbitrary atoms.
///
/// Single draws use inverse-CDF lookup. Histograms of many draws are
/// generated as one multinomial vector through conditional binomials,
/// which costs O(support) rather than O(count).
#[derive(Clone, Debug)]
pub struct AtomSampler<T> {
    atoms: Vec<T>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl<T: Clone> AtomSampler<T> {
    pub fn new(pairs: Vec<(T, f64)>) -> Result<Self> {
        let pairs: Vec<(T, f64)> = pairs.into_iter().filter(|(_, w)| *w > 0.0).collect();
        if pairs.is_empty() {
            return domain("sampler needs positive mass");
        }
        if pairs.iter().any(|(_, w)| !w.is_finite()) {
            return domain("sampler weights must be finite");
        }
        let total = kahan_sum(pairs.iter().map(|(_, w)| *w));
        let mut atoms = Vec::with_capacity(pairs.len());
        let mut probs = Vec::with_capacity(pairs.len());
        let mut cdf = Vec::with_capacity(pairs.len());
        let mut acc = 0.0;
        for (a, w) in pairs {
            let p = w / total;
            acc += p;
            atoms.push(a);
            probs.push(p);
            cdf.push(acc);
        }
        Ok(AtomSampler { atoms, probs, cdf })
    }

    fn index(&self, rng: &mut TestRng) -> usize {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.atoms.len() - 1)
    }

    pub fn draw_atom(&self, rng: &mut TestRng) -> T {
        self.atoms[self.index(rng)].clone()
    }

    /// Multinomial(count, probs) as (atom, count) pairs with nonzero counts.
    pub fn multinomial(&self, count: u64, rng: &mut TestRng) -> Vec<(T, u64)> {
        let mut out = Vec::new();
        let mut remaining = count;
        let mut rest = 1.0f64;
        let last = self.atoms.len() - 1;
        for (i, &p) in self.probs.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            let x = if i == last || p >= rest {
                remaining
            } else {
                let q = (p / rest).clamp(0.0, 1.0);
                Binomial::new(remaining, q)
                    .expect("binomial parameter in [0,1]")
                    .sample(rng)
            };
            if x > 0 {
                out.push((self.atoms[i].clone(), x));
            }
            remaining -= x;
            rest -= p;
        }
        out
    }
}

impl Sampler for AtomSampler<i64> {
    fn draw(&self, rng: &mut TestRng) -> i64 {
        self.draw_atom(rng)
    }

    fn draw_counts(&self, count: u64, rng: &mut TestRng) -> Counts {
        let mut c = Counts::new();
        for (x, n) in self.multinomial(count, rng) {
            c.add(x, n);
        }
        c
    }
}

pub type PmfSampler = AtomSampler<i64>;

impl AtomSampler<i64> {
    pub fn from_pmf(p: &Pmf) -> Result<Self> {
        if !p.is_normalized() {
            return domain("cannot sample from a pseudo-distribution");
        }
        Self::new(p.iter().collect())
    }

    /// Draws with replacement from a list of observed values.
    pub fn from_values(values: &[i64]) -> Result<Self> {
        let c = Counts::from_values(values);
        Self::new(c.iter().map(|(x, n)| (x, n as f64)).collect())
    }
}

pub struct MultiPmfSampler {
    k: usize,
    inner: AtomSampler<Vec<i64>>,
}

impl MultiPmfSampler {
    pub fn new(p: &MultiPmf) -> Result<Self> {
        Ok(MultiPmfSampler {
            k: p.k(),
            inner: AtomSampler::new(p.iter().map(|(x, w)| (x.clone(), w)).collect())?,
        })
    }
}

impl VecSampler for MultiPmfSampler {
    fn dim(&self) -> usize {
        self.k
    }

    fn draw(&self, rng: &mut TestRng) -> Vec<i64> {
        self.inner.draw_atom(rng)
    }

    fn draw_counts(&self, count: u64, rng: &mut TestRng) -> BTreeMap<Vec<i64>, u64> {
        self.inner.multinomial(count, rng).into_iter().collect()
    }
}

/// Draws each summand separately. Bulk counts go through the exact pmf,
/// built on first use, whenever n·k is within the convolution limit.
pub struct SiirvSampler {
    summands: Vec<AtomSampler<i64>>,
    spec: SiirvSpec,
    exact: std::sync::OnceLock<Option<PmfSampler>>,
}

impl SiirvSampler {
    pub fn new(spec: &SiirvSpec) -> Self {
        let summands = spec
            .summands()
            .iter()
            .map(|q| {
                AtomSampler::new(q.iter().enumerate().map(|(x, &w)| (x as i64, w)).collect())
                    .expect("validated summand")
            })
            .collect();
        SiirvSampler { summands, spec: spec.clone(), exact: std::sync::OnceLock::new() }
    }

    fn exact(&self) -> Option<&PmfSampler> {
        self.exact
            .get_or_init(|| {
                let size = self.spec.n() as u64 * self.spec.k() as u64;
                if size > CONVOLVE_LIMIT {
                    return None;
                }
                convolve_exact(&self.spec).ok().and_then(|p| PmfSampler::from_pmf(&p).ok())
            })
            .as_ref()
    }
}

impl Sampler for SiirvSampler {
    fn draw(&self, rng: &mut TestRng) -> i64 {
        self.summands.iter().map(|s| s.draw_atom(rng)).sum()
    }

    fn draw_counts(&self, count: u64, rng: &mut TestRng) -> Counts {
        // Below this many draws the direct route is cheaper than building the pmf.
        if count.saturating_mul(self.summands.len() as u64) > 1_000_000 {
            if let Some(p) = self.exact() {
                return p.draw_counts(count, rng);
            }
        }
        let mut out = Counts::new();
        for _ in 0..count {
            out.add(self.draw(rng), 1);
        }
        out
    }
}

pub struct PmdSampler {
    k: usize,
    summands: Vec<AtomSampler<usize>>,
}

impl PmdSampler {
    pub fn new(spec: &PmdSpec) -> Self {
        let summands = spec
            .summands()
            .iter()
            .map(|q| {
                AtomSampler::new(q.iter().copied().enumerate().collect())
                    .expect("validated summand")
            })
            .collect();
        PmdSampler { k: spec.k(), summands }
    }
}

impl VecSampler for PmdSampler {
    fn dim(&self) -> usize {
        self.k
    }

    fn draw(&self, rng: &mut TestRng) -> Vec<i64> {
        let mut x = vec![0i64; self.k];
        for s in &self.summands {
            x[s.draw_atom(rng)] += 1;
        }
        x
    }
}

/// Sample access to `P mod M`, folded onto `[anchor, anchor + M - 1]`.
pub struct ModSampler<'a> {
    inner: &'a dyn Sampler,
    modulus: u64,
    anchor: i64,
}

impl<'a> ModSampler<'a> {
    pub fn new(inner: &'a dyn Sampler, modulus: u64, anchor: i64) -> Self {
        assert!(modulus >= 1, "modulus must be positive");
        ModSampler { inner, modulus, anchor }
    }
}

impl Sampler for ModSampler<'_> {
    fn draw(&self, rng: &mut TestRng) -> i64 {
        self.anchor + (self.inner.draw(rng) - self.anchor).rem_euclid(self.modulus as i64)
    }

    fn draw_counts(&self, count: u64, rng: &mut TestRng) -> Counts {
        let raw = self.inner.draw_counts(count, rng);
        let mut out = Counts::new();
        for (i, c) in raw.reduce_mod(self.modulus, self.anchor).into_iter().enumerate() {
            out.add(self.anchor + i as i64, c);
        }
        out
    }
}

/// Generative description of a distribution, as read from spec files.
#[derive(Clone, Debug, PartialEq)]
pub enum DistSpec {
    Siirv(SiirvSpec),
    Pmd(PmdSpec),
    Pmf(Pmf),
    LogConcave(Pmf),
}

/// A drawn point: scalar for 1-D families, vector for PMDs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Point {
    Scalar(i64),
    Vector(Vec<i64>),
}

impl std::fmt::Display for Point {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Point::Scalar(x) => write!(f, "{x}"),
            Point::Vector(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "{}", parts.join(" "))
            }
        }
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::Domain(format!("spec field \"{name}\" is missing")))
}

fn uint_field(obj: &serde_json::Map<String, Value>, name: &str) -> Result<u64> {
    field(obj, name)?
        .as_u64()
        .ok_or_else(|| Error::Domain(format!("spec field \"{name}\" must be a nonnegative integer")))
}

fn real_list(v: &Value, name: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Domain(format!("spec field \"{name}\" must be an array of numbers")))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .ok_or_else(|| Error::Domain(format!("spec field \"{name}[{i}]\" must be a number")))
        })
        .collect()
}

fn named(name: &str, e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Domain(format!("spec field \"{name}\": {m}")),
        other => other,
    }
}

impl DistSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Domain(format!("spec is not valid JSON: {e}")))?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Domain("spec must be a JSON object".into()))?;
        let kind = field(obj, "type")?
            .as_str()
            .ok_or_else(|| Error::Domain("spec field \"type\" must be a string".into()))?;
        match kind {
            "siirv" | "pmd" => {
                let k = uint_field(obj, "k")? as usize;
                let raw = field(obj, "summands")?
                    .as_array()
                    .ok_or_else(|| Error::Domain("spec field \"summands\" must be an array".into()))?;
                let summands = raw
                    .iter()
                    .enumerate()
                    .map(|(j, q)| real_list(q, &format!("summands[{j}]")))
                    .collect::<Result<Vec<_>>>()?;
                if let Some(n) = obj.get("n") {
                    let n = n.as_u64().ok_or_else(|| {
                        Error::Domain("spec field \"n\" must be a nonnegative integer".into())
                    })?;
                    if n as usize != summands.len() {
                        return domain(format!(
                            "spec field \"n\" is {n} but \"summands\" has {} entries",
                            summands.len()
                        ));
                    }
                }
                if k < 2 {
                    return domain(format!("spec field \"k\" is {k}, expected k >= 2"));
                }
                if kind == "siirv" {
                    SiirvSpec::new(k, summands)
                        .map(DistSpec::Siirv)
                        .map_err(|e| named("summands", e))
                } else {
                    PmdSpec::new(k, summands)
                        .map(DistSpec::Pmd)
                        .map_err(|e| named("summands", e))
                }
            }
            "pmf" | "logconcave" => {
                let offset = match obj.get("offset") {
                    None => 0,
                    Some(v) => v
                        .as_i64()
                        .ok_or_else(|| Error::Domain("spec field \"offset\" must be an integer".into()))?,
                };
                let weights = real_list(field(obj, "weights")?, "weights")?;
                let p = Pmf::new(offset, weights).map_err(|e| named("weights", e))?;
                if kind == "logconcave" {
                    if !is_logconcave(&p, 1e-12) {
                        return domain("spec field \"weights\" is not log-concave");
                    }
                    Ok(DistSpec::LogConcave(p))
                } else {
                    Ok(DistSpec::Pmf(p))
                }
            }
            other => domain(format!(
                "spec field \"type\" is \"{other}\", expected siirv, pmd, pmf or logconcave"
            )),
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            DistSpec::Siirv(s) => json!({
                "type": "siirv", "n": s.n(), "k": s.k(), "summands": s.summands()
            }),
            DistSpec::Pmd(s) => json!({
                "type": "pmd", "n": s.n(), "k": s.k(), "summands": s.summands()
            }),
            DistSpec::Pmf(p) => json!({
                "type": "pmf", "offset": p.offset(), "weights": p.weights()
            }),
            DistSpec::LogConcave(p) => json!({
                "type": "logconcave", "offset": p.offset(), "weights": p.weights()
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_value()).expect("spec values are finite")
    }

    pub fn is_multivariate(&self) -> bool {
        matches!(self, DistSpec::Pmd(_))
    }

    /// Exact one-dimensional pmf, when the family is one-dimensional.
    pub fn exact_pmf(&self) -> Result<Pmf> {
        match self {
            DistSpec::Siirv(s) => convolve_exact(s),
            DistSpec::Pmf(p) | DistSpec::LogConcave(p) => Ok(p.clone()),
            DistSpec::Pmd(_) => domain("a PMD spec has no one-dimensional pmf"),
        }
    }

    pub fn sampler(&self) -> Result<Box<dyn Sampler>> {
        match self {
            DistSpec::Siirv(s) => {
                if (s.n() as u64) * (s.k() as u64) <= CONVOLVE_LIMIT {
                    Ok(Box::new(PmfSampler::from_pmf(&convolve_exact(s)?)?))
                } else {
                    Ok(Box::new(SiirvSampler::new(s)))
                }
            }
            DistSpec::Pmf(p) | DistSpec::LogConcave(p) => Ok(Box::new(PmfSampler::from_pmf(p)?)),
            DistSpec::Pmd(_) => domain("a PMD spec needs a vector sampler"),
        }
    }

    pub fn vec_sampler(&self) -> Result<Box<dyn VecSampler>> {
        match self {
            DistSpec::Pmd(s) => match convolve_exact_pmd(s) {
                Ok(p) => Ok(Box::new(MultiPmfSampler::new(&p)?)),
                Err(Error::Resource(_)) => Ok(Box::new(PmdSampler::new(s))),
                Err(e) => Err(e),
            },
            _ => domain("only PMD specs have vector samplers"),
        }
    }
}

/// One draw from the spec, summand by summand for structured families.
pub fn sample(spec: &DistSpec, rng: &mut TestRng) -> Point {
    match spec {
        DistSpec::Siirv(s) => Point::Scalar(SiirvSampler::new(s).draw(rng)),
        DistSpec::Pmd(s) => Point::Vector(PmdSampler::new(s).draw(rng)),
        DistSpec::Pmf(p) | DistSpec::LogConcave(p) => Point::Scalar(
            PmfSampler::from_pmf(p).expect("validated pmf").draw(rng),
        ),
    }
}

/// Exact pmf of a SIIRV. Identical summands are grouped and raised to their
/// multiplicity by repeated squaring.
pub fn convolve_exact(spec: &SiirvSpec) -> Result<Pmf> {
    let size = spec.n() as u64 * spec.k() as u64;
    if size > CONVOLVE_LIMIT {
        return Err(Error::Resource(format!(
            "exact convolution of n·k = {size} exceeds {CONVOLVE_LIMIT}"
        )));
    }
    let mut groups: Vec<(Vec<f64>, u64)> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    for q in spec.summands() {
        let key: Vec<u64> = q.iter().map(|w| w.to_bits()).collect();
        match index.get(&key) {
            Some(&i) => groups[i].1 += 1,
            None => {
                index.insert(key, groups.len());
                groups.push((q.clone(), 1));
            }
        }
    }
    let mut out = Pmf::point(0);
    for (q, mult) in groups {
        let base = Pmf { offset: 0, weights: q, normalized: true };
        out = out.convolve(&base.iid_sum(mult)).trimmed();
    }
    let hi = (spec.n() * (spec.k() - 1)) as i64;
    let weights = out.window(0, hi);
    Ok(Pmf { offset: 0, weights, normalized: true })
}

fn compositions(n: u64, k: u64) -> f64 {
    (ln_factorial(n + k - 1) - ln_factorial(k - 1) - ln_factorial(n)).exp()
}

/// Exact pmf of a PMD by dynamic programming over compositions.
pub fn convolve_exact_pmd(spec: &PmdSpec) -> Result<MultiPmf> {
    let k = spec.k();
    let support = compositions(spec.n() as u64, k as u64);
    if support > CONVOLVE_LIMIT as f64 {
        return Err(Error::Resource(format!(
            "exact PMD support of about {support:.3e} points exceeds {CONVOLVE_LIMIT}"
        )));
    }
    let mut cur: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    cur.insert(vec![0; k], 1.0);
    for q in spec.summands() {
        let mut next: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        for (x, &w) in &cur {
            for (i, &qi) in q.iter().enumerate() {
                if qi == 0.0 {
                    continue;
                }
                let mut y = x.clone();
                y[i] += 1;
                *next.entry(y).or_insert(0.0) += w * qi;
            }
        }
        cur = next;
    }
    MultiPmf::new(k, cur)
}

/// Inverse-transform draw for small means, PTRD rejection (Hörmann 1993)
/// otherwise.
pub fn poisson_f64(mean: f64, rng: &mut TestRng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 30.0 {
        let mut p = (-mean).exp();
        let mut cdf = p;
        let u: f64 = rng.random();
        let mut k = 0u64;
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            let next = cdf + p;
            if next == cdf {
                break;
            }
            cdf = next;
        }
        return k;
    }
    let smu = mean.sqrt();
    let b = 0.931 + 2.53 * smu;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    let log_mean = mean.ln();
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
        let rhs = -mean + k * log_mean - ln_factorial(k as u64);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

pub fn poisson_draw(m: u64, rng: &mut TestRng) -> u64 {
    poisson_f64(m as f64, rng)
}

/// Folds `p` onto `[anchor, anchor + m - 1]` by residue class.
pub fn mod_reduce(p: &Pmf, m: u64, anchor: i64) -> Pmf {
    assert!(m >= 1, "modulus must be positive");
    let mut w = vec![0.0; m as usize];
    for (x, v) in p.iter() {
        w[(x - anchor).rem_euclid(m as i64) as usize] += v;
    }
    Pmf { offset: anchor, weights: w, normalized: p.is_normalized() }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distances {
    pub tv: f64,
    pub l1: f64,
    pub l2: f64,
    pub hellinger: f64,
}

pub fn distances(p: &Pmf, q: &Pmf) -> Distances {
    let lo = p.offset().min(q.offset());
    let hi = p.hi().max(q.hi());
    let l1 = kahan_sum((lo..=hi).map(|x| (p.get(x) - q.get(x)).abs()));
    let l2 = kahan_sum((lo..=hi).map(|x| (p.get(x) - q.get(x)).powi(2))).sqrt();
    let h2 = kahan_sum(
        (lo..=hi).map(|x| (p.get(x).max(0.0).sqrt() - q.get(x).max(0.0).sqrt()).powi(2)),
    );
    Distances {
        tv: l1 / 2.0,
        l1,
        l2,
        hellinger: (h2 / 2.0).sqrt(),
    }
}

/// Empirical pmf of `samples` on the window `[lo, hi]`.
pub fn empirical(samples: &[i64], lo: i64, hi: i64) -> Result<Pmf> {
    if samples.is_empty() {
        return domain("empty sample set");
    }
    if let Some(x) = samples.iter().find(|&&x| x < lo || x > hi) {
        return domain(format!("sample {x} outside window [{lo}, {hi}]"));
    }
    let c = Counts::from_values(samples);
    let n = samples.len() as f64;
    let w = c.window(lo, hi).into_iter().map(|v| v as f64 / n).collect();
    Ok(Pmf { offset: lo, weights: w, normalized: true })
}

/// Interval support and p(j)^2 >= p(j-1) p(j+1) - tol at interior points.
pub fn is_logconcave(p: &Pmf, tol: f64) -> bool {
    let Some((lo, hi)) = p.support_bounds() else {
        return false;
    };
    let w = p.weights();
    let (a, b) = ((lo - p.offset()) as usize, (hi - p.offset()) as usize);
    if w[a..=b].iter().any(|&x| x <= 0.0) || w.iter().any(|&x| x < 0.0) {
        return false;
    }
    (a + 1..b).all(|j| w[j] * w[j] >= w[j - 1] * w[j + 1] - tol)
}

/// Mean and variance of a pmf (divided by its total mass).
pub fn moments(p: &Pmf) -> (f64, f64) {
    let mass = p.mass();
    let mean = kahan_sum(p.iter().map(|(x, w)| x as f64 * w)) / mass;
    let var = kahan_sum(p.iter().map(|(x, w)| (x as f64 - mean).powi(2) * w)) / mass;
    (mean, var)
}
