//! The PMD tester, its lattice geometry, and the lower-bound instance.
//!
//! A run estimates the mean and covariance, builds an integer lattice M from
//! the eigenbasis, checks that samples stay in the fundamental domain
//! I = μ̂ + M·(-1/2, 1/2]^k, tests Fourier sparsity of `P mod M` on the dual
//! lattice, and projects the learned coefficients onto a cover.

use std::collections::{BTreeMap, HashSet};

use num_complex::Complex64;

use crate::dft::{dual_representatives, lattice_dft, lattice_dual_ball, LatticeBasis, LatticeFourierCoeffs};
use crate::dist_core::{convolve_exact_pmd, MultiPmf, PmdSpec, VecSampler};
use crate::error::{domain, Error, Result};
use crate::fourier_sparsity::{test_fourier_support_lattice, SparsityVerdict};
use crate::ledger::{Ledger, PmdSupportRule};
use crate::numeric::jacobi_eigen;
use crate::projection::{iid_steps, pow_u64, summand_from_angles, walk_angle_grid};
use crate::report::{Hypothesis, Run, Stage, TestReport};
use crate::rng::TestRng;

type Matrix = Vec<Vec<f64>>;

/// Eigenvalues below this (relative to zero) count as nonnegative.
const PSD_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct CovEstimates {
    pub mu_hat: Vec<f64>,
    pub sigma_hat: Matrix,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Row-major; column i is the eigenvector of `eigenvalues[i]`.
    pub eigenvectors: Matrix,
    pub m_used: u64,
}

impl CovEstimates {
    /// Estimates from given moments, e.g. exact ones.
    pub fn from_moments(mu: Vec<f64>, sigma: Matrix) -> Self {
        let sigma = symmetrize(&sigma);
        let (eigenvalues, eigenvectors) = jacobi_eigen(&sigma, 1e-10);
        CovEstimates { mu_hat: mu, sigma_hat: sigma, eigenvalues, eigenvectors, m_used: 0 }
    }

    pub fn k(&self) -> usize {
        self.mu_hat.len()
    }
}

fn symmetrize(a: &[Vec<f64>]) -> Matrix {
    let k = a.len();
    (0..k)
        .map(|i| (0..k).map(|j| 0.5 * (a[i][j] + a[j][i])).collect())
        .collect()
}

/// m₀ = ⌈c·k⁴⌉.
pub fn moment_sample_size(k: usize, c: f64) -> u64 {
    (c * (k as f64).powi(4)).ceil() as u64
}

/// Sample mean and unbiased sample covariance from m₀ draws, with a cyclic
/// Jacobi eigendecomposition of the covariance.
pub fn estimate_mean_cov(sampler: &dyn VecSampler, k: usize, c: f64, rng: &mut TestRng) -> Result<CovEstimates> {
    if k < 2 {
        return domain(format!("k = {k}, expected k >= 2"));
    }
    let m = moment_sample_size(k, c).max(2);
    let counts = sampler.draw_counts(m, rng);
    let mf = m as f64;
    let mut mu = vec![0.0; k];
    for (x, &c) in &counts {
        for i in 0..k {
            mu[i] += c as f64 * x[i] as f64 / mf;
        }
    }
    let mut sigma = vec![vec![0.0; k]; k];
    for (x, &c) in &counts {
        for i in 0..k {
            for j in 0..k {
                sigma[i][j] += c as f64 * (x[i] as f64 - mu[i]) * (x[j] as f64 - mu[j]);
            }
        }
    }
    sigma.iter_mut().flatten().for_each(|v| *v /= mf - 1.0);
    let mut est = CovEstimates::from_moments(mu, sigma);
    est.m_used = m;
    Ok(est)
}

/// log₂(k/ε).
pub fn log_term(k: usize, epsilon: f64) -> f64 {
    (k as f64 / epsilon).log2()
}

/// C·√(k log(k/ε) max(λ, 0) + k² log²(k/ε)).
pub fn column_scale(lambda: f64, k: usize, epsilon: f64, c: f64) -> f64 {
    let l = log_term(k, epsilon);
    let kf = k as f64;
    c * (kf * l * lambda.max(0.0) + kf * kf * l * l).sqrt()
}

/// Column i is the nearest integer point to column_scale(λ_i)·v_i, rounding
/// half away from zero. A singular result is a geometry error.
pub fn build_lattice(est: &CovEstimates, k: usize, epsilon: f64, c: f64) -> Result<LatticeBasis> {
    if est.k() != k {
        return domain(format!("estimates are {}-dimensional, expected {k}", est.k()));
    }
    let scales: Vec<f64> = est.eigenvalues.iter().map(|&l| column_scale(l, k, epsilon, c)).collect();
    let m = (0..k)
        .map(|i| (0..k).map(|j| (scales[j] * est.eigenvectors[i][j]).round() as i64).collect())
        .collect();
    LatticeBasis::new(m)
}

/// Radius C²k² log(k/ε) of the dual ball that defines S.
pub fn dual_radius(k: usize, epsilon: f64, c: f64) -> f64 {
    c * c * (k * k) as f64 * log_term(k, epsilon)
}

/// (1 + 2⌊r⌋)^k, the box bound on |S|.
pub fn s_size_bound(k: usize, epsilon: f64, c: f64) -> f64 {
    (1.0 + 2.0 * dual_radius(k, epsilon, c).floor()).powi(k as i32)
}

fn min_eigenvalue(a: &[Vec<f64>]) -> f64 {
    let (values, _) = jacobi_eigen(&symmetrize(a), 1e-12);
    values.last().copied().unwrap_or(0.0)
}

/// a ⪰ b: every eigenvalue of a - b is at least -1e-8.
pub fn psd_order(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    let k = a.len();
    let diff: Matrix = (0..k).map(|i| (0..k).map(|j| a[i][j] - b[i][j]).collect()).collect();
    min_eigenvalue(&diff) >= -PSD_TOL
}

fn plus_identity(a: &[Vec<f64>], scale: f64) -> Matrix {
    let k = a.len();
    (0..k)
        .map(|i| (0..k).map(|j| scale * (a[i][j] + if i == j { 1.0 } else { 0.0 })).collect())
        .collect()
}

/// The candidate filter (μ̂ - μ_Q)ᵀ(Σ̂ + I)⁻¹(μ̂ - μ_Q) ≤ 1 and
/// 2(Σ_Q + I) ⪰ Σ̂ + I ⪰ (Σ_Q + I)/2.
#[derive(Clone, Debug)]
pub struct MomentFilter {
    mu_hat: Vec<f64>,
    sigma_i: Matrix,
    inv: Matrix,
    trace: f64,
}

impl MomentFilter {
    pub fn new(mu_hat: &[f64], sigma_hat: &[Vec<f64>]) -> Self {
        let k = mu_hat.len();
        let sigma_i = plus_identity(sigma_hat, 1.0);
        let (vals, vecs) = jacobi_eigen(&symmetrize(&sigma_i), 1e-12);
        let inv = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| (0..k).map(|l| vecs[i][l] * vecs[j][l] / vals[l].max(1e-12)).sum())
                    .collect()
            })
            .collect();
        let trace = (0..k).map(|i| sigma_i[i][i]).sum();
        MomentFilter { mu_hat: mu_hat.to_vec(), sigma_i, inv, trace }
    }

    pub fn mahalanobis(&self, mu_q: &[f64]) -> f64 {
        let k = self.mu_hat.len();
        let d: Vec<f64> = (0..k).map(|i| self.mu_hat[i] - mu_q[i]).collect();
        (0..k).map(|i| (0..k).map(|j| d[i] * self.inv[i][j] * d[j]).sum::<f64>()).sum()
    }

    pub fn covariance_ok(&self, sigma_q: &[Vec<f64>]) -> bool {
        psd_order(&plus_identity(sigma_q, 2.0), &self.sigma_i) && psd_order(&self.sigma_i, &plus_identity(sigma_q, 0.5))
    }

    pub fn passes(&self, mu_q: &[f64], sigma_q: &[Vec<f64>]) -> bool {
        self.mahalanobis(mu_q) <= 1.0 && self.covariance_ok(sigma_q)
    }

    /// Ordering key: smaller means nearer moments.
    fn score(&self, mu_q: &[f64], sigma_q: &[Vec<f64>]) -> f64 {
        let tq: f64 = (0..sigma_q.len()).map(|i| sigma_q[i][i] + 1.0).sum();
        self.mahalanobis(mu_q) + (tq / self.trace).ln().powi(2)
    }

    /// Half-widths of the box containing the Mahalanobis ellipsoid.
    fn box_radius(&self) -> Vec<f64> {
        (0..self.mu_hat.len()).map(|i| self.sigma_i[i][i].sqrt()).collect()
    }
}

/// Sample access to `P mod M`, folded into the fundamental domain.
pub struct LatticeModSampler<'a> {
    inner: &'a dyn VecSampler,
    basis: &'a LatticeBasis,
    center: Vec<f64>,
}

impl<'a> LatticeModSampler<'a> {
    pub fn new(inner: &'a dyn VecSampler, basis: &'a LatticeBasis, center: &[f64]) -> Self {
        LatticeModSampler { inner, basis, center: center.to_vec() }
    }
}

impl VecSampler for LatticeModSampler<'_> {
    fn dim(&self) -> usize {
        self.basis.k()
    }

    fn draw(&self, rng: &mut TestRng) -> Vec<i64> {
        self.basis.fundamental_reduce(&self.inner.draw(rng), &self.center)
    }

    fn draw_counts(&self, count: u64, rng: &mut TestRng) -> BTreeMap<Vec<i64>, u64> {
        let mut out = BTreeMap::new();
        for (x, c) in self.inner.draw_counts(count, rng) {
            *out.entry(self.basis.fundamental_reduce(&x, &self.center)).or_insert(0) += c;
        }
        out
    }
}

/// `fixed` plus the sum of `trials` i.i.d. categorical vectors with law q.
/// With trials = n and fixed = 0 this is an i.i.d.-categorical PMD; for
/// k = 2 the family is exactly the shifted binomials.
#[derive(Clone, Debug, PartialEq)]
pub struct PmdMember {
    pub fixed: Vec<i64>,
    pub trials: u64,
    pub q: Vec<f64>,
}

impl PmdMember {
    pub fn iid(n: u64, q: Vec<f64>) -> Self {
        PmdMember { fixed: vec![0; q.len()], trials: n, q }
    }

    pub fn mean(&self) -> Vec<f64> {
        let t = self.trials as f64;
        self.fixed.iter().zip(&self.q).map(|(&c, &q)| c as f64 + t * q).collect()
    }

    pub fn covariance(&self) -> Matrix {
        let k = self.q.len();
        let t = self.trials as f64;
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| t * (if i == j { self.q[i] } else { 0.0 } - self.q[i] * self.q[j]))
                    .collect()
            })
            .collect()
    }

    /// Q̂(ξ) given units[j] = e(ξ·e_j): e(ξ·fixed)·(Σ_j q_j units[j])^trials.
    fn coefficient_from_units(&self, units: &[Complex64]) -> Complex64 {
        let base: Complex64 = units.iter().zip(&self.q).map(|(u, &w)| u * w).sum();
        let shift: Complex64 = units
            .iter()
            .zip(&self.fixed)
            .map(|(&u, &c)| pow_u64(u, c as u64))
            .product();
        shift * pow_u64(base, self.trials)
    }

    pub fn coefficient(&self, basis: &LatticeBasis, v: &[i64]) -> Complex64 {
        self.coefficient_from_units(&unit_phases(basis, v))
    }

    pub fn to_spec(&self) -> Result<PmdSpec> {
        let k = self.q.len();
        let mut summands = vec![self.q.clone(); self.trials as usize];
        for (j, &c) in self.fixed.iter().enumerate() {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            summands.extend(std::iter::repeat_n(e, c as usize));
        }
        PmdSpec::new(k, summands)
    }

    pub fn label(&self) -> String {
        let q: Vec<String> = self.q.iter().map(|w| format!("{w:.6}")).collect();
        let f: Vec<String> = self.fixed.iter().map(|c| c.to_string()).collect();
        format!("({}) + {}x[{}]", f.join(", "), self.trials, q.join(", "))
    }
}

fn unit_phases(basis: &LatticeBasis, v: &[i64]) -> Vec<Complex64> {
    let k = basis.k();
    (0..k)
        .map(|j| {
            let mut e = vec![0i64; k];
            e[j] = 1;
            basis.phase(v, &e)
        })
        .collect()
}

/// Angle-grid points for sums of t categorical vectors; t = 0 needs none.
fn q_points(t: u64, k: usize, gamma: f64) -> f64 {
    if t == 0 {
        return 1.0;
    }
    (iid_steps(t, k, gamma) as f64 + 1.0).powi(k as i32 - 1)
}

fn pmd_grid_size(n: u64, k: usize, gamma: f64) -> f64 {
    (0..=n).map(|t| q_points(t, k, gamma)).sum()
}

/// Desk-scale cover of (n, k)-PMDs: i.i.d.-categorical sums, then
/// `fixed + t` i.i.d. categoricals for t < n, each on an angle grid whose
/// Hellinger bound keeps the enumerated subfamily within TV γ.
#[derive(Clone, Debug, PartialEq)]
pub struct PmdCover {
    pub n: u64,
    pub k: usize,
    pub gamma: f64,
}

impl PmdCover {
    pub fn new(n: u64, k: usize, gamma: f64, budget: u64) -> Result<Self> {
        if n == 0 || k < 2 {
            return domain(format!("cover needs n >= 1 and k >= 2, got n = {n}, k = {k}"));
        }
        if !(gamma > 0.0) {
            return domain(format!("cover radius {gamma}, expected > 0"));
        }
        let size = pmd_grid_size(n, k, gamma);
        if size > budget as f64 {
            return Err(Error::Resource(format!(
                "PMD cover at radius {gamma} has about {size:.3e} grid points, budget {budget}"
            )));
        }
        Ok(PmdCover { n, k, gamma })
    }

    /// The smallest radius ≥ γ whose grid fits in `budget`.
    pub fn coarsest_fit(n: u64, k: usize, gamma: f64, budget: u64) -> f64 {
        if pmd_grid_size(n, k, gamma) <= budget as f64 {
            return gamma;
        }
        // The grid never drops below (n + 1)·2^(k-1) points, so the upper
        // end may have to go past 1.
        let mut hi = gamma.max(1.0);
        while pmd_grid_size(n, k, hi) > budget as f64 && iid_steps(n, k, hi) > 1 {
            hi *= 2.0;
        }
        let mut lo = gamma;
        for _ in 0..60 {
            let mid = (lo * hi).sqrt();
            if pmd_grid_size(n, k, mid) <= budget as f64 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn grid(&self, t: u64, f: &mut dyn FnMut(Vec<f64>)) {
        if t == 0 {
            let mut e = vec![0.0; self.k];
            e[0] = 1.0;
            f(e);
            return;
        }
        let mut idx = vec![0u64; self.k - 1];
        walk_angle_grid(iid_steps(t, self.k, self.gamma), 0, &mut idx, &mut |a| f(summand_from_angles(a)));
    }

    /// Number of scan stages: the i.i.d. sums, then t = n-1 down to 0.
    pub fn stages(&self) -> usize {
        self.n as usize + 1
    }

    /// Visits the filter-passing members of one stage, nearest moments
    /// first. Returns true if `f` asked to stop.
    pub fn scan_stage(&self, filter: &MomentFilter, stage: usize, f: &mut dyn FnMut(PmdMember) -> bool) -> bool {
        let n = self.n;
        let mut found: Vec<(f64, PmdMember)> = Vec::new();
        if stage == 0 {
            self.grid(n, &mut |q| {
                let m = PmdMember::iid(n, q);
                let (mu, cov) = (m.mean(), m.covariance());
                if filter.passes(&mu, &cov) {
                    found.push((filter.score(&mu, &cov), m));
                }
            });
            return drain(&mut found, f);
        }
        let t = n - stage as u64;
        let radius = filter.box_radius();
        self.grid(t, &mut |q| {
            // Point masses are enumerated once, at t = 0.
            if t > 0 && q.iter().any(|&w| w == 1.0) {
                return;
            }
            let probe = PmdMember { fixed: vec![0; self.k], trials: t, q };
            let cov = probe.covariance();
            if !filter.covariance_ok(&cov) {
                return;
            }
            let target: Vec<f64> = (0..self.k).map(|i| filter.mu_hat[i] - t as f64 * probe.q[i]).collect();
            let mut fixed = vec![0i64; self.k];
            fixed_vectors(&target, &radius, (n - t) as i64, 0, &mut fixed, &mut |c| {
                let m = PmdMember { fixed: c.to_vec(), trials: t, q: probe.q.clone() };
                let mu = m.mean();
                if filter.mahalanobis(&mu) <= 1.0 {
                    found.push((filter.score(&mu, &cov), m));
                }
            });
        });
        drain(&mut found, f)
    }

    /// All stages in order; stops when `f` returns true.
    pub fn scan(&self, filter: &MomentFilter, f: &mut dyn FnMut(PmdMember) -> bool) {
        for stage in 0..self.stages() {
            if self.scan_stage(filter, stage, f) {
                return;
            }
        }
    }
}

fn drain(stage: &mut Vec<(f64, PmdMember)>, f: &mut dyn FnMut(PmdMember) -> bool) -> bool {
    stage.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, m) in stage.drain(..) {
        if f(m) {
            return true;
        }
    }
    false
}

/// Nonnegative integer vectors summing to `total` whose first k-1
/// coordinates lie within `radius` of `target`.
fn fixed_vectors(target: &[f64], radius: &[f64], total: i64, depth: usize, c: &mut Vec<i64>, f: &mut dyn FnMut(&[i64])) {
    let k = c.len();
    let used: i64 = c[..depth].iter().sum();
    if depth == k - 1 {
        c[depth] = total - used;
        if c[depth] >= 0 && (c[depth] as f64 - target[depth]).abs() <= radius[depth] {
            f(c);
        }
        return;
    }
    let lo = ((target[depth] - radius[depth]).ceil() as i64).max(0);
    let hi = ((target[depth] + radius[depth]).floor() as i64).min(total - used);
    for x in lo..=hi {
        c[depth] = x;
        fixed_vectors(target, radius, total, depth + 1, c, f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PmdProjection {
    pub accept: bool,
    pub witness: Option<PmdMember>,
    pub best: f64,
    pub threshold: f64,
    pub examined: u64,
    pub exhausted: bool,
}

/// Square-root angles of q, inverting `summand_from_angles`.
fn angles_of(q: &[f64]) -> Vec<f64> {
    (0..q.len() - 1)
        .map(|i| {
            let rest: f64 = q[i + 1..].iter().sum();
            rest.max(0.0).sqrt().atan2(q[i].max(0.0).sqrt())
        })
        .collect()
}

struct Scorer {
    units: Vec<Vec<Complex64>>,
    hv: Vec<Complex64>,
}

impl Scorer {
    /// Σ_{ξ∈S} |Ĥ(ξ) - Q̂(ξ)|², abandoned once above `cap`.
    fn distance(&self, m: &PmdMember, cap: f64) -> f64 {
        let mut d = 0.0;
        for (u, hc) in self.units.iter().zip(&self.hv) {
            d += (hc - m.coefficient_from_units(u)).norm_sqr();
            if d > cap {
                break;
            }
        }
        d
    }

    /// Pattern search over the angles of q with `trials` and `fixed` held,
    /// keeping the moment filter satisfied. Every point visited is a PMD, so
    /// this only tightens the search, never the acceptance rule.
    fn refine(&self, start: &PmdMember, start_d: f64, filter: &MomentFilter, step: f64) -> (PmdMember, f64) {
        let mut best = start.clone();
        let mut best_d = start_d;
        let mut angles = angles_of(&start.q);
        let mut step = step;
        let mut evals = 0;
        while step > 1e-7 && evals < REFINE_EVALS {
            let mut moved = false;
            for i in 0..angles.len() {
                for dir in [1.0, -1.0] {
                    let mut a = angles.clone();
                    a[i] = (a[i] + dir * step).clamp(0.0, std::f64::consts::FRAC_PI_2);
                    let m = PmdMember { q: summand_from_angles(&a), ..best.clone() };
                    if !filter.passes(&m.mean(), &m.covariance()) {
                        continue;
                    }
                    evals += 1;
                    let d = self.distance(&m, best_d);
                    if d < best_d {
                        best_d = d;
                        best = m;
                        angles = a;
                        moved = true;
                    }
                }
            }
            if !moved {
                step /= 2.0;
            }
        }
        (best, best_d)
    }
}

/// Distance evaluations allowed per refinement.
const REFINE_EVALS: usize = 400;

/// Accepts iff some filter-passing member Q has Σ_{ξ∈S} |Ĥ(ξ) - Q̂(ξ)|² ≤
/// threshold. At most `budget` grid members are compared. After the i.i.d.
/// stage and again at the end, the nearest member found is refined
/// continuously within its subfamily.
pub fn project_pmd(
    h: &LatticeFourierCoeffs,
    cover: &PmdCover,
    filter: &MomentFilter,
    threshold: f64,
    budget: u64,
) -> PmdProjection {
    let basis = h.basis();
    let scorer = Scorer {
        units: h.entries().iter().map(|(v, _)| unit_phases(basis, v)).collect(),
        hv: h.entries().iter().map(|(_, c)| *c).collect(),
    };
    let mut out = PmdProjection {
        accept: false,
        witness: None,
        best: f64::INFINITY,
        threshold,
        examined: 0,
        exhausted: false,
    };
    let mut nearest: Option<PmdMember> = None;
    let step = |t: u64| std::f64::consts::FRAC_PI_2 / iid_steps(t.max(1), cover.k, cover.gamma) as f64;
    for stage in 0..cover.stages() {
        let stop = cover.scan_stage(filter, stage, &mut |m| {
            if out.examined >= budget {
                out.exhausted = true;
                return true;
            }
            out.examined += 1;
            let d = scorer.distance(&m, out.best);
            if d < out.best {
                out.best = d;
                nearest = Some(m.clone());
            }
            if d <= threshold {
                out.accept = true;
                out.witness = Some(m);
                return true;
            }
            false
        });
        if out.accept {
            return out;
        }
        let last = stage + 1 == cover.stages();
        if stop || stage == 0 || last {
            if let Some(m) = nearest.as_ref().filter(|m| m.trials > 0) {
                let (r, d) = scorer.refine(m, out.best, filter, step(m.trials));
                if d < out.best {
                    out.best = d;
                    nearest = Some(r.clone());
                }
                if d <= threshold {
                    out.accept = true;
                    out.witness = Some(r);
                    return out;
                }
            }
        }
        if stop {
            break;
        }
    }
    out
}

/// Fraction of `samples` draws outside the fundamental domain, and the
/// decision under the configured rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainCheck {
    pub pass: bool,
    pub outside: u64,
    pub m: u64,
}

pub fn check_domain(
    sampler: &dyn VecSampler,
    basis: &LatticeBasis,
    center: &[f64],
    epsilon: f64,
    ledger: &Ledger,
    rng: &mut TestRng,
) -> DomainCheck {
    let m = match ledger.pmd_support_rule {
        PmdSupportRule::Any => (ledger.pmd_support_c / epsilon).ceil() as u64,
        PmdSupportRule::Count => ledger.support_samples(epsilon),
    };
    let outside: u64 = sampler
        .draw_counts(m, rng)
        .iter()
        .filter(|(x, _)| !basis.in_domain(x, center))
        .map(|(_, &c)| c)
        .sum();
    let pass = match ledger.pmd_support_rule {
        PmdSupportRule::Any => outside == 0,
        PmdSupportRule::Count => (outside as f64) < 9.0 / 40.0 * epsilon * m as f64,
    };
    DomainCheck { pass, outside, m }
}

/// End-to-end PMD membership test.
pub fn test_pmd(
    sampler: &dyn VecSampler,
    n: u64,
    k: usize,
    epsilon: f64,
    seed: u64,
    ledger: &Ledger,
) -> Result<TestReport> {
    if n < 1 || k < 2 {
        return domain(format!("PMD tester needs n >= 1 and k >= 2, got n = {n}, k = {k}"));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return domain(format!("epsilon = {epsilon}, expected a value in (0, 1]"));
    }
    if sampler.dim() != k {
        return domain(format!("sampler draws {}-dimensional points, expected {k}", sampler.dim()));
    }
    let mut run = Run::new("pmd", n, k as u64, epsilon, seed, ledger);

    let mut rng = run.stage_rng("moments");
    let est = estimate_mean_cov(sampler, k, ledger.pmd_moment_c, &mut rng)?;
    run.add_samples(est.m_used);
    for (i, l) in est.eigenvalues.iter().enumerate() {
        run.stat(&format!("lambda_{i}"), *l);
    }

    let basis = match build_lattice(&est, k, epsilon, ledger.lattice_c) {
        Ok(b) => b,
        Err(Error::Geometry(msg)) => {
            run.note(msg);
            return Ok(run.reject(Stage::Geometry));
        }
        Err(e) => return Err(e),
    };
    let det = basis.volume();
    run.stat("det", det as f64);
    let hadamard: f64 = basis.column_norms().iter().product();
    run.stat("hadamard_bound", hadamard);

    let mut rng = run.stage_rng("support");
    let check = check_domain(sampler, &basis, &est.mu_hat, epsilon, ledger, &mut rng);
    run.add_samples(check.m);
    run.stat("support_outside", check.outside as f64);
    if !check.pass {
        return Ok(run.reject(Stage::SupportCheck));
    }

    let s = lattice_dual_ball(&basis, dual_radius(k, epsilon, ledger.lattice_c));
    let eps_prime = epsilon / (5.0 * (det as f64).sqrt());
    let b = (s.len() as f64 + 1.0) / det as f64;
    run.stat("s_size", s.len() as f64);
    run.stat("eps_prime", eps_prime);
    run.stat("norm_bound", b);

    let folded = LatticeModSampler::new(sampler, &basis, &est.mu_hat);
    let mut rng = run.stage_rng("fourier");
    let outcome = test_fourier_support_lattice(&folded, &basis, &est.mu_hat, &s, eps_prime, b, ledger.fourier_c, &mut rng)?;
    outcome.stats.record(&mut run, "fourier_");
    if outcome.stats.m_prime <= 2 * outcome.stats.m {
        run.add_samples(outcome.stats.m_prime);
    }
    let coeffs = match outcome.verdict {
        SparsityVerdict::Reject(stage) => return Ok(run.reject(stage)),
        SparsityVerdict::Learned(c) => c,
    };

    let gamma = epsilon / (6.0 * (s.len() as f64).sqrt());
    let fit = PmdCover::coarsest_fit(n, k, gamma, ledger.cover_budget);
    if fit > gamma {
        run.note(format!("cover radius raised from {gamma:.3e} to {fit:.3e} to fit the budget"));
    }
    run.stat("cover_gamma", fit);
    let cover = PmdCover::new(n, k, fit, ledger.cover_budget)?;
    let filter = MomentFilter::new(&est.mu_hat, &est.sigma_hat);
    let out = project_pmd(&coeffs, &cover, &filter, epsilon * epsilon / 16.0, ledger.candidate_budget);
    run.stat("projection_best", out.best);
    run.stat("projection_threshold", out.threshold);
    run.stat("projection_examined", out.examined as f64);
    if out.exhausted {
        run.note("projection search stopped at its candidate budget");
    }
    match out.witness.filter(|_| out.accept) {
        None => Ok(run.reject(Stage::Projection)),
        Some(w) => {
            let hyp = Hypothesis::Lattice { basis: basis.matrix().to_vec(), coefficients: coeffs.to_report() };
            Ok(run.accept(Some(hyp), Some(w.label())))
        }
    }
}

/// n i.i.d. vectors uniform on the standard basis: the lower-bound instance.
pub fn hard_instance(n: usize, k: usize) -> Result<PmdSpec> {
    if k < 2 {
        return domain(format!("k = {k}, expected k >= 2"));
    }
    PmdSpec::iid(n, &vec![1.0 / k as f64; k])
}

/// k^{k/2}/(4πn)^{(k-1)/2}, the asymptotic value of ‖P*‖₂².
pub fn l2_asymptotic(n: usize, k: usize) -> f64 {
    let kf = k as f64;
    kf.powf(kf / 2.0) / (4.0 * std::f64::consts::PI * n as f64).powf((kf - 1.0) / 2.0)
}

/// Exact (‖P‖₂², ‖P‖_{2/3}). Fails if Hölder's ‖P‖_{2/3} ≥ 1/‖P‖₂ is
/// violated beyond rounding.
pub fn norms_for_lb(spec: &PmdSpec) -> Result<(f64, f64)> {
    let p = convolve_exact_pmd(spec)?;
    let l2_sq = p.l2_sq();
    let two_thirds = p.norm_r(2.0 / 3.0);
    if two_thirds < (1.0 - 1e-9) / l2_sq.sqrt() {
        return Err(Error::Numerical(format!(
            "Hölder bound violated: ‖P‖_(2/3) = {two_thirds} < 1/‖P‖₂ = {}",
            1.0 / l2_sq.sqrt()
        )));
    }
    Ok((l2_sq, two_thirds))
}

/// Fourier mass of an exact pmf on L*/Z^k outside S.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutsideMass {
    pub l1: f64,
    pub l2_sq: f64,
    pub classes: usize,
    pub s_classes: usize,
}

pub fn fourier_mass_outside(p: &MultiPmf, basis: &LatticeBasis, s: &[Vec<i64>]) -> OutsideMass {
    let in_s: HashSet<Vec<i64>> = s.iter().map(|v| basis.dual_key(v)).collect();
    let reps: Vec<Vec<i64>> = dual_representatives(basis)
        .into_iter()
        .filter(|v| !in_s.contains(&basis.dual_key(v)))
        .collect();
    let c = lattice_dft(p, basis, &reps);
    OutsideMass {
        l1: c.entries().iter().map(|(_, z)| z.norm()).sum(),
        l2_sq: c.energy(),
        classes: basis.volume() as usize,
        s_classes: in_s.len(),
    }
}
