//! The SIIRV tester and the structural facts it relies on.
//!
//! A run estimates the first two moments, then takes one of two branches.
//! Low variance: learn the distribution empirically on a short window and
//! project in total variation. High variance: test Fourier sparsity of
//! `P mod M` on a frequency set built around rationals with denominator
//! below k, and project the learned coefficients.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::dft::{dft_1d, full_set};
use crate::dist_core::{convolve_exact, mod_reduce, Counts, ModSampler, Pmf, Sampler, SiirvSpec};
use crate::error::{domain, Result};
use crate::fourier_sparsity::{test_fourier_support_1d, SparsityVerdict};
use crate::ledger::Ledger;
use crate::projection::{
    build_cover_desk, coarsest_fit, pbd_fit_shifted_binomial, pbd_project_small_variance, project_siirv,
    project_tv, Cover, PbdGrid, ProjectionOutcome,
};
use crate::report::{Hypothesis, Run, Stage, TestReport};
use crate::rng::TestRng;

/// Draws per unit of k for the moment estimates.
pub const MOMENT_DRAWS_PER_K: u64 = 800;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentEstimates {
    pub mu_tilde: f64,
    /// Unbiased sample variance plus one, an estimate of Var[X] + 1.
    pub sigma_tilde_sq: f64,
    pub m_used: u64,
}

impl MomentEstimates {
    pub fn sigma_tilde(&self) -> f64 {
        self.sigma_tilde_sq.sqrt()
    }
}

/// Empirical mean and unbiased variance (+1) from 800k draws.
pub fn estimate_moments(sampler: &dyn Sampler, k: usize, rng: &mut TestRng) -> MomentEstimates {
    let m = MOMENT_DRAWS_PER_K * k.max(2) as u64;
    let counts = sampler.draw_counts(m, rng);
    let (mu, var) = counts.mean_var();
    MomentEstimates { mu_tilde: mu, sigma_tilde_sq: var.max(0.0) + 1.0, m_used: m }
}

/// σ̃ ≤ 2k√ln(10/ε) selects the empirical-learning branch.
pub fn is_small_variance(sigma_tilde: f64, k: usize, epsilon: f64) -> bool {
    sigma_tilde <= 2.0 * k as f64 * (10.0 / epsilon).ln().sqrt()
}

/// M = 1 + 2⌈15k ln(10/ε)⌉.
pub fn small_modulus(k: usize, epsilon: f64) -> u64 {
    1 + 2 * (15.0 * k as f64 * (10.0 / epsilon).ln()).ceil() as u64
}

/// M = 1 + 2⌈4σ̃√ln(4/ε)⌉.
pub fn big_modulus(sigma_tilde: f64, epsilon: f64) -> u64 {
    1 + 2 * (4.0 * sigma_tilde * (4.0 / epsilon).ln().sqrt()).ceil() as u64
}

/// Left end of I = [⌊μ̃⌋ - (M-1)/2, ⌊μ̃⌋ + (M-1)/2].
pub fn window_anchor(mu_tilde: f64, modulus: u64) -> i64 {
    mu_tilde.floor() as i64 - (modulus as i64 - 1) / 2
}

/// The frequency set of the high-variance branch.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseFreqSet {
    pub modulus: u64,
    pub delta: f64,
    /// Half-width C′√ln(1/δ)/(4σ̃), in units of the circle.
    pub radius: f64,
    /// Sorted frequencies in [0, M).
    pub entries: Vec<i64>,
}

impl SparseFreqSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// δ = ε / (C″√(k log₂(k/ε))).
pub fn coefficient_threshold(k: usize, epsilon: f64, c_double_prime: f64) -> f64 {
    epsilon / (c_double_prime * (k as f64 * (k as f64 / epsilon).log2()).sqrt())
}

/// Whether ξ/M lies within `radius` of a/b on the circle, tested exactly on
/// integers: min over a' ≡ a (mod b) of |ξb - a′M| ≤ radius·M·b.
fn near_rational(xi: i64, modulus: i64, a: i64, b: i64, radius: f64) -> bool {
    let num = xi as i128 * b as i128;
    let best = [a - b, a, a + b]
        .iter()
        .map(|&ap| (num - ap as i128 * modulus as i128).abs())
        .min()
        .expect("nonempty");
    (best as f64) <= radius * modulus as f64 * b as f64
}

/// S = {0} ∪ {ξ ∈ [M] : |ξ/M - a/b| ≤ C′√ln(1/δ)/(4σ̃) for some
/// 0 ≤ a ≤ b, 1 ≤ b < k}, distances taken around the circle.
pub fn build_sparse_set(
    modulus: u64,
    sigma_tilde: f64,
    k: usize,
    epsilon: f64,
    c_prime: f64,
    c_double_prime: f64,
) -> SparseFreqSet {
    let delta = coefficient_threshold(k, epsilon, c_double_prime);
    let radius = c_prime * (1.0 / delta).ln().sqrt() / (4.0 * sigma_tilde);
    let m = modulus as i64;
    let mut hit = vec![false; modulus as usize];
    hit[0] = true;
    // Each rational contributes an arc; walk it and confirm every candidate
    // with the exact integer test.
    let reach = (radius * modulus as f64).floor() as i64 + 1;
    for b in 1..k as i64 {
        for a in 0..=b {
            let center = (a * m) / b;
            if reach >= m {
                hit.iter_mut().for_each(|h| *h = true);
                break;
            }
            for xi in (center - reach)..=(center + reach + 1) {
                let r = xi.rem_euclid(m);
                if !hit[r as usize] && near_rational(r, m, a, b, radius) {
                    hit[r as usize] = true;
                }
            }
        }
    }
    let entries = hit
        .iter()
        .enumerate()
        .filter(|(_, &h)| h)
        .map(|(i, _)| i as i64)
        .collect();
    SparseFreqSet { modulus, delta, radius, entries }
}

/// C″k² log₂²(k/ε): the size bound on S.
pub fn sparse_set_bound(k: usize, epsilon: f64, c_double_prime: f64) -> f64 {
    c_double_prime * (k * k) as f64 * (k as f64 / epsilon).log2().powi(2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupportCheck {
    pub pass: bool,
    pub outside: u64,
    pub m: u64,
    /// (9/40)·ε·m; the check fails when `outside` reaches it.
    pub threshold: f64,
}

/// Distinguishes P(I) > 1 - ε/5 from P(I) ≤ 1 - ε/4 with ⌈c/ε⌉ draws.
pub fn check_effective_support(
    sampler: &dyn Sampler,
    lo: i64,
    hi: i64,
    epsilon: f64,
    support_c: f64,
    rng: &mut TestRng,
) -> SupportCheck {
    let m = (support_c / epsilon).ceil() as u64;
    let outside = sampler.draw_counts(m, rng).outside(lo, hi);
    let threshold = 9.0 / 40.0 * epsilon * m as f64;
    SupportCheck { pass: (outside as f64) < threshold, outside, m, threshold }
}

type CoverKey = (u64, usize, u64);

fn tv_cover_cache() -> &'static Mutex<HashMap<CoverKey, Arc<Cover>>> {
    static CACHE: OnceLock<Mutex<HashMap<CoverKey, Arc<Cover>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cover at radius γ, coarsened to fit the budget when needed. TV covers
/// are cached per process because their member pmfs are reused across runs.
fn cover_for(run: &mut Run, n: u64, k: usize, gamma: f64, cached: bool) -> Result<Arc<Cover>> {
    let budget = run.ledger().cover_budget;
    let fit = coarsest_fit(n, k, gamma, budget);
    if fit > gamma {
        run.note(format!("cover radius raised from {gamma:.3e} to {fit:.3e} to fit the budget"));
    }
    run.stat("cover_gamma", fit);
    if !cached {
        return Ok(Arc::new(build_cover_desk(n, k, fit, budget)?));
    }
    let key = (n, k, fit.to_bits());
    if let Some(c) = tv_cover_cache().lock().expect("cover cache").get(&key) {
        return Ok(Arc::clone(c));
    }
    let cover = Arc::new(build_cover_desk(n, k, fit, budget)?);
    tv_cover_cache()
        .lock()
        .expect("cover cache")
        .insert(key, Arc::clone(&cover));
    Ok(cover)
}

fn record_projection(run: &mut Run, out: &ProjectionOutcome) {
    run.stat("projection_best", out.best);
    run.stat("projection_threshold", out.threshold);
    run.stat("projection_examined", out.examined as f64);
    if out.exhausted {
        run.note("projection search stopped at its candidate budget");
    }
}

/// End-to-end SIIRV membership test.
pub fn test_siirv(
    sampler: &dyn Sampler,
    n: u64,
    k: usize,
    epsilon: f64,
    seed: u64,
    ledger: &Ledger,
) -> Result<TestReport> {
    if n < 1 || k < 2 {
        return domain(format!("SIIRV tester needs n >= 1 and k >= 2, got n = {n}, k = {k}"));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return domain(format!("epsilon = {epsilon}, expected a value in (0, 1]"));
    }
    let mut run = Run::new("siirv", n, k as u64, epsilon, seed, ledger);

    let mut rng = run.stage_rng("moments");
    let est = estimate_moments(sampler, k, &mut rng);
    run.add_samples(est.m_used);
    let sigma = est.sigma_tilde();
    run.stat("mu_tilde", est.mu_tilde);
    run.stat("sigma_tilde_sq", est.sigma_tilde_sq);
    if sigma > 2.0 * k as f64 * (n as f64).sqrt() {
        return Ok(run.reject(Stage::VarianceBound));
    }

    let small = is_small_variance(sigma, k, epsilon);
    let modulus = if small { small_modulus(k, epsilon) } else { big_modulus(sigma, epsilon) };
    let anchor = window_anchor(est.mu_tilde, modulus);
    let hi = anchor + modulus as i64 - 1;
    run.stat("branch_small", if small { 1.0 } else { 0.0 });
    run.stat("modulus", modulus as f64);
    run.stat("anchor", anchor as f64);

    let mut rng = run.stage_rng("support");
    let check = check_effective_support(sampler, anchor, hi, epsilon, ledger.support_c, &mut rng);
    run.add_samples(check.m);
    run.stat("support_outside", check.outside as f64);
    run.stat("support_threshold", check.threshold);
    if !check.pass {
        return Ok(run.reject(Stage::SupportCheck));
    }

    if small {
        small_branch(run, sampler, n, k, epsilon, modulus, anchor, est)
    } else {
        big_branch(run, sampler, n, k, epsilon, modulus, anchor, est)
    }
}

#[allow(clippy::too_many_arguments)]
fn small_branch(
    mut run: Run,
    sampler: &dyn Sampler,
    n: u64,
    k: usize,
    epsilon: f64,
    modulus: u64,
    anchor: i64,
    est: MomentEstimates,
) -> Result<TestReport> {
    let hi = anchor + modulus as i64 - 1;
    let count = (run.ledger().empirical_c * modulus as f64 / (epsilon * epsilon)).ceil() as u64;
    let mut rng = run.stage_rng("empirical");
    let counts = sampler.draw_counts(count, &mut rng);
    run.add_samples(count);
    let inside = counts.window(anchor, hi);
    let total: u64 = inside.iter().sum();
    if total == 0 {
        return Ok(run.reject(Stage::SupportCheck));
    }
    let h = Pmf::new(anchor, inside.iter().map(|&c| c as f64 / total as f64).collect())?;

    let gamma = run.ledger().tv_cover_fraction * epsilon;
    let cover = cover_for(&mut run, n, k, gamma, true)?;
    let out = project_tv(&h, &cover, est.mu_tilde, est.sigma_tilde(), epsilon / 2.0)?;
    record_projection(&mut run, &out);
    if !out.accept {
        return Ok(run.reject(Stage::Projection));
    }
    let witness = out.witness.map(|m| m.label());
    let hyp = Hypothesis::Pmf { offset: h.offset(), weights: h.into_weights() };
    Ok(run.accept(Some(hyp), witness))
}

#[allow(clippy::too_many_arguments)]
fn big_branch(
    mut run: Run,
    sampler: &dyn Sampler,
    n: u64,
    k: usize,
    epsilon: f64,
    modulus: u64,
    anchor: i64,
    est: MomentEstimates,
) -> Result<TestReport> {
    let sigma = est.sigma_tilde();
    let ledger = run.ledger().clone();
    let s = build_sparse_set(modulus, sigma, k, epsilon, ledger.c_prime, ledger.c_double_prime);
    run.stat("s_size", s.len() as f64);
    run.stat("delta", s.delta);
    let eps_prime = epsilon / (5.0 * (modulus as f64).sqrt());
    let b = 16.0 * k as f64 / sigma;
    run.stat("eps_prime", eps_prime);
    run.stat("norm_bound", b);

    let folded = ModSampler::new(sampler, modulus, anchor);
    let mut rng = run.stage_rng("fourier");
    let outcome = test_fourier_support_1d(&folded, modulus, anchor, &s.entries, eps_prime, b, ledger.fourier_c, &mut rng)?;
    outcome.stats.record(&mut run, "fourier_");
    if outcome.stats.m_prime <= 2 * outcome.stats.m {
        run.add_samples(outcome.stats.m_prime);
    }
    let coeffs = match outcome.verdict {
        SparsityVerdict::Reject(stage) => return Ok(run.reject(stage)),
        SparsityVerdict::Learned(c) => c,
    };

    let witness = if k >= 3 {
        let gamma = epsilon / (5.0 * (s.len() as f64).sqrt());
        let cover = cover_for(&mut run, n, k, gamma, false)?;
        let out = project_siirv(&coeffs, &s.entries, &cover, est.mu_tilde, sigma, epsilon)?;
        record_projection(&mut run, &out);
        out.witness.filter(|_| out.accept).map(|m| m.label())
    } else if sigma < ledger.pbd_alpha / (epsilon * epsilon) {
        let out = pbd_project_small_variance(
            &coeffs,
            &s.entries,
            est.mu_tilde,
            sigma,
            n,
            epsilon,
            PbdGrid::for_epsilon(epsilon),
            ledger.candidate_budget,
        );
        record_projection(&mut run, &out);
        out.witness.filter(|_| out.accept).map(|m| m.label())
    } else {
        let mut rng = run.stage_rng("projection");
        let fit = pbd_fit_shifted_binomial(sampler, &coeffs, &s.entries, n, epsilon, ledger.empirical_c, &mut rng);
        run.add_samples(fit.samples);
        run.stat("fit_mean", fit.mean);
        run.stat("fit_var", fit.var);
        run.stat("projection_best", fit.distance);
        run.stat("projection_threshold", fit.threshold);
        if fit.infeasible {
            return Ok(run.reject(Stage::MomentInfeasible));
        }
        let b = fit.fit.expect("feasible fits carry a law");
        run.stat("fit_shift", b.shift as f64);
        run.stat("fit_trials", b.trials as f64);
        run.stat("fit_p", b.p);
        fit.accept.then(|| format!("{} + Bin({}, {:.6})", b.shift, b.trials, b.p))
    };
    match witness {
        None => Ok(run.reject(Stage::Projection)),
        Some(w) => {
            let hyp = Hypothesis::Fourier { modulus, anchor, coefficients: coeffs.to_report() };
            Ok(run.accept(Some(hyp), Some(w)))
        }
    }
}

/// [`test_siirv`] with k = 2, reported under the class name `pbd`.
pub fn test_pbd(sampler: &dyn Sampler, n: u64, epsilon: f64, seed: u64, ledger: &Ledger) -> Result<TestReport> {
    let mut report = test_siirv(sampler, n, 2, epsilon, seed, ledger)?;
    report.class = "pbd".to_string();
    Ok(report)
}

/// L(δ, M, s) and the frequencies outside it whose coefficient exceeds δ.
#[derive(Clone, Debug, PartialEq)]
pub struct TailBound {
    pub large_set: Vec<i64>,
    pub violations: Vec<i64>,
    /// Number of ξ with |P̂(ξ)| > δ.
    pub large_count: usize,
    /// 4Mk√(log₂(1/δ))/s.
    pub count_bound: f64,
}

/// Checks the structural tail bound on an exact SIIRV: every coefficient
/// outside L(δ, M, s) = {ξ : |ξ/M - a/b| < √ln(1/δ)/(2s), 0 ≤ a ≤ b < k}
/// has modulus at most δ, and few coefficients exceed δ overall.
pub fn siirv_fourier_tail_bound(spec: &SiirvSpec, modulus: u64, delta: f64) -> Result<TailBound> {
    let s = spec.variance().sqrt();
    if !(s > 0.0) {
        return domain("the tail bound needs positive variance");
    }
    if !(delta > 0.0 && delta < 0.5) {
        return domain(format!("delta = {delta}, expected a value in (0, 1/2)"));
    }
    let p = convolve_exact(spec)?;
    let coeffs = dft_1d(&p, modulus, &full_set(modulus));
    let width = (1.0 / delta).ln().sqrt() / (2.0 * s);
    let m = modulus as i64;
    let k = spec.k() as i64;
    let in_l = |xi: i64| {
        (1..k).any(|b| {
            (0..=b).any(|a| {
                let d = (xi as f64 / m as f64 - a as f64 / b as f64).abs();
                d.min(1.0 - d) < width
            })
        })
    };
    let mut large_set = Vec::new();
    let mut violations = Vec::new();
    let mut large_count = 0;
    for (xi, c) in coeffs.iter() {
        let big = c.norm() > delta;
        large_count += big as usize;
        if in_l(xi) {
            large_set.push(xi);
        } else if big {
            violations.push(xi);
        }
    }
    let count_bound = 4.0 * modulus as f64 * spec.k() as f64 * (1.0 / delta).log2().sqrt() / s;
    Ok(TailBound { large_set, violations, large_count, count_bound })
}

/// (‖P mod M‖², 8k/s) for an exact SIIRV with M > s.
pub fn siirv_l2_bound_check(spec: &SiirvSpec, modulus: u64) -> Result<(f64, f64)> {
    let s = spec.variance().sqrt();
    if !(s > 0.0) || modulus as f64 <= s {
        return domain(format!("the L2 bound needs 0 < s < M, got s = {s}, M = {modulus}"));
    }
    let p = convolve_exact(spec)?;
    let folded = mod_reduce(&p, modulus, 0);
    Ok((folded.l2_sq(), 8.0 * spec.k() as f64 / s))
}

/// Empirical pmf of counts on [lo, hi], normalized by the inside total.
pub fn empirical_on(counts: &Counts, lo: i64, hi: i64) -> Option<Pmf> {
    let inside = counts.window(lo, hi);
    let total: u64 = inside.iter().sum();
    (total > 0).then(|| Pmf::pseudo(lo, inside.iter().map(|&c| c as f64 / total as f64).collect()))
}
