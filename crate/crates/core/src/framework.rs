//! The generic three-stage tester: effective support, Fourier effective
//! support, projection. A class is described by a [`ClassPlugin`]; the
//! framework owns every random draw and the sample accounting, so two
//! testers fed the same seed see the same streams.

use num_complex::Complex64;

use crate::dft::{e_ratio, normalize_freqs, FourierCoeffs};
use crate::dist_core::{Counts, ModSampler, Sampler};
use crate::error::{config, domain, Result};
use crate::fourier_sparsity::{test_fourier_support_1d, SparsityVerdict};
use crate::ledger::Ledger;
use crate::projection::{
    build_cover_desk, coarsest_fit, fit_shifted_binomial, pbd_project_small_variance, project_siirv, PbdGrid,
};
use crate::report::{Hypothesis, Run, Stage, TestReport};
use crate::siirv::{big_modulus, build_sparse_set, check_effective_support, window_anchor, MOMENT_DRAWS_PER_K};

/// What the identification stage learned: the candidate interval I plus
/// the location statistics a class may need to size M and S.
#[derive(Clone, Debug, PartialEq)]
pub struct Location {
    pub lo: i64,
    pub hi: i64,
    pub mean: f64,
    /// Unbiased sample variance of the identification draws.
    pub var: f64,
    pub samples: u64,
}

impl Location {
    pub fn len(&self) -> u64 {
        (self.hi - self.lo + 1).max(0) as u64
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PluginProjection {
    pub accept: bool,
    pub witness: Option<String>,
    pub best: f64,
    pub threshold: f64,
    pub examined: u64,
}

/// A class of distributions over the integers with small effective support
/// and a fixed effective Fourier support.
pub trait ClassPlugin: Send + Sync {
    fn name(&self) -> String;

    /// q_I(ε): draws used to identify I.
    fn interval_samples(&self, epsilon: f64) -> u64;

    /// Picks I from the identification draws; None rejects outright.
    fn identify_interval(&self, samples: &Counts, epsilon: f64) -> Option<Location>;

    /// M(ε).
    fn modulus(&self, epsilon: f64, loc: &Location) -> u64;

    /// S(ε) as residues in [0, M).
    fn frequencies(&self, epsilon: f64, loc: &Location) -> Vec<i64>;

    /// Optional bound b on ‖P‖₂² over the class.
    fn norm_bound(&self, _epsilon: f64, _loc: &Location) -> Option<f64> {
        None
    }

    /// Accepts if the hypothesis given by `h` on S is within 2ε/5 of the
    /// class, rejects if it is farther than ε/2. `h` is anchored at `loc.lo`.
    fn project(&self, epsilon: f64, h: &FourierCoeffs, s: &[i64], loc: &Location) -> Result<PluginProjection>;
}

/// b = (|S| + 1)/M, valid for any class satisfying the sparsity premise.
pub fn default_norm_bound(s_len: usize, modulus: u64) -> f64 {
    (s_len as f64 + 1.0) / modulus as f64
}

/// Checks 0 ∈ S, S ⊆ [M], S closed under ξ ↦ M - ξ, and M ≥ |S|.
pub fn check_plugin_set(modulus: u64, s: &[i64]) -> Result<()> {
    if modulus == 0 {
        return config("plugin modulus must be positive");
    }
    if let Some(&xi) = s.iter().find(|&&xi| xi < 0 || xi >= modulus as i64) {
        return config(format!("plugin frequency {xi} outside [0, {modulus})"));
    }
    let norm = normalize_freqs(modulus, s);
    if norm.first() != Some(&0) {
        return config("plugin frequency set must contain 0");
    }
    if norm.len() as u64 > modulus {
        return config("plugin frequency set larger than its modulus");
    }
    let m = modulus as i64;
    if let Some(xi) = norm.iter().find(|&&xi| norm.binary_search(&((m - xi) % m)).is_err()) {
        return config(format!("plugin frequency set is not conjugate-symmetric at {xi}"));
    }
    Ok(())
}

/// Runs the three stages for `plugin` on `sampler`.
pub fn test_class(
    sampler: &dyn Sampler,
    plugin: &dyn ClassPlugin,
    epsilon: f64,
    seed: u64,
    ledger: &Ledger,
) -> Result<TestReport> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return domain(format!("epsilon = {epsilon}, expected a value in (0, 1]"));
    }
    let mut run = Run::new(&format!("plugin:{}", plugin.name()), 0, 0, epsilon, seed, ledger);

    let q_i = plugin.interval_samples(epsilon);
    let mut rng = run.stage_rng("moments");
    let draws = sampler.draw_counts(q_i, &mut rng);
    run.add_samples(q_i);
    let Some(loc) = plugin.identify_interval(&draws, epsilon) else {
        return Ok(run.reject(Stage::IntervalSize));
    };
    let modulus = plugin.modulus(epsilon, &loc);
    let s = plugin.frequencies(epsilon, &loc);
    check_plugin_set(modulus, &s)?;
    run.stat("interval_lo", loc.lo as f64);
    run.stat("interval_hi", loc.hi as f64);
    run.stat("modulus", modulus as f64);
    run.stat("anchor", loc.lo as f64);
    run.stat("s_size", s.len() as f64);
    if loc.len() > modulus || loc.is_empty() {
        return Ok(run.reject(Stage::IntervalSize));
    }

    let mut rng = run.stage_rng("support");
    let check = check_effective_support(sampler, loc.lo, loc.hi, epsilon, ledger.support_c, &mut rng);
    run.add_samples(check.m);
    run.stat("support_outside", check.outside as f64);
    run.stat("support_threshold", check.threshold);
    if !check.pass {
        return Ok(run.reject(Stage::SupportCheck));
    }

    let (b, fallback) = match plugin.norm_bound(epsilon, &loc) {
        Some(b) => (b, false),
        None => (default_norm_bound(s.len(), modulus), true),
    };
    run.stat("norm_bound", b);
    run.stat("norm_bound_default", if fallback { 1.0 } else { 0.0 });
    let eps_prime = epsilon / (5.0 * (modulus as f64).sqrt());
    run.stat("eps_prime", eps_prime);
    let folded = ModSampler::new(sampler, modulus, loc.lo);
    let mut rng = run.stage_rng("fourier");
    let outcome = test_fourier_support_1d(&folded, modulus, loc.lo, &s, eps_prime, b, ledger.fourier_c, &mut rng)?;
    outcome.stats.record(&mut run, "fourier_");
    if outcome.stats.m_prime <= 2 * outcome.stats.m {
        run.add_samples(outcome.stats.m_prime);
    }
    let coeffs = match outcome.verdict {
        SparsityVerdict::Reject(stage) => return Ok(run.reject(stage)),
        SparsityVerdict::Learned(c) => c,
    };

    let out = plugin.project(epsilon, &coeffs, &s, &loc)?;
    run.stat("projection_best", out.best);
    run.stat("projection_threshold", out.threshold);
    run.stat("projection_examined", out.examined as f64);
    if !out.accept {
        return Ok(run.reject(Stage::Projection));
    }
    let hyp = Hypothesis::Fourier { modulus, anchor: loc.lo, coefficients: coeffs.to_report() };
    Ok(run.accept(Some(hyp), out.witness))
}

/// Uniform distributions on intervals [a, a + l - 1] with
/// `min_len <= l <= max_len`.
///
/// I is centred on the midpoint of the identification draws with
/// M = 2·max_len + 1, S = {|ξ| ≤ ⌈16/ε⌉}, and projection scans every
/// interval inside I. No norm bound is declared, so the framework uses
/// its default b.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformIntervalPlugin {
    pub min_len: u64,
    pub max_len: u64,
}

impl UniformIntervalPlugin {
    /// Lengths in [⌈L/2⌉, L]; shorter intervals have too much DFT energy
    /// outside S for the sparsity premise to hold.
    pub fn new(max_len: u64) -> Self {
        UniformIntervalPlugin { min_len: max_len.div_ceil(2).max(1), max_len: max_len.max(1) }
    }

    pub fn frequency_cutoff(epsilon: f64) -> i64 {
        (16.0 / epsilon).ceil() as i64
    }
}

impl ClassPlugin for UniformIntervalPlugin {
    fn name(&self) -> String {
        "uniform-interval".into()
    }

    fn interval_samples(&self, epsilon: f64) -> u64 {
        (4.0 / epsilon).ceil() as u64
    }

    fn identify_interval(&self, samples: &Counts, _epsilon: f64) -> Option<Location> {
        let (lo, hi) = (samples.min()?, samples.max()?);
        let mid = lo + (hi - lo) / 2;
        let (mean, var) = samples.mean_var();
        let l = self.max_len as i64;
        Some(Location { lo: mid - l, hi: mid + l, mean, var, samples: samples.total() })
    }

    fn modulus(&self, _epsilon: f64, _loc: &Location) -> u64 {
        2 * self.max_len + 1
    }

    fn frequencies(&self, epsilon: f64, loc: &Location) -> Vec<i64> {
        let m = self.modulus(epsilon, loc) as i64;
        let cut = Self::frequency_cutoff(epsilon);
        (0..m).filter(|&xi| xi.min(m - xi) <= cut).collect()
    }

    fn project(&self, epsilon: f64, h: &FourierCoeffs, s: &[i64], loc: &Location) -> Result<PluginProjection> {
        let threshold = epsilon * epsilon / 4.0;
        let modulus = h.modulus();
        let freqs = normalize_freqs(modulus, s);
        let hv: Vec<Complex64> = freqs.iter().map(|&xi| h.get(xi)).collect();
        let span = (loc.hi - loc.lo + 1) as usize;
        // powers[f][j] = e(ξ_f (lo + j)/M) for j = 0..=span.
        let powers: Vec<Vec<Complex64>> = freqs
            .iter()
            .map(|&xi| (0..=span as i64).map(|j| e_ratio(xi as i128 * (loc.lo + j) as i128, modulus as i128)).collect())
            .collect();
        let mut out = PluginProjection { accept: false, witness: None, best: f64::INFINITY, threshold, examined: 0 };
        for len in self.min_len..=self.max_len.min(span as u64) {
            for start in 0..=(span - len as usize) {
                out.examined += 1;
                let mut d = 0.0;
                for (f, p) in powers.iter().enumerate() {
                    // (1/l) Σ_{j<l} e(ξ(a + j)/M) as a telescoped geometric sum.
                    let coef = if freqs[f] == 0 {
                        Complex64::new(1.0, 0.0)
                    } else {
                        let ratio = p[1] / p[0];
                        (p[start + len as usize] - p[start]) / ((ratio - 1.0) * len as f64)
                    };
                    d += (hv[f] - coef).norm_sqr();
                    if d > out.best {
                        break;
                    }
                }
                if d < out.best {
                    out.best = d;
                }
                if d <= threshold {
                    out.accept = true;
                    let a = loc.lo + start as i64;
                    out.witness = Some(format!("uniform[{a}, {}]", a + len as i64 - 1));
                    return Ok(out);
                }
            }
        }
        Ok(out)
    }
}

/// The SIIRV tester's large-variance branch expressed as a plugin: the
/// same moment draws, window, frequency set, norm bound and projections.
///
/// The k = 2 shifted-binomial fit uses the identification moments in place
/// of fresh draws, since projection has no sample access here.
#[derive(Clone, Debug, PartialEq)]
pub struct SiirvPlugin {
    pub n: u64,
    pub k: usize,
    pub ledger: Ledger,
}

impl SiirvPlugin {
    fn sigma_tilde(loc: &Location) -> f64 {
        (loc.var.max(0.0) + 1.0).sqrt()
    }
}

impl ClassPlugin for SiirvPlugin {
    fn name(&self) -> String {
        "siirv".into()
    }

    fn interval_samples(&self, _epsilon: f64) -> u64 {
        MOMENT_DRAWS_PER_K * self.k.max(2) as u64
    }

    fn identify_interval(&self, samples: &Counts, epsilon: f64) -> Option<Location> {
        let (mean, var) = samples.mean_var();
        let mut loc = Location { lo: 0, hi: -1, mean, var, samples: samples.total() };
        let sigma = Self::sigma_tilde(&loc);
        if sigma > 2.0 * self.k as f64 * (self.n as f64).sqrt() {
            return None;
        }
        let m = big_modulus(sigma, epsilon);
        loc.lo = window_anchor(mean, m);
        loc.hi = loc.lo + m as i64 - 1;
        Some(loc)
    }

    fn modulus(&self, epsilon: f64, loc: &Location) -> u64 {
        big_modulus(Self::sigma_tilde(loc), epsilon)
    }

    fn frequencies(&self, epsilon: f64, loc: &Location) -> Vec<i64> {
        let l = &self.ledger;
        build_sparse_set(self.modulus(epsilon, loc), Self::sigma_tilde(loc), self.k, epsilon, l.c_prime, l.c_double_prime)
            .entries
    }

    fn norm_bound(&self, _epsilon: f64, loc: &Location) -> Option<f64> {
        Some(16.0 * self.k as f64 / Self::sigma_tilde(loc))
    }

    fn project(&self, epsilon: f64, h: &FourierCoeffs, s: &[i64], loc: &Location) -> Result<PluginProjection> {
        let sigma = Self::sigma_tilde(loc);
        let l = &self.ledger;
        if self.k >= 3 {
            let gamma = epsilon / (5.0 * (s.len() as f64).sqrt());
            let fit = coarsest_fit(self.n, self.k, gamma, l.cover_budget);
            let cover = build_cover_desk(self.n, self.k, fit, l.cover_budget)?;
            let out = project_siirv(h, s, &cover, loc.mean, sigma, epsilon)?;
            return Ok(PluginProjection {
                accept: out.accept,
                witness: out.witness.map(|m| m.label()),
                best: out.best,
                threshold: out.threshold,
                examined: out.examined,
            });
        }
        if sigma < l.pbd_alpha / (epsilon * epsilon) {
            let out = pbd_project_small_variance(
                h,
                s,
                loc.mean,
                sigma,
                self.n,
                epsilon,
                PbdGrid::for_epsilon(epsilon),
                l.candidate_budget,
            );
            return Ok(PluginProjection {
                accept: out.accept,
                witness: out.witness.map(|m| m.label()),
                best: out.best,
                threshold: out.threshold,
                examined: out.examined,
            });
        }
        let fit = fit_shifted_binomial(h, s, self.n, epsilon, loc.mean, loc.var, loc.samples);
        Ok(PluginProjection {
            accept: fit.accept && !fit.infeasible,
            witness: fit.fit.map(|b| format!("{} + Bin({}, {:.6})", b.shift, b.trials, b.p)),
            best: fit.distance,
            threshold: fit.threshold,
            examined: 1,
        })
    }
}

/// Class names accepted by [`plugin_by_name`].
pub const PLUGIN_NAMES: [&str; 2] = ["uniform-interval", "siirv"];

/// Builds a registered plugin. `uniform-interval` reads `n` as the maximum
/// interval length; `siirv` reads `n` and `k` as usual.
pub fn plugin_by_name(name: &str, n: u64, k: usize, ledger: &Ledger) -> Result<Box<dyn ClassPlugin>> {
    match name {
        "uniform-interval" => {
            if n < 1 {
                return config("uniform-interval needs n >= 1");
            }
            Ok(Box::new(UniformIntervalPlugin::new(n)))
        }
        "siirv" => {
            if n < 1 || k < 2 {
                return config(format!("siirv plugin needs n >= 1 and k >= 2, got n = {n}, k = {k}"));
            }
            Ok(Box::new(SiirvPlugin { n, k, ledger: ledger.clone() }))
        }
        other => config(format!("unknown plugin {other}; known: {}", PLUGIN_NAMES.join(", "))),
    }
}
