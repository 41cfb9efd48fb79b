//! Acceptance suite: one pass/fail line per criterion, with the runtime
//! limit counted as part of the pass condition.
//!
//! `cargo test -p disttest-core --test acceptance -- 3 5` runs a subset.

mod oracles;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use disttest_core::dft::{
    dft_1d, dft_piecewise_exponential, full_set, inverse_dft_1d, lattice_dft, lattice_dual_ball, plancherel_residual,
    LatticeBasis,
};
use disttest_core::dist_core::{convolve_exact, convolve_exact_pmd, mod_reduce, ModSampler, PmdSampler, PmfSampler};
use disttest_core::framework::{default_norm_bound, test_class, SiirvPlugin, UniformIntervalPlugin};
use disttest_core::fourier_sparsity::test_fourier_support_1d;
use disttest_core::l2_identity::tolerant_l2_test;
use disttest_core::logconcave::{logconcave_mle, test_logconcave};
use disttest_core::pmd::{
    build_lattice, dual_radius, estimate_mean_cov, fourier_mass_outside, hard_instance, l2_asymptotic, norms_for_lb,
    test_pmd, CovEstimates,
};
use disttest_core::report::validate_report_json;
use disttest_core::siirv::{
    big_modulus, build_sparse_set, siirv_fourier_tail_bound, siirv_l2_bound_check, test_pbd, test_siirv, window_anchor,
};
use disttest_core::{Counts, Ledger, MultiPmf, PmdSpec, Pmf, RngTree, Sampler, SiirvSpec, TestReport, TestRng, VecSampler};
use rand::Rng;
use rayon::prelude::*;
use serde_json::Value;

use oracles::*;

/// Sub-check results for one criterion.
#[derive(Default)]
struct Check {
    ok: bool,
    lines: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check { ok: true, lines: Vec::new() }
    }

    fn require(&mut self, cond: bool, what: impl Into<String>) {
        let what = what.into();
        self.ok &= cond;
        self.lines.push(format!("{} {what}", if cond { "ok  " } else { "FAIL" }));
    }
}

fn rng_for(label: &str) -> TestRng {
    RngTree::new(0xacce).child(label).rng()
}

/// Fraction of seeds 0..trials for which `f` holds, run in parallel.
fn rate(trials: u64, f: impl Fn(u64) -> bool + Sync) -> f64 {
    (0..trials).into_par_iter().filter(|&s| f(s)).count() as f64 / trials as f64
}

fn random_weights(rng: &mut TestRng, len: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn sampler(p: &Pmf) -> PmfSampler {
    PmfSampler::from_pmf(p).unwrap()
}

fn two_spikes(a: i64, b: i64) -> Pmf {
    Pmf::new(a, (a..=b).map(|x| if x == a || x == b { 0.5 } else { 0.0 }).collect()).unwrap()
}

// Fourier correctness.
fn criterion_1() -> Check {
    let mut c = Check::new();
    let mut rng = rng_for("c1");
    let (mut planch, mut naive_gap, mut round_trip, mut lattice_gap) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let m: u64 = rng.random_range(2..=128);
        let offset: i64 = rng.random_range(-60..60);
        // Plancherel needs support within one period; the round trip folds
        // wider supports.
        let len = rng.random_range(1..=m as usize);
        let narrow = Pmf::new(offset, random_weights(&mut rng, len)).unwrap();
        planch = planch.max(plancherel_residual(&narrow, m));
        let coeffs = dft_1d(&narrow, m, &full_set(m));
        let mut energy = 0.0;
        for xi in 0..m as i64 {
            let z = naive_dft(narrow.offset(), narrow.weights(), m, xi);
            naive_gap = naive_gap.max((z - coeffs.get(xi)).norm());
            energy += z.norm_sqr();
        }
        let direct: f64 = narrow.weights().iter().map(|w| w * w).sum();
        planch = planch.max((direct - energy / m as f64).abs());

        let len = rng.random_range(1..=3 * m as usize);
        let wide = Pmf::new(offset, random_weights(&mut rng, len)).unwrap();
        let anchor: i64 = rng.random_range(-40..40);
        let inv = inverse_dft_1d(&dft_1d(&wide, m, &full_set(m)), anchor);
        let folded = fold(wide.offset() - anchor, wide.weights(), m);
        let reduced = mod_reduce(&wide, m, anchor);
        for (j, &f) in folded.iter().enumerate() {
            let x = anchor + j as i64;
            round_trip = round_trip.max((inv.pmf.get(x) - f).abs()).max((reduced.get(x) - f).abs());
        }
        round_trip = round_trip.max(inv.max_imag);

        let basis = LatticeBasis::new(vec![vec![m as i64]]).unwrap();
        let multi = MultiPmf::new(1, wide.iter().map(|(x, w)| (vec![x], w)).collect()).unwrap();
        let freqs: Vec<Vec<i64>> = (0..m as i64).map(|xi| vec![xi]).collect();
        let lat = lattice_dft(&multi, &basis, &freqs);
        let flat = dft_1d(&wide, m, &full_set(m));
        for xi in 0..m as i64 {
            lattice_gap = lattice_gap.max((lat.get(&[xi]).unwrap() - flat.get(xi)).norm());
        }
    }
    c.require(planch < 1e-10, format!("Plancherel residual max {planch:.2e} < 1e-10"));
    c.require(naive_gap < 1e-10, format!("DFT vs term-by-term sum max {naive_gap:.2e} < 1e-10"));
    c.require(round_trip < 1e-10, format!("inverse∘DFT vs folded pmf max {round_trip:.2e} < 1e-10"));
    c.require(lattice_gap < 1e-12, format!("k=1 lattice DFT vs 1-D DFT max {lattice_gap:.2e} < 1e-12"));
    c
}

struct L2Pair {
    p: Pmf,
    pstar: Pmf,
    eps: f64,
    dist: f64,
}

fn l2_pairs(far: bool) -> Vec<L2Pair> {
    let mut rng = rng_for(if far { "c2-far" } else { "c2-near" });
    let mut pairs = Vec::new();
    if far {
        pairs.push(L2Pair { p: Pmf::point(1), pstar: Pmf::point(0), eps: 0.5, dist: 2f64.sqrt() });
    } else {
        pairs.push(L2Pair { p: Pmf::uniform(0, 3), pstar: Pmf::uniform(0, 3), eps: 0.2, dist: 0.0 });
    }
    for i in 1..10 {
        let d: usize = rng.random_range(5..=40);
        let pstar = random_weights(&mut rng, d);
        let mut r = random_weights(&mut rng, d);
        // Concentrate R on a few atoms so the pairs differ in shape.
        for v in r.iter_mut().take(d / 2) {
            *v *= 0.1;
        }
        let total: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= total);
        let t = rng.random_range(0.3..0.9);
        let p: Vec<f64> = pstar.iter().zip(&r).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let dist = l2_dist(&p, &pstar);
        // ε from dist / ε: in (0.5, 1] for the close case, [2, 3] for the far case.
        let ratio = if far { 2.0 + 0.1 * i as f64 } else { 0.5 + 0.05 * i as f64 + if i == 9 { 0.05 } else { 0.0 } };
        pairs.push(L2Pair { p: Pmf::new(0, p).unwrap(), pstar: Pmf::new(0, pstar).unwrap(), eps: dist / ratio, dist });
    }
    pairs
}

// Tolerant L2 identity tester.
fn criterion_2() -> Check {
    let mut c = Check::new();
    let l2_c = Ledger::default().l2_c;
    for far in [false, true] {
        let pairs = l2_pairs(far);
        let mut worst = 1.0f64;
        for (i, pair) in pairs.iter().enumerate() {
            let lo = pair.p.offset().min(pair.pstar.offset());
            let hi = pair.p.hi().max(pair.pstar.hi());
            let exact = l2_dist(&pair.p.window(lo, hi), &pair.pstar.window(lo, hi));
            assert!((exact - pair.dist).abs() < 1e-12, "pair {i}: distance {exact} vs {}", pair.dist);
            let in_case = if far { exact >= 2.0 * pair.eps - 1e-12 } else { exact <= pair.eps + 1e-12 };
            c.require(in_case, format!("{} pair {i}: ‖P-P*‖ = {exact:.4}, ε = {:.4}", if far { "far" } else { "close" }, pair.eps));
            let b = pair.p.l2_sq().max(pair.pstar.l2_sq());
            let s = sampler(&pair.p);
            let r = rate(400, |t| {
                let mut rng = RngTree::new(t).child("c2").nth(i as u64 + if far { 100 } else { 0 }).rng();
                tolerant_l2_test(&s, &pair.pstar, pair.eps, b, l2_c, &mut rng).unwrap().accept != far
            });
            worst = worst.min(r);
        }
        let what = if far { "reject" } else { "accept" };
        c.require(worst >= 0.70, format!("min {what} rate over 10 pairs {worst:.3} >= 0.70 (400 trials each)"));
    }
    c
}

// Fourier-sparsity tester with the SIIRV high-variance parameters.
fn criterion_3() -> Check {
    let mut c = Check::new();
    let l = Ledger::default();
    let (n, eps) = (40usize, 0.25);
    let sigma = (n as f64 * 0.25 + 1.0).sqrt();
    let modulus = big_modulus(sigma, eps);
    let s = build_sparse_set(modulus, sigma, 2, eps, l.c_prime, l.c_double_prime);
    let b = 32.0 / sigma;
    let eps_t = eps / (5.0 * (modulus as f64).sqrt());
    let anchor = window_anchor(n as f64 / 2.0, modulus);
    let in_s: Vec<bool> = (0..modulus as i64).map(|xi| s.entries.contains(&xi)).collect();
    let out_energy = |offset: i64, w: &[f64]| -> f64 {
        (0..modulus as i64)
            .filter(|&xi| !in_s[xi as usize])
            .map(|xi| naive_dft(offset, w, modulus, xi).norm_sqr())
            .sum::<f64>()
            / modulus as f64
    };
    c.lines.push(format!("     M = {modulus}, |S| = {}, b = {b:.3}, test ε = {eps_t:.3e}", s.len()));

    let bin = binomial_pmf(n, 0.5);
    let q_hat: Vec<_> = s.entries.iter().map(|&xi| naive_dft(0, &bin, modulus, xi)).collect();
    let e_bin = out_energy(0, &bin);
    let norm_bin: f64 = fold(-anchor, &bin, modulus).iter().map(|v| v * v).sum();
    c.require(
        e_bin <= eps_t * eps_t / 4.0 && norm_bin <= b,
        format!("in-class premise: out-of-S energy {e_bin:.2e} <= (ε/2)², ‖Q‖² {norm_bin:.3} <= b"),
    );
    let inner = sampler(&Pmf::binomial(n as u64, 0.5));
    let folded = ModSampler::new(&inner, modulus, anchor);
    let runs: Vec<Option<f64>> = (0..300u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngTree::new(t).child("c3-in").rng();
            let out = test_fourier_support_1d(&folded, modulus, anchor, &s.entries, eps_t, b, l.fourier_c, &mut rng).unwrap();
            out.coefficients().map(|h| {
                s.entries.iter().zip(&q_hat).map(|(&xi, q)| (q - h.get(xi)).norm_sqr()).sum::<f64>().sqrt()
            })
        })
        .collect();
    let kept: Vec<f64> = runs.iter().flatten().copied().collect();
    let completeness = kept.len() as f64 / runs.len() as f64;
    c.require(completeness >= 0.65, format!("completeness {completeness:.3} >= 0.65 (300 trials)"));
    let bound = eps_t * (modulus as f64).sqrt() / 10.0;
    let close = kept.iter().filter(|&&e| e <= bound).count() as f64 / kept.len().max(1) as f64;
    c.require(close >= 0.90, format!("‖Q̂1_S - Ĥ′‖ <= ε√M/10 in {close:.3} of non-rejecting runs (>= 0.90)"));

    let xi0 = (0..modulus as i64)
        .filter(|&xi| !in_s[xi as usize] && !in_s[(modulus as i64 - xi) as usize % modulus as usize])
        .max_by_key(|&xi| xi.min(modulus as i64 - xi))
        .expect("S leaves some frequency out");
    let a = 0.5;
    let planted: Vec<f64> = (0..modulus)
        .map(|j| (1.0 + a * (2.0 * std::f64::consts::PI * (xi0 * j as i64) as f64 / modulus as f64).cos()) / modulus as f64)
        .collect();
    let e_far = out_energy(anchor, &planted);
    c.require(e_far > eps_t * eps_t, format!("planted ξ₀ = {xi0}: out-of-S energy {e_far:.3e} > ε² = {:.3e}", eps_t * eps_t));
    let far = sampler(&Pmf::new(anchor, planted).unwrap());
    let soundness = rate(300, |t| {
        let mut rng = RngTree::new(t).child("c3-far").rng();
        test_fourier_support_1d(&far, modulus, anchor, &s.entries, eps_t, b, l.fourier_c, &mut rng).unwrap().rejected().is_some()
    });
    c.require(soundness >= 0.65, format!("soundness {soundness:.3} >= 0.65 (300 trials)"));
    c
}

fn random_siirv(rng: &mut TestRng) -> SiirvSpec {
    loop {
        let n = rng.random_range(1..=40);
        let k = rng.random_range(2..=4);
        let summands: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut q = random_weights(rng, k);
                // Some summands nearly deterministic, some spread out.
                if rng.random::<f64>() < 0.3 {
                    let j = rng.random_range(0..k);
                    q.iter_mut().for_each(|v| *v *= 0.05);
                    q[j] += 0.95;
                }
                q
            })
            .collect();
        let spec = SiirvSpec::new(k, summands).unwrap();
        if spec.variance() >= 1.0 {
            return spec;
        }
    }
}

// Structural lemmas on exact SIIRVs.
fn criterion_4() -> Check {
    let mut c = Check::new();
    let mut rng = rng_for("c4");
    let (mut violations, mut oracle_violations, mut count_fail, mut l2_fail) = (0usize, 0usize, 0usize, 0usize);
    let mut l2_gap = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for _ in 0..50 {
        let spec = random_siirv(&mut rng);
        let s = spec.variance().sqrt();
        let modulus: u64 = rng.random_range(s.floor() as u64 + 1..=s.floor() as u64 + 200);
        let delta: f64 = rng.random_range(0.01..0.49);
        let k = spec.k() as i64;
        let tail = siirv_fourier_tail_bound(&spec, modulus, delta).unwrap();
        violations += tail.violations.len();
        count_fail += (tail.large_count as f64 > tail.count_bound) as usize;

        let width = (1.0 / delta).ln().sqrt() / (2.0 * s);
        let mut energy = 0.0;
        let mut large = 0usize;
        for xi in 0..modulus as i64 {
            let z = siirv_transform(spec.summands(), modulus, xi);
            energy += z.norm_sqr();
            let near = (1..k).any(|b| {
                (0..=b).any(|a| {
                    let d = (xi as f64 / modulus as f64 - a as f64 / b as f64).abs();
                    d.min(1.0 - d) < width
                })
            });
            large += (z.norm() > delta) as usize;
            oracle_violations += (!near && z.norm() > delta) as usize;
        }
        count_fail += (large != tail.large_count) as usize;
        let folded_sq = energy / modulus as f64;
        let (lib_sq, bound) = siirv_l2_bound_check(&spec, modulus).unwrap();
        l2_gap = l2_gap.max((lib_sq - folded_sq).abs());
        l2_fail += (folded_sq > bound) as usize;
        worst_ratio = worst_ratio.max(folded_sq / bound);
    }
    c.require(violations == 0 && oracle_violations == 0, format!("tail-bound violations {violations} (product oracle {oracle_violations}) on 50 specs"));
    c.require(count_fail == 0, format!("large-coefficient count within bound and matching the oracle ({count_fail} failures)"));
    c.require(l2_fail == 0, format!("‖P mod M‖² <= 8k/s on all specs, max ratio {worst_ratio:.3}"));
    c.require(l2_gap < 1e-10, format!("folded norm vs product-transform Plancherel max gap {l2_gap:.2e}"));
    c
}

fn heterogeneous_siirv3(n: usize) -> SiirvSpec {
    let mut rng = rng_for("c5-het");
    SiirvSpec::new(3, (0..n).map(|_| random_weights(&mut rng, 3)).collect()).unwrap()
}

// SIIRV tester end to end.
fn criterion_5() -> Check {
    let mut c = Check::new();
    let l = Ledger::default();
    let het = heterogeneous_siirv3(60);
    let accept_cases: Vec<(&str, Pmf, u64, usize)> = vec![
        ("Bin(100,0.5)", Pmf::binomial(100, 0.5), 100, 2),
        ("Bin(400,0.1)", Pmf::binomial(400, 0.1), 400, 2),
        ("3-SIIRV n=60", convolve_exact(&het).unwrap(), 60, 3),
    ];
    let gap = 39;
    let reject_cases: Vec<(&str, Pmf, f64)> = vec![
        ("uniform[0,400] vs n=100", Pmf::uniform(0, 400), Pmf::uniform(0, 400).iter().filter(|(x, _)| *x > 100).map(|(_, w)| w).sum()),
        ("spikes 30,70 vs n=100", two_spikes(30, 70), two_spike_unimodal_tv(gap)),
    ];
    for eps in [0.25, 0.1] {
        for (name, p, n, k) in &accept_cases {
            let s = sampler(p);
            let r = rate(100, |t| test_siirv(&s, *n, *k, eps, t, &l).unwrap().accepted());
            c.require(r >= 0.6, format!("ε={eps} accept {name}: {r:.2}"));
        }
        for (name, p, tv) in &reject_cases {
            c.require(*tv >= eps, format!("ε={eps} {name}: certified TV >= {tv:.4}"));
            let s = sampler(p);
            let r = rate(100, |t| !test_siirv(&s, 100, 2, eps, t, &l).unwrap().accepted());
            c.require(r >= 0.6, format!("ε={eps} reject {name}: {r:.2}"));
        }
    }
    c
}

// Sample-count scaling with n.
fn criterion_6() -> Check {
    let mut c = Check::new();
    let l = Ledger::default();
    let mean_samples = |n: u64| -> (f64, f64) {
        let s = sampler(&Pmf::binomial(n, 0.5));
        let reports: Vec<TestReport> = (0..20u64).into_par_iter().map(|t| test_pbd(&s, n, 0.25, t, &l).unwrap()).collect();
        let mean = reports.iter().map(|r| r.samples_total as f64).sum::<f64>() / 20.0;
        let acc = reports.iter().filter(|r| r.accepted()).count() as f64 / 20.0;
        (mean, acc)
    };
    let (m64, a64) = mean_samples(64);
    let (m1024, a1024) = mean_samples(1024);
    c.lines.push(format!("     n=64: mean samples {m64:.4e}, accept {a64:.2}; n=1024: mean samples {m1024:.4e}, accept {a1024:.2}"));
    // Not part of the criterion: both sizes on the Fourier branch, where the
    // count grows like √σ̃, i.e. n^{1/4}.
    let (m256, _) = mean_samples(256);
    c.lines.push(format!("     n=256: mean samples {m256:.4e}; n=1024 / n=256 = {:.3} (n^(1/4) predicts {:.3})", m1024 / m256, 4f64.powf(0.25)));
    let ratio = m1024 / m64;
    c.require((1.5..=6.0).contains(&ratio), format!("sample ratio n=1024 / n=64 = {ratio:.4e} in [1.5, 6]"));
    c
}

fn composition_uniform(n: i64) -> MultiPmf {
    MultiPmf::new(2, (0..=n).map(|a| (vec![a, n - a], 1.0 / (n + 1) as f64)).collect()).unwrap()
}

fn multi_sampler(p: &MultiPmf) -> disttest_core::dist_core::MultiPmfSampler {
    disttest_core::dist_core::MultiPmfSampler::new(p).unwrap()
}

// PMD tester at desk scale.
fn criterion_7() -> Check {
    let mut c = Check::new();
    let l = Ledger::default();
    for (n, q, eps) in [(40usize, [0.5, 0.5], 0.3), (100, [0.3, 0.7], 0.3)] {
        let s = multi_sampler(&convolve_exact_pmd(&PmdSpec::iid(n, &q).unwrap()).unwrap());
        let r = rate(50, |t| test_pmd(&s, n as u64, 2, eps, t, &l).unwrap().accepted());
        c.require(r >= 0.6, format!("accept i.i.d. n={n} q={q:?} ε={eps}: {r:.2}"));
    }
    let (n, eps) = (40u64, 0.1);
    let tv = uniform_vs_bounded_variance_tv(n);
    c.require(tv >= eps, format!("composition-uniform n={n}: certified TV >= {tv:.4}"));
    let s = multi_sampler(&composition_uniform(n as i64));
    let r = rate(50, |t| !test_pmd(&s, n, 2, eps, t, &l).unwrap().accepted());
    c.require(r >= 0.6, format!("reject composition-uniform n={n} ε={eps}: {r:.2}"));

    for (n, q, eps) in [(20, vec![0.5, 0.5], 0.3), (40, vec![0.3, 0.7], 0.25), (30, vec![0.2, 0.3, 0.5], 0.3), (60, vec![0.1, 0.9], 0.2)] {
        let spec = PmdSpec::iid(n, &q).unwrap();
        let p = convolve_exact_pmd(&spec).unwrap();
        let k = q.len();
        let basis = build_lattice(&CovEstimates::from_moments(spec.mean(), spec.covariance()), k, eps, l.lattice_c).unwrap();
        let set = lattice_dual_ball(&basis, dual_radius(k, eps, l.lattice_c));
        let out = fourier_mass_outside(&p, &basis, &set);
        c.require(
            out.l1 < eps / 10.0,
             format!("n={n} k={k}: out-of-S L1 {:.2e} < ε/10 ({}/{} classes in S)", out.l1.abs(), out.s_classes, out.classes),
        );
    }

    let mut rng = rng_for("c7-random");
    let (mut hadamard, mut rank, mut sums) = (0, 0, 0);
    for run in 0..50u64 {
        let n: usize = rng.random_range(20..=100);
        let k: usize = if run % 5 == 4 { 3 } else { 2 };
        let spec = PmdSpec::new(k, (0..n).map(|_| random_weights(&mut rng, k)).collect()).unwrap();
        let s = PmdSampler::new(&spec);
        let mut draw_rng = RngTree::new(run).child("c7").rng();
        let est = estimate_mean_cov(&s, k, l.pmd_moment_c, &mut draw_rng).unwrap();
        let basis = build_lattice(&est, k, 0.25, l.lattice_c).unwrap();
        let m = basis.matrix();
        let det = int_det(m).unsigned_abs() as f64;
        let col_prod: f64 = (0..k).map(|j| (0..k).map(|i| (m[i][j] as f64).powi(2)).sum::<f64>().sqrt()).product();
        hadamard += (det <= col_prod * (1.0 + 1e-12)) as usize;
        let lmax = est.eigenvalues[0];
        let lmin = *est.eigenvalues.last().unwrap();
        rank += (lmin.abs() < 0.05 * lmax) as usize;
        let draws = s.draw_counts(200, &mut draw_rng);
        sums += draws.keys().all(|x| x.iter().sum::<i64>() == n as i64) as usize;
    }
    c.require(hadamard == 50, format!("Hadamard |det M| <= Π column norms on {hadamard}/50 runs"));
    c.require(rank == 50, format!("λ_min < 0.05 λ_max on {rank}/50 runs"));
    c.require(sums == 50, format!("coordinates sum to n on {sums}/50 runs"));
    c
}

// Norms of the lower-bound instance.
fn criterion_8() -> Check {
    let mut c = Check::new();
    // n = 2, k = 2: outcomes (2,0), (1,1), (0,2) with mass 1/4, 1/2, 1/4.
    let direct: f64 = [0.25f64, 0.5, 0.25].iter().map(|p| p * p).sum();
    let (l2, _) = norms_for_lb(&hard_instance(2, 2).unwrap()).unwrap();
    c.require(direct == 0.375 && (l2 - 0.375).abs() < 1e-15, format!("n=2 k=2: ‖P*‖² = {l2} (direct sum {direct})"));
    for n in [50usize, 100, 200] {
        let w = binomial_pmf(n, 0.5);
        let exact: f64 = w.iter().map(|p| p * p).sum();
        let (lib, _) = norms_for_lb(&hard_instance(n, 2).unwrap()).unwrap();
        let ratio = exact / l2_asymptotic(n, 2);
        c.require(
            (0.5..=2.0).contains(&ratio) && (lib - exact).abs() < 1e-12,
            format!("n={n}: exact/asymptotic = {ratio:.5}, library norm matches direct sum"),
        );
    }
    let mut rng = rng_for("c8");
    let mut specs: Vec<PmdSpec> = [(50, 2), (100, 2), (200, 2), (10, 3), (6, 4)].iter().map(|&(n, k)| hard_instance(n, k).unwrap()).collect();
    for _ in 0..30 {
        let k = rng.random_range(2..=4);
        let n = rng.random_range(1..=15);
        specs.push(PmdSpec::new(k, (0..n).map(|_| random_weights(&mut rng, k)).collect()).unwrap());
    }
    let mut violations = 0;
    let mut slack = f64::INFINITY;
    for spec in &specs {
        let p = convolve_exact_pmd(spec).unwrap();
        let l2: f64 = p.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        let two_thirds = p.iter().map(|(_, w)| w.powf(2.0 / 3.0)).sum::<f64>().powf(1.5);
        violations += (two_thirds < 1.0 / l2 * (1.0 - 1e-12)) as usize;
        slack = slack.min(two_thirds * l2);
    }
    c.require(violations == 0, format!("Hölder ‖P‖_(2/3)·‖P‖₂ >= 1 on {} pmfs, min product {slack:.4}", specs.len()));
    c
}

fn counts_from(offset: i64, c: &[u64]) -> Counts {
    let mut counts = Counts::new();
    for (j, &v) in c.iter().enumerate() {
        if v > 0 {
            counts.add(offset + j as i64, v);
        }
    }
    counts
}

// Log-concave MLE.
fn criterion_9() -> Check {
    let mut c = Check::new();
    let l = Ledger::default();
    let mut rng = rng_for("c9");
    let mut shape_fail = 0;
    for _ in 0..200 {
        let len = rng.random_range(1..=30);
        let mode: f64 = rng.random_range(0.0..len as f64);
        let spread: f64 = rng.random_range(0.5..4.0);
        let mut raw: Vec<u64> = (0..len)
            .map(|j| {
                let base = (-(j as f64 - mode).abs() / spread).exp() * 60.0;
                // Noise and occasional gaps make the histogram itself non-log-concave.
                if rng.random::<f64>() < 0.15 { 0 } else { (base * rng.random_range(0.3..1.7)) as u64 }
            })
            .collect();
        raw[0] = raw[0].max(1);
        raw[len - 1] = raw[len - 1].max(1);
        let mle = logconcave_mle(&counts_from(-7, &raw), l.mle_tol, l.mle_max_iter).unwrap();
        let w = mle.pmf.weights();
        if !(is_logconcave(w, 1e-9) && is_unimodal(w, 1e-12) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-9) {
            shape_fail += 1;
        }
    }
    c.require(shape_fail == 0, format!("MLE log-concave and unimodal on 200 random histograms ({shape_fail} failures)"));

    let mut gap = 0.0f64;
    for _ in 0..60 {
        let len = rng.random_range(3..=5);
        let mut raw: Vec<u64> = (0..len).map(|_| rng.random_range(0..40)).collect();
        raw[0] = raw[0].max(1);
        raw[len - 1] = raw[len - 1].max(1);
        let mle = logconcave_mle(&counts_from(3, &raw), l.mle_tol, l.mle_max_iter).unwrap();
        let window = mle.pmf.window(3, 3 + len as i64 - 1);
        gap = gap.max((logconcave_grid_oracle(&raw) - mean_loglik(&raw, &window)).abs());
    }
    c.require(gap < 1e-5, format!("objective gap vs grid oracle on 60 windows of 3-5 points: {gap:.2e} < 1e-5"));

    let truth = binomial_pmf(30, 0.5);
    let p = sampler(&Pmf::binomial(30, 0.5));
    let mean_h2 = |m: u64| -> f64 {
        (0..50u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = RngTree::new(t).child("c9-rate").nth(m).rng();
                let mle = logconcave_mle(&p.draw_counts(m, &mut rng), l.mle_tol, l.mle_max_iter).unwrap();
                hellinger_sq(&mle.pmf.window(0, 30), &truth)
            })
            .sum::<f64>()
            / 50.0
    };
    let (h500, h8000) = (mean_h2(500), mean_h2(8000));
    c.require(
        h500 >= 2.0 * h8000,
        format!("mean Hellinger² {h500:.3e} at m=500 vs {h8000:.3e} at m=8000, ratio {:.2} >= 2", h500 / h8000),
    );
    c
}

// Log-concavity tester end to end.
fn criterion_10() -> Check {
    let mut c = Check::new();
    let l = Ledger::default();
    let cases: Vec<(&str, Pmf, u64, f64)> = vec![
        ("Bin(200,0.5)", Pmf::binomial(200, 0.5), 201, 0.3),
        ("geometric(0.3) on [0,60]", Pmf::truncated_geometric(0.3, 60), 61, 0.3),
    ];
    for (name, p, n, eps) in &cases {
        assert!(is_logconcave(p.weights(), 1e-12));
        let s = sampler(p);
        let r = rate(100, |t| test_logconcave(&s, *n, *eps, t, &l).unwrap().accepted());
        c.require(r >= 0.6, format!("accept {name} ε={eps}: {r:.2}"));
    }
    let (n, eps) = (41u64, 0.2);
    let tv = two_spike_unimodal_tv(39);
    c.require(tv >= eps, format!("spikes at 0 and 40: certified TV >= {tv:.4}"));
    let s = sampler(&two_spikes(0, 40));
    let r = rate(100, |t| !test_logconcave(&s, n, eps, t, &l).unwrap().accepted());
    c.require(r >= 0.6, format!("reject spikes at 0 and 40 ε={eps}: {r:.2}"));

    let mut rng = rng_for("c10");
    let mut err = 0.0f64;
    for _ in 0..100 {
        let m: u64 = rng.random_range(2..=200);
        let mut x = rng.random_range(-20..20);
        let mut pieces = Vec::new();
        for _ in 0..rng.random_range(1..=4) {
            let len = rng.random_range(1..=30);
            let beta = if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random_range(-0.8..0.8) };
            // Keep each piece's values within [e^-8, 1].
            let alpha = -beta * x as f64 - if beta > 0.0 { beta * len as f64 } else { 0.0 } - rng.random_range(0.0..2.0);
            pieces.push((x, x + len - 1, alpha, beta));
            x += len;
        }
        let offset = pieces[0].0;
        let weights: Vec<f64> = pieces.iter().flat_map(|&(a, b, al, be)| (a..=b).map(move |j| (al + be * j as f64).exp())).collect();
        let closed = dft_piecewise_exponential(&pieces, m, &full_set(m));
        for xi in 0..m as i64 {
            err = err.max((closed.get(xi) - naive_dft(offset, &weights, m, xi)).norm());
        }
    }
    c.require(err < 1e-9, format!("piecewise-exponential closed-form DFT vs direct sum: {err:.2e} < 1e-9"));
    c
}

// Generic framework.
fn criterion_11() -> Check {
    let mut c = Check::new();
    let l = Ledger::default();
    let big = 60u64;
    let plugin = UniformIntervalPlugin::new(big);
    let eps = 0.25;
    for (lo, hi) in [(0, 59), (10, 44), (100, 130), (-25, 20)] {
        let s = sampler(&Pmf::uniform(lo, hi));
        let r = rate(100, |t| test_class(&s, &plugin, eps, t, &l).unwrap().accepted());
        c.require(r >= 0.6, format!("uniform-interval accept [{lo},{hi}]: {r:.2}"));
    }
    let far = Pmf::uniform(0, 14).mixture(&Pmf::uniform(45, 59), 0.5);
    let tv = min_tv_to_intervals(far.offset(), far.weights(), plugin.min_len, plugin.max_len);
    c.require(tv >= eps, format!("far mixture: exact TV to the class {tv:.4} >= ε"));
    let s = sampler(&far);
    let r = rate(100, |t| !test_class(&s, &plugin, eps, t, &l).unwrap().accepted());
    c.require(r >= 0.6, format!("uniform-interval reject far mixture: {r:.2}"));

    let modulus = 2 * big + 1;
    let mut worst = 0.0f64;
    let mut looser = true;
    for e in [1.0, 0.75, 0.5, 0.35, 0.25] {
        let cutoff = UniformIntervalPlugin::frequency_cutoff(e);
        let s_len = (0..modulus as i64).filter(|&xi| xi.min(modulus as i64 - xi) <= cutoff).count();
        let bound = (s_len as f64 + e * e / 100.0) / modulus as f64;
        looser &= default_norm_bound(s_len, modulus) >= bound;
        for len in plugin.min_len..=plugin.max_len {
            let p = Pmf::uniform(0, len as i64 - 1);
            let norm: f64 = p.weights().iter().map(|w| w * w).sum();
            worst = worst.max(norm / bound);
        }
    }
    c.require(worst <= 1.0, format!("‖P‖² <= (|S| + ε²/100)/M for every class member, max ratio {worst:.3}"));
    c.require(looser, "the fallback b = (|S| + 1)/M dominates that bound");

    let het = heterogeneous_siirv3(400);
    let agree_cases: Vec<(&str, Pmf, u64, usize, f64)> = vec![
        ("Bin(400,0.5)", Pmf::binomial(400, 0.5), 400, 2, 0.1),
        ("Bin(900,0.3)", Pmf::binomial(900, 0.3), 900, 2, 0.1),
        ("uniform[150,250] vs n=400", Pmf::uniform(150, 250), 400, 2, 0.1),
        ("3-SIIRV n=400", convolve_exact(&het).unwrap(), 400, 3, 0.25),
    ];
    for (name, p, n, k, e) in &agree_cases {
        let s = sampler(p);
        let plugin = SiirvPlugin { n: *n, k: *k, ledger: l.clone() };
        let pairs: Vec<(TestReport, TestReport)> = (0..100u64)
            .into_par_iter()
            .map(|t| (test_class(&s, &plugin, *e, t, &l).unwrap(), test_siirv(&s, *n, *k, *e, t, &l).unwrap()))
            .collect();
        let big_branch = pairs.iter().all(|(_, d)| d.stat("branch_small").is_none_or(|v| v == 0.0));
        let agree = pairs.iter().filter(|(a, b)| a.accepted() == b.accepted()).count() as f64 / 100.0;
        let acc = pairs.iter().filter(|(_, b)| b.accepted()).count();
        c.require(
            big_branch && agree >= 0.95,
            format!("SIIRV plugin vs dedicated tester on {name} ε={e}: agreement {agree:.2} (tester accepts {acc}/100)"),
        );
    }
    c
}

fn schema() -> jsonschema::Validator {
    let text = include_str!("../../../../schema/report.schema.json");
    jsonschema::validator_for(&serde_json::from_str(text).unwrap()).unwrap()
}

// Determinism and schema validity.
fn criterion_12() -> Check {
    let mut c = Check::new();
    let l = Ledger::default();
    let bin = sampler(&Pmf::binomial(60, 0.4));
    let wide = sampler(&Pmf::uniform(0, 400));
    let siirv = sampler(&convolve_exact(&heterogeneous_siirv3(60)).unwrap());
    let pmd = multi_sampler(&convolve_exact_pmd(&PmdSpec::iid(20, &[0.3, 0.7]).unwrap()).unwrap());
    let unif = sampler(&Pmf::uniform(5, 50));
    let plugin = UniformIntervalPlugin::new(60);
    let run = |job: usize, seed: u64| -> TestReport {
        match job {
            0 => test_pbd(&bin, 60, 0.25, seed, &l),
            1 => test_pbd(&wide, 100, 0.1, seed, &l),
            2 => test_siirv(&siirv, 60, 3, 0.25, seed, &l),
            3 => test_pmd(&pmd, 20, 2, 0.3, seed, &l),
            4 => test_logconcave(&bin, 61, 0.3, seed, &l),
            _ => test_class(&unif, &plugin, 0.3, seed, &l),
        }
        .unwrap()
    };
    let jobs: Vec<(usize, u64)> = (0..6).flat_map(|j| (0..4u64).map(move |s| (j, s))).collect();
    let serial: Vec<String> = jobs.iter().map(|&(j, s)| run(j, s).to_json().unwrap()).collect();
    let again: Vec<String> = jobs.iter().map(|&(j, s)| run(j, s).to_json().unwrap()).collect();
    let parallel: Vec<String> = jobs.par_iter().map(|&(j, s)| run(j, s).to_json().unwrap()).collect();
    c.require(serial == again, format!("{} reports byte-identical on serial rerun", jobs.len()));
    c.require(serial == parallel, "byte-identical under parallel rerun");

    let v = schema();
    let mut invalid = 0;
    let mut verdicts = BTreeMap::new();
    for text in &serial {
        let value: Value = serde_json::from_str(text).unwrap();
        if !v.is_valid(&value) || validate_report_json(&value).is_err() {
            invalid += 1;
        }
        *verdicts.entry(value["verdict"].as_str().unwrap_or("?").to_string()).or_insert(0) += 1;
    }
    c.require(invalid == 0, format!("all reports valid under the JSON schema and the structural validator ({verdicts:?})"));
    c
}

type Criterion = fn() -> Check;

const CRITERIA: [(Criterion, u64); 12] = [
    (criterion_1, 5),
    (criterion_2, 120),
    (criterion_3, 300),
    (criterion_4, 60),
    (criterion_5, 1200),
    (criterion_6, 600),
    (criterion_7, 1200),
    (criterion_8, 120),
    (criterion_9, 600),
    (criterion_10, 900),
    (criterion_11, 600),
    (criterion_12, 60),
];

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (f, limit)) in CRITERIA.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f));
        let elapsed = start.elapsed();
        let (mut ok, lines) = match result {
            Ok(check) => (check.ok, check.lines),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, vec![format!("FAIL panicked: {msg}")])
            }
        };
        for line in &lines {
            println!("    {line}");
        }
        let in_time = elapsed <= Duration::from_secs(*limit);
        ok &= in_time;
        println!(
            "criterion {id:>2}: {} ({:.1}s, limit {limit}s{})",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", exceeded" }
        );
        if !ok {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
