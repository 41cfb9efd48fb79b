//! Projection steps: deciding whether a learned hypothesis is close to the
//! SIIRV class, either in Fourier distance on a frequency set or in total
//! variation, plus the two Poisson binomial shortcuts.
//!
//! The cover is an explicit desk-scale enumeration of two subfamilies:
//! SIIRVs with i.i.d. summands, and shifted binomials. Both grids are laid
//! out in square-root coordinates so the Hellinger bound certifies their
//! radius over the enumerated subfamily. Only at n = 1 does that subfamily
//! exhaust the class.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use serde_json::Value;

use crate::dft::{e_ratio, normalize_freqs, FourierCoeffs};
use crate::dist_core::{distances, DistSpec, Pmf, Sampler, SiirvSpec};
use crate::error::{config, Error, Result};
use crate::rng::TestRng;

/// The moment filter applied to every candidate: |μ̃ - μ_Q| ≤ σ̃ and
/// 2(σ_Q + 1) ≥ σ̃ + 1 ≥ (σ_Q + 1)/2, with σ_Q a standard deviation.
pub fn moment_filter(mu_q: f64, sd_q: f64, mu_tilde: f64, sigma_tilde: f64) -> bool {
    (mu_tilde - mu_q).abs() <= sigma_tilde
        && 2.0 * (sd_q + 1.0) >= sigma_tilde + 1.0
        && sigma_tilde + 1.0 >= (sd_q + 1.0) / 2.0
}

/// Ordering key: how far the candidate's moments sit from the estimates.
fn moment_score(mu_q: f64, var_q: f64, mu_tilde: f64, sigma_tilde: f64) -> f64 {
    let dm = (mu_q - mu_tilde) / sigma_tilde;
    let ds = ((var_q + 1.0).sqrt() / sigma_tilde).ln();
    dm * dm + ds * ds
}

/// shift + Bin(trials, p).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftedBinomial {
    pub shift: i64,
    pub trials: u64,
    pub p: f64,
}

impl ShiftedBinomial {
    pub fn mean(&self) -> f64 {
        self.shift as f64 + self.trials as f64 * self.p
    }

    pub fn variance(&self) -> f64 {
        self.trials as f64 * self.p * (1.0 - self.p)
    }

    /// (1 - p + p e(ξ/M))^trials e(ξ shift/M).
    pub fn coefficient(&self, modulus: u64, xi: i64) -> Complex64 {
        let m = modulus as i128;
        let base = Complex64::new(1.0 - self.p, 0.0) + e_ratio(xi as i128, m) * self.p;
        pow_u64(base, self.trials) * e_ratio(xi as i128 * self.shift as i128, m)
    }

    pub fn dft(&self, modulus: u64, s: &[i64]) -> FourierCoeffs {
        let entries = normalize_freqs(modulus, s)
            .into_iter()
            .map(|xi| (xi, self.coefficient(modulus, xi)))
            .collect();
        FourierCoeffs::new(modulus, entries)
    }

    pub fn pmf(&self) -> Pmf {
        Pmf::shifted_binomial(self.shift, self.trials, self.p)
    }

    /// An (n, k)-SIIRV realizing this law, when one exists: `trials`
    /// two-point summands on {a, a+1} and constants making up the shift.
    pub fn to_spec(&self, n: usize, k: usize) -> Result<SiirvSpec> {
        let max_shift = (n as i64) * (k as i64 - 1) - self.trials as i64;
        if self.trials as usize > n || self.shift < 0 || self.shift > max_shift {
            return Err(Error::Domain(format!(
                "{} + Bin({}, {}) is not an ({n}, {k})-SIIRV",
                self.shift, self.trials, self.p
            )));
        }
        let mut left = self.shift as usize;
        let mut summands = Vec::with_capacity(n);
        for i in 0..n {
            let mut q = vec![0.0; k];
            if i < self.trials as usize {
                let a = left.min(k - 2);
                left -= a;
                q[a] = 1.0 - self.p;
                q[a + 1] += self.p;
            } else {
                let c = left.min(k - 1);
                left -= c;
                q[c] = 1.0;
            }
            summands.push(q);
        }
        SiirvSpec::new(k, summands)
    }
}

pub(crate) fn pow_u64(z: Complex64, e: u64) -> Complex64 {
    let mut base = z;
    let mut acc = Complex64::new(1.0, 0.0);
    let mut e = e;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

/// One cover element.
#[derive(Clone, Debug, PartialEq)]
pub enum Member {
    /// n i.i.d. copies of the summand `q`.
    Iid { n: u64, q: Vec<f64> },
    Shifted(ShiftedBinomial),
    /// A Poisson binomial with the listed success probabilities.
    Pbd(Vec<f64>),
}

impl Member {
    pub fn mean(&self) -> f64 {
        match self {
            Member::Iid { n, q } => *n as f64 * summand_mean(q),
            Member::Shifted(b) => b.mean(),
            Member::Pbd(ps) => ps.iter().sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Member::Iid { n, q } => *n as f64 * summand_var(q),
            Member::Shifted(b) => b.variance(),
            Member::Pbd(ps) => ps.iter().map(|p| p * (1.0 - p)).sum(),
        }
    }

    pub fn coefficient(&self, modulus: u64, xi: i64) -> Complex64 {
        match self {
            Member::Iid { n, q } => {
                let m = modulus as i128;
                let base: Complex64 = q
                    .iter()
                    .enumerate()
                    .map(|(j, &w)| e_ratio(xi as i128 * j as i128, m) * w)
                    .sum();
                pow_u64(base, *n)
            }
            Member::Shifted(b) => b.coefficient(modulus, xi),
            Member::Pbd(ps) => {
                let u = e_ratio(xi as i128, modulus as i128);
                ps.iter().map(|&p| Complex64::new(1.0 - p, 0.0) + u * p).product()
            }
        }
    }

    /// Exact coefficients on `s`, from the closed forms.
    pub fn dft(&self, modulus: u64, s: &[i64]) -> FourierCoeffs {
        let entries = normalize_freqs(modulus, s)
            .into_iter()
            .map(|xi| (xi, self.coefficient(modulus, xi)))
            .collect();
        FourierCoeffs::new(modulus, entries)
    }

    pub fn pmf(&self) -> Pmf {
        match self {
            Member::Iid { n, q } => Pmf::pseudo(0, q.clone()).iid_sum(*n),
            Member::Shifted(b) => b.pmf(),
            Member::Pbd(ps) => ps
                .iter()
                .fold(Pmf::point(0), |acc, &p| acc.convolve(&Pmf::pseudo(0, vec![1.0 - p, p]))),
        }
    }

    pub fn to_spec(&self, n: usize, k: usize) -> Result<SiirvSpec> {
        match self {
            Member::Iid { n, q } => SiirvSpec::iid(*n as usize, q),
            Member::Shifted(b) => b.to_spec(n, k),
            Member::Pbd(ps) => SiirvSpec::pbd(ps),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Member::Iid { n, q } => {
                let parts: Vec<String> = q.iter().map(|w| format!("{w:.6}")).collect();
                format!("iid(n={n}, q=[{}])", parts.join(", "))
            }
            Member::Shifted(b) => format!("{} + Bin({}, {:.6})", b.shift, b.trials, b.p),
            Member::Pbd(ps) => {
                let mut groups: Vec<(f64, usize)> = Vec::new();
                for &p in ps {
                    match groups.last_mut() {
                        Some((q, c)) if *q == p => *c += 1,
                        _ => groups.push((p, 1)),
                    }
                }
                let parts: Vec<String> = groups.iter().map(|(p, c)| format!("{c}x{p:.6}")).collect();
                format!("pbd[{}]", parts.join(", "))
            }
        }
    }

    fn key(&self) -> Vec<u64> {
        match self {
            Member::Iid { n, q } => std::iter::once(0)
                .chain(std::iter::once(*n))
                .chain(q.iter().map(|w| w.to_bits()))
                .collect(),
            Member::Shifted(b) => vec![1, b.shift as u64, b.trials, b.p.to_bits()],
            Member::Pbd(ps) => std::iter::once(2).chain(ps.iter().map(|p| p.to_bits())).collect(),
        }
    }
}

fn summand_mean(q: &[f64]) -> f64 {
    q.iter().enumerate().map(|(j, w)| j as f64 * w).sum()
}

fn summand_var(q: &[f64]) -> f64 {
    let m = summand_mean(q);
    q.iter().enumerate().map(|(j, w)| (j as f64 - m).powi(2) * w).sum()
}

#[derive(Clone, Debug)]
enum Source {
    /// Hyperspherical angle grid with `steps` intervals per coordinate, plus
    /// the lazily enumerated shifted binomials.
    Grid { steps: u64 },
    List(Vec<Member>),
}

/// A finite family of SIIRVs used by the projection scans.
#[derive(Debug)]
pub struct Cover {
    n: u64,
    k: usize,
    gamma: f64,
    certified: bool,
    source: Source,
    pmfs: Mutex<HashMap<Vec<u64>, Arc<Pmf>>>,
}

/// Angle steps per coordinate so that the grid radius is at most γ.
///
/// A geodesic move of θ between square-root summands changes the n-fold sum
/// by TV ≤ √(1 - cos^{2n} θ) ≤ √n sin θ. Rounding each of the k - 1 angles
/// moves at most h/2, so θ ≤ (k-1)h/2 = γ/√n with h = 2γ/(√n (k-1)).
pub(crate) fn iid_steps(n: u64, k: usize, gamma: f64) -> u64 {
    let h = 2.0 * gamma / ((n as f64).sqrt() * (k as f64 - 1.0));
    (FRAC_PI_2 / h).ceil().max(1.0) as u64
}

/// Angle steps for Bin(t, ·) so that TV ≤ γ: step 2γ/√t.
fn binomial_steps(t: u64, gamma: f64) -> u64 {
    (FRAC_PI_2 / (2.0 * gamma / (t as f64).sqrt())).ceil().max(1.0) as u64
}

fn grid_size(n: u64, k: usize, gamma: f64) -> f64 {
    let iid = (iid_steps(n, k, gamma) as f64 + 1.0).powi(k as i32 - 1);
    let binom: f64 = (1..=n).map(|t| binomial_steps(t, gamma) as f64).sum();
    iid + binom + 1.0
}

/// Enumerated cover of (n, k)-SIIRVs at TV radius γ over its subfamilies.
///
/// The enumeration is only described here; members are generated on demand
/// during scans. Fails with a resource error when the family would exceed
/// `budget` grid points.
pub fn build_cover_desk(n: u64, k: usize, gamma: f64, budget: u64) -> Result<Cover> {
    if n == 0 || k < 2 {
        return Err(Error::Domain(format!("cover needs n >= 1 and k >= 2, got n = {n}, k = {k}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("cover radius {gamma}, expected > 0")));
    }
    if gamma >= 1.0 {
        let only = Member::Iid { n, q: unit(k, 0) };
        return Ok(Cover::from_members(n, k, gamma, vec![only]).certify());
    }
    let size = grid_size(n, k, gamma);
    if size > budget as f64 {
        return Err(Error::Resource(format!(
            "cover at radius {gamma} has about {size:.3e} grid points, budget {budget}"
        )));
    }
    Ok(Cover {
        n,
        k,
        gamma,
        certified: n == 1,
        source: Source::Grid { steps: iid_steps(n, k, gamma) },
        pmfs: Mutex::new(HashMap::new()),
    })
}

/// The smallest radius ≥ `gamma` whose cover fits in `budget`.
pub fn coarsest_fit(n: u64, k: usize, gamma: f64, budget: u64) -> f64 {
    if grid_size(n, k, gamma) <= budget as f64 {
        return gamma;
    }
    let (mut lo, mut hi) = (gamma, 1.0);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if grid_size(n, k, mid) <= budget as f64 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn unit(k: usize, j: usize) -> Vec<f64> {
    let mut q = vec![0.0; k];
    q[j] = 1.0;
    q
}

/// Square-root summand from hyperspherical angles: x_0 = cos φ_1,
/// x_1 = sin φ_1 cos φ_2, ..., x_{k-1} = sin φ_1 ⋯ sin φ_{k-1}; q = x².
pub(crate) fn summand_from_angles(angles: &[f64]) -> Vec<f64> {
    let mut q = Vec::with_capacity(angles.len() + 1);
    let mut carry = 1.0;
    for &a in angles {
        let (s, c) = a.sin_cos();
        q.push((carry * c).powi(2));
        carry *= s;
    }
    q.push(carry * carry);
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|w| *w /= total);
    q
}

/// Depth-first walk over angle indices. Once an angle is zero the
/// remaining coordinates are irrelevant, so they are pinned to zero.
pub(crate) fn walk_angle_grid(steps: u64, depth: usize, idx: &mut Vec<u64>, f: &mut dyn FnMut(&[f64])) {
    if depth == idx.len() {
        let angles: Vec<f64> = idx.iter().map(|&j| j as f64 * FRAC_PI_2 / steps as f64).collect();
        f(&angles);
        return;
    }
    for j in 0..=steps {
        idx[depth] = j;
        if j == 0 {
            for d in idx.iter_mut().skip(depth + 1) {
                *d = 0;
            }
            let angles: Vec<f64> = idx.iter().map(|&j| j as f64 * FRAC_PI_2 / steps as f64).collect();
            f(&angles);
            continue;
        }
        walk_angle_grid(steps, depth + 1, idx, f);
    }
}

impl Cover {
    /// A cover given by an explicit member list.
    pub fn from_members(n: u64, k: usize, gamma: f64, members: Vec<Member>) -> Cover {
        Cover {
            n,
            k,
            gamma,
            certified: false,
            source: Source::List(members),
            pmfs: Mutex::new(HashMap::new()),
        }
    }

    fn certify(mut self) -> Self {
        self.certified = true;
        self
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// True only when the enumerated subfamilies exhaust the class.
    pub fn certified(&self) -> bool {
        self.certified
    }

    /// Every i.i.d. grid member (or the explicit list).
    pub fn iid_members(&self) -> Vec<Member> {
        match &self.source {
            Source::List(v) => v.clone(),
            Source::Grid { steps } => {
                let mut out = Vec::new();
                let mut idx = vec![0u64; self.k - 1];
                walk_angle_grid(*steps, 0, &mut idx, &mut |angles| {
                    out.push(Member::Iid { n: self.n, q: summand_from_angles(angles) })
                });
                out
            }
        }
    }

    /// Members passing the moment filter, nearest moments first.
    pub fn candidates(&self, mu_tilde: f64, sigma_tilde: f64) -> Vec<Member> {
        let mut scored: Vec<(f64, Member)> = Vec::new();
        let mut consider = |m: Member| {
            let (mu, var) = (m.mean(), m.variance());
            if moment_filter(mu, var.max(0.0).sqrt(), mu_tilde, sigma_tilde) {
                scored.push((moment_score(mu, var, mu_tilde, sigma_tilde), m));
            }
        };
        match &self.source {
            Source::List(v) => v.iter().cloned().for_each(&mut consider),
            Source::Grid { steps } => {
                let mut idx = vec![0u64; self.k - 1];
                let n = self.n;
                walk_angle_grid(*steps, 0, &mut idx, &mut |angles| {
                    consider(Member::Iid { n, q: summand_from_angles(angles) })
                });
                self.shifted_binomials(mu_tilde, sigma_tilde, &mut consider);
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        scored.into_iter().map(|(_, m)| m).collect()
    }

    /// Shifted binomials whose variance passes the filter and whose mean lies
    /// within σ̃ of μ̃. Point masses (trials = 0) are included.
    fn shifted_binomials(&self, mu_tilde: f64, sigma_tilde: f64, f: &mut dyn FnMut(Member)) {
        let n = self.n as i64;
        let top = n * (self.k as i64 - 1);
        let sd_lo = ((sigma_tilde + 1.0) / 2.0 - 1.0).max(0.0);
        let sd_hi = 2.0 * (sigma_tilde + 1.0) - 1.0;
        let mut emit = |t: u64, p: f64| {
            let b = ShiftedBinomial { shift: 0, trials: t, p };
            let sd = b.variance().sqrt();
            if sd < sd_lo || sd > sd_hi {
                return;
            }
            let tp = t as f64 * p;
            let lo = ((mu_tilde - sigma_tilde - tp).ceil() as i64).max(0);
            let hi = ((mu_tilde + sigma_tilde - tp).floor() as i64).min(top - t as i64);
            for shift in lo..=hi {
                f(Member::Shifted(ShiftedBinomial { shift, trials: t, p }));
            }
        };
        emit(0, 0.0);
        for t in 1..=self.n {
            let steps = binomial_steps(t, self.gamma);
            for j in 1..steps {
                let phi = j as f64 * FRAC_PI_2 / steps as f64;
                emit(t, phi.sin().powi(2));
            }
        }
    }

    /// Exact pmf of a member, cached for the life of the cover.
    pub fn pmf(&self, m: &Member) -> Arc<Pmf> {
        let key = m.key();
        if let Some(p) = self.pmfs.lock().expect("cover cache").get(&key) {
            return Arc::clone(p);
        }
        let p = Arc::new(m.pmf());
        self.pmfs
            .lock()
            .expect("cover cache")
            .insert(key, Arc::clone(&p));
        p
    }

    /// Explicit members as a JSON list of SIIRV specs. The shifted binomials
    /// of a grid cover are generated per query and are not included.
    pub fn to_json(&self) -> Result<Value> {
        let specs = self
            .iid_members()
            .iter()
            .map(|m| m.to_spec(self.n as usize, self.k).map(|s| DistSpec::Siirv(s).to_value()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Value::Array(specs))
    }
}

/// Result of a projection scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionOutcome {
    pub accept: bool,
    /// The first member found within the threshold.
    pub witness: Option<Member>,
    /// Smallest distance seen among filter-passing members (∞ if none).
    pub best: f64,
    pub threshold: f64,
    /// Members that passed the moment filter and were compared.
    pub examined: u64,
    /// Set when a search stopped at its budget without accepting.
    pub exhausted: bool,
}

impl ProjectionOutcome {
    fn rejected(threshold: f64) -> Self {
        ProjectionOutcome {
            accept: false,
            witness: None,
            best: f64::INFINITY,
            threshold,
            examined: 0,
            exhausted: false,
        }
    }
}

/// Σ_{ξ∈s} |h(ξ) - q(ξ)|², stopping early once it exceeds `cap`.
fn capped_distance(h: &[Complex64], q: impl Iterator<Item = Complex64>, cap: f64) -> f64 {
    let mut d = 0.0;
    for (a, b) in h.iter().zip(q) {
        d += (a - b).norm_sqr();
        if d > cap {
            break;
        }
    }
    d
}

/// Fourier-distance scan: accepts iff some filter-passing member Q has
/// Σ_{ξ∈S} |Ĥ(ξ) - Q̂(ξ)|² ≤ threshold.
pub fn project_fourier(
    h: &FourierCoeffs,
    s: &[i64],
    cover: &Cover,
    mu_tilde: f64,
    sigma_tilde: f64,
    threshold: f64,
) -> Result<ProjectionOutcome> {
    if let Source::List(v) = &cover.source {
        if v.is_empty() {
            return config("projection cover has no members");
        }
    }
    let modulus = h.modulus();
    let freqs = normalize_freqs(modulus, s);
    let hv: Vec<Complex64> = freqs.iter().map(|&xi| h.get(xi)).collect();
    let mut out = ProjectionOutcome::rejected(threshold);
    for m in cover.candidates(mu_tilde, sigma_tilde) {
        out.examined += 1;
        let d = capped_distance(&hv, freqs.iter().map(|&xi| m.coefficient(modulus, xi)), out.best.min(1e300));
        out.best = out.best.min(d);
        if d <= threshold {
            out.accept = true;
            out.witness = Some(m);
            break;
        }
    }
    Ok(out)
}

/// The cover projection for general k, with threshold ε²/5.
pub fn project_siirv(
    h: &FourierCoeffs,
    s: &[i64],
    cover: &Cover,
    mu_tilde: f64,
    sigma_tilde: f64,
    epsilon: f64,
) -> Result<ProjectionOutcome> {
    project_fourier(h, s, cover, mu_tilde, sigma_tilde, epsilon * epsilon / 5.0)
}

/// Total-variation scan: accepts iff some filter-passing member Q has
/// d_TV(H, Q) ≤ threshold.
pub fn project_tv(
    h: &Pmf,
    cover: &Cover,
    mu_tilde: f64,
    sigma_tilde: f64,
    threshold: f64,
) -> Result<ProjectionOutcome> {
    if let Source::List(v) = &cover.source {
        if v.is_empty() {
            return config("projection cover has no members");
        }
    }
    let mut out = ProjectionOutcome::rejected(threshold);
    for m in cover.candidates(mu_tilde, sigma_tilde) {
        out.examined += 1;
        let d = distances(h, &cover.pmf(&m)).tv;
        out.best = out.best.min(d);
        if d <= threshold {
            out.accept = true;
            out.witness = Some(m);
            break;
        }
    }
    Ok(out)
}

/// Parameter grid of the small-variance PBD search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PbdGrid {
    /// Interior probabilities are i/steps for 0 < i < steps.
    pub steps: u64,
    /// Maximum number of distinct interior probabilities.
    pub buckets: usize,
}

impl PbdGrid {
    /// Mesh ε² and ⌈ln(1/ε)⌉ buckets (at least one).
    pub fn for_epsilon(epsilon: f64) -> Self {
        PbdGrid {
            steps: (1.0 / (epsilon * epsilon)).ceil().max(2.0) as u64,
            buckets: ((1.0 / epsilon).ln().ceil() as usize).max(1),
        }
    }
}

struct PbdSearch<'a> {
    n: u64,
    hv: &'a [Complex64],
    /// (1 - v + v e(ξ/M)) per grid value, per frequency.
    bases: Vec<Vec<Complex64>>,
    /// e(ξ/M) per frequency, for the constant (p = 1) summands.
    unit_phase: Vec<Complex64>,
    values: Vec<f64>,
    mu_tilde: f64,
    sigma_tilde: f64,
    var_lo: f64,
    var_hi: f64,
    threshold: f64,
    budget: u64,
    out: ProjectionOutcome,
    chosen: Vec<(usize, u64)>,
}

impl PbdSearch<'_> {
    /// Extends the current multiset by values with index > `from` until
    /// exactly `depth` distinct values are chosen, then scans the number of
    /// p = 1 summands allowed by the mean window. Returns true to stop.
    fn descend(&mut self, depth: usize, from: usize, used: u64, mean: f64, var: f64, prod: &[Complex64]) -> bool {
        if self.chosen.len() == depth {
            if var < self.var_lo {
                return false;
            }
            let lo = ((self.mu_tilde - self.sigma_tilde - mean).ceil() as i64).max(0);
            let hi = ((self.mu_tilde + self.sigma_tilde - mean).floor() as i64).min((self.n - used) as i64);
            for z1 in lo..=hi {
                if self.out.examined >= self.budget {
                    self.out.exhausted = true;
                    return true;
                }
                if !moment_filter(mean + z1 as f64, var.sqrt(), self.mu_tilde, self.sigma_tilde) {
                    continue;
                }
                self.out.examined += 1;
                let d = capped_distance(
                    self.hv,
                    prod.iter()
                        .zip(&self.unit_phase)
                        .map(|(p, u)| p * pow_u64(*u, z1 as u64)),
                    self.out.best.min(1e300),
                );
                self.out.best = self.out.best.min(d);
                if d <= self.threshold {
                    self.out.accept = true;
                    let mut ps = vec![1.0; z1 as usize];
                    for &(i, m) in &self.chosen {
                        ps.extend(std::iter::repeat_n(self.values[i], m as usize));
                    }
                    ps.resize(self.n as usize, 0.0);
                    self.out.witness = Some(pbd_member(&ps));
                    return true;
                }
            }
            return false;
        }
        for i in from..self.values.len() {
            let v = self.values[i];
            let unit_var = v * (1.0 - v);
            for m in 1..=(self.n - used) {
                let var2 = var + m as f64 * unit_var;
                if var2 > self.var_hi {
                    break;
                }
                let next: Vec<Complex64> = prod
                    .iter()
                    .zip(&self.bases[i])
                    .map(|(p, b)| p * pow_u64(*b, m))
                    .collect();
                self.chosen.push((i, m));
                let stop = self.descend(depth, i + 1, used + m, mean + m as f64 * v, var2, &next);
                self.chosen.pop();
                if stop {
                    return true;
                }
            }
        }
        false
    }
}

/// Collapses a PBD with a single interior value to a shifted binomial.
fn pbd_member(ps: &[f64]) -> Member {
    let interior: Vec<f64> = ps.iter().copied().filter(|&p| p > 0.0 && p < 1.0).collect();
    let ones = ps.iter().filter(|&&p| p >= 1.0).count() as i64;
    let first = interior.first().copied().unwrap_or(0.0);
    if interior.iter().all(|&p| p == first) {
        return Member::Shifted(ShiftedBinomial { shift: ones, trials: interior.len() as u64, p: first });
    }
    Member::Pbd(ps.to_vec())
}

/// Small-variance PBD projection by candidate search.
///
/// Candidates are PBDs whose success probabilities take at most
/// `grid.buckets` distinct interior values from the grid i/steps, plus any
/// number of certain (p = 1) summands. Accepts iff some candidate passing
/// the moment filter has Σ_{ξ∈S} |Ĥ(ξ) - Q̂(ξ)|² ≤ ε²/4. The search visits
/// candidates with fewer distinct values first and stops after `budget`
/// comparisons, rejecting with `exhausted` set.
#[allow(clippy::too_many_arguments)]
pub fn pbd_project_small_variance(
    h: &FourierCoeffs,
    s: &[i64],
    mu_tilde: f64,
    sigma_tilde: f64,
    n: u64,
    epsilon: f64,
    grid: PbdGrid,
    budget: u64,
) -> ProjectionOutcome {
    let threshold = epsilon * epsilon / 4.0;
    let modulus = h.modulus();
    let freqs = normalize_freqs(modulus, s);
    let hv: Vec<Complex64> = freqs.iter().map(|&xi| h.get(xi)).collect();
    let sd_lo = ((sigma_tilde + 1.0) / 2.0 - 1.0).max(0.0);
    let sd_hi = 2.0 * (sigma_tilde + 1.0) - 1.0;
    let mut out = ProjectionOutcome::rejected(threshold);
    // No PBD on n summands has variance above n/4 or mean outside [0, n].
    if sd_lo * sd_lo > n as f64 / 4.0 || mu_tilde - sigma_tilde > n as f64 || mu_tilde + sigma_tilde < 0.0 {
        return out;
    }
    let values: Vec<f64> = (1..grid.steps).map(|i| i as f64 / grid.steps as f64).collect();
    let phases: Vec<Complex64> = freqs.iter().map(|&xi| e_ratio(xi as i128, modulus as i128)).collect();
    let bases = values
        .iter()
        .map(|&v| phases.iter().map(|&u| Complex64::new(1.0 - v, 0.0) + u * v).collect())
        .collect();
    let mut search = PbdSearch {
        n,
        hv: &hv,
        bases,
        unit_phase: phases,
        values,
        mu_tilde,
        sigma_tilde,
        var_lo: sd_lo * sd_lo,
        var_hi: sd_hi * sd_hi,
        threshold,
        budget,
        out: ProjectionOutcome::rejected(threshold),
        chosen: Vec::new(),
    };
    let ones = vec![Complex64::new(1.0, 0.0); freqs.len()];
    for depth in 0..=grid.buckets {
        if search.descend(depth, 0, 0, 0.0, 0.0, &ones) {
            break;
        }
    }
    out = search.out;
    out
}

/// Outcome of the large-variance shifted-binomial fit.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedFit {
    /// The L2-closest fitted law on S; None when the moments admit none.
    pub fit: Option<ShiftedBinomial>,
    pub distance: f64,
    pub threshold: f64,
    pub accept: bool,
    /// Set when the sample variance exceeds every PBD on n summands.
    pub infeasible: bool,
    pub samples: u64,
    pub mean: f64,
    pub var: f64,
}

/// Shifted-binomial fit for large-variance PBDs.
///
/// Draws ⌈c|S|/ε²⌉ fresh samples, takes their mean μ̂ and unbiased variance
/// v̂, and scans trials t from ⌈4v̂⌉ to n. Each t gives the two roots p of
/// t p(1-p) = v̂ and the shift round(μ̂ - tp), clamped to [0, n - t]. The
/// candidate closest to Ĥ on S is kept; accept iff its squared distance is
/// at most ε²/5. A variance above (n/4)(1 + 6/√N) is infeasible.
#[allow(clippy::too_many_arguments)]
pub fn pbd_fit_shifted_binomial(
    sampler: &dyn Sampler,
    h: &FourierCoeffs,
    s: &[i64],
    n: u64,
    epsilon: f64,
    c: f64,
    rng: &mut TestRng,
) -> ShiftedFit {
    let count = (c * s.len().max(1) as f64 / (epsilon * epsilon)).ceil() as u64;
    let counts = sampler.draw_counts(count, rng);
    let (mean, var) = counts.mean_var();
    fit_shifted_binomial(h, s, n, epsilon, mean, var, count)
}

/// The deterministic part of [`pbd_fit_shifted_binomial`].
pub fn fit_shifted_binomial(
    h: &FourierCoeffs,
    s: &[i64],
    n: u64,
    epsilon: f64,
    mean: f64,
    var: f64,
    samples: u64,
) -> ShiftedFit {
    let threshold = epsilon * epsilon / 5.0;
    let mut out = ShiftedFit {
        fit: None,
        distance: f64::INFINITY,
        threshold,
        accept: false,
        infeasible: false,
        samples,
        mean,
        var,
    };
    let slack = 1.0 + 6.0 / (samples.max(1) as f64).sqrt();
    if var > n as f64 / 4.0 * slack {
        out.infeasible = true;
        return out;
    }
    let modulus = h.modulus();
    let freqs = normalize_freqs(modulus, s);
    let hv: Vec<Complex64> = freqs.iter().map(|&xi| h.get(xi)).collect();
    let v = var.max(0.0);
    let t_lo = ((4.0 * v).ceil() as u64).clamp(1, n);
    for t in t_lo..=n {
        let disc = (1.0 - 4.0 * v / t as f64).max(0.0).sqrt();
        let roots = [(1.0 - disc) / 2.0, (1.0 + disc) / 2.0];
        let count = if disc == 0.0 { 1 } else { 2 };
        for &p in &roots[..count] {
            let p = p.clamp(1e-9, 1.0 - 1e-9);
            let shift = ((mean - t as f64 * p).round() as i64).clamp(0, (n - t) as i64);
            // Near p = 1/2 the variance root is ill-conditioned, and rounding
            // or clamping the shift moves the mean; refit p to the mean too.
            let matched = ((mean - shift as f64) / t as f64).clamp(1e-9, 1.0 - 1e-9);
            for q in [p, matched] {
                let b = ShiftedBinomial { shift, trials: t, p: q };
                let d = capped_distance(&hv, freqs.iter().map(|&xi| b.coefficient(modulus, xi)), out.distance.min(1e300));
                if d < out.distance {
                    out.distance = d;
                    out.fit = Some(b);
                }
            }
        }
    }
    out.accept = out.distance <= threshold;
    out
}
