//! Test reports and the per-invocation run context that builds them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::rng::{RngTree, TestRng};

pub const SCHEMA: &str = "disttest/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accept,
    Reject,
}

/// Where a rejection happened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    VarianceBound,
    SupportCheck,
    IntervalSize,
    PoissonOverflow,
    NormCheck,
    SparsityCheck,
    Projection,
    MomentInfeasible,
    Geometry,
    MleFailure,
    VarianceCheck,
    FinalStatistic,
}

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::VarianceBound,
        Stage::SupportCheck,
        Stage::IntervalSize,
        Stage::PoissonOverflow,
        Stage::NormCheck,
        Stage::SparsityCheck,
        Stage::Projection,
        Stage::MomentInfeasible,
        Stage::Geometry,
        Stage::MleFailure,
        Stage::VarianceCheck,
        Stage::FinalStatistic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::VarianceBound => "variance-bound",
            Stage::SupportCheck => "support-check",
            Stage::IntervalSize => "interval-size",
            Stage::PoissonOverflow => "poisson-overflow",
            Stage::NormCheck => "norm-check",
            Stage::SparsityCheck => "sparsity-check",
            Stage::Projection => "projection",
            Stage::MomentInfeasible => "moment-infeasible",
            Stage::Geometry => "geometry",
            Stage::MleFailure => "mle-failure",
            Stage::VarianceCheck => "variance-check",
            Stage::FinalStatistic => "final-statistic",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub xi: i64,
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeCoefficient {
    pub v: Vec<i64>,
    pub re: f64,
    pub im: f64,
}

/// The learned hypothesis carried by an accepting report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Hypothesis {
    Fourier {
        modulus: u64,
        anchor: i64,
        coefficients: Vec<Coefficient>,
    },
    Lattice {
        basis: Vec<Vec<i64>>,
        coefficients: Vec<LatticeCoefficient>,
    },
    Pmf {
        offset: i64,
        weights: Vec<f64>,
    },
    Mle {
        /// (lo, hi, alpha, beta) with pmf(x) = exp(alpha + beta x) on [lo, hi].
        pieces: Vec<(i64, i64, f64, f64)>,
        loglik: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub schema: String,
    pub class: String,
    pub verdict: Verdict,
    pub stage: Option<Stage>,
    pub n: u64,
    pub k: u64,
    pub epsilon: f64,
    pub seed: u64,
    pub samples_total: u64,
    pub stats: BTreeMap<String, f64>,
    pub hypothesis: Option<Hypothesis>,
    /// Name of the projection-stage witness, when one was found.
    pub witness: Option<String>,
    pub ledger: Ledger,
    /// Labels of the RNG streams consumed, in order of first use.
    pub rng_streams: Vec<String>,
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

impl TestReport {
    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }

    pub fn stat(&self, name: &str) -> Option<f64> {
        self.stats.get(name).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(e.to_string()))
    }

    /// Checks the invariants promised by the schema.
    pub fn validate(&self) -> Result<()> {
        let value = serde_json::to_value(self).map_err(|e| Error::Numerical(e.to_string()))?;
        validate_report_json(&value)
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Domain(format!("report schema: {}", msg.into()))
}

fn finite_number(v: &Value, what: &str) -> Result<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(bad(format!("{what} must be a finite number"))),
    }
}

fn unsigned(v: &Value, what: &str) -> Result<u64> {
    v.as_u64().ok_or_else(|| bad(format!("{what} must be a nonnegative integer")))
}

fn integer(v: &Value, what: &str) -> Result<i64> {
    v.as_i64().ok_or_else(|| bad(format!("{what} must be an integer")))
}

/// Structural validation of a serialized report against `schema/report.schema.json`.
pub fn validate_report_json(value: &Value) -> Result<()> {
    let obj = value.as_object().ok_or_else(|| bad("top level must be an object"))?;
    let required = [
        "schema", "class", "verdict", "stage", "n", "k", "epsilon", "seed", "samples_total",
        "stats", "hypothesis", "witness", "ledger", "rng_streams", "notes",
    ];
    for key in required {
        if !obj.contains_key(key) {
            return Err(bad(format!("missing field {key}")));
        }
    }
    if obj["schema"] != Value::String(SCHEMA.into()) {
        return Err(bad("schema must be \"disttest/1\""));
    }
    if !obj["class"].is_string() {
        return Err(bad("class must be a string"));
    }
    let verdict = obj["verdict"].as_str().ok_or_else(|| bad("verdict must be a string"))?;
    match (verdict, &obj["stage"]) {
        ("accept", Value::Null) => {}
        ("reject", Value::String(s)) if Stage::parse(s).is_some() => {}
        ("accept", _) => return Err(bad("accepting report must have null stage")),
        _ => return Err(bad("reject needs a documented stage")),
    }
    unsigned(&obj["n"], "n")?;
    unsigned(&obj["k"], "k")?;
    let eps = finite_number(&obj["epsilon"], "epsilon")?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(bad("epsilon must lie in (0, 1]"));
    }
    unsigned(&obj["seed"], "seed")?;
    unsigned(&obj["samples_total"], "samples_total")?;
    let stats = obj["stats"].as_object().ok_or_else(|| bad("stats must be an object"))?;
    for (name, v) in stats {
        finite_number(v, &format!("stats.{name}"))?;
    }
    match &obj["hypothesis"] {
        Value::Null => {}
        h => validate_hypothesis(h)?,
    }
    if !(obj["witness"].is_null() || obj["witness"].is_string()) {
        return Err(bad("witness must be null or a string"));
    }
    let ledger: Ledger = serde_json::from_value(obj["ledger"].clone())
        .map_err(|e| bad(format!("ledger: {e}")))?;
    ledger.validate().map_err(|e| bad(e.to_string()))?;
    for key in ["rng_streams", "notes"] {
        let arr = obj[key].as_array().ok_or_else(|| bad(format!("{key} must be an array")))?;
        if arr.iter().any(|s| !s.is_string()) {
            return Err(bad(format!("{key} must contain strings")));
        }
    }
    if let Some(t) = obj.get("timings_ms") {
        let t = t.as_object().ok_or_else(|| bad("timings_ms must be an object"))?;
        for (name, v) in t {
            finite_number(v, &format!("timings_ms.{name}"))?;
        }
    }
    Ok(())
}

fn validate_hypothesis(h: &Value) -> Result<()> {
    let kind = h["kind"].as_str().ok_or_else(|| bad("hypothesis.kind missing"))?;
    match kind {
        "fourier" => {
            unsigned(&h["modulus"], "hypothesis.modulus")?;
            integer(&h["anchor"], "hypothesis.anchor")?;
            for c in h["coefficients"].as_array().ok_or_else(|| bad("coefficients"))? {
                integer(&c["xi"], "coefficient.xi")?;
                finite_number(&c["re"], "coefficient.re")?;
                finite_number(&c["im"], "coefficient.im")?;
            }
        }
        "lattice" => {
            for row in h["basis"].as_array().ok_or_else(|| bad("basis"))? {
                for x in row.as_array().ok_or_else(|| bad("basis row"))? {
                    integer(x, "basis entry")?;
                }
            }
            for c in h["coefficients"].as_array().ok_or_else(|| bad("coefficients"))? {
                for x in c["v"].as_array().ok_or_else(|| bad("coefficient.v"))? {
                    integer(x, "coefficient.v entry")?;
                }
                finite_number(&c["re"], "coefficient.re")?;
                finite_number(&c["im"], "coefficient.im")?;
            }
        }
        "pmf" => {
            integer(&h["offset"], "hypothesis.offset")?;
            for w in h["weights"].as_array().ok_or_else(|| bad("weights"))? {
                finite_number(w, "weight")?;
            }
        }
        "mle" => {
            finite_number(&h["loglik"], "loglik")?;
            for p in h["pieces"].as_array().ok_or_else(|| bad("pieces"))? {
                let p = p.as_array().filter(|p| p.len() == 4).ok_or_else(|| bad("piece"))?;
                integer(&p[0], "piece lo")?;
                integer(&p[1], "piece hi")?;
                finite_number(&p[2], "piece alpha")?;
                finite_number(&p[3], "piece beta")?;
            }
        }
        other => return Err(bad(format!("unknown hypothesis kind {other}"))),
    }
    Ok(())
}

/// Mutable state of one tester invocation: stage streams, sample budget and
/// intermediate statistics.
#[derive(Debug)]
pub struct Run {
    class: String,
    n: u64,
    k: u64,
    epsilon: f64,
    seed: u64,
    tree: RngTree,
    ledger: Ledger,
    samples: u64,
    stats: BTreeMap<String, f64>,
    streams: Vec<String>,
    notes: Vec<String>,
}

impl Run {
    pub fn new(class: &str, n: u64, k: u64, epsilon: f64, seed: u64, ledger: &Ledger) -> Self {
        Run {
            class: class.to_string(),
            n,
            k,
            epsilon,
            seed,
            tree: RngTree::new(seed),
            ledger: ledger.clone(),
            samples: 0,
            stats: BTreeMap::new(),
            streams: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Independent stream for a named stage.
    pub fn stage_rng(&mut self, label: &str) -> TestRng {
        let child = self.tree.child(label);
        if !self.streams.iter().any(|s| s == child.path()) {
            self.streams.push(child.path().to_string());
        }
        child.rng()
    }

    pub fn add_samples(&mut self, count: u64) {
        self.samples += count;
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn stat(&mut self, name: &str, value: f64) {
        self.stats.insert(name.to_string(), value);
    }

    pub fn get_stat(&self, name: &str) -> Option<f64> {
        self.stats.get(name).copied()
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn reject(self, stage: Stage) -> TestReport {
        self.finish(Verdict::Reject, Some(stage), None, None)
    }

    pub fn accept(self, hypothesis: Option<Hypothesis>, witness: Option<String>) -> TestReport {
        self.finish(Verdict::Accept, None, hypothesis, witness)
    }

    pub fn finish(
        self,
        verdict: Verdict,
        stage: Option<Stage>,
        hypothesis: Option<Hypothesis>,
        witness: Option<String>,
    ) -> TestReport {
        let stats = self
            .stats
            .into_iter()
            .filter(|(_, v)| v.is_finite())
            .collect();
        TestReport {
            schema: SCHEMA.to_string(),
            class: self.class,
            verdict,
            stage,
            n: self.n,
            k: self.k,
            epsilon: self.epsilon,
            seed: self.seed,
            samples_total: self.samples,
            stats,
            hypothesis,
            witness,
            ledger: self.ledger,
            rng_streams: self.streams,
            notes: self.notes,
            timings_ms: None,
        }
    }
}
