//! Spec files, sample files and the built-in planted instances.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use disttest_core::dist_core::{MultiPmfSampler, PmfSampler};
use disttest_core::{Counts, DistSpec, MultiPmf, Pmf, Sampler, SiirvSpec, VecSampler};
use disttest_core::PmdSpec;
use sha2::{Digest, Sha256};

/// Where the tester's draws come from.
pub enum Source {
    Scalar(Box<dyn Sampler>),
    Vector(Box<dyn VecSampler>),
}

pub fn read_spec(path: &Path) -> Result<DistSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
    DistSpec::from_json(&text).with_context(|| format!("spec {}", path.display()))
}

/// Lowercase hex SHA-256 of the canonical spec JSON.
pub fn spec_hash(spec: &DistSpec) -> String {
    let digest = Sha256::digest(spec.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn spec_source(spec: &DistSpec) -> Result<Source> {
    Ok(if spec.is_multivariate() {
        Source::Vector(spec.vec_sampler()?)
    } else {
        Source::Scalar(spec.sampler()?)
    })
}

/// Reads a sample file. Blank lines and lines starting with `#` are skipped;
/// every other line holds `dim` whitespace-separated integers.
pub fn read_sample_file(path: &Path, dim: usize) -> Result<Vec<Vec<i64>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading samples {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{} line {}: expected integers", path.display(), i + 1))?;
        if row.len() != dim {
            bail!("{} line {}: expected {dim} values, found {}", path.display(), i + 1, row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{} holds no samples", path.display());
    }
    Ok(rows)
}

/// Resampling source over the empirical law of a sample file.
pub fn file_source(path: &Path, dim: usize) -> Result<(Source, usize)> {
    let rows = read_sample_file(path, dim)?;
    let count = rows.len();
    let source = if dim == 1 {
        let values: Vec<i64> = rows.into_iter().map(|r| r[0]).collect();
        Source::Scalar(Box::new(PmfSampler::from_pmf(&Counts::from_values(&values).to_pmf()?)?))
    } else {
        let mut hist = BTreeMap::new();
        for r in rows {
            *hist.entry(r).or_insert(0u64) += 1;
        }
        Source::Vector(Box::new(MultiPmfSampler::new(&MultiPmf::from_counts(dim, &hist)?)?))
    };
    Ok((source, count))
}

/// A planted instance for `power`: a spec file, or a generator that is
/// re-instantiated at every grid value of n and k.
#[derive(Clone, Debug)]
pub enum Instance {
    File(String, DistSpec),
    /// Bin(n, p) as a PBD.
    Binomial(f64),
    /// n i.i.d. summands with the given law; a PMD when the class is `pmd`.
    Iid(Vec<f64>),
    Uniform(i64, i64),
    /// Geometric(p) truncated to [0, hi].
    Geometric(f64, i64),
}

impl Instance {
    pub fn parse(text: &str) -> Result<Instance> {
        let (head, rest) = text.split_once(':').unwrap_or((text, ""));
        let nums = |s: &str, sep: char| -> Result<Vec<f64>> {
            s.split(sep)
                .map(|t| t.trim().parse::<f64>().with_context(|| format!("instance {text}: bad number {t:?}")))
                .collect()
        };
        Ok(match head {
            "bin" => Instance::Binomial(nums(rest, ',')?[0]),
            "iid" => Instance::Iid(nums(rest, ',')?),
            "uniform" | "geom" => {
                let v = nums(rest, ':')?;
                if v.len() != 2 {
                    bail!("instance {text}: expected two values");
                }
                if head == "uniform" {
                    if v[1] < v[0] {
                        bail!("instance {text}: needs lo <= hi");
                    }
                    Instance::Uniform(v[0] as i64, v[1] as i64)
                } else {
                    if !(v[0] > 0.0 && v[0] <= 1.0) || v[1] < 0.0 {
                        bail!("instance {text}: needs 0 < p <= 1 and hi >= 0");
                    }
                    Instance::Geometric(v[0], v[1] as i64)
                }
            }
            _ => {
                let spec = read_spec(Path::new(text))?;
                Instance::File(text.to_string(), spec)
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            Instance::File(path, _) => path.clone(),
            Instance::Binomial(p) => format!("bin:{p}"),
            Instance::Iid(q) => {
                let parts: Vec<String> = q.iter().map(|x| x.to_string()).collect();
                format!("iid:{}", parts.join(","))
            }
            Instance::Uniform(lo, hi) => format!("uniform:{lo}:{hi}"),
            Instance::Geometric(p, hi) => format!("geom:{p}:{hi}"),
        }
    }

    pub fn spec(&self, n: u64, multivariate: bool) -> Result<DistSpec> {
        let n = n as usize;
        Ok(match self {
            Instance::File(_, spec) => spec.clone(),
            Instance::Binomial(p) => DistSpec::Siirv(SiirvSpec::binomial(n, *p)?),
            Instance::Iid(q) if multivariate => DistSpec::Pmd(PmdSpec::iid(n, q)?),
            Instance::Iid(q) => DistSpec::Siirv(SiirvSpec::iid(n, q)?),
            Instance::Uniform(lo, hi) => DistSpec::Pmf(Pmf::uniform(*lo, *hi)),
            Instance::Geometric(p, hi) => DistSpec::Pmf(Pmf::truncated_geometric(*p, *hi)),
        })
    }
}
