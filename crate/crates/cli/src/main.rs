mod input;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use disttest_core::dist_core::sample;
use disttest_core::framework::{plugin_by_name, test_class};
use disttest_core::logconcave::test_logconcave;
use disttest_core::pmd::{hard_instance, l2_asymptotic, norms_for_lb, test_pmd};
use disttest_core::siirv::{test_pbd, test_siirv};
use disttest_core::{Ledger, RngTree, TestReport, Verdict};
use rayon::prelude::*;

use input::{file_source, read_spec, spec_hash, spec_source, Instance, Source};

#[derive(Parser)]
#[command(name = "disttest", version, about = "Membership testers for structured discrete distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one tester and write its JSON report. Exit 0 on accept, 1 on reject.
    Test(TestArgs),
    /// Monte-Carlo accept rates over a grid of (n, k, eps) and planted instances, as CSV.
    Power(PowerArgs),
    /// Draw samples from a spec file.
    Sample(SampleArgs),
    /// Exact norms of the lower-bound PMD instance, as CSV.
    Hard(HardArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// pbd, siirv, pmd, logconcave or plugin:<name>
    #[arg(long)]
    class: String,
    #[arg(long, default_value_t = 1)]
    n: u64,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0.25)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Constant-ledger JSON; takes precedence over DISTTEST_LEDGER.
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
    spec: Option<PathBuf>,
    /// Sample file, resampled with replacement.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add wall-clock timings to the report (breaks byte-identical reruns).
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct PowerArgs {
    #[command(flatten)]
    common: Common,
    /// Grid axis as NAME=V1,V2,... with NAME one of n, k, eps; overrides the scalar flag.
    #[arg(long)]
    grid: Vec<String>,
    /// Planted instance: a spec file, bin:P, iid:Q0,Q1,..., uniform:LO:HI or geom:P:HI.
    #[arg(long, required = true)]
    instance: Vec<String>,
    #[arg(long, default_value_t = 20)]
    trials: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HardArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Tester selected by `--class`.
#[derive(Clone, Debug, PartialEq)]
enum Class {
    Pbd,
    Siirv,
    Pmd,
    LogConcave,
    Plugin(String),
}

impl Class {
    fn parse(s: &str) -> Result<Class> {
        Ok(match s {
            "pbd" => Class::Pbd,
            "siirv" => Class::Siirv,
            "pmd" => Class::Pmd,
            "logconcave" => Class::LogConcave,
            _ => match s.strip_prefix("plugin:") {
                Some(name) if !name.is_empty() => Class::Plugin(name.to_string()),
                _ => bail!("unknown class {s:?}; expected pbd, siirv, pmd, logconcave or plugin:<name>"),
            },
        })
    }

    fn dim(&self, k: usize) -> usize {
        if *self == Class::Pmd {
            k
        } else {
            1
        }
    }
}

fn load_ledger(path: Option<&Path>) -> Result<Ledger> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading ledger {}", p.display()))?;
            Ok(Ledger::from_json(&text)?)
        }
        None => Ok(Ledger::from_env()?),
    }
}

fn run_tester(class: &Class, source: &Source, c: &Common, seed: u64, ledger: &Ledger) -> Result<TestReport> {
    let report = match (class, source) {
        (Class::Pmd, Source::Vector(s)) => test_pmd(s.as_ref(), c.n, c.k, c.eps, seed, ledger)?,
        (Class::Pmd, Source::Scalar(_)) => bail!("class pmd needs a PMD spec or k-tuple samples"),
        (_, Source::Vector(_)) => bail!("a PMD spec can only be tested with --class pmd"),
        (Class::Pbd, Source::Scalar(s)) => {
            if c.k != 2 {
                bail!("class pbd fixes k = 2, got k = {}", c.k);
            }
            test_pbd(s.as_ref(), c.n, c.eps, seed, ledger)?
        }
        (Class::Siirv, Source::Scalar(s)) => test_siirv(s.as_ref(), c.n, c.k, c.eps, seed, ledger)?,
        (Class::LogConcave, Source::Scalar(s)) => test_logconcave(s.as_ref(), c.n, c.eps, seed, ledger)?,
        (Class::Plugin(name), Source::Scalar(s)) => {
            let plugin = plugin_by_name(name, c.n, c.k, ledger)?;
            test_class(s.as_ref(), plugin.as_ref(), c.eps, seed, ledger)?
        }
    };
    Ok(report)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn cmd_test(args: TestArgs) -> Result<Verdict> {
    let c = &args.common;
    let class = Class::parse(&c.class)?;
    let ledger = load_ledger(c.ledger.as_deref())?;
    let (source, note) = match (&args.spec, &args.samples) {
        (Some(path), _) => {
            let spec = read_spec(path)?;
            (spec_source(&spec)?, format!("input: spec sha256 {}", spec_hash(&spec)))
        }
        (None, Some(path)) => {
            let (source, count) = file_source(path, class.dim(c.k))?;
            (source, format!("input: {count} file samples, resampled with replacement"))
        }
        (None, None) => bail!("one of --spec or --samples is required"),
    };
    let start = Instant::now();
    let mut report = run_tester(&class, &source, c, c.seed, &ledger)?;
    report.notes.push(note);
    if args.timings {
        let ms = start.elapsed().as_secs_f64() * 1e3;
        report.timings_ms = Some(BTreeMap::from([("total".to_string(), ms)]));
    }
    let mut json = report.to_json()?;
    json.push('\n');
    write_output(args.out.as_deref(), &json)?;
    Ok(report.verdict)
}

fn parse_axis<T: std::str::FromStr>(name: &str, values: &str) -> Result<Vec<T>> {
    values
        .split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| anyhow::anyhow!("grid axis {name}: bad value {v:?}")))
        .collect()
}

/// "stage:count" pairs joined by ';', in stage order.
fn stage_histogram(reports: &[TestReport]) -> String {
    let mut hist = BTreeMap::new();
    for r in reports {
        if let Some(st) = r.stage {
            *hist.entry(st).or_insert(0u64) += 1;
        }
    }
    hist.iter().map(|(st, n)| format!("{}:{n}", st.as_str())).collect::<Vec<_>>().join(";")
}

fn cmd_power(args: PowerArgs) -> Result<()> {
    if args.trials < 1 {
        bail!("--trials must be at least 1");
    }
    let c = &args.common;
    let class = Class::parse(&c.class)?;
    let ledger = load_ledger(c.ledger.as_deref())?;
    let (mut ns, mut ks, mut epss) = (vec![c.n], vec![c.k], vec![c.eps]);
    for axis in &args.grid {
        let (name, values) = axis.split_once('=').with_context(|| format!("grid axis {axis:?}: expected NAME=LIST"))?;
        match name {
            "n" => ns = parse_axis(name, values)?,
            "k" => ks = parse_axis(name, values)?,
            "eps" => epss = parse_axis(name, values)?,
            _ => bail!("grid axis {name:?}: expected n, k or eps"),
        }
    }
    let instances = args.instance.iter().map(|s| Instance::parse(s)).collect::<Result<Vec<_>>>()?;

    let mut csv = String::from(
        "class,n,k,epsilon,m_total_mean,accept_rate,reject_stage_histogram,wall_ms,instance\n",
    );
    for inst in &instances {
        for &n in &ns {
            for &k in &ks {
                let spec = inst.spec(n, class == Class::Pmd)?;
                let source = spec_source(&spec)?;
                for &eps in &epss {
                    let point = Common { n, k, eps, ..c.clone() };
                    let start = Instant::now();
                    let reports = (0..args.trials)
                        .into_par_iter()
                        .map(|i| run_tester(&class, &source, &point, c.seed.wrapping_add(i), &ledger))
                        .collect::<Result<Vec<_>>>()?;
                    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                    let t = reports.len() as f64;
                    let m_mean = reports.iter().map(|r| r.samples_total as f64).sum::<f64>() / t;
                    let rate = reports.iter().filter(|r| r.accepted()).count() as f64 / t;
                    csv.push_str(&format!(
                        "{},{n},{k},{eps},{m_mean},{rate},{},{wall_ms:.1},{}\n",
                        c.class,
                        stage_histogram(&reports),
                        inst.label()
                    ));
                }
            }
        }
    }
    write_output(args.out.as_deref(), &csv)
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let spec = read_spec(&args.spec)?;
    let mut rng = RngTree::new(args.seed).child("sample").rng();
    let mut text = format!("# disttest sample spec_sha256={} seed={}\n", spec_hash(&spec), args.seed);
    match spec_source(&spec) {
        Ok(Source::Scalar(s)) => {
            for _ in 0..args.count {
                text.push_str(&format!("{}\n", s.draw(&mut rng)));
            }
        }
        Ok(Source::Vector(s)) => {
            for _ in 0..args.count {
                let parts: Vec<String> = s.draw(&mut rng).iter().map(|x| x.to_string()).collect();
                text.push_str(&parts.join(" "));
                text.push('\n');
            }
        }
        // Too large for an exact table: draw summand by summand.
        Err(_) => {
            for _ in 0..args.count {
                text.push_str(&format!("{}\n", sample(&spec, &mut rng)));
            }
        }
    }
    write_output(args.out.as_deref(), &text)
}

fn cmd_hard(args: HardArgs) -> Result<()> {
    let mut csv = String::from("n,k,l2_sq,norm_two_thirds,l2_sq_asymptotic,ratio\n");
    for &n in &args.n {
        let (l2_sq, two_thirds) = norms_for_lb(&hard_instance(n, args.k)?)?;
        let asym = l2_asymptotic(n, args.k);
        csv.push_str(&format!("{n},{},{l2_sq},{two_thirds},{asym},{}\n", args.k, l2_sq / asym));
    }
    write_output(args.out.as_deref(), &csv)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Test(args) => cmd_test(args).map(|v| match v {
            Verdict::Accept => ExitCode::SUCCESS,
            Verdict::Reject => ExitCode::from(1),
        }),
        Command::Power(args) => cmd_power(args).map(|_| ExitCode::SUCCESS),
        Command::Sample(args) => cmd_sample(args).map(|_| ExitCode::SUCCESS),
        Command::Hard(args) => cmd_hard(args).map(|_| ExitCode::SUCCESS),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
