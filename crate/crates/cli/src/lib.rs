//! The `torsor` command line.
//!
//! [`run`] is the whole program: it parses arguments, executes one
//! subcommand and returns the process exit code (0 success, 1 domain or I/O
//! error, 2 usage error). Results go to stdout, diagnostics to stderr, and
//! every error is a single line starting with `error:`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use torsor_core::conv::{commutant_basis, Nonlinearity, TorsorConvLayer};
use torsor_core::format::{
    fmt_real, parse_features, parse_graph, parse_kernel, parse_states, write_features, write_graph, write_states,
};
use torsor_core::mvdemo::{run_multiview_demo, DatasetConfig, DemoConfig, Topology};
use torsor_core::potentialgraph::{ConsistencyWitness, GaugeSearch};
use torsor_core::sheaf::{apply_gauge_features, frustration};
use torsor_core::sync::{
    solve_brute_force, solve_feature_sync, solve_spectral_so2, solve_tree, FeatureSyncOptions, SpectralOptions,
    SyncMethod, SyncPayload, SyncSolution,
};
use torsor_core::{are_gauge_equivalent, Gauge, GroupKind, PotentialGraph, RepSpec, Representation};

/// Environment variable consulted when `--seed` is absent.
pub const SEED_ENV: &str = "TORSOR_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "torsor",
    version,
    about = "Edge potentials, frustration, synchronization and torsor convolution on graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Report whether the potentials are consistent (every cycle holonomy is the identity).
    Check {
        graph: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Print the frustration of a feature assignment.
    Frustration {
        graph: PathBuf,
        features: PathBuf,
        /// Representation spec, e.g. `standard` or `sum:trivial:1,regular`.
        #[arg(long)]
        rep: RepSpec,
    },
    /// Synchronize group states or features.
    Sync {
        graph: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Representation for `--method feature`.
        #[arg(long, default_value = "standard")]
        rep: RepSpec,
        #[arg(long)]
        seed: Option<u64>,
        /// Root vertex for `--method tree`.
        #[arg(long, default_value_t = 0)]
        root: usize,
        /// Random restarts for `--method feature`.
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Apply one torsor convolution layer.
    Conv {
        graph: PathBuf,
        features: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
        /// none | relu | gated | norm:<bias>
        #[arg(long, default_value = "none")]
        nonlinearity: Nonlinearity,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Gauge-transform a graph, and optionally features, by per-vertex states.
    Gauge {
        graph: PathBuf,
        #[arg(long)]
        gamma: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, requires = "rep")]
        features: Option<PathBuf>,
        #[arg(long)]
        rep: Option<RepSpec>,
        /// Where to write transformed features; stdout if absent.
        #[arg(long, requires = "features")]
        features_out: Option<PathBuf>,
    },
    /// Decide whether two graphs differ by a gauge transformation.
    Equiv {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Synthetic demonstrations.
    Demo {
        #[command(subcommand)]
        demo: Demo,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Tree,
    Brute,
    Spectral,
    Feature,
}

#[derive(Debug, Subcommand)]
enum Demo {
    /// Multi-view alignment, triplet collapse and frustration-regularized training.
    Multiview {
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 4)]
        per_class: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 10.0)]
        lambda: f64,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 0.2)]
        margin: f64,
        /// complete | ring | knn:<k>
        #[arg(long, default_value = "complete")]
        topology: Topology,
        #[arg(long)]
        seed: Option<u64>,
        /// Write an `epoch task_loss eta` table here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            let _ = writeln!(err, "error: {message}");
            1
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_graph(path: &Path) -> anyhow::Result<PotentialGraph> {
    parse_graph(&read(path)?).with_context(|| path.display().to_string())
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => out.write_all(text.as_bytes()).context("cannot write to stdout"),
    }
}

fn resolve_seed(seed: Option<u64>) -> anyhow::Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}='{v}' is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

fn method_name(m: SyncMethod) -> &'static str {
    match m {
        SyncMethod::Tree => "tree",
        SyncMethod::BruteForce => "brute",
        SyncMethod::Spectral => "spectral",
        SyncMethod::FeatureGradient => "feature",
    }
}

fn search_name(s: GaugeSearch) -> &'static str {
    match s {
        GaugeSearch::Enumerated => "enumerated",
        GaugeSearch::Abelian => "abelian",
        GaugeSearch::Aligned => "aligned",
        GaugeSearch::Sampled => "sampled",
    }
}

fn realize(spec: &RepSpec, kind: GroupKind) -> anyhow::Result<Representation> {
    spec.realize(kind).with_context(|| format!("representation '{spec}'"))
}

fn solution_text(solution: &SyncSolution) -> String {
    match &solution.payload {
        SyncPayload::States(states) => write_states(states, Some(solution.objective)),
        SyncPayload::Features(f) => {
            let mut text = write_features(f);
            text.push_str(&format!("# objective {}\n", fmt_real(solution.objective)));
            text
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::Check { graph, tol } => {
            let g = load_graph(&graph)?;
            let report = g.is_consistent(tol)?;
            let verdict = if report.consistent {
                "consistent"
            } else {
                "inconsistent"
            };
            write!(out, "{verdict} max_residual={}", fmt_real(report.max_residual))?;
            if let ConsistencyWitness::ViolatingEdge { u, v, .. } = report.witness {
                write!(out, " edge={u},{v}")?;
            }
            writeln!(out)?;
        }
        Command::Frustration { graph, features, rep } => {
            let g = load_graph(&graph)?;
            let rep = realize(&rep, g.kind())?;
            let f = parse_features(&read(&features)?, &rep).with_context(|| features.display().to_string())?;
            writeln!(out, "eta={}", fmt_real(frustration(&g, &f)?))?;
        }
        Command::Sync {
            graph,
            method,
            rep,
            seed,
            root,
            restarts,
            output,
        } => {
            let g = load_graph(&graph)?;
            let seed = resolve_seed(seed)?;
            let solution = match method {
                Method::Tree => solve_tree(&g, root)?,
                Method::Brute => solve_brute_force(&g)?,
                Method::Spectral => solve_spectral_so2(
                    &g,
                    SpectralOptions {
                        seed,
                        ..SpectralOptions::default()
                    },
                )?,
                Method::Feature => solve_feature_sync(
                    &g,
                    &realize(&rep, g.kind())?,
                    FeatureSyncOptions {
                        restarts,
                        seed,
                        ..FeatureSyncOptions::default()
                    },
                )?,
            };
            emit(out, output.as_deref(), &solution_text(&solution))?;
            if output.is_some() {
                writeln!(out, "method={}", method_name(solution.method))?;
                writeln!(out, "objective={}", fmt_real(solution.objective))?;
                writeln!(out, "iterations={}", solution.iterations)?;
            }
        }
        Command::Conv {
            graph,
            features,
            kernel,
            nonlinearity,
            output,
        } => {
            let g = load_graph(&graph)?;
            let k = parse_kernel(&read(&kernel)?).with_context(|| kernel.display().to_string())?;
            let rep_in = realize(&k.rep_in, g.kind())?;
            let rep_out = realize(&k.rep_out, g.kind())?;
            let basis = commutant_basis(&rep_in, &rep_out)?;
            if basis.dim() != k.coefficients.len() {
                bail!(
                    "{}: kernel has {} coefficients but the commutant of {} -> {} has dimension {}",
                    kernel.display(),
                    k.coefficients.len(),
                    k.rep_in,
                    k.rep_out,
                    basis.dim()
                );
            }
            let layer = TorsorConvLayer::new(basis, k.coefficients, nonlinearity)?;
            let f = parse_features(&read(&features)?, &rep_in).with_context(|| features.display().to_string())?;
            emit(out, output.as_deref(), &write_features(&layer.forward(&g, &f)?))?;
        }
        Command::Gauge {
            graph,
            gamma,
            output,
            features,
            rep,
            features_out,
        } => {
            let g = load_graph(&graph)?;
            let states = parse_states(&read(&gamma)?, g.kind()).with_context(|| gamma.display().to_string())?;
            let gauge = Gauge::new(g.kind(), states)?;
            let moved = g.apply_gauge(&gauge)?;
            emit(out, Some(&output), &write_graph(&moved))?;
            if let (Some(path), Some(spec)) = (features, rep) {
                let rep = realize(&spec, g.kind())?;
                let f = parse_features(&read(&path)?, &rep).with_context(|| path.display().to_string())?;
                emit(
                    out,
                    features_out.as_deref(),
                    &write_features(&apply_gauge_features(&f, &gauge)?),
                )?;
            }
        }
        Command::Equiv { a, b, tol } => {
            let (ga, gb) = (load_graph(&a)?, load_graph(&b)?);
            match are_gauge_equivalent(&ga, &gb, tol)? {
                Some(m) => {
                    writeln!(
                        out,
                        "equivalent max_residual={} search={}",
                        fmt_real(m.max_residual),
                        search_name(m.search)
                    )?;
                    out.write_all(write_states(m.gauge.elements(), None).as_bytes())?;
                }
                None => writeln!(out, "inequivalent")?,
            }
        }
        Command::Demo {
            demo:
                Demo::Multiview {
                    classes,
                    views,
                    per_class,
                    sigma,
                    lambda,
                    epochs,
                    margin,
                    topology,
                    seed,
                    trace,
                },
        } => {
            let config = DemoConfig {
                dataset: DatasetConfig {
                    classes,
                    per_class,
                    views,
                    topology,
                    sigma_view: sigma,
                    seed: resolve_seed(seed)?,
                    ..DatasetConfig::default()
                },
                lambda,
                epochs,
                margin,
                reference: 0,
            };
            let report = run_multiview_demo(&config)?;
            out.write_all(report.to_key_values().as_bytes())?;
            if let Some(path) = trace {
                emit(out, Some(&path), &report.trace_tsv())?;
            }
        }
    }
    Ok(())
}
