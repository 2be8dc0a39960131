//! `phylovar`: command-line front end for the phylovar library.
//!
//! Exit codes: 0 on success or acceptance, 1 on a semantic negative (reject,
//! nonzero invariant, failed equality check), 2 on usage or validation errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use phylovar::invariants::{
    edge_invariants_capped, edge_minor_count, tree_generators_with, Bases, ProbeConfig, ProbeMode,
};
use phylovar::membership::{
    decompose_edge, decompose_full, edge_rank_test, edge_rank_test_float, membership, parse_split,
    quartet_splits, split_support, Factor, Factorization, Link, MembershipMode, ScoreKind,
};
use phylovar::model::{
    joint_history, joint_inductive, sample_params_with, simulate_sequences, SampleMode,
    SampleOptions,
};
use phylovar::poly::DEFAULT_TERM_GUARD;
use phylovar::{
    parse_newick, AnyTensor, EdgeId, Exec, FlatteningSpec, GeneratorSet, Params, Tensor, Tree, Q,
};

#[derive(Parser)]
#[command(
    name = "phylovar",
    version,
    about = "Phylogenetic invariants for the general Markov model"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Worker threads; 1 runs sequentially, 0 uses every core.
    #[arg(long, global = true, env = "PHYLOVAR_THREADS", default_value_t = 0)]
    threads: usize,
    /// Report format.
    #[arg(long, global = true, value_enum, env = "PHYLOVAR_FORMAT", default_value_t = Format::Text)]
    format: Format,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Kv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    Float,
}

#[derive(Args)]
struct Scalar {
    /// Scalar mode for tensor input.
    #[arg(long, value_enum, env = "PHYLOVAR_MODE", default_value_t = Mode::Exact)]
    mode: Mode,
    /// Zero tolerance in float mode.
    #[arg(long, env = "PHYLOVAR_TOL", default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct BaseArgs {
    /// Generator set for the three-leaf star (required for kappa >= 3).
    #[arg(long)]
    base3: Option<PathBuf>,
    /// Generator set for a larger star, as LEAVES=FILE (repeatable).
    #[arg(long = "base", value_name = "LEAVES=FILE")]
    bases: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum JointMethod {
    History,
    Inductive,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ParamKind {
    Stochastic,
    General,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MemberMethod {
    /// Evaluate every generator exactly.
    Exact,
    /// Edge ranks plus random probes at each internal vertex.
    Probe,
    /// Edge-flattening ranks only.
    EdgeRank,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Score {
    Ratio,
    MaxMinor,
}

#[derive(Subcommand)]
enum Command {
    /// Draw random parameters for a tree.
    Sample {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        kappa: usize,
        #[arg(long, env = "PHYLOVAR_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ParamKind::Stochastic)]
        kind: ParamKind,
        /// Extra weight on the diagonal of stochastic rows.
        #[arg(long, default_value_t = 0)]
        diag_boost: u32,
    },
    /// Joint distribution tensor of a parameterized tree.
    Joint {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_enum, default_value_t = JointMethod::Inductive)]
        method: JointMethod,
    },
    /// Site-pattern counts of simulated sequences.
    Simulate {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        sites: usize,
        #[arg(long, env = "PHYLOVAR_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Flatten a tensor along a split (`a,b|c,d`) or blocks (`a,b;c;d`).
    Flatten {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long, conflicts_with = "blocks")]
        split: Option<String>,
        #[arg(long)]
        blocks: Option<String>,
        #[command(flatten)]
        scalar: Scalar,
    },
    /// Generate invariants of a tree.
    Invariants {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        kappa: usize,
        #[command(flatten)]
        bases: BaseArgs,
        /// Only the minors of edge flattenings.
        #[arg(long)]
        edge_only: bool,
        /// Comma-separated leaf state counts (edge-only; default kappa each).
        #[arg(long)]
        states: Option<String>,
        /// Keep at most this many edge minors (edge-only).
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Evaluate a generator set at a tensor.
    Eval {
        #[arg(long)]
        gens: PathBuf,
        #[arg(long)]
        tensor: PathBuf,
        #[command(flatten)]
        scalar: Scalar,
    },
    /// Test whether a tensor lies on the variety of a tree.
    Membership {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        kappa: usize,
        #[command(flatten)]
        bases: BaseArgs,
        #[arg(long, value_enum, default_value_t = MemberMethod::Exact)]
        method: MemberMethod,
        #[arg(long, env = "PHYLOVAR_TRIALS", default_value_t = 5)]
        trials: usize,
        #[arg(long, env = "PHYLOVAR_SEED", default_value_t = 0)]
        seed: u64,
        /// Probe matrix entries are drawn from [-z-range, z-range].
        #[arg(long, default_value_t = 100)]
        z_range: i64,
        #[command(flatten)]
        scalar: Scalar,
    },
    /// Factor a tensor across one edge, or cherry by cherry on a binary tree.
    Decompose {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, default_value_t = 2)]
        kappa: usize,
        /// Split only across this edge id.
        #[arg(long)]
        edge: Option<usize>,
    },
    /// Contract a factorization back into a tensor.
    Recompose {
        #[arg(long)]
        factors: PathBuf,
        /// Compare the result with this tensor (exit 1 when they differ).
        #[arg(long)]
        tensor: Option<PathBuf>,
    },
    /// Rank candidate splits of count data.
    SplitSupport {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        kappa: usize,
        /// Candidate split `a,b|c,d` (repeatable; default: the three quartet splits).
        #[arg(long)]
        split: Vec<String>,
        #[arg(long, value_enum, default_value_t = Score::Ratio)]
        score: Score,
        #[command(flatten)]
        scalar: Scalar,
    },
}

/// A successful run, or a semantic negative.
enum Outcome {
    Yes,
    No,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_tree(path: &Path) -> Result<Tree> {
    let text = read(path)?;
    let body: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    parse_newick(body.trim()).with_context(|| format!("parsing tree {}", path.display()))
}

fn read_exact(path: &Path) -> Result<Tensor<Q>> {
    Tensor::from_text(&read(path)?).with_context(|| format!("parsing tensor {}", path.display()))
}

fn read_any(path: &Path, mode: Mode) -> Result<AnyTensor> {
    let text = read(path)?;
    let parsed = match mode {
        Mode::Exact => Tensor::from_text(&text).map(AnyTensor::Exact),
        Mode::Float => Tensor::from_text(&text).map(AnyTensor::Float),
    };
    parsed.with_context(|| format!("parsing tensor {}", path.display()))
}

fn read_bases(args: &BaseArgs) -> Result<Bases> {
    let mut bases = Bases::new();
    let load = |p: &Path| {
        GeneratorSet::from_text(&read(p)?)
            .with_context(|| format!("parsing generator set {}", p.display()))
    };
    if let Some(p) = &args.base3 {
        bases.insert(3, load(p)?);
    }
    for spec in &args.bases {
        let (leaves, file) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--base expects LEAVES=FILE, got `{spec}`"))?;
        let leaves: usize = leaves
            .parse()
            .with_context(|| format!("bad leaf count in `{spec}`"))?;
        bases.insert(leaves, load(Path::new(file))?);
    }
    Ok(bases)
}

fn to_exact(t: &Tensor<f64>) -> Result<Tensor<Q>> {
    let data = t
        .data()
        .iter()
        .map(|&x| Q::from_float(x).ok_or_else(|| anyhow!("non-finite tensor entry {x}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::new(t.axes().to_vec(), data)?)
}

fn setup_exec(threads: usize) -> Result<Exec> {
    if threads == 1 {
        return Ok(Exec::Sequential);
    }
    #[cfg(feature = "parallel")]
    {
        if threads > 1 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()?;
        }
        Ok(Exec::Parallel)
    }
    #[cfg(not(feature = "parallel"))]
    Ok(Exec::Sequential)
}

struct Ctx {
    format: Format,
    out: Option<PathBuf>,
    exec: Exec,
}

impl Ctx {
    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    /// Secondary output: stdout when the main output goes to a file.
    fn note(&self, text: &str) {
        if self.out.is_some() {
            print!("{text}");
        } else {
            eprint!("{text}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Yes) => ExitCode::SUCCESS,
        Ok(Outcome::No) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let ctx = Ctx {
        format: cli.global.format,
        out: cli.global.out,
        exec: setup_exec(cli.global.threads)?,
    };
    match cli.command {
        Command::Sample {
            tree,
            kappa,
            seed,
            kind,
            diag_boost,
        } => {
            let t = read_tree(&tree)?;
            if kappa == 0 {
                bail!("kappa must be positive");
            }
            let mode = match kind {
                ParamKind::Stochastic => SampleMode::Stochastic,
                ParamKind::General => SampleMode::General,
            };
            let opts = SampleOptions {
                diag_boost,
                ..SampleOptions::default()
            };
            let params = sample_params_with(&t, kappa, seed, mode, opts);
            let kind = if kind == ParamKind::Stochastic {
                "stochastic"
            } else {
                "general"
            };
            let header =
                format!("# seed: {seed}\n# kappa: {kappa} kind: {kind} diag-boost: {diag_boost}\n");
            ctx.emit(&(header + &params.to_text(&t)))?;
            Ok(Outcome::Yes)
        }
        Command::Joint {
            tree,
            params,
            method,
        } => {
            let t = read_tree(&tree)?;
            let p = Params::from_text(&t, &read(&params)?)
                .with_context(|| format!("parsing params {}", params.display()))?;
            let tensor = match method {
                JointMethod::History => joint_history(&t, &p)?,
                JointMethod::Inductive => joint_inductive(&t, &p)?,
            };
            ctx.emit(&tensor.to_text())?;
            Ok(Outcome::Yes)
        }
        Command::Simulate {
            tree,
            params,
            sites,
            seed,
        } => {
            let t = read_tree(&tree)?;
            let p = Params::from_text(&t, &read(&params)?)
                .with_context(|| format!("parsing params {}", params.display()))?;
            let Params::Stochastic(p) = p else {
                bail!("simulation needs stochastic parameters (a `pi:` line)");
            };
            let counts = simulate_sequences(&t, &p, sites, seed, ctx.exec)?;
            ctx.emit(&format!(
                "# seed: {seed}\n# sites: {sites}\n{}",
                counts.to_text()
            ))?;
            Ok(Outcome::Yes)
        }
        Command::Flatten {
            tensor,
            split,
            blocks,
            scalar,
        } => {
            let p = read_any(&tensor, scalar.mode)?;
            let names: Vec<String> = p.axes().iter().map(|a| a.name.clone()).collect();
            let spec = match (split, blocks) {
                (Some(s), _) => FlatteningSpec::from_split(&parse_split(&names, &s)?),
                (None, Some(b)) => FlatteningSpec::new(
                    b.split(';')
                        .map(|blk| blk.split(',').map(|x| x.trim().to_string()).collect())
                        .collect(),
                ),
                (None, None) => bail!("give --split or --blocks"),
            };
            let text = match p {
                AnyTensor::Exact(t) => t.flatten(&spec)?.to_text(),
                AnyTensor::Float(t) => t.flatten(&spec)?.to_text(),
            };
            ctx.emit(&text)?;
            Ok(Outcome::Yes)
        }
        Command::Invariants {
            tree,
            kappa,
            bases,
            edge_only,
            states,
            cap,
        } => cmd_invariants(
            &ctx,
            &read_tree(&tree)?,
            kappa,
            &read_bases(&bases)?,
            edge_only,
            states,
            cap,
        ),
        Command::Eval {
            gens,
            tensor,
            scalar,
        } => {
            let g = GeneratorSet::from_text(&read(&gens)?)
                .with_context(|| format!("parsing generator set {}", gens.display()))?;
            let p = read_any(&tensor, scalar.mode)?;
            let (values, nonzero): (Vec<String>, Vec<bool>) = match &p {
                AnyTensor::Exact(t) => g
                    .polys
                    .iter()
                    .map(|f| {
                        f.evaluate(t)
                            .map(|v| (v.to_string(), v != Q::from_integer(0.into())))
                    })
                    .collect::<phylovar::Result<Vec<_>>>()?
                    .into_iter()
                    .unzip(),
                AnyTensor::Float(t) => g
                    .polys
                    .iter()
                    .map(|f| {
                        f.evaluate(t)
                            .map(|v| (format!("{v:e}"), v.abs() > scalar.tol))
                    })
                    .collect::<phylovar::Result<Vec<_>>>()?
                    .into_iter()
                    .unzip(),
            };
            let count = nonzero.iter().filter(|&&b| b).count();
            let mut s = String::new();
            match ctx.format {
                Format::Text => {
                    for (i, (v, src)) in values.iter().zip(&g.sources).enumerate() {
                        let _ = writeln!(s, "{i}\t{v}\t{src}");
                    }
                    let _ = writeln!(s, "# nonzero: {count} of {}", values.len());
                }
                Format::Kv => {
                    for (i, v) in values.iter().enumerate() {
                        let _ = writeln!(s, "value.{i}={v}");
                    }
                    let _ = writeln!(s, "generators={}\nnonzero={count}", values.len());
                }
            }
            ctx.emit(&s)?;
            Ok(if count == 0 {
                Outcome::Yes
            } else {
                Outcome::No
            })
        }
        Command::Membership {
            tensor,
            tree,
            kappa,
            bases,
            method,
            trials,
            seed,
            z_range,
            scalar,
        } => {
            let t = read_tree(&tree)?;
            let bases = read_bases(&bases)?;
            let p = read_any(&tensor, scalar.mode)?;
            let probe = |mode| ProbeConfig {
                trials,
                seed,
                z_range,
                mode,
            };
            let report = match (method, &p) {
                (MemberMethod::EdgeRank, AnyTensor::Exact(x)) => {
                    edge_rank_test(x, &t, kappa, ctx.exec)?
                }
                (MemberMethod::EdgeRank, AnyTensor::Float(x)) => {
                    edge_rank_test_float(x, &t, kappa, scalar.tol, ctx.exec)?
                }
                (MemberMethod::Exact, AnyTensor::Exact(x)) => {
                    membership(x, &t, kappa, &bases, MembershipMode::Exact, ctx.exec)?
                }
                (MemberMethod::Exact, AnyTensor::Float(_)) => {
                    bail!("exact generator evaluation needs exact input; use --method probe or edge-rank with --mode float")
                }
                (MemberMethod::Probe, AnyTensor::Exact(x)) => membership(
                    x,
                    &t,
                    kappa,
                    &bases,
                    MembershipMode::Probe(probe(ProbeMode::Exact)),
                    ctx.exec,
                )?,
                (MemberMethod::Probe, AnyTensor::Float(x)) => {
                    let mode = MembershipMode::Probe(probe(ProbeMode::Float { tol: scalar.tol }));
                    membership(&to_exact(x)?, &t, kappa, &bases, mode, ctx.exec)?
                }
            };
            ctx.emit(&match ctx.format {
                Format::Text => report.to_text(),
                Format::Kv => report.to_kv(),
            })?;
            Ok(if report.verdict.is_reject() {
                Outcome::No
            } else {
                Outcome::Yes
            })
        }
        Command::Decompose {
            tensor,
            tree,
            kappa,
            edge,
        } => {
            let t = read_tree(&tree)?;
            let p = read_exact(&tensor)?;
            let f = match edge {
                None => decompose_full(&p, &t, kappa)?,
                Some(e) => {
                    let d = decompose_edge(&p, &t, EdgeId(e), kappa)?;
                    Factorization {
                        taxa: t.taxa().to_vec(),
                        kappa,
                        factors: vec![
                            Factor {
                                tree: d.left,
                                tensor: d.q,
                            },
                            Factor {
                                tree: d.right,
                                tensor: d.r,
                            },
                        ],
                        links: vec![Link {
                            axis: d.axis,
                            rank: d.rank,
                        }],
                    }
                }
            };
            ctx.emit(&match ctx.format {
                Format::Text => f.to_text(),
                Format::Kv => f.to_kv(),
            })?;
            Ok(Outcome::Yes)
        }
        Command::Recompose { factors, tensor } => {
            let f = Factorization::from_text(&read(&factors)?)
                .with_context(|| format!("parsing factors {}", factors.display()))?;
            let p = f.recompose()?;
            match tensor {
                None => {
                    ctx.emit(&p.to_text())?;
                    Ok(Outcome::Yes)
                }
                Some(path) => {
                    let want = read_exact(&path)?.permute_to(&f.taxa)?;
                    let equal = want == p;
                    ctx.emit(&match ctx.format {
                        Format::Text => format!("equal: {equal}\n"),
                        Format::Kv => format!("equal={equal}\n"),
                    })?;
                    Ok(if equal { Outcome::Yes } else { Outcome::No })
                }
            }
        }
        Command::SplitSupport {
            tensor,
            kappa,
            split,
            score,
            scalar,
        } => {
            let p = read_any(&tensor, scalar.mode)?;
            let names: Vec<String> = p.axes().iter().map(|a| a.name.clone()).collect();
            let candidates = if split.is_empty() {
                quartet_splits(&names)
                    .context("no --split given and the tensor is not a quartet")?
            } else {
                split
                    .iter()
                    .map(|s| parse_split(&names, s))
                    .collect::<phylovar::Result<Vec<_>>>()?
            };
            let kind = match score {
                Score::Ratio => ScoreKind::SingularRatio,
                Score::MaxMinor => ScoreKind::MaxMinor,
            };
            let scores = split_support(&p, &candidates, kappa, kind, ctx.exec)?;
            let mut s = String::new();
            match ctx.format {
                Format::Text => {
                    let _ = writeln!(s, "# kappa: {kappa}");
                    let _ = writeln!(s, "rank\tsplit\tscore\texact-rank");
                    for (i, x) in scores.iter().enumerate() {
                        let r = x.exact_rank.map_or("-".to_string(), |r| r.to_string());
                        let _ = writeln!(s, "{}\t{}\t{:e}\t{r}", i + 1, x.split, x.score);
                    }
                }
                Format::Kv => {
                    let _ = writeln!(s, "kappa={kappa}");
                    for (i, x) in scores.iter().enumerate() {
                        let _ = writeln!(s, "split.{i}.split={}", x.split);
                        let _ = writeln!(s, "split.{i}.score={:e}", x.score);
                        if let Some(r) = x.exact_rank {
                            let _ = writeln!(s, "split.{i}.exact_rank={r}");
                        }
                    }
                }
            }
            ctx.emit(&s)?;
            Ok(Outcome::Yes)
        }
    }
}

fn cmd_invariants(
    ctx: &Ctx,
    t: &Tree,
    kappa: usize,
    bases: &Bases,
    edge_only: bool,
    states: Option<String>,
    cap: Option<usize>,
) -> Result<Outcome> {
    if kappa == 0 {
        bail!("kappa must be positive");
    }
    let states: Vec<usize> = match states {
        Some(s) => s
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<usize>()
                    .with_context(|| format!("bad state count `{x}`"))
            })
            .collect::<Result<_>>()?,
        None => vec![kappa; t.n_taxa()],
    };
    if !edge_only && states.iter().any(|&l| l != kappa) {
        bail!("--states applies to --edge-only; the full set uses {kappa} states per leaf");
    }
    let generated = edge_minor_count(t, kappa, &states)?;
    let mut set = if edge_only {
        edge_invariants_capped(t, kappa, &states, cap)?.0
    } else {
        tree_generators_with(t, kappa, bases, DEFAULT_TERM_GUARD)?
    };
    let trivial = set.is_trivial();
    if trivial {
        set = GeneratorSet::new(kappa, states.clone());
    }
    let mut summary = String::new();
    match ctx.format {
        Format::Text => {
            let _ = writeln!(summary, "edge minors generated: {generated}");
            let _ = writeln!(summary, "generators written: {}", set.len());
            if generated == 0 {
                let _ = writeln!(summary, "note: no edge flattening can exceed rank {kappa}; there are no edge invariants");
            }
            if trivial {
                let _ = writeln!(summary, "note: every generator is zero; the set is empty");
            }
        }
        Format::Kv => {
            let _ = writeln!(summary, "edge_minors={generated}\ngenerators={}", set.len());
        }
    }
    ctx.emit(&set.to_text())?;
    ctx.note(&summary);
    Ok(Outcome::Yes)
}
