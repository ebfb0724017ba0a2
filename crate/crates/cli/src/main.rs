mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use commutree::geometry::Polytope;
use commutree::instance::{self, generate_instance, RobustMode};
use commutree::phase1::{build_partition, Phase1Config, Phase1Error};
use commutree::phase2::{certification_report, refine_partition, Phase2Config};
use commutree::problem::{read_program_file, write_program_file, ProgramFile};
use commutree::tree::{read_tree, statistics, write_tree, PartitionTree};
use commutree::verify::{verify_tree, VerifyConfig};
use nalgebra::DVector;
use serde_json::{json, Value};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "commutree", version, about = "Simplicial commutation partitions for parametric mixed-integer conic programs")]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for leaf processing; 0 keeps the single-threaded order.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Force single-threaded canonical processing order.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Run manifest (JSON lines, appended to).
    #[arg(long, global = true, default_value = "commutree-manifest.jsonl")]
    manifest: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Toy {
    Toy1d,
    Toy1dOffset,
    Toy2d,
    Toy2dOffset,
}

#[derive(Subcommand)]
enum Command {
    /// Write an instance file: a generated oscillator MPC or a toy.
    Generate {
        #[arg(long, value_enum, conflicts_with_all = ["n_r", "horizon", "mode"])]
        toy: Option<Toy>,
        #[arg(long, default_value_t = 1)]
        n_r: usize,
        #[arg(long, default_value_t = instance::DEFAULT_HORIZON)]
        horizon: usize,
        /// nominal or box-tightened
        #[arg(long, default_value = "box-tightened")]
        mode: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Build the feasible partition.
    Partition {
        #[arg(short, long)]
        instance: PathBuf,
        /// Replace the instance's parameter set by a box, e.g. "-1:1.5" or "-1:1,-1:1".
        #[arg(long, allow_hyphen_values = true)]
        theta_box: Option<String>,
        #[arg(short, long)]
        output: PathBuf,
        /// Per-iteration event CSV.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        max_iterations: usize,
    },
    /// Refine a feasible partition into an eps-suboptimal one.
    Refine {
        #[arg(short, long)]
        instance: PathBuf,
        #[arg(short, long)]
        tree: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Per-leaf certification CSV.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-2)]
        eps_abs: f64,
        #[arg(long, default_value_t = 0.0)]
        eps_rel: f64,
        #[arg(long, default_value_t = 50.0)]
        rho_max: f64,
        #[arg(long, default_value_t = 1e-4)]
        pi_abs: f64,
        #[arg(long, default_value_t = 0.05)]
        pi_rel: f64,
        /// Only test cached competitors before closing a leaf.
        #[arg(long)]
        no_full_sweep: bool,
        #[arg(long, default_value_t = 1_000_000)]
        max_iterations: usize,
    },
    /// Look up the commutation for a parameter value.
    Query {
        #[arg(short, long)]
        tree: PathBuf,
        /// Parameter coordinates, comma or space separated.
        #[arg(required = true, num_args = 1.., allow_hyphen_values = true)]
        theta: Vec<String>,
    },
    /// Re-check a partition against the solver.
    Verify {
        #[arg(short, long)]
        instance: PathBuf,
        #[arg(short, long)]
        tree: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples_per_leaf: usize,
        /// Suboptimality target; defaults to each leaf's stored bound.
        #[arg(long)]
        eps_abs: Option<f64>,
        #[arg(long)]
        eps_rel: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Partition statistics.
    Stats {
        #[arg(short, long)]
        tree: PathBuf,
        /// Event CSV of the run that built the tree, for iteration count and runtime.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Leaf count predicted by a fitted model, for the effective tolerance estimate.
        #[arg(long)]
        fitted_leaves: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

enum Failure {
    Usage(anyhow::Error),
    ThetaExceeds(Vec<f64>),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::ThetaExceeds(_) => 2,
            Self::Verification(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Usage(e)
    }
}

#[derive(Default)]
struct Ctx {
    config: Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl Ctx {
    fn read(&mut self, path: &Path) -> anyhow::Result<String> {
        self.inputs.push(path.display().to_string());
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
    }

    fn write(&mut self, path: &Path, text: &str) -> anyhow::Result<()> {
        self.outputs.push(path.display().to_string());
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }

    fn instance(&mut self, path: &Path) -> anyhow::Result<ProgramFile> {
        let text = self.read(path)?;
        read_program_file(&text).with_context(|| format!("bad instance file {}", path.display()))
    }

    fn tree(&mut self, path: &Path) -> anyhow::Result<PartitionTree> {
        let text = self.read(path)?;
        read_tree(&text).with_context(|| format!("bad tree file {}", path.display()))
    }
}

fn parallel(cli: &Cli) -> (bool, usize) {
    (cli.deterministic || cli.workers == 0, cli.workers)
}

fn parse_box(spec: &str) -> anyhow::Result<Polytope> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for part in spec.split(',') {
        let (a, b) = part.split_once(':').ok_or_else(|| anyhow!("box side {part:?} is not LO:HI"))?;
        lo.push(a.trim().parse::<f64>().with_context(|| format!("bad number {a:?}"))?);
        hi.push(b.trim().parse::<f64>().with_context(|| format!("bad number {b:?}"))?);
    }
    Ok(Polytope::bounding_box(&lo, &hi)?)
}

fn parse_theta(parts: &[String]) -> anyhow::Result<DVector<f64>> {
    let vals = parts
        .iter()
        .flat_map(|p| p.split([',', ' ']))
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("bad coordinate {s:?}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(DVector::from_vec(vals))
}

fn toy_instance(t: Toy) -> instance::NamedInstance {
    match t {
        Toy::Toy1d => instance::toy1d(),
        Toy::Toy1dOffset => instance::toy1d_offset(),
        Toy::Toy2d => instance::toy2d(),
        Toy::Toy2dOffset => instance::toy2d_with_offset(0.05),
    }
}

fn cmd_generate(cli: &Cli, ctx: &mut Ctx) -> Result<(), Failure> {
    let Command::Generate { toy, n_r, horizon, mode, output } = &cli.command else { unreachable!() };
    let file = if let Some(t) = toy {
        ctx.config = json!({ "toy": format!("{t:?}") });
        let inst = toy_instance(*t);
        ProgramFile { program: inst.program, theta: Some(inst.theta), meta: vec![] }
    } else {
        let mode: RobustMode = mode.parse().map_err(|e| anyhow!("{e}"))?;
        ctx.config = json!({ "n_r": n_r, "horizon": horizon, "mode": mode.to_string(), "seed": cli.seed });
        let inst = generate_instance(*n_r, cli.seed, *horizon, mode).map_err(|e| anyhow!("{e}"))?;
        inst.to_file()
    };
    ctx.write(output, &write_program_file(&file))?;
    println!("wrote {} (p {}, n {}, m {})", output.display(), file.program.p, file.program.n, file.program.m);
    Ok(())
}

fn cmd_partition(cli: &Cli, ctx: &mut Ctx) -> Result<(), Failure> {
    let Command::Partition { instance, theta_box, output, events, max_iterations } = &cli.command else {
        unreachable!()
    };
    let file = ctx.instance(instance)?;
    let theta = match theta_box {
        Some(b) => parse_box(b)?,
        None => file.theta.clone().ok_or_else(|| anyhow!("instance has no parameter set; pass --theta-box"))?,
    };
    let (deterministic, workers) = parallel(cli);
    let cfg = Phase1Config { max_iterations: *max_iterations, deterministic, workers, ..Default::default() };
    ctx.config = json!({
        "max_iterations": cfg.max_iterations,
        "deterministic": cfg.deterministic,
        "workers": cfg.workers,
        "theta_box": theta_box,
    });
    let out = match build_partition(&file.program, &theta, &cfg) {
        Ok(o) => o,
        Err(Phase1Error::ThetaExceedsFeasibleSet { witness }) => return Err(Failure::ThetaExceeds(witness)),
        Err(e) => return Err(anyhow!("{e}").into()),
    };
    ctx.write(output, &write_tree(&out.tree))?;
    if let Some(ev) = events {
        ctx.write(ev, &out.events.to_csv())?;
    }
    println!(
        "leaves {} max_depth {} iterations {} runtime_s {:.3}",
        out.tree.leaves().count(),
        out.tree.max_depth(),
        out.iterations,
        out.runtime.as_secs_f64()
    );
    Ok(())
}

fn cmd_refine(cli: &Cli, ctx: &mut Ctx) -> Result<(), Failure> {
    let Command::Refine {
        instance,
        tree,
        output,
        report,
        events,
        eps_abs,
        eps_rel,
        rho_max,
        pi_abs,
        pi_rel,
        no_full_sweep,
        max_iterations,
    } = &cli.command
    else {
        unreachable!()
    };
    let (deterministic, workers) = parallel(cli);
    let cfg = Phase2Config {
        eps_abs: *eps_abs,
        eps_rel: *eps_rel,
        rho_max: *rho_max,
        pi_abs: *pi_abs,
        pi_rel: *pi_rel,
        max_iterations: *max_iterations,
        full_sweep: !no_full_sweep,
        deterministic,
        workers,
        ..Default::default()
    };
    ctx.config = json!({
        "eps_abs": cfg.eps_abs,
        "eps_rel": cfg.eps_rel,
        "rho_max": cfg.rho_max,
        "pi_abs": cfg.pi_abs,
        "pi_rel": cfg.pi_rel,
        "denom_floor": cfg.denom_floor,
        "max_iterations": cfg.max_iterations,
        "full_sweep": cfg.full_sweep,
        "deterministic": cfg.deterministic,
        "workers": cfg.workers,
    });
    cfg.validate().map_err(|e| anyhow!("{e}"))?;
    let file = ctx.instance(instance)?;
    let t = ctx.tree(tree)?;
    let out = refine_partition(&t, &file.program, &cfg).map_err(|e| anyhow!("{e}"))?;
    ctx.write(output, &write_tree(&out.tree))?;
    let cert = certification_report(&out.tree).map_err(|e| anyhow!("{e}"))?;
    if let Some(r) = report {
        ctx.write(r, &cert)?;
    }
    if let Some(ev) = events {
        ctx.write(ev, &out.events.to_csv())?;
    }
    let warned = cert.lines().last().unwrap_or_default();
    println!(
        "leaves {} iterations {} reassignments {} runtime_s {:.3}",
        out.tree.leaves().count(),
        out.iterations,
        out.reassignments,
        out.runtime.as_secs_f64()
    );
    println!("{warned}");
    Ok(())
}

fn cmd_query(cli: &Cli, ctx: &mut Ctx) -> Result<(), Failure> {
    let Command::Query { tree, theta } = &cli.command else { unreachable!() };
    let t = ctx.tree(tree)?;
    let th = parse_theta(theta)?;
    ctx.config = json!({ "theta": th.as_slice() });
    let q = t.query(&th).map_err(|e| anyhow!("{e}"))?;
    let delta = q.delta.map_or_else(|| "-".to_string(), |d| d.to_string());
    println!("delta={delta} status={} leaf={}", q.status, q.leaf);
    Ok(())
}

fn cmd_verify(cli: &Cli, ctx: &mut Ctx) -> Result<(), Failure> {
    let Command::Verify { instance, tree, samples_per_leaf, eps_abs, eps_rel, report } = &cli.command else {
        unreachable!()
    };
    let cfg = VerifyConfig {
        samples_per_leaf: *samples_per_leaf,
        seed: cli.seed,
        eps_abs: *eps_abs,
        eps_rel: *eps_rel,
        ..Default::default()
    };
    ctx.config = json!({
        "samples_per_leaf": cfg.samples_per_leaf,
        "seed": cfg.seed,
        "eps_abs": cfg.eps_abs,
        "eps_rel": cfg.eps_rel,
        "tol": cfg.tol,
        "volume_rtol": cfg.volume_rtol,
    });
    let file = ctx.instance(instance)?;
    let t = ctx.tree(tree)?;
    let rep = verify_tree(&file.program, &t, &cfg).map_err(|e| anyhow!("{e}"))?;
    let text = rep.to_string();
    if let Some(r) = report {
        ctx.write(r, &format!("{text}\n"))?;
    }
    println!("{text}");
    if rep.passed() {
        Ok(())
    } else {
        let first = rep.violations.first().map(|v| v.to_string()).unwrap_or_default();
        Err(Failure::Verification(format!("{} violations; first: {first}", rep.violations.len())))
    }
}

/// Iteration count and wall time from the last row of an event CSV.
fn run_summary(csv: &str) -> anyhow::Result<Option<(usize, f64)>> {
    let Some(last) = csv.lines().skip(1).filter(|l| !l.trim().is_empty()).last() else {
        return Ok(None);
    };
    let mut f = last.split(',');
    let iter = f.next().unwrap_or_default().parse().context("bad iteration in event CSV")?;
    let t = f.next().unwrap_or_default().parse().context("bad time in event CSV")?;
    Ok(Some((iter, t)))
}

fn cmd_stats(cli: &Cli, ctx: &mut Ctx) -> Result<(), Failure> {
    let Command::Stats { tree, events, fitted_leaves, output } = &cli.command else { unreachable!() };
    ctx.config = json!({ "fitted_leaves": fitted_leaves });
    let t = ctx.tree(tree)?;
    let mut st = statistics(&t, *fitted_leaves).map_err(|e| anyhow!("{e}"))?;
    if let Some(ev) = events {
        let csv = ctx.read(ev)?;
        if let Some((i, s)) = run_summary(&csv)? {
            st = st.with_run(i, s);
        }
    }
    if let Some(o) = output {
        ctx.write(o, &st.to_csv())?;
    }
    println!("{st}");
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate { .. } => "generate",
        Command::Partition { .. } => "partition",
        Command::Refine { .. } => "refine",
        Command::Query { .. } => "query",
        Command::Verify { .. } => "verify",
        Command::Stats { .. } => "stats",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("COMMUTREE_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let started = manifest::unix_now();
    let clock = Instant::now();
    let mut ctx = Ctx::default();
    let result = match &cli.command {
        Command::Generate { .. } => cmd_generate(&cli, &mut ctx),
        Command::Partition { .. } => cmd_partition(&cli, &mut ctx),
        Command::Refine { .. } => cmd_refine(&cli, &mut ctx),
        Command::Query { .. } => cmd_query(&cli, &mut ctx),
        Command::Verify { .. } => cmd_verify(&cli, &mut ctx),
        Command::Stats { .. } => cmd_stats(&cli, &mut ctx),
    };
    let (code, error) = match &result {
        Ok(()) => (0, None),
        Err(f) => {
            let msg = match f {
                Failure::Usage(e) => format!("error: {e:#}"),
                Failure::ThetaExceeds(w) => {
                    println!("witness {}", w.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","));
                    format!("error: Theta exceeds the feasible parameter set; no commutation is feasible at {w:?}")
                }
                Failure::Verification(m) => format!("verification failed: {m}"),
            };
            eprintln!("{msg}");
            (f.code(), Some(msg))
        }
    };
    let record = RunManifest {
        command: command_name(&cli.command).into(),
        config: ctx.config,
        inputs: ctx.inputs,
        outputs: ctx.outputs,
        seed: cli.seed,
        started_unix_s: started,
        wall_s: clock.elapsed().as_secs_f64(),
        exit_code: i32::from(code),
        error,
    };
    if let Err(e) = manifest::append(&cli.manifest, &record) {
        eprintln!("error: cannot append to manifest {}: {e}", cli.manifest.display());
        if code == 0 {
            return ExitCode::from(1);
        }
    }
    ExitCode::from(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_spec_parses() {
        let b = parse_box("-1:1.5").unwrap();
        assert_eq!(b.dim(), 1);
        assert!(parse_box("-1,1").is_err());
        assert_eq!(parse_box("-1:1,0:2").unwrap().dim(), 2);
    }

    #[test]
    fn theta_accepts_commas_and_spaces() {
        let t = parse_theta(&["0.1,-0.2".into(), "3".into()]).unwrap();
        assert_eq!(t.as_slice(), &[0.1, -0.2, 3.0]);
        assert!(parse_theta(&["x".into()]).is_err());
    }

    #[test]
    fn event_summary_reads_last_row() {
        let csv = "iter,t_wall,action,cell_volume,closed_fraction\n1,0.1,split,1,0\n2,0.25,close,0.5,0.5\n";
        assert_eq!(run_summary(csv).unwrap(), Some((2, 0.25)));
        assert_eq!(run_summary("iter,t_wall\n").unwrap(), None);
    }
}
