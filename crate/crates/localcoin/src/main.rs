use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use localcoin::adversary::{AttackPlanConfig, ColluderPolicy, RegionSpec};
use localcoin::audit::{audit, dump_chains};
use localcoin::config::ScenarioConfig;
use localcoin::log::EventLog;
use localcoin::metrics::{
    compute_report, fake_outcomes, report_row, spread_over_time, write_fakes, write_report, write_series,
    REPORT_HEADER,
};
use localcoin::sim::World;
use localcoin::sweep::{assign, cells, sweep, GridAxis};
use localcoin::trace::load_trace;
use localcoin_core::geom::{connected_components, generate_rgg, major_component_fraction, Placement};
use localcoin_core::Digest;

#[derive(Parser)]
#[command(name = "localcoin", version, about = "Simulate and analyze a witness-verified ad-hoc payment network")]
struct Cli {
    /// Where output files go.
    #[arg(long, global = true, env = "LOCALCOIN_OUT", default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Connectivity statistics of random geometric graphs.
    Rgg(RggArgs),
    /// Run a scenario, or a sweep over it with `--vary`.
    Run(RunArgs),
    /// Run a double-spend attack scenario.
    Attack(AttackArgs),
    /// Recompute the report from an event log.
    Analyze(AnalyzeArgs),
    /// Validate a contact trace and summarize it.
    TraceCheck(TraceArgs),
}

#[derive(Args)]
struct SeedArgs {
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Refuse to run without an explicit seed.
    #[arg(long)]
    strict_seed: bool,
    /// Print the fully resolved config and exit.
    #[arg(long)]
    print_effective_config: bool,
}

#[derive(Args)]
struct RggArgs {
    #[arg(long)]
    n: usize,
    /// Coverage radius in normalized units.
    #[arg(long = "r", alias = "r-cov")]
    r: f64,
    #[arg(long, value_enum, default_value = "uniform")]
    placement: RggPlacement,
    #[arg(long)]
    torus: bool,
    /// First seed; trial `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RggPlacement {
    Uniform,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    seed: SeedArgs,
    /// Sweep a field: `path=v1,v2,...` (repeatable).
    #[arg(long)]
    vary: Vec<String>,
    /// Seeds per sweep cell.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Also write every node's chain as JSON lines.
    #[arg(long)]
    dump_chain: bool,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    seed: SeedArgs,
    #[arg(long)]
    attacker: Option<u64>,
    #[arg(long)]
    colluder_fraction: Option<f64>,
    #[arg(long)]
    fakes: Option<u32>,
    /// Seconds between fakes.
    #[arg(long)]
    delay: Option<f64>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Split the area at `x = cut`.
    #[arg(long)]
    cut: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    ForwardAll,
    ForwardAllToSide,
    SuppressCrossRegion,
    Withhold,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    log: PathBuf,
    /// Also write the spread series of this transaction (hex digest).
    #[arg(long)]
    tx: Option<String>,
}

#[derive(Args)]
struct TraceArgs {
    trace: PathBuf,
}

/// Input problems (exit 1) versus failures while running (exit 2).
enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let out = cli.out.clone();
    let r = match cli.command {
        Command::Rgg(a) => rgg(a),
        Command::Run(a) => run(a, &out),
        Command::Attack(a) => attack(a, &out),
        Command::Analyze(a) => analyze(a, &out),
        Command::TraceCheck(a) => trace_check(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn rgg(a: RggArgs) -> Outcome {
    if !(a.r > 0.0) || a.n == 0 {
        return Err(input(anyhow::anyhow!("--n and --r must be positive")));
    }
    let placement = match a.placement {
        RggPlacement::Uniform if a.torus => Placement::torus(a.n),
        RggPlacement::Uniform => Placement::uniform(a.n),
    };
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let res: std::io::Result<()> = (|| {
        writeln!(w, "seed,components,major_fraction,mean_degree")?;
        for i in 0..a.trials {
            let seed = a.seed + i;
            let g = generate_rgg(&placement, a.r, seed);
            let comps = connected_components(&g).len();
            writeln!(w, "{seed},{comps},{:.6},{:.6}", major_component_fraction(&g), g.mean_degree())?;
        }
        Ok(())
    })();
    res.map_err(runtime)
}

/// Loads a config and applies the seed flags.
fn load_config(path: &Path, seed: &SeedArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(path).map_err(input)?;
    let text = std::fs::read_to_string(path).map_err(input)?;
    let has_seed = text.parse::<toml::Table>().map(|t| t.contains_key("seed")).unwrap_or(false);
    match seed.seed {
        Some(s) => cfg.seed = s,
        None if has_seed => {}
        None if seed.strict_seed => {
            return Err(input(anyhow::anyhow!("{}: no seed given and --strict-seed is set", path.display())));
        }
        None => {
            let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default();
            cfg.seed = now.as_nanos() as u64;
            eprintln!("no seed given; using {}", cfg.seed);
        }
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(runtime)?;
    let p = dir.join(name);
    let f = File::create(&p).with_context(|| format!("writing {}", p.display())).map_err(runtime)?;
    Ok(BufWriter::new(f))
}

fn parse_axis(s: &str) -> Result<GridAxis, Failure> {
    let (field, values) =
        s.split_once('=').ok_or_else(|| input(anyhow::anyhow!("--vary expects `field=v1,v2`, got `{s}`")))?;
    let values = values
        .split(',')
        .filter(|v| !v.is_empty())
        .map(|v| {
            format!("x = {v}")
                .parse::<toml::Table>()
                .map(|mut t| t.remove("x").expect("just inserted"))
                .unwrap_or_else(|_| toml::Value::String(v.to_string()))
        })
        .collect();
    Ok(GridAxis { field: field.to_string(), values })
}

fn run_scenario(cfg: &ScenarioConfig, out: &Path, dump_chain: bool) -> Result<World, Failure> {
    let mut world = World::new(cfg).map_err(input)?;
    world.run_to_end();
    let report = compute_report(&world.log).map_err(runtime)?;
    let mut events = create(out, "events.csv")?;
    world.log.write_csv(&mut events).map_err(runtime)?;
    events.flush().map_err(runtime)?;
    write_report(&report, create(out, "report.csv")?).map_err(runtime)?;
    let fakes = fake_outcomes(&world.log).map_err(runtime)?;
    if !fakes.is_empty() {
        write_fakes(&fakes, create(out, "fakes.csv")?).map_err(runtime)?;
    }
    if dump_chain {
        dump_chains(&world, create(out, "chain.jsonl")?).map_err(runtime)?;
    }
    println!("{REPORT_HEADER}");
    println!("{}", report_row(&report));
    Ok(world)
}

fn run(a: RunArgs, out: &Path) -> Outcome {
    let cfg = load_config(&a.config, &a.seed)?;
    if a.seed.print_effective_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    if a.vary.is_empty() {
        run_scenario(&cfg, out, a.dump_chain)?;
        return Ok(());
    }
    let grid = a.vary.iter().map(|s| parse_axis(s)).collect::<Result<Vec<_>, _>>()?;
    for cell in cells(&grid) {
        assign(&cfg, &cell).map_err(|e| input(anyhow::anyhow!("--vary: {e}")))?;
    }
    let results = sweep(&cfg, &grid, a.seeds).map_err(input)?;
    let mut w = create(out, "sweep.csv")?;
    let fields: Vec<&str> = grid.iter().map(|g| g.field.as_str()).collect();
    let res: std::io::Result<()> = (|| {
        writeln!(w, "cell,replicate,seed,{},status,{REPORT_HEADER}", fields.join(","))?;
        for r in &results {
            let vals: Vec<String> = r.assignment.iter().map(|(_, v)| v.to_string()).collect();
            match &r.outcome {
                Ok(rep) => writeln!(w, "{},{},{},{},ok,{}", r.cell, r.replicate, r.seed, vals.join(","), report_row(rep))?,
                Err(e) => {
                    eprintln!("cell {} seed {} failed: {e}", r.cell, r.seed);
                    writeln!(w, "{},{},{},{},failed,", r.cell, r.replicate, r.seed, vals.join(","))?
                }
            }
        }
        w.flush()
    })();
    res.map_err(runtime)?;
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    println!("{} runs, {failed} failed; wrote {}", results.len(), out.join("sweep.csv").display());
    Ok(())
}

fn attack(a: AttackArgs, out: &Path) -> Outcome {
    let mut cfg = load_config(&a.config, &a.seed)?;
    let mut plan = cfg.adversary_plan.clone().unwrap_or_default();
    override_plan(&mut plan, &a);
    cfg.adversary_plan = Some(plan);
    cfg.validate().map_err(input)?;
    if a.seed.print_effective_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let world = run_scenario(&cfg, out, false)?;
    let report = compute_report(&world.log).map_err(runtime)?;
    let verdict = audit(&world);
    println!("success={}", report.double_spend_success);
    println!("audit_conflicts={}", verdict.conflicts.len());
    Ok(())
}

fn override_plan(plan: &mut AttackPlanConfig, a: &AttackArgs) {
    if let Some(x) = a.attacker {
        plan.attacker = x;
    }
    if let Some(x) = a.colluder_fraction {
        plan.colluder_fraction = x;
        plan.colluders.clear();
    }
    if let Some(x) = a.fakes {
        plan.fake_tx_count = x;
        plan.receivers.clear();
    }
    if let Some(x) = a.delay {
        plan.inter_fake_delay = x;
    }
    if let Some(p) = a.policy {
        plan.colluder_policy = match p {
            PolicyArg::ForwardAll => ColluderPolicy::ForwardAll,
            PolicyArg::ForwardAllToSide => ColluderPolicy::ForwardAllToSide,
            PolicyArg::SuppressCrossRegion => ColluderPolicy::SuppressCrossRegion,
            PolicyArg::Withhold => ColluderPolicy::Withhold,
        };
    }
    if let Some(cut) = a.cut {
        plan.regions = Some(RegionSpec::HalfPlane { cut });
    }
}

fn analyze(a: AnalyzeArgs, out: &Path) -> Outcome {
    let f = File::open(&a.log).with_context(|| format!("opening {}", a.log.display())).map_err(input)?;
    let log = EventLog::read_csv(f).map_err(input)?;
    let report = compute_report(&log).map_err(runtime)?;
    write_report(&report, create(out, "report.csv")?).map_err(runtime)?;
    println!("{REPORT_HEADER}");
    println!("{}", report_row(&report));
    if let Some(hexd) = &a.tx {
        let mut d = [0u8; 32];
        hex::decode_to_slice(hexd, &mut d).context("--tx expects a 64-digit hex digest").map_err(input)?;
        let series = spread_over_time(&log, &Digest(d)).map_err(input)?;
        write_series(&series, create(out, &format!("spread_{hexd}.csv"))?).map_err(runtime)?;
    }
    Ok(())
}

fn trace_check(a: TraceArgs) -> Outcome {
    let t = load_trace(&a.trace).with_context(|| a.trace.display().to_string()).map_err(input)?;
    println!("contacts={} users={} merged={} span_s={}", t.records.len(), t.users, t.merged, t.span());
    Ok(())
}
