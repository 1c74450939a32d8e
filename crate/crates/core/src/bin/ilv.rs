use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};

use ilv_core::engine::Trajectory;
use ilv_core::experiment::presets::{verify_theorems, Preset, Verdict, DEFAULT_SEED};
use ilv_core::experiment::{replay_run, run_plan, ExperimentPlan, RunKey, RunReport};

#[derive(Parser)]
#[command(name = "ilv", version, about = "Iterative local voting simulator and election server")]
struct Cli {
    /// Overrides the population seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "ilv-out")]
    out_dir: PathBuf,
    /// Worker threads; 0 uses one per processor.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// Tab-separated trajectories and a text summary.
    Table,
    /// JSON lines.
    Objects,
}

#[derive(Subcommand)]
enum Command {
    /// Runs every (mechanism, group, start) of a plan file.
    Run { plan: PathBuf },
    /// Runs a named verification preset, or `all`.
    Verify { preset: String },
    /// Re-runs one recorded run and checks it reproduces.
    Replay { run_id: String },
    /// Writes one run's trajectory to standard output.
    Export { run_id: String },
    /// Serves election instances over HTTP.
    #[cfg(feature = "server")]
    Serve {
        /// Instance definitions created at startup if absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Event log directory; in-memory when omitted.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Run { plan } => run(cli, plan),
        Command::Verify { preset } => verify(cli, preset),
        Command::Replay { run_id } => replay(cli, run_id),
        Command::Export { run_id } => export(cli, run_id),
        #[cfg(feature = "server")]
        Command::Serve { config, addr, data_dir } => serve(config.as_deref(), addr, data_dir.as_deref()),
    }
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Table => "tsv",
        Format::Objects => "jsonl",
    }
}

fn write_trajectory(traj: &Trajectory, format: Format, out: impl Write) -> io::Result<()> {
    match format {
        Format::Table => traj.write_tsv(out),
        Format::Objects => traj.write_jsonl(out),
    }
}

fn run(cli: &Cli, plan_path: &Path) -> CliResult {
    let started = now_secs();
    let mut plan = ExperimentPlan::from_toml(&fs::read_to_string(plan_path)?)?;
    if let Some(seed) = cli.seed {
        plan.population.seed = seed;
    }
    let output = run_plan(&plan, cli.workers)?;
    let traj_dir = cli.out_dir.join("trajectories");
    fs::create_dir_all(&traj_dir)?;
    for (record, traj) in output.report.runs.iter().zip(&output.trajectories) {
        if let Some(traj) = traj {
            let path = traj_dir.join(format!("{}.{}", record.id, extension(cli.format)));
            write_trajectory(traj, cli.format, io::BufWriter::new(fs::File::create(path)?))?;
        }
    }
    fs::write(cli.out_dir.join("report.json"), output.report.to_json())?;
    let metadata = serde_json::json!({
        "plan_file": plan_path.display().to_string(),
        "seed": plan.population.seed,
        "workers": cli.workers,
        "version": env!("CARGO_PKG_VERSION"),
        "started_at": started,
        "finished_at": now_secs(),
    });
    fs::write(cli.out_dir.join("metadata.json"), serde_json::to_string_pretty(&metadata)?)?;
    print_report(&output.report, cli.format)?;
    let failed = output.report.runs.iter().any(|r| !r.ok());
    Ok(if failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn print_report(report: &RunReport, format: Format) -> io::Result<()> {
    let mut out = io::stdout().lock();
    match format {
        Format::Objects => {
            for r in &report.runs {
                serde_json::to_writer(&mut out, r)?;
                writeln!(out)?;
            }
            for m in &report.mechanisms {
                serde_json::to_writer(&mut out, m)?;
                writeln!(out)?;
            }
        }
        Format::Table => {
            writeln!(out, "run\tmechanism\tstatus\tupdates\tbad_region\tterminal")?;
            for r in &report.runs {
                let terminal = r
                    .terminal
                    .as_ref()
                    .map(|p| p.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(","))
                    .unwrap_or_else(|| r.error.clone().unwrap_or_default());
                writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", r.id, r.mechanism, r.status, r.updates, r.bad_region_count, terminal)?;
            }
            writeln!(out)?;
            writeln!(out, "mechanism\tguarantee\tfailed\tdispersion")?;
            for m in &report.mechanisms {
                let disp = m.dispersion.map(|d| format!("{d:.6e}")).unwrap_or_else(|| "-".into());
                let guarantee = if m.theoretical_guarantee { "yes" } else { "no theoretical guarantee" };
                writeln!(out, "{}\t{}\t{}\t{}", m.mechanism, guarantee, m.failed, disp)?;
            }
        }
    }
    Ok(())
}

fn verify(cli: &Cli, name: &str) -> CliResult {
    let presets: Vec<Preset> = if name == "all" {
        Preset::ALL.to_vec()
    } else {
        vec![name.parse::<Preset>()?]
    };
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let mut failed = false;
    let mut out = io::stdout().lock();
    for preset in presets {
        let table = verify_theorems(preset, seed, cli.workers)?;
        failed |= table.verdict == Verdict::Fail;
        match cli.format {
            Format::Table => write!(out, "{}", table.render())?,
            Format::Objects => writeln!(out, "{}", serde_json::to_string(&table)?)?,
        }
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn load_report(cli: &Cli) -> Result<RunReport, Box<dyn std::error::Error>> {
    let path = cli.out_dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn recorded_trajectory(cli: &Cli, run_id: &str) -> Result<(RunReport, Trajectory), Box<dyn std::error::Error>> {
    let report = load_report(cli)?;
    let key = RunKey::parse(run_id).ok_or_else(|| format!("malformed run id {run_id:?}"))?;
    let record = report.run(run_id).ok_or_else(|| format!("run {run_id} not in report"))?;
    let mut plan = report.plan.clone();
    plan.population.seed = record.seed;
    let traj = replay_run(&plan, key)?;
    Ok((report, traj))
}

fn replay(cli: &Cli, run_id: &str) -> CliResult {
    let (report, traj) = recorded_trajectory(cli, run_id)?;
    let record = report.run(run_id).expect("checked on load");
    let summary = traj.summary();
    println!("{}", serde_json::to_string(&summary)?);
    if record.terminal.as_ref() == Some(&summary.final_point) && record.updates == summary.iterations {
        println!("replay of {run_id} matches the report");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("replay of {run_id} differs from the report");
        Ok(ExitCode::FAILURE)
    }
}

fn export(cli: &Cli, run_id: &str) -> CliResult {
    let (_, traj) = recorded_trajectory(cli, run_id)?;
    write_trajectory(&traj, cli.format, io::stdout().lock())?;
    Ok(ExitCode::SUCCESS)
}

#[cfg(feature = "server")]
fn serve(config: Option<&Path>, addr: &str, data_dir: Option<&Path>) -> CliResult {
    use ilv_core::election::{http, ElectionService, ServiceConfig};

    let service = match data_dir {
        Some(dir) => ElectionService::open(dir)?,
        None => ElectionService::in_memory(),
    };
    if let Some(path) = config {
        let cfg = ServiceConfig::from_toml(&fs::read_to_string(path)?)?;
        for id in service.ensure_instances(&cfg.instances)? {
            log::info!("instance {id} ready");
        }
    }
    let runtime = tokio::runtime::Runtime::new()?;
    let addr: std::net::SocketAddr = addr.parse()?;
    runtime.block_on(http::serve(service, addr))?;
    Ok(ExitCode::SUCCESS)
}
