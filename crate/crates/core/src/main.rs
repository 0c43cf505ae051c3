use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use fleetlearn::gateway::{Gateway, GatewayConfig, GatewaySupervisor};
use fleetlearn::metrics::{MetricsRecord, RunSummary};
use fleetlearn::priorities::{PriorityKind, UncertaintyMeasure};
use fleetlearn::runner::{
    run_scripted, run_sweep, Digests, Experiment, RunConfig, RunOutcome, SupervisorMode, SweepAxis,
};

/// Interactive fleet learning: simulate a robot fleet supervised by a few
/// humans and measure return on human effort.
#[derive(Parser)]
#[command(name = "fleetlearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment per seed.
    Run(RunArgs),
    /// Run the experiment for every value of one parameter.
    Sweep {
        /// Parameter to vary: M, t_T, t_R or priority.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Re-run a scripted run directory from its config snapshot and check
    /// that every digest matches.
    Replay { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of robots (N).
    #[arg(long)]
    robots: Option<usize>,
    /// Number of humans (M).
    #[arg(long)]
    humans: Option<usize>,
    /// Operation time in timesteps (T).
    #[arg(long)]
    timesteps: Option<u64>,
    /// Minimum teleoperation time (t_T).
    #[arg(long)]
    t_teleop: Option<u32>,
    /// Hard-reset time (t_R).
    #[arg(long)]
    t_reset: Option<u32>,
    /// Free humans once their minimum intervention time has elapsed.
    #[arg(long)]
    no_sticky: bool,
    /// constraint | random | uc | ugc | cur
    #[arg(long)]
    priority: Option<PriorityKind>,
    #[arg(long)]
    u_threshold: Option<f64>,
    #[arg(long)]
    risk_threshold: Option<f64>,
    #[arg(long)]
    random_threshold: Option<f64>,
    #[arg(long)]
    t_initial: Option<u64>,
    /// entropy | ensemble_variance
    #[arg(long)]
    uncertainty: Option<String>,
    #[arg(long)]
    offline_pairs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    human_time_unit: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, env = "FLEETLEARN_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// scripted | gateway
    #[arg(long)]
    supervisor: Option<SupervisorMode>,
    /// Gateway bind address.
    #[arg(long)]
    bind: Option<String>,
    /// Shared token supervisors must present.
    #[arg(long)]
    token: Option<String>,
    /// Per-timestep wait before the gateway pauses the fleet.
    #[arg(long)]
    timeout_ms: Option<u64>,
}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($field:ident).+) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$($field).+ = v;
                }
            };
        }
        set!(robots => num_robots);
        set!(humans => num_humans);
        set!(timesteps => timesteps);
        set!(t_teleop => t_teleop);
        set!(t_reset => t_reset);
        set!(priority => priority);
        set!(u_threshold => priority_params.u_threshold);
        set!(risk_threshold => priority_params.risk_threshold);
        set!(random_threshold => priority_params.random_threshold);
        set!(t_initial => priority_params.t_initial);
        set!(offline_pairs => learner.offline_pairs);
        set!(batch_size => learner.batch_size);
        set!(ensemble_size => learner.ensemble_size);
        set!(human_time_unit => human_time_unit);
        set!(seeds => seeds);
        set!(supervisor => supervisor);
        set!(bind => gateway.bind);
        if self.no_sticky {
            cfg.sticky_reassignment = false;
        }
        if let Some(u) = &self.uncertainty {
            cfg.priority_params.uncertainty = match u.as_str() {
                "entropy" => UncertaintyMeasure::Entropy,
                "ensemble_variance" => UncertaintyMeasure::EnsembleVariance,
                other => bail!("unknown uncertainty measure {other:?}"),
            };
        }
        if self.output_dir.is_some() {
            cfg.output_dir = self.output_dir.clone();
        }
        if self.token.is_some() {
            cfg.gateway.token = self.token.clone();
        }
        if self.timeout_ms.is_some() {
            cfg.gateway.timeout_ms = self.timeout_ms;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_final(seed: u64, r: &MetricsRecord) {
    println!(
        "seed {seed}: t={} successes={} hard_resets={} violations={} idle={} human_steps={} rohe={:.4}",
        r.t, r.cum_successes, r.cum_hard_resets, r.cum_violations, r.cum_idle_time, r.cum_human_steps, r.rohe
    );
}

fn run_one(cfg: &RunConfig, seed: u64, gateway: Option<&Gateway>) -> anyhow::Result<RunOutcome> {
    Ok(match gateway {
        None => run_scripted(cfg, seed)?,
        Some(g) => {
            let timeout = cfg.gateway.timeout_ms.map(Duration::from_millis);
            let sup = GatewaySupervisor::new(g, timeout, cfg.t_teleop, cfg.t_reset);
            Experiment::new(cfg, seed, Box::new(sup))?.run()?
        }
    })
}

fn cmd_run(cfg: RunConfig) -> anyhow::Result<()> {
    let gateway = match cfg.supervisor {
        SupervisorMode::Scripted => None,
        SupervisorMode::Gateway => {
            let env = cfg.env.build()?;
            let gcfg = GatewayConfig {
                capacity: cfg.num_humans,
                action_arity: fleetlearn::env::Environment::spec(&env).action_arity,
                token: cfg.gateway.token.clone(),
                transcript_dir: cfg.output_dir.as_ref().map(|d| d.join("transcripts")),
            };
            let g = Gateway::serve(&cfg.gateway.bind, gcfg)?;
            eprintln!("waiting for supervisors at {}", g.url());
            Some(g)
        }
    };
    let mut finals = Vec::new();
    for &seed in &cfg.seeds {
        let out = run_one(&cfg, seed, gateway.as_ref())?;
        if let Some(dir) = &cfg.output_dir {
            let art = out.write_artifacts(&dir.join(format!("seed-{seed}")), &cfg)?;
            log::info!("artifacts written to {}", art.dir.display());
        }
        let last = out.final_metrics();
        print_final(seed, &last);
        finals.push(last);
    }
    if finals.len() > 1 {
        let s = RunSummary::from_finals(&finals);
        println!(
            "mean ± std over {} seeds: successes {} | hard resets {} | idle {} | human steps {} | rohe {}",
            finals.len(),
            s.successes,
            s.hard_resets,
            s.idle_time,
            s.human_steps,
            s.rohe
        );
    }
    Ok(())
}

fn cmd_replay(dir: &Path) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&dir.join("config.toml"))?;
    if cfg.supervisor != SupervisorMode::Scripted {
        bail!("only scripted runs can be replayed by re-simulation");
    }
    let expected: Digests = serde_json::from_slice(
        &std::fs::read(dir.join("digests.json")).with_context(|| format!("reading {}", dir.display()))?,
    )?;
    let seed = *cfg.seeds.first().context("config snapshot has no seed")?;
    let got = run_scripted(&cfg, seed)?.digests()?;
    let checks = [
        ("metrics", &expected.metrics, &got.metrics),
        ("steps", &expected.steps, &got.steps),
        ("dataset", &expected.dataset, &got.dataset),
        ("initial_policy", &expected.initial_policy, &got.initial_policy),
        ("final_policy", &expected.final_policy, &got.final_policy),
    ];
    let mut ok = true;
    for (name, want, have) in checks {
        let same = want == have;
        ok &= same;
        println!("{name:<15} {}", if same { "match" } else { "MISMATCH" });
    }
    if !ok {
        bail!("replay diverged from the recorded run");
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args.resolve()?),
        Command::Sweep { axis, values, run } => {
            let cfg = run.resolve()?;
            if cfg.supervisor != SupervisorMode::Scripted {
                bail!("sweeps run with the scripted supervisor");
            }
            let axis: SweepAxis = axis.parse()?;
            let result = run_sweep(&cfg, axis, &values)?;
            for r in &result.runs {
                print!("{axis:?}={} ", r.value);
                print_final(r.seed, &r.last);
            }
            print!("{}", result.table(axis));
            Ok(())
        }
        Command::Replay { dir } => cmd_replay(&dir),
    }
}
