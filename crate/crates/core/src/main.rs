use clap::{Args, Parser, Subcommand};
use skyshield_core::energy;
use skyshield_core::episode::Mode;
use skyshield_core::harness::{self, ExperimentConfig, HarnessError, PlannerKind};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "skyshield", version, about = "Multi-drone delivery simulator with a planner override layer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run episodes in one mode and write episodes.csv, summary.json, trajectory.jsonl.
    Simulate(Common),
    /// Train the constrained actor-critic and write training.csv, agent.ckpt, training.json.
    Train(Common),
    /// Run planner-only and safeguarded on the same seeds and write compare.json.
    Compare(Common),
    /// Print the hallucination breakdown of a run.
    Audit(Common),
    /// Print rotorcraft power at a forward speed.
    Power {
        /// Forward speed in m/s.
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Episodes per seed.
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long, value_parser = parse_planner)]
    planner: Option<PlannerKind>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "planner_only" | "planner-only" => Ok(Mode::PlannerOnly),
        "safeguarded" => Ok(Mode::Safeguarded),
        _ => Err(format!("unknown mode '{s}' (planner_only | safeguarded)")),
    }
}

fn parse_planner(s: &str) -> Result<PlannerKind, String> {
    match s {
        "mock" => Ok(PlannerKind::Mock),
        "llm" => Ok(PlannerKind::Llm),
        _ => Err(format!("unknown planner '{s}' (mock | llm)")),
    }
}

fn load(config: &Option<PathBuf>) -> Result<ExperimentConfig, HarnessError> {
    match config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(e) = self.episodes {
            cfg.episodes = e;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(p) = self.planner {
            cfg.planner = p;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn print_summary(s: &harness::Summary) {
    println!("mode {} over {} runs", s.mode.label(), s.runs);
    println!("  success rate  {:.4} ± {:.4}", s.success_rate.mean, s.success_rate.std);
    println!("  battery       {:.4} ± {:.4}", s.battery_consumption.mean, s.battery_consumption.std);
    println!("  distance (m)  {:.1} ± {:.1}", s.distance_total.mean, s.distance_total.std);
    println!("  overrides     {:.2} ± {:.2}", s.overrides.mean, s.overrides.std);
    println!("  fully served  {}/{}", s.fully_served_runs, s.runs);
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.cmd {
        Cmd::Simulate(c) => {
            let cfg = c.resolve()?;
            let b = harness::run_experiment(&cfg)?;
            print_summary(&b.summary);
            println!("wrote {}", cfg.output_dir.display());
        }
        Cmd::Train(c) => {
            let cfg = c.resolve()?;
            let (agent, log) = harness::train_experiment(&cfg)?;
            let n = log.rows.len();
            if let Some(last) = log.rows.last() {
                println!("trained {n} episodes, reward MA {:.2}, hinge {:.3}", last.reward_ma, last.hinge_cost);
            }
            println!("lambda {:?}", agent.lagrange.lambda);
            if log.halted {
                println!("training halted early on non-finite updates");
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Cmd::Compare(c) => {
            let cfg = c.resolve()?;
            let cmp = harness::compare(&cfg)?;
            print_summary(&cmp.planner_only);
            print_summary(&cmp.safeguarded);
            println!("layouts match: {}", cmp.layouts_match);
            println!("wrote {}", cfg.output_dir.join("compare.json").display());
        }
        Cmd::Audit(c) => {
            let cfg = c.resolve()?;
            let b = harness::run_experiment(&cfg)?;
            print!("{}", harness::audit_table(&b.summary.hallucinations));
            harness::write_json(&cfg.output_dir.join("audit.json"), &b.summary.hallucinations)?;
        }
        Cmd::Power { speed, config } => {
            let cfg = load(&config)?;
            let a = &cfg.world.aircraft;
            let terms = if speed == 0.0 {
                energy::hover_terms(a)
            } else {
                energy::propulsion_terms(speed, a).map_err(|e| HarnessError::Config {
                    path: "--speed".into(),
                    msg: e.to_string(),
                })?
            };
            println!("speed {speed} m/s");
            println!("  blade profile {:.6e} W", terms.blade_profile);
            println!("  induced       {:.6e} W", terms.induced);
            println!("  parasite      {:.6e} W", terms.parasite);
            println!("  total         {:.6e} W", terms.total());
            println!("  kWh per metre {:.6e}", energy::kwh_per_meter(a));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
