use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dtpc::bench::{run_decay, run_experiment, BenchError, DecayMode, ScenarioConfig, SweepParam, SweepSpec};

#[derive(Parser)]
#[command(name = "dtpc", version, about = "Simulate distributed predictive controllers on networked LTI systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario configuration (TOML).
    config: PathBuf,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `output_dir` from the config, else `out`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run OPT and every configured controller.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep DTPC over `k` or `kappa` with the other held fixed.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        vary: Vary,
        /// Inclusive range `a..b`.
        #[arg(long, value_parser = parse_range)]
        range: (usize, usize),
        /// Fixed lookahead for radius sweeps.
        #[arg(long, default_value_t = 11)]
        k: usize,
        /// Fixed radius for lookahead sweeps.
        #[arg(long, default_value_t = 2)]
        kappa: usize,
        /// Also run the controllers listed in the config.
        #[arg(long)]
        with_controllers: bool,
    },
    /// Measure a spatial decay profile.
    Decay {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
        /// OCP horizon, or the lookahead in trajectory mode.
        #[arg(long, default_value_t = 11)]
        horizon: usize,
        /// Center node for truncation gaps.
        #[arg(long, default_value_t = 0)]
        center: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Vary {
    K,
    Kappa,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Kkt,
    Truncation,
    Trajectory,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected a..b, got {s:?}"))?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let a: usize = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    if a > b {
        return Err(format!("range {a}..{b} is descending"));
    }
    Ok((a, b))
}

fn load(common: &Common) -> Result<(ScenarioConfig, PathBuf), BenchError> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn simulate(cfg: &ScenarioConfig, out: &Path) -> Result<(), BenchError> {
    let res = run_experiment(cfg, out)?;
    let opt_cost = res.opt.total_cost;
    println!("{:<36} {:>16} {:>16} {:>12}", "tag", "total_cost", "regret", "regret/opt");
    for row in res.summary.iter().chain(&res.sweep) {
        println!(
            "{:<36} {:>16.6} {:>16.6} {:>12.6}",
            row.tag,
            row.total_cost,
            row.regret,
            row.normalized_regret(opt_cost)
        );
    }
    for f in &res.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Simulate { common } => {
            let (cfg, out) = load(&common)?;
            simulate(&cfg, &out)
        }
        Command::Sweep {
            common,
            vary,
            range,
            k,
            kappa,
            with_controllers,
        } => {
            let (mut cfg, out) = load(&common)?;
            cfg.sweep = Some(SweepSpec {
                vary: match vary {
                    Vary::K => SweepParam::K,
                    Vary::Kappa => SweepParam::Kappa,
                },
                k,
                kappa,
                range: [range.0, range.1],
            });
            if !with_controllers {
                cfg.controllers.clear();
            }
            cfg.validate()?;
            simulate(&cfg, &out)
        }
        Command::Decay {
            common,
            mode,
            horizon,
            center,
        } => {
            let (cfg, out) = load(&common)?;
            let mode = match mode {
                Mode::Kkt => DecayMode::Kkt,
                Mode::Truncation => DecayMode::Truncation,
                Mode::Trajectory => DecayMode::Trajectory,
            };
            let (profile, files) = run_decay(&cfg, mode, horizon, center, &out)?;
            println!("distance,max_norm");
            for (d, v) in profile.distances.iter().zip(&profile.max_block_norms) {
                println!("{d},{v:e}");
            }
            println!("fit: alpha = {:e}, rho = {:.4}, r2 = {:.4}", profile.fit_alpha, profile.fit_rho, profile.fit_r2);
            for f in &files {
                eprintln!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
