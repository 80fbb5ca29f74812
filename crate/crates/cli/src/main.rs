use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use grac_core::envs::make_env;
use grac_core::harness::{
    ablation_suite, emit_plot, evaluate, parse_config, parse_overrides, run_training, RunConfig, CHECKPOINT_FILE,
    CONFIG_FILE, METRICS_FILE, SUMMARY_FILE,
};
use grac_core::networks::{load_checkpoint, ActorParams, Parameters};
use grac_core::tabular::{improvement_suite, ConvergenceSuite};
use grac_core::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "grac", version, about = "Train and inspect GRAC agents on small control tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides of the form `--key=value`, applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        parse_config(self.config.as_deref(), &parse_overrides(&self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write config snapshot, metrics CSV and checkpoint.
    Train(ConfigArgs),
    /// Greedy evaluation of a finished run directory.
    Evaluate {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 12345)]
        seed: u64,
    },
    /// Train every ablation variant and write a normalized summary.
    Ablate(ConfigArgs),
    /// Check the tabular update rules against exact dynamic programming.
    VerifyTabular {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 500_000)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[arg(long, default_value_t = 0.02)]
        gap_tol: f64,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        /// Per-seed CSV of sup-norm errors.
        #[arg(long, default_value = "tabular.csv")]
        out: PathBuf,
    },
    /// Render CSV columns as an SVG line chart.
    Plot {
        csv: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        columns: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

/// `Ok(false)` means the command ran but a check failed.
fn run(command: Command) -> Result<bool, Error> {
    match command {
        Command::Train(args) => {
            let cfg = args.load()?;
            let summary = run_training(&cfg, |_| {})?;
            match summary.rows.last() {
                Some(r) => println!(
                    "step {}: eval return {:.4} ± {:.4}; wrote {}",
                    r.step,
                    r.eval_return_mean,
                    r.eval_return_std,
                    summary.dir.join(METRICS_FILE).display()
                ),
                None => println!("no steps run; wrote {}", summary.dir.join(METRICS_FILE).display()),
            }
            Ok(true)
        }
        Command::Evaluate { run_dir, episodes, seed } => {
            let cfg = parse_config(Some(&run_dir.join(CONFIG_FILE)), &[])?;
            let actor = load_actor(&cfg, &run_dir.join(CHECKPOINT_FILE))?;
            let mut env = make_env(&cfg.env)?;
            let (mean, std) = evaluate(&actor, env.as_mut(), episodes, seed)?;
            println!("{}: {episodes} episodes, return {mean:.4} ± {std:.4}", cfg.env);
            Ok(true)
        }
        Command::Ablate(args) => {
            let cfg = args.load()?;
            let results = ablation_suite(&cfg)?;
            for r in &results {
                match (&r.outcome, r.normalized) {
                    (Ok(_), Some(n)) => println!("{:<20} normalized {n:.3}", r.variant.name),
                    (Ok(_), None) => println!("{:<20} no reference", r.variant.name),
                    (Err(e), _) => println!("{:<20} failed: {e}", r.variant.name),
                }
            }
            println!("wrote {}", cfg.output_dir.join(SUMMARY_FILE).display());
            Ok(true)
        }
        Command::VerifyTabular {
            seeds,
            steps,
            tol,
            gap_tol,
            pairs,
            out,
        } => verify_tabular(seeds, steps, tol, gap_tol, pairs, &out),
        Command::Plot { csv, columns, out } => {
            emit_plot(&csv, &columns, &out)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}

fn load_actor(cfg: &RunConfig, checkpoint: &Path) -> Result<ActorParams, Error> {
    let env = make_env(&cfg.env)?;
    let spec = env.spec();
    let mut actor = ActorParams::zeros(spec.state_dim, spec.action_dim, cfg.hidden, spec.max_action);
    actor.load_named(&load_checkpoint(checkpoint)?)?;
    Ok(actor)
}

fn verify_tabular(seeds: u64, steps: usize, tol: f64, gap_tol: f64, pairs: usize, out: &Path) -> Result<bool, Error> {
    let suite = ConvergenceSuite {
        steps,
        ..ConvergenceSuite::default()
    };
    let mut csv = String::from("seed,q2_error,q_gap,pass\n");
    let mut all_ok = true;
    for seed in 0..seeds {
        let r = suite.run_seed(seed)?;
        let ok = r.q2_error < tol && r.q_gap < gap_tol;
        all_ok &= ok;
        csv.push_str(&format!("{},{},{},{}\n", r.seed, r.q2_error, r.q_gap, ok));
    }
    fs::write(out, csv)?;
    let converged = if all_ok { "PASS" } else { "FAIL" };
    println!("{converged} convergence: {seeds} seeds, ‖Q2 − Q*‖∞ < {tol}, ‖Q1 − Q2‖∞ < {gap_tol} ({})", out.display());

    let imp = improvement_suite(pairs, 0)?;
    let improved = imp.q_loss_dominated == pairs && imp.cem_dominated == pairs;
    println!(
        "{} improvement: q_loss {}/{pairs}, cem {}/{pairs}, worst margin {:.3e}",
        if improved { "PASS" } else { "FAIL" },
        imp.q_loss_dominated,
        imp.cem_dominated,
        imp.worst_margin
    );
    Ok(all_ok && improved)
}
