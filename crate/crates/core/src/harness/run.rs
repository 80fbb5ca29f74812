use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::grac::{StepMetrics, Trainer};
use crate::harness::config::RunConfig;
use crate::harness::eval::evaluate;
use crate::networks::{save_checkpoint, Parameters};

pub const CSV_HEADER: &str = "step,eval_return_mean,eval_return_std,q1_mean,q_gap_mean,critic_iters,alpha";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
/// Prefix of the row written when a run aborts on non-finite values.
pub const DIVERGED_MARKER: &str = "#diverged";

/// Keeps evaluation start states disjoint from the training stream.
const EVAL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    /// Mean over the updates since the previous row; NaN if there were none.
    pub q1_mean: f64,
    pub q_gap_mean: f64,
    pub critic_iters: f64,
    pub alpha: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.eval_return_mean,
            self.eval_return_std,
            self.q1_mean,
            self.q_gap_mean,
            self.critic_iters,
            self.alpha
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub rows: Vec<MetricsRow>,
}

impl RunSummary {
    pub fn final_return(&self) -> Option<f64> {
        self.rows.last().map(|r| r.eval_return_mean)
    }
}

#[derive(Default)]
struct Window {
    q1: f64,
    gap: f64,
    iters: f64,
    n: usize,
}

impl Window {
    fn push(&mut self, m: &StepMetrics) {
        if let Some(u) = &m.update {
            self.q1 += u.q1_mean;
            self.gap += u.q_gap_mean;
            self.iters += u.critic.iterations as f64;
            self.n += 1;
        }
    }

    fn take(&mut self) -> (f64, f64, f64) {
        let n = self.n as f64;
        let out = if self.n == 0 {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (self.q1 / n, self.gap / n, self.iters / n)
        };
        *self = Window::default();
        out
    }
}

struct CsvSink {
    out: BufWriter<File>,
}

impl CsvSink {
    fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CSV_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    fn line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Trains for `cfg.total_steps` environment steps, evaluating every `eval_interval`.
///
/// Writes the config snapshot, `metrics.csv` (flushed per row) and a final
/// checkpoint into `cfg.output_dir`. `observer` sees every step's metrics.
/// A non-finite loss ends the run with a [`DIVERGED_MARKER`] line and [`Error::Diverged`].
pub fn run_training(cfg: &RunConfig, mut observer: impl FnMut(&StepMetrics)) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_config_text())?;
    let mut csv = CsvSink::create(&dir.join(METRICS_FILE))?;

    let mut trainer = Trainer::new(&cfg.env, cfg.hidden, cfg.buffer_size, cfg.grac.clone(), cfg.seed)?;
    let mut eval_env = make_env(&cfg.env)?;
    let eval_seed = cfg.seed ^ EVAL_SEED_SALT;
    let mut rows = Vec::new();
    let mut window = Window::default();

    for _ in 0..cfg.total_steps {
        let metrics = match trainer.train_step() {
            Ok(m) => m,
            Err(e @ Error::Diverged { .. }) => {
                let Error::Diverged { step, reason } = &e else { unreachable!() };
                csv.line(&format!("{DIVERGED_MARKER},step={step},reason={}", reason.replace(['\n', ','], " ")))?;
                write_checkpoint(&dir, &trainer)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        observer(&metrics);
        window.push(&metrics);
        if metrics.step % cfg.eval_interval == 0 || metrics.step == cfg.total_steps {
            let (mean, std) = evaluate(&trainer.agent.actor, eval_env.as_mut(), cfg.eval_episodes, eval_seed)?;
            let (q1_mean, q_gap_mean, critic_iters) = window.take();
            let row = MetricsRow {
                step: metrics.step,
                eval_return_mean: mean,
                eval_return_std: std,
                q1_mean,
                q_gap_mean,
                critic_iters,
                alpha: metrics.alpha,
            };
            csv.line(&row.to_csv())?;
            rows.push(row);
        }
    }
    write_checkpoint(&dir, &trainer)?;
    Ok(RunSummary { dir, rows })
}

fn write_checkpoint(dir: &Path, trainer: &Trainer) -> Result<()> {
    let agent = &trainer.agent;
    let mut tensors = agent.actor.named_tensors();
    tensors.extend(agent.critics.named_tensors());
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn small(dir: &Path, steps: u64) -> RunConfig {
        let kv = |k: &str, v: String| (k.to_string(), v);
        parse_config(
            None,
            &[
                kv("env", "quadratic-bandit".into()),
                kv("total_steps", steps.to_string()),
                kv("eval_interval", steps.max(1).min(20).to_string()),
                kv("eval_episodes", "2".into()),
                kv("warmup_steps", "10".into()),
                kv("hidden", "8".into()),
                kv("batch_size", "8".into()),
                kv("n_pop", "16".into()),
                kv("critic_iters", "3".into()),
                kv("output_dir", dir.display().to_string()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_steps_gives_header_only() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), 0);
        let summary = run_training(&cfg, |_| {}).unwrap();
        assert!(summary.rows.is_empty());
        let text = fs::read_to_string(tmp.path().join(METRICS_FILE)).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn run_directory_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), 50);
        let mut seen = 0;
        let summary = run_training(&cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, 50);
        let steps: Vec<u64> = summary.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![20, 40, 50]);
        for f in [CONFIG_FILE, METRICS_FILE, CHECKPOINT_FILE] {
            assert!(tmp.path().join(f).exists(), "{f}");
        }
        let lines = fs::read_to_string(tmp.path().join(METRICS_FILE)).unwrap();
        assert_eq!(lines.lines().count(), 4);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_training(&small(a.path(), 40), |_| {}).unwrap();
        run_training(&small(b.path(), 40), |_| {}).unwrap();
        let read = |d: &Path| fs::read(d.join(METRICS_FILE)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }
}
