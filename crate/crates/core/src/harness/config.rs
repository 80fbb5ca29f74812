use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::envs::env_spec;
use crate::error::{Error, Result};
use crate::grac::GracConfig;
use crate::networks::DEFAULT_HIDDEN;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: String,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub buffer_size: usize,
    pub hidden: usize,
    pub grac: GracConfig,
}

impl RunConfig {
    /// Defaults for `env`, including `cem_loss_weight = 1 / action_dim`.
    pub fn for_env(env: &str) -> Result<Self> {
        let spec = env_spec(env).map_err(|e| Error::Config(e.to_string()))?;
        let grac = GracConfig {
            cem_loss_weight: 1.0 / spec.action_dim as f64,
            ..GracConfig::default()
        };
        Ok(Self {
            env: env.to_string(),
            total_steps: grac.total_steps,
            eval_interval: 1000,
            eval_episodes: 10,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            buffer_size: 1_000_000,
            hidden: DEFAULT_HIDDEN,
            grac,
        })
    }

    pub fn validate(&self) -> Result<()> {
        env_spec(&self.env).map_err(|e| Error::Config(e.to_string()))?;
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be >= 1".into()));
        }
        if self.eval_interval == 0 || (self.total_steps > 0 && self.eval_interval > self.total_steps) {
            return Err(Error::Config(format!(
                "eval_interval must be in [1, total_steps], got {} with total_steps {}",
                self.eval_interval, self.total_steps
            )));
        }
        if self.buffer_size == 0 || self.hidden == 0 {
            return Err(Error::Config("buffer_size and hidden must be >= 1".into()));
        }
        if self.grac.total_steps != self.total_steps {
            return Err(Error::Config("grac.total_steps must mirror total_steps".into()));
        }
        self.grac.validate()
    }

    /// `key = value` lines accepted by [`parse_config`], one per key.
    pub fn to_config_text(&self) -> String {
        let g = &self.grac;
        let f = &g.flags;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("env", self.env.clone());
        put("total_steps", self.total_steps.to_string());
        put("eval_interval", self.eval_interval.to_string());
        put("eval_episodes", self.eval_episodes.to_string());
        put("seed", self.seed.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("buffer_size", self.buffer_size.to_string());
        put("hidden", self.hidden.to_string());
        put("gamma", fmt_f64(g.gamma));
        put("batch_size", g.batch_size.to_string());
        put("lr_critic", fmt_f64(g.lr_critic));
        put("lr_actor", fmt_f64(g.lr_actor));
        put("critic_iters", g.critic_iters.to_string());
        put("alpha_start", fmt_f64(g.alpha_start));
        put("alpha_end", fmt_f64(g.alpha_end));
        put("n_pop", g.cem.n_pop.to_string());
        put("n_elite", g.cem.n_elite.to_string());
        put("n_cem", g.cem.n_iter.to_string());
        put("cem_running_best", g.cem.track_running_best.to_string());
        put("cem_loss_weight", fmt_f64(g.cem_loss_weight));
        put("reward_scale", fmt_f64(g.reward_scale));
        put("warmup_steps", g.warmup_steps.to_string());
        put("use_target_regularization", f.use_target_regularization.to_string());
        put("use_maxmin", f.use_maxmin.to_string());
        put("use_cem_loss", f.use_cem_loss.to_string());
        put("use_q_loss", f.use_q_loss.to_string());
        put("use_target_network", f.use_target_network.to_string());
        put("target_network_tau", fmt_f64(f.target_network_tau));
        out
    }
}

/// Shortest representation that parses back to the same bits.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub const CONFIG_KEYS: &[&str] = &[
    "env",
    "total_steps",
    "eval_interval",
    "eval_episodes",
    "seed",
    "output_dir",
    "buffer_size",
    "hidden",
    "gamma",
    "batch_size",
    "lr_critic",
    "lr_actor",
    "critic_iters",
    "alpha_start",
    "alpha_end",
    "n_pop",
    "n_elite",
    "n_cem",
    "cem_running_best",
    "cem_loss_weight",
    "reward_scale",
    "warmup_steps",
    "use_target_regularization",
    "use_maxmin",
    "use_cem_loss",
    "use_q_loss",
    "use_target_network",
    "target_network_tau",
];

pub const DEFAULT_ENV: &str = crate::envs::PENDULUM;

/// One `key = value` assignment and where it came from.
#[derive(Clone, Debug)]
struct Entry {
    key: String,
    value: String,
    origin: String,
}

fn parse_lines(text: &str, source: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{source}:{}: expected `key = value`, got {raw:?}", i + 1)))?;
        entries.push(Entry {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            origin: format!("{source}:{}", i + 1),
        });
    }
    Ok(entries)
}

/// Parses `--key=value` (or `key=value`) command-line overrides.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    args.iter()
        .map(|a| {
            let body = a.strip_prefix("--").unwrap_or(a);
            body.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("override {a:?} is not of the form --key=value")))
        })
        .collect()
}

fn parse_value<T: FromStr>(e: &Entry, what: &str) -> Result<T> {
    e.value.parse().map_err(|_| {
        Error::Config(format!(
            "{}: `{}` expects {what}, got {:?}",
            e.origin, e.key, e.value
        ))
    })
}

/// Reads a flat `key = value` file (`#` starts a comment) and applies overrides on top.
///
/// `path = None` starts from the defaults. The environment is resolved first so
/// that env-dependent defaults (`cem_loss_weight`) are filled in before explicit keys.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut entries = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            parse_lines(&text, &p.display().to_string())?
        }
        None => Vec::new(),
    };
    entries.extend(overrides.iter().map(|(k, v)| Entry {
        key: k.clone(),
        value: v.clone(),
        origin: format!("--{k}"),
    }));
    for e in &entries {
        if !CONFIG_KEYS.contains(&e.key.as_str()) {
            return Err(Error::Config(format!(
                "{}: unknown key `{}`; valid keys: {}",
                e.origin,
                e.key,
                CONFIG_KEYS.join(", ")
            )));
        }
    }

    let env = entries
        .iter()
        .rev()
        .find(|e| e.key == "env")
        .map(|e| e.value.clone())
        .unwrap_or_else(|| DEFAULT_ENV.to_string());
    let mut cfg = RunConfig::for_env(&env)?;
    for e in &entries {
        apply(&mut cfg, e)?;
    }
    cfg.grac.total_steps = cfg.total_steps;
    cfg.validate()?;
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, e: &Entry) -> Result<()> {
    const INT: &str = "a non-negative integer";
    const FLOAT: &str = "a number";
    const BOOL: &str = "true or false";
    let g = &mut cfg.grac;
    match e.key.as_str() {
        "env" => cfg.env = e.value.clone(),
        "total_steps" => cfg.total_steps = parse_value(e, INT)?,
        "eval_interval" => cfg.eval_interval = parse_value(e, INT)?,
        "eval_episodes" => cfg.eval_episodes = parse_value(e, INT)?,
        "seed" => cfg.seed = parse_value(e, INT)?,
        "output_dir" => cfg.output_dir = PathBuf::from(&e.value),
        "buffer_size" => cfg.buffer_size = parse_value(e, INT)?,
        "hidden" => cfg.hidden = parse_value(e, INT)?,
        "gamma" => g.gamma = parse_value(e, FLOAT)?,
        "batch_size" => g.batch_size = parse_value(e, INT)?,
        "lr_critic" => g.lr_critic = parse_value(e, FLOAT)?,
        "lr_actor" => g.lr_actor = parse_value(e, FLOAT)?,
        "critic_iters" => g.critic_iters = parse_value(e, INT)?,
        "alpha_start" => g.alpha_start = parse_value(e, FLOAT)?,
        "alpha_end" => g.alpha_end = parse_value(e, FLOAT)?,
        "n_pop" => g.cem.n_pop = parse_value(e, INT)?,
        "n_elite" => g.cem.n_elite = parse_value(e, INT)?,
        "n_cem" => g.cem.n_iter = parse_value(e, INT)?,
        "cem_running_best" => g.cem.track_running_best = parse_value(e, BOOL)?,
        "cem_loss_weight" => g.cem_loss_weight = parse_value(e, FLOAT)?,
        "reward_scale" => g.reward_scale = parse_value(e, FLOAT)?,
        "warmup_steps" => g.warmup_steps = parse_value(e, INT)?,
        "use_target_regularization" => g.flags.use_target_regularization = parse_value(e, BOOL)?,
        "use_maxmin" => g.flags.use_maxmin = parse_value(e, BOOL)?,
        "use_cem_loss" => g.flags.use_cem_loss = parse_value(e, BOOL)?,
        "use_q_loss" => g.flags.use_q_loss = parse_value(e, BOOL)?,
        "use_target_network" => g.flags.use_target_network = parse_value(e, BOOL)?,
        "target_network_tau" => g.flags.target_network_tau = parse_value(e, FLOAT)?,
        other => unreachable!("key {other} passed the whitelist"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_gives_defaults() {
        let f = file("");
        let cfg = parse_config(Some(f.path()), &[]).unwrap();
        let g = &cfg.grac;
        assert_eq!(g.gamma, 0.99);
        assert_eq!(g.batch_size, 256);
        assert_eq!(g.lr_critic, 3e-4);
        assert_eq!(g.lr_actor, 2e-4);
        assert_eq!(g.cem.n_iter, 2);
        assert_eq!(g.cem.n_pop, 256);
        assert_eq!(g.cem.n_elite, 5);
        assert_eq!(cfg.buffer_size, 1_000_000);
        assert_eq!(cfg.eval_episodes, 10);
    }

    #[test]
    fn overrides_win() {
        let f = file("gamma = 0.99\n");
        let ov = parse_overrides(&["--gamma=0.5".to_string()]).unwrap();
        assert_eq!(parse_config(Some(f.path()), &ov).unwrap().grac.gamma, 0.5);
    }

    #[test]
    fn cem_loss_weight_follows_env() {
        let ov = |env: &str| vec![("env".to_string(), env.to_string())];
        assert_eq!(parse_config(None, &ov("double-integrator")).unwrap().grac.cem_loss_weight, 1.0);
        let f = file("cem_loss_weight = 0.25\nenv = pendulum\n");
        assert_eq!(parse_config(Some(f.path()), &[]).unwrap().grac.cem_loss_weight, 0.25);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let f = file("gama = 0.5\n");
        let msg = parse_config(Some(f.path()), &[]).unwrap_err().to_string();
        assert!(msg.contains("gama") && msg.contains("lr_critic"), "{msg}");
    }

    #[test]
    fn type_mismatch_reports_line() {
        let f = file("# comment\n\nbatch_size = lots\n");
        let msg = parse_config(Some(f.path()), &[]).unwrap_err().to_string();
        assert!(msg.contains(":3:"), "{msg}");
    }

    #[test]
    fn comments_and_whitespace() {
        let f = file("  seed=7   # trailing\n#gamma = 0.1\n");
        let cfg = parse_config(Some(f.path()), &[]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.grac.gamma, 0.99);
    }

    #[test]
    fn snapshot_reparses_identically() {
        let ov = parse_overrides(&[
            "--env=quadratic-bandit".into(),
            "--total_steps=5000".into(),
            "--lr_actor=0.000123".into(),
            "--use_maxmin=false".into(),
        ])
        .unwrap();
        let cfg = parse_config(None, &ov).unwrap();
        let f = file(&cfg.to_config_text());
        assert_eq!(parse_config(Some(f.path()), &[]).unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid_run_settings() {
        let bad = |k: &str, v: &str| parse_config(None, &[(k.to_string(), v.to_string())]).is_err();
        assert!(bad("eval_episodes", "0"));
        assert!(bad("env", "cartpole"));
        assert!(bad("n_elite", "1000"));
        let too_long = vec![
            ("total_steps".to_string(), "10".to_string()),
            ("eval_interval".to_string(), "20".to_string()),
        ];
        assert!(parse_config(None, &too_long).is_err());
    }
}
