use std::fmt::Write as _;
use std::fs;

use crate::error::Result;
use crate::grac::AblationFlags;
use crate::harness::config::RunConfig;
use crate::harness::run::{run_training, RunSummary};

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub flags: AblationFlags,
}

/// The seven variants; tau is taken from `base`.
pub fn variants(base: &AblationFlags) -> Vec<Variant> {
    let grac = AblationFlags {
        use_target_regularization: true,
        use_maxmin: true,
        use_cem_loss: true,
        use_q_loss: true,
        use_target_network: false,
        target_network_tau: base.target_network_tau,
    };
    let ddpg = AblationFlags {
        use_target_regularization: false,
        use_maxmin: false,
        use_cem_loss: false,
        use_target_network: true,
        ..grac
    };
    vec![
        Variant { name: "grac", flags: grac },
        Variant { name: "grac-clipped", flags: AblationFlags { use_maxmin: false, ..grac } },
        Variant { name: "grac-qloss-only", flags: AblationFlags { use_cem_loss: false, ..grac } },
        Variant { name: "grac-cemloss-only", flags: AblationFlags { use_q_loss: false, ..grac } },
        Variant { name: "ddpg-style", flags: ddpg },
        Variant { name: "no-target-no-reg", flags: AblationFlags { use_target_network: false, ..ddpg } },
        Variant {
            name: "no-target-with-reg",
            flags: AblationFlags { use_target_network: false, use_target_regularization: true, ..ddpg },
        },
    ]
}

pub struct VariantResult {
    pub variant: Variant,
    pub outcome: Result<RunSummary>,
    /// Final mean return relative to GRAC; `None` when either run failed.
    pub normalized: Option<f64>,
}

/// `variant / grac` for positive GRAC returns and `grac / variant` for negative ones,
/// so a value above 1 always means "better than GRAC".
pub fn normalize_to_reference(value: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        value / reference
    } else if reference < 0.0 {
        reference / value
    } else {
        f64::NAN
    }
}

/// Runs every variant into `base.output_dir/<name>` and writes a summary table there.
pub fn ablation_suite(base: &RunConfig) -> Result<Vec<VariantResult>> {
    base.validate()?;
    fs::create_dir_all(&base.output_dir)?;
    let mut results: Vec<VariantResult> = variants(&base.grac.flags)
        .into_iter()
        .map(|variant| {
            let mut cfg = base.clone();
            cfg.grac.flags = variant.flags;
            cfg.output_dir = base.output_dir.join(variant.name);
            let outcome = run_training(&cfg, |_| {});
            VariantResult { variant, outcome, normalized: None }
        })
        .collect();

    let reference = results[0].outcome.as_ref().ok().and_then(RunSummary::final_return);
    for r in &mut results {
        let value = r.outcome.as_ref().ok().and_then(RunSummary::final_return);
        r.normalized = reference.zip(value).map(|(g, v)| normalize_to_reference(v, g));
    }

    let mut table = String::from("variant,final_return_mean,normalized_to_grac,status\n");
    for r in &results {
        let value = r.outcome.as_ref().ok().and_then(RunSummary::final_return);
        let status = match &r.outcome {
            Ok(_) => "ok".to_string(),
            Err(e) => e.to_string().replace([',', '\n'], " "),
        };
        let _ = writeln!(
            table,
            "{},{},{},{}",
            r.variant.name,
            value.unwrap_or(f64::NAN),
            r.normalized.unwrap_or(f64::NAN),
            status
        );
    }
    fs::write(base.output_dir.join(SUMMARY_FILE), table)?;
    Ok(results)
}
