use std::path::PathBuf;

use anyhow::{anyhow, Context};
use ctxrec_core::checkpoint::{load_checkpoint, AnyCheckpoint, Checkpoint};
use ctxrec_core::data::Session;
use ctxrec_core::eval::{evaluate, render_report, render_uplift, uplift, EvalOptions, EvalReport};
use ctxrec_core::kernel::Real;

use super::{usage, CliError};
use crate::config::DataFormat;

pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub corpus: Option<PathBuf>,
    pub clicks: Option<PathBuf>,
    pub buys: Option<PathBuf>,
    pub max_len: usize,
    pub opts: EvalOptions,
    pub baseline: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub plot_data: Option<PathBuf>,
}

pub fn run(args: &EvaluateArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint).map_err(usage)?;
    let format = if args.corpus.is_some() {
        DataFormat::Canonical
    } else {
        DataFormat::Yoochoose
    };
    let sessions = super::load_for_evaluation(
        format,
        args.corpus.as_deref(),
        args.clicks.as_deref(),
        args.buys.as_deref(),
        args.max_len,
        ckpt.vocab(),
        ckpt.schema().event_types(),
    )?;
    if sessions.is_empty() {
        return Err(usage(anyhow!("evaluation corpus has no usable sessions")));
    }

    let report = match &ckpt {
        AnyCheckpoint::F64(c) => score(c, &sessions, &args.opts)?,
        AnyCheckpoint::F32(c) => score(c, &sessions, &args.opts)?,
    };
    print!("{}", render_report(&report));

    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report).unwrap();
        std::fs::write(out, json)
            .with_context(|| format!("cannot write {}", out.display()))
            .map_err(CliError::Other)?;
        println!("\nreport written to {}", out.display());
    }
    if let Some(dir) = &args.plot_data {
        ctxrec_core::eval::write_plot_data(dir, &report)
            .context("writing plot data")
            .map_err(CliError::Other)?;
        println!("plot data written to {}", dir.display());
    }
    if let Some(baseline_path) = &args.baseline {
        let text = std::fs::read_to_string(baseline_path)
            .with_context(|| format!("cannot read {}", baseline_path.display()))
            .map_err(CliError::Usage)?;
        let baseline: EvalReport = serde_json::from_str(&text)
            .with_context(|| format!("invalid baseline report {}", baseline_path.display()))
            .map_err(CliError::Usage)?;
        let up = uplift(&report, &baseline).map_err(usage)?;
        println!();
        print!("{}", render_uplift(&up));
    }
    Ok(())
}

fn score<S: Real>(
    ckpt: &Checkpoint<S>,
    sessions: &[Session],
    opts: &EvalOptions,
) -> Result<EvalReport, CliError> {
    let (_, report) = evaluate(
        sessions,
        &ckpt.params,
        &ckpt.model,
        &ckpt.schema,
        ckpt.schema.event_types(),
        opts,
    )
    .map_err(|e| CliError::Other(anyhow!("{e}")))?;
    Ok(report)
}
