use std::path::PathBuf;

use anyhow::{anyhow, Context};
use ctxrec_core::data::{generate_synthetic, write_corpus, SyntheticSpec};

use super::{usage, CliError};

pub struct GenerateArgs {
    pub spec: PathBuf,
    pub out: PathBuf,
    /// Also print the closed-form best achievable Recall@K of the spec.
    pub bayes_k: Option<usize>,
}

pub fn run(args: &GenerateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("cannot read {}", args.spec.display()))
        .map_err(CliError::Usage)?;
    let spec: SyntheticSpec = serde_json::from_str(&text)
        .with_context(|| format!("invalid synthetic spec {}", args.spec.display()))
        .map_err(CliError::Usage)?;
    let corpus = generate_synthetic(&spec).map_err(usage)?;
    write_corpus(&args.out, &corpus).map_err(|e| CliError::Other(anyhow!("{e}")))?;
    println!(
        "wrote {} sessions ({} events, vocab {}) to {}",
        corpus.sessions.len(),
        corpus.num_events(),
        corpus.vocab.len(),
        args.out.display()
    );
    if let Some(k) = args.bayes_k {
        println!("best achievable Recall@{k} under this spec: {:.4}", spec.bayes_recall_at_k(k));
    }
    Ok(())
}
