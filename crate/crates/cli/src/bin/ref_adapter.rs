// SPDX-License-Identifier: Apache-2.0

//! Serves the built-in reference model over the adapter protocol: one JSON
//! request per line on stdin, one response per line on stdout.

use std::io::{BufRead, Write};

use clap::Parser;
use orbit_core::model::{serve_request, AdapterRequest, AdapterResponse, ReferenceModel, ReferenceModelConfig};

#[derive(Parser, Debug)]
#[command(
    name = "orbit-ref-adapter",
    version,
    about = "Reference model behind the adapter protocol"
)]
struct Cli {
    /// Weight seed; the default matches the built-in model.
    #[arg(long)]
    seed: Option<u64>,
    /// Serve the flip-equivariant configuration.
    #[arg(long)]
    flip_robust: bool,
}

/// A line that does not parse still gets an answer, under the id it carried
/// if any.
fn malformed(line: &str, err: serde_json::Error) -> AdapterResponse {
    let id = serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("id").and_then(|id| id.as_u64()))
        .unwrap_or(0);
    AdapterResponse {
        id,
        labels: None,
        values: None,
        error: Some(format!("bad request: {err}")),
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut config = if cli.flip_robust {
        ReferenceModelConfig::flip_robust()
    } else {
        ReferenceModelConfig::default()
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    let model = ReferenceModel::new(config)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in std::io::stdin().lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<AdapterRequest>(&line) {
            Ok(request) => serve_request(&model, &request),
            Err(e) => malformed(&line, e),
        };
        serde_json::to_writer(&mut out, &response)?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}
