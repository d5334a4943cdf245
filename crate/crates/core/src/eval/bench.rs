//! Decoding cost: backend calls and throughput for base versus calibrated runs.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use super::report::csv_err;
use crate::decoder::DecodeSession;
use crate::error::{CafieError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub config: String,
    pub prompt: String,
    pub counterfactuals: usize,
    pub steps: usize,
    pub backend_calls: usize,
    pub calls_per_token: f64,
    pub wall_secs: f64,
    pub steps_per_sec: f64,
}

impl BenchRow {
    pub const CSV_HEADER: [&'static str; 8] = [
        "config",
        "prompt",
        "counterfactuals",
        "steps",
        "backend_calls",
        "calls_per_token",
        "wall_secs",
        "steps_per_sec",
    ];

    pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER).map_err(csv_err)?;
        for r in rows {
            w.write_record([
                r.config.clone(),
                r.prompt.clone(),
                r.counterfactuals.to_string(),
                r.steps.to_string(),
                r.backend_calls.to_string(),
                r.calls_per_token.to_string(),
                r.wall_secs.to_string(),
                r.steps_per_sec.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Generates every prompt once per counterfactual cap in `caps` (0 is the
/// uncalibrated base). Call counts are deterministic; timings are not.
pub fn bench(
    prompts: &[String],
    template: &DecodeSession,
    caps: &[usize],
) -> Result<Vec<BenchRow>> {
    if prompts.is_empty() {
        return Err(CafieError::EmptyDataset(
            "bench needs at least one prompt".into(),
        ));
    }
    let mut rows = Vec::new();
    for &cap in caps {
        let mut session = template.clone();
        session.params.max_counterfactuals = cap;
        let config = if cap == 0 {
            "base".to_string()
        } else {
            format!("cafie_r{cap}")
        };
        for prompt in prompts {
            let start = Instant::now();
            let g = session.generate(prompt)?;
            let wall_secs = start.elapsed().as_secs_f64();
            let steps = g.trace.steps.len();
            rows.push(BenchRow {
                config: config.clone(),
                prompt: prompt.clone(),
                counterfactuals: g.trace.counterfactuals,
                steps,
                backend_calls: g.trace.backend_call_count,
                calls_per_token: g.trace.backend_call_count as f64 / steps as f64,
                wall_secs,
                steps_per_sec: if wall_secs > 0.0 {
                    steps as f64 / wall_secs
                } else {
                    f64::INFINITY
                },
            });
        }
    }
    Ok(rows)
}
