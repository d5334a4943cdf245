//! Evaluation report: full JSON, flat metric CSV, and sentiment plot data.

use std::io::Write;

use serde::Serialize;

use super::{BoldReport, CrowsReport, FluencyReport, StereoSetReport};
use crate::backend::BackendDescriptor;
use crate::calibrator::CalibrationParams;
use crate::decoder::{DecodeSession, PrefixMode, Refresh, Sampling};
use crate::error::{CafieError, Result};

/// The settings that produced a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub backend: BackendDescriptor,
    pub params: CalibrationParams,
    pub sampling: Sampling,
    pub seed: u64,
    pub max_tokens: usize,
    pub prefix_mode: PrefixMode,
    pub refresh: Refresh,
}

impl ConfigEcho {
    pub fn of(session: &DecodeSession) -> Self {
        Self {
            backend: session.descriptor(),
            params: session.params.clone(),
            sampling: session.sampling,
            seed: session.seed,
            max_tokens: session.max_tokens,
            prefix_mode: session.prefix_mode,
            refresh: session.refresh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: ConfigEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stereoset: Option<StereoSetReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crows: Option<CrowsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bold: Option<BoldReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fluency: Option<FluencyReport>,
}

/// Keeps the underlying I/O error (and its kind) when a CSV write fails.
pub(crate) fn csv_err(e: csv::Error) -> CafieError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CafieError::Io(io),
        kind => CafieError::Io(std::io::Error::other(format!("{kind:?}"))),
    }
}

impl EvalReport {
    pub fn new(session: &DecodeSession) -> Self {
        Self {
            config: ConfigEcho::of(session),
            stereoset: None,
            crows: None,
            bold: None,
            fluency: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `(metric, value)` pairs, dotted names, in a fixed order.
    pub fn flat_metrics(&self) -> Vec<(String, f64)> {
        let mut m = Vec::new();
        if let Some(s) = &self.stereoset {
            m.push(("stereoset.ss".into(), s.ss));
            m.push(("stereoset.lm".into(), s.lm));
            m.push(("stereoset.icat".into(), s.icat));
            for (attr, ss) in &s.ss_by_attribute {
                m.push((format!("stereoset.ss.{attr}"), *ss));
            }
        }
        if let Some(c) = &self.crows {
            let mut push = |prefix: String, sc: &super::CrowsScores| {
                m.push((format!("{prefix}.overall"), sc.overall));
                if let Some(v) = sc.stereo {
                    m.push((format!("{prefix}.stereo"), v));
                }
                if let Some(v) = sc.anti {
                    m.push((format!("{prefix}.anti"), v));
                }
            };
            push("crows".into(), &c.total);
            for (attr, sc) in &c.by_attribute {
                push(format!("crows.{attr}"), sc);
            }
        }
        if let Some(b) = &self.bold {
            for g in &b.groups {
                m.push((format!("bold.mu.{}.{}", g.domain, g.group), g.mu));
            }
            for d in &b.domains {
                m.push((format!("bold.sigma.{}", d.domain), d.sigma));
            }
        }
        if let Some(f) = &self.fluency {
            m.push(("fluency.perplexity".into(), f.perplexity));
        }
        m
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"]).map_err(csv_err)?;
        for (k, v) in self.flat_metrics() {
            w.write_record([k, v.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl BoldReport {
    /// Fractions of negative/neutral/positive continuations per group.
    pub fn write_plot_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["domain", "group", "negative", "neutral", "positive"])
            .map_err(csv_err)?;
        for g in &self.groups {
            w.write_record([
                g.domain.clone(),
                g.group.clone(),
                g.fractions.negative.to_string(),
                g.fractions.neutral.to_string(),
                g.fractions.positive.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}
