//! One-parameter grid sweeps over a benchmark.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use super::report::csv_err;
use super::{eval_crows, eval_stereoset, CrowsPair, StereoSetInstance};
use crate::decoder::DecodeSession;
use crate::error::{CafieError, Result};

const MAX_GRID_POINTS: usize = 100_000;
/// Grid values are rounded to this many decimals to undo accumulation noise.
const GRID_DECIMALS: i32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Lambda,
    Alpha,
    Temperature,
}

impl FromStr for SweepParam {
    type Err = CafieError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lambda" => Ok(SweepParam::Lambda),
            "alpha" => Ok(SweepParam::Alpha),
            "temperature" | "t" => Ok(SweepParam::Temperature),
            _ => Err(CafieError::param(
                "param",
                format!("`{s}` is not one of: lambda, alpha, temperature"),
            )),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Alpha => "alpha",
            SweepParam::Temperature => "temperature",
        })
    }
}

/// `start:stop:step` (inclusive, rounded to the nearest whole step count)
/// or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |m: String| CafieError::param("grid", m);
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(format!("`{s}` is not a finite number")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts[..] {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) {
                return Err(bad(format!("step must be > 0, got {step}")));
            }
            if stop < start {
                return Err(bad(format!("stop {stop} is below start {start}")));
            }
            let steps = ((stop - start) / step).round();
            if steps >= MAX_GRID_POINTS as f64 {
                return Err(bad(format!("more than {MAX_GRID_POINTS} points")));
            }
            let scale = 10f64.powi(GRID_DECIMALS);
            (0..=steps as usize)
                .map(|i| ((start + i as f64 * step) * scale).round() / scale)
                .collect()
        }
        [list] => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(num)
            .collect::<Result<Vec<_>>>()?,
        _ => {
            return Err(bad(format!(
                "`{spec}` is neither start:stop:step nor a comma list"
            )))
        }
    };
    if values.is_empty() {
        return Err(bad("empty grid".into()));
    }
    Ok(values)
}

/// Data evaluated at every grid point.
#[derive(Debug, Clone, Default)]
pub struct SweepTarget {
    pub stereoset: Vec<StereoSetInstance>,
    pub crows: Vec<CrowsPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub ss: Option<f64>,
    pub lm: Option<f64>,
    pub icat: Option<f64>,
    pub crows: Option<f64>,
}

impl SweepRow {
    pub const CSV_HEADER: [&'static str; 6] = ["param", "value", "ss", "lm", "icat", "crows"];

    pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in rows {
            w.write_record([
                r.param.to_string(),
                r.value.to_string(),
                opt(r.ss),
                opt(r.lm),
                opt(r.icat),
                opt(r.crows),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates `target` once per grid value, all other settings taken from `template`.
pub fn sweep(
    param: SweepParam,
    grid: &[f64],
    target: &SweepTarget,
    template: &DecodeSession,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(CafieError::param("grid", "empty grid"));
    }
    if target.stereoset.is_empty() && target.crows.is_empty() {
        return Err(CafieError::EmptyDataset(
            "sweep needs stereoset or crows data".into(),
        ));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut session = template.clone();
        match param {
            SweepParam::Lambda => session.params.lambda = value,
            SweepParam::Alpha => session.params.alpha = value,
            SweepParam::Temperature => session.params.temperature = value,
        }
        session.validate()?;
        let ss = if target.stereoset.is_empty() {
            None
        } else {
            Some(eval_stereoset(&target.stereoset, &session)?)
        };
        let crows = if target.crows.is_empty() {
            None
        } else {
            Some(eval_crows(&target.crows, &session)?.total.overall)
        };
        rows.push(SweepRow {
            param,
            value,
            ss: ss.as_ref().map(|r| r.ss),
            lm: ss.as_ref().map(|r| r.lm),
            icat: ss.as_ref().map(|r| r.icat),
            crows,
        });
    }
    Ok(rows)
}
