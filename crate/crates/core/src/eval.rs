//! Scale-ratio metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn scale_ratio(s_est: f64, s_gt: f64) -> Result<f64> {
    if !(s_gt > 0.0 && s_gt.is_finite()) {
        return Err(Error::Domain(format!("ground-truth scale must be positive, got {s_gt}")));
    }
    Ok(s_est / s_gt)
}

/// Mean of `|1 - r|` over the ratios.
pub fn average_error(ratios: &[f64]) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::Domain("average error of an empty list".into()));
    }
    Ok(ratios.iter().map(|r| (1.0 - r).abs()).sum::<f64>() / ratios.len() as f64)
}

/// Rounds to the three decimals used in printed tables.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    Optim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub label: String,
    pub stage: Stage,
    pub s_est: f64,
    pub s_gt: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub entries: Vec<RatioEntry>,
    pub initial_error: Option<f64>,
    pub optim_error: Option<f64>,
    pub count: usize,
}

impl ScaleReport {
    pub fn from_entries(entries: Vec<RatioEntry>) -> Result<Self> {
        let stage_error = |stage| {
            let r: Vec<f64> = entries.iter().filter(|e| e.stage == stage).map(|e| e.ratio).collect();
            average_error(&r).ok()
        };
        let (initial_error, optim_error) = (stage_error(Stage::Initial), stage_error(Stage::Optim));
        let count = entries.iter().filter(|e| e.stage == Stage::Optim).count();
        Ok(ScaleReport {
            entries,
            initial_error,
            optim_error,
            count,
        })
    }

    pub fn push(&mut self, label: impl Into<String>, stage: Stage, s_est: f64, s_gt: f64) -> Result<()> {
        let ratio = scale_ratio(s_est, s_gt)?;
        self.entries.push(RatioEntry {
            label: label.into(),
            stage,
            s_est,
            s_gt,
            ratio,
        });
        *self = ScaleReport::from_entries(std::mem::take(&mut self.entries))?;
        Ok(())
    }

    /// Plain-text table with ratios rounded to three decimals.
    pub fn table(&self) -> String {
        let mut out = String::from("label\tstage\tr_s\n");
        for e in &self.entries {
            let stage = match e.stage {
                Stage::Initial => "initial",
                Stage::Optim => "optim",
            };
            out.push_str(&format!("{}\t{stage}\t{:.3}\n", e.label, e.ratio));
        }
        for (name, v) in [("initial", self.initial_error), ("optim", self.optim_error)] {
            if let Some(v) = v {
                out.push_str(&format!("e_s\t{name}\t{:.3}\n", v));
            }
        }
        out
    }
}

impl Default for ScaleReport {
    fn default() -> Self {
        ScaleReport {
            entries: Vec::new(),
            initial_error: None,
            optim_error: None,
            count: 0,
        }
    }
}
