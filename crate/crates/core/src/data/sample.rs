use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Severity scoring system of a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreKind {
    /// Geographic extent, 0-4 per lung.
    #[serde(rename = "GE")]
    Ge,
    /// Lung opacity, 0-4 per lung.
    #[serde(rename = "LO")]
    Lo,
    #[serde(rename = "Brixia")]
    Brixia,
    #[serde(rename = "COVID")]
    Covid,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl ScoreKind {
    /// Inclusive range of the total score.
    pub fn range(self) -> (f64, f64) {
        match self {
            ScoreKind::Ge | ScoreKind::Lo | ScoreKind::Synthetic => (0.0, 8.0),
            ScoreKind::Brixia => (0.0, 18.0),
            ScoreKind::Covid => (0.0, 6.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Ge => "GE",
            ScoreKind::Lo => "LO",
            ScoreKind::Brixia => "Brixia",
            ScoreKind::Covid => "COVID",
            ScoreKind::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "GE" => Ok(ScoreKind::Ge),
            "LO" => Ok(ScoreKind::Lo),
            "Brixia" => Ok(ScoreKind::Brixia),
            "COVID" => Ok(ScoreKind::Covid),
            "synthetic" => Ok(ScoreKind::Synthetic),
            other => Err(format!("unknown score kind {other:?}")),
        }
    }
}

/// Tolerance on `left + right == total` for labels read from disk.
pub const LUNG_SUM_TOLERANCE: f64 = 1e-6;

/// One radiograph with its global and optional per-lung severity scores.
#[derive(Clone, Debug, PartialEq)]
pub struct CxrSample {
    pub image: Image,
    pub score_total: f64,
    pub score_left: Option<f64>,
    pub score_right: Option<f64>,
    pub kind: ScoreKind,
    pub source_id: String,
}

impl CxrSample {
    /// Sample with per-lung scores; the total is their sum.
    pub fn with_lungs(
        image: Image,
        left: f64,
        right: f64,
        kind: ScoreKind,
        source_id: impl Into<String>,
    ) -> Self {
        CxrSample {
            image,
            score_total: left + right,
            score_left: Some(left),
            score_right: Some(right),
            kind,
            source_id: source_id.into(),
        }
    }

    pub fn total_only(image: Image, total: f64, kind: ScoreKind, source_id: impl Into<String>) -> Self {
        CxrSample {
            image,
            score_total: total,
            score_left: None,
            score_right: None,
            kind,
            source_id: source_id.into(),
        }
    }

    pub fn lungs(&self) -> Option<(f64, f64)> {
        self.score_left.zip(self.score_right)
    }

    /// Check score ranges and per-lung consistency.
    pub fn validate_scores(&self) -> Result<()> {
        check_scores(
            self.score_total,
            self.score_left,
            self.score_right,
            self.kind,
            LUNG_SUM_TOLERANCE,
        )
        .map_err(|m| Error::ingest(None, format!("{}: {m}", self.source_id)))
    }
}

pub(crate) fn check_scores(
    total: f64,
    left: Option<f64>,
    right: Option<f64>,
    kind: ScoreKind,
    tol: f64,
) -> std::result::Result<(), String> {
    let (lo, hi) = kind.range();
    if !total.is_finite() || total < lo || total > hi {
        return Err(format!("score {total} outside {kind} range [{lo}, {hi}]"));
    }
    for (side, v) in [("left", left), ("right", right)] {
        if let Some(v) = v {
            if !v.is_finite() || v < 0.0 || v > hi {
                return Err(format!("{side} score {v} outside [0, {hi}]"));
            }
        }
    }
    if let (Some(l), Some(r)) = (left, right) {
        if (l + r - total).abs() > tol {
            return Err(format!("left {l} + right {r} != total {total}"));
        }
    }
    Ok(())
}
