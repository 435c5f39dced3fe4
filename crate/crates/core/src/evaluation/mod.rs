//! Regression metrics and evaluation reports.

mod metrics;
mod plot;

use serde::{Deserialize, Serialize};

pub use metrics::{cmc, cmc_thresholds, histogram, mae, pearson, CmcPoint, HistBin};
pub use plot::{cmc_svg, histogram_svg, scatter_svg};

use crate::data::CxrSample;
use crate::error::{Error, Result};
use crate::model::{predict_chunked, ScorePrediction, VitWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_step")]
    pub cmc_step: f64,
    #[serde(default = "d_cmc_max")]
    pub cmc_max: f64,
    #[serde(default = "d_bins")]
    pub histogram_bins: usize,
}

fn d_batch() -> usize {
    64
}
fn d_step() -> f64 {
    0.25
}
fn d_cmc_max() -> f64 {
    8.0
}
fn d_bins() -> usize {
    16
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            batch_size: d_batch(),
            cmc_step: d_step(),
            cmc_max: d_cmc_max(),
            histogram_bins: d_bins(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub source_id: String,
    pub y_true: f64,
    pub p_total: f64,
    pub p_left: f64,
    pub p_right: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mae: f64,
    /// `None` when either side has zero variance.
    pub pearson: Option<f64>,
    pub cmc: Vec<CmcPoint>,
    pub histogram: Vec<HistBin>,
    pub predictions: Vec<PredictionRow>,
}

impl EvalReport {
    pub fn errors(&self) -> Vec<f64> {
        self.predictions.iter().map(|r| (r.p_total - r.y_true).abs()).collect()
    }

    /// CMC fraction at the largest grid threshold not above `t`.
    pub fn cmc_at(&self, t: f64) -> Option<f64> {
        self.cmc.iter().rev().find(|p| p.threshold <= t).map(|p| p.fraction)
    }

    pub fn predictions_csv(&self) -> String {
        let mut s = String::from("source_id,y_true,p_total,p_left,p_right\n");
        for r in &self.predictions {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&r.source_id),
                r.y_true,
                r.p_total,
                r.p_left,
                r.p_right
            ));
        }
        s
    }

    pub fn cmc_csv(&self) -> String {
        let mut s = String::from("threshold,fraction\n");
        for p in &self.cmc {
            s.push_str(&format!("{},{}\n", p.threshold, p.fraction));
        }
        s
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,count\n");
        for b in &self.histogram {
            s.push_str(&format!("{},{},{}\n", b.low, b.high, b.count));
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Assemble a report from predictions aligned with `samples`.
pub fn report_from_predictions(
    samples: &[CxrSample],
    preds: &[ScorePrediction],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Argument("test set is empty".into()));
    }
    if samples.len() != preds.len() {
        return Err(Error::Argument(format!(
            "{} samples but {} predictions",
            samples.len(),
            preds.len()
        )));
    }
    let p: Vec<f64> = preds.iter().map(|p| p.p_total).collect();
    let t: Vec<f64> = samples.iter().map(|s| s.score_total).collect();
    let errors: Vec<f64> = p.iter().zip(&t).map(|(p, t)| (p - t).abs()).collect();
    let grid = cmc_thresholds(cfg.cmc_step, cfg.cmc_max, &errors);
    Ok(EvalReport {
        n: samples.len(),
        mae: mae(&p, &t)?,
        pearson: pearson(&p, &t).ok(),
        cmc: cmc(&errors, &grid)?,
        histogram: histogram(&errors, cfg.histogram_bins)?,
        predictions: samples
            .iter()
            .zip(preds)
            .map(|(s, p)| PredictionRow {
                source_id: s.source_id.clone(),
                y_true: s.score_total,
                p_total: p.p_total,
                p_left: p.p_left,
                p_right: p.p_right,
            })
            .collect(),
    })
}

/// Score a preprocessed test set and assemble every metric.
pub fn evaluate(
    weights: &VitWeights<f32>,
    test_set: &[CxrSample],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::Argument("test set is empty".into()));
    }
    if !(cfg.cmc_step > 0.0) || cfg.batch_size == 0 {
        return Err(Error::Config("cmc_step and batch_size must be positive".into()));
    }
    let images: Vec<_> = test_set.iter().map(|s| &s.image).collect();
    let preds = predict_chunked(weights, &images, cfg.batch_size)?;
    report_from_predictions(test_set, &preds, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ScoreKind;
    use crate::image::Image;

    fn samples(scores: &[f64]) -> Vec<CxrSample> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                CxrSample::total_only(Image::filled(2, 2, 1, 0.0), y, ScoreKind::Ge, format!("s{i}"))
            })
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let s = samples(&[1.0, 3.0, 6.0]);
        let preds: Vec<_> = [1.0, 3.0, 6.0]
            .iter()
            .map(|&y| ScorePrediction::new(y * 0.25, y * 0.75))
            .collect();
        let r = report_from_predictions(&s, &preds, &EvalConfig::default()).unwrap();
        assert_eq!(r.mae, 0.0);
        assert!((r.pearson.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.cmc.iter().all(|p| p.fraction == 1.0));
        for row in &r.predictions {
            assert_eq!(row.p_left + row.p_right, row.p_total);
        }
        assert_eq!(r.histogram.iter().map(|b| b.count).sum::<usize>(), 3);
    }

    #[test]
    fn constant_truth_has_no_correlation() {
        let s = samples(&[2.0, 2.0]);
        let preds = vec![ScorePrediction::new(1.0, 1.0), ScorePrediction::new(0.5, 1.0)];
        let r = report_from_predictions(&s, &preds, &EvalConfig::default()).unwrap();
        assert_eq!(r.pearson, None);
        assert_eq!(r.mae, 0.25);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"pearson\":null"));
    }

    #[test]
    fn empty_set_rejected() {
        assert!(matches!(
            report_from_predictions(&[], &[], &EvalConfig::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn csv_exports() {
        let s = samples(&[1.0, 2.0]);
        let preds = vec![ScorePrediction::new(0.5, 1.0), ScorePrediction::new(1.0, 1.5)];
        let r = report_from_predictions(&s, &preds, &EvalConfig::default()).unwrap();
        let csv = r.predictions_csv();
        assert!(csv.starts_with("source_id,y_true,p_total,p_left,p_right\ns0,1,1.5,0.5,1\n"));
        assert_eq!(r.cmc_at(0.5), Some(1.0));
        assert_eq!(r.cmc_at(0.25), Some(0.0));
    }
}
