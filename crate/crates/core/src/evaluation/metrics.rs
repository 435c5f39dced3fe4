use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], truth: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Argument(format!(
            "length mismatch: {} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < min_len {
        return Err(Error::Argument(format!(
            "need at least {min_len} values, got {}",
            pred.len()
        )));
    }
    Ok(())
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 1)?;
    Ok(compensated_sum(pred.iter().zip(truth).map(|(p, t)| (t - p).abs())) / pred.len() as f64)
}

/// Pearson correlation with population normalisation. Computed in one pass
/// with running co-moments; fails if either input has zero variance.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&x, &y)) in pred.iter().zip(truth).enumerate() {
        let n = (k + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::Evaluation(
            "correlation undefined: an input has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmcPoint {
    pub threshold: f64,
    pub fraction: f64,
}

/// Cumulative matching curve: fraction of `|error| <= t` for each threshold.
pub fn cmc(errors: &[f64], thresholds: &[f64]) -> Result<Vec<CmcPoint>> {
    if errors.is_empty() {
        return Err(Error::Argument("no errors to accumulate".into()));
    }
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Argument("CMC thresholds must be sorted ascending".into()));
    }
    let mut sorted: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| CmcPoint {
            threshold: t,
            fraction: sorted.partition_point(|&e| e <= t) as f64 / n,
        })
        .collect())
}

/// `0, step, 2 step, ...` up to the first multiple of `step` covering both
/// `max` and the largest error.
pub fn cmc_thresholds(step: f64, max: f64, errors: &[f64]) -> Vec<f64> {
    let top = errors.iter().fold(max, |m, e| m.max(e.abs()));
    let n = (top / step).ceil() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// `bins` uniform bins over `[0, max |error|]`, half-open except the last.
pub fn histogram(errors: &[f64], bins: usize) -> Result<Vec<HistBin>> {
    if bins == 0 {
        return Err(Error::Argument("histogram needs at least one bin".into()));
    }
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    let top = if max > 0.0 { max } else { 1.0 };
    let width = top / bins as f64;
    let low = |k: usize| k as f64 * width;
    let mut out: Vec<HistBin> = (0..bins)
        .map(|k| HistBin {
            low: low(k),
            high: if k + 1 == bins { top } else { low(k + 1) },
            count: 0,
        })
        .collect();
    for e in abs {
        let mut k = ((e / width).floor() as usize).min(bins - 1);
        while k > 0 && e < out[k].low {
            k -= 1;
        }
        while k + 1 < bins && e >= out[k + 1].low {
            k += 1;
        }
        out[k].count += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 8.0], &[8.0, 0.0]).unwrap(), 8.0);
        assert!(matches!(mae(&[], &[]), Err(Error::Argument(_))));
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_examples() {
        let t: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin() * 4.0 + 4.0).collect();
        let p: Vec<f64> = t.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&p, &t).unwrap() - 1.0).abs() <= 1e-12);
        let n: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((pearson(&n, &t).unwrap() + 1.0).abs() <= 1e-12);
        assert!(matches!(pearson(&[1.0, 1.0], &[0.0, 2.0]), Err(Error::Evaluation(_))));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn cmc_examples() {
        let c = cmc(&[0.0, 0.0], &[0.5, 1.0]).unwrap();
        assert!(c.iter().all(|p| p.fraction == 1.0));
        let c = cmc(&[0.5, 1.5, 2.5], &[1.0]).unwrap();
        assert_eq!(c[0].fraction, 1.0 / 3.0);
        assert!(cmc(&[1.0], &[2.0, 1.0]).is_err());
    }

    #[test]
    fn threshold_grid_covers_errors() {
        let g = cmc_thresholds(0.25, 8.0, &[1.0]);
        assert_eq!(g.len(), 33);
        assert_eq!(g[32], 8.0);
        let g = cmc_thresholds(0.25, 8.0, &[9.1]);
        assert_eq!(*g.last().unwrap(), 9.25);
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 1.0, 2.0, 4.0], 4).unwrap();
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 1, 1, 1]);
        let h = histogram(&[0.0, 0.0], 3).unwrap();
        assert_eq!(h[0].count, 2);
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant(
            v in proptest::collection::vec((-8.0..8.0f64, -8.0..8.0f64), 3..50),
            a in 0.1..10.0f64,
            b in -5.0..5.0f64,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            if let Ok(r) = pearson(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let y2: Vec<f64> = y.iter().map(|v| a * v - b).collect();
                prop_assert!((pearson(&x2, &y).unwrap() - r).abs() < 1e-10);
                prop_assert!((pearson(&x, &y2).unwrap() - r).abs() < 1e-10);
            }
        }

        #[test]
        fn mae_triangle(v in proptest::collection::vec((-8.0..8.0f64, -8.0..8.0f64, -8.0..8.0f64), 1..40)) {
            let p: Vec<f64> = v.iter().map(|t| t.0).collect();
            let q: Vec<f64> = v.iter().map(|t| t.1).collect();
            let t: Vec<f64> = v.iter().map(|t| t.2).collect();
            prop_assert!(mae(&p, &t).unwrap() <= mae(&p, &q).unwrap() + mae(&q, &t).unwrap() + 1e-12);
        }

        #[test]
        fn cmc_monotone_and_terminal(e in proptest::collection::vec(0.0..9.0f64, 1..60)) {
            let grid = cmc_thresholds(0.25, 8.0, &e);
            let c = cmc(&e, &grid).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0].fraction <= w[1].fraction));
            prop_assert_eq!(c.last().unwrap().fraction, 1.0);
        }

        #[test]
        fn histogram_counts_each_once(e in proptest::collection::vec(0.0..9.0f64, 1..80), bins in 1usize..20) {
            let h = histogram(&e, bins).unwrap();
            prop_assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), e.len());
            for v in &e {
                let hits = h.iter().enumerate().filter(|(k, b)| {
                    *v >= b.low && (*v < b.high || (*k + 1 == bins && *v <= b.high))
                }).count();
                prop_assert_eq!(hits, 1);
            }
        }
    }
}
