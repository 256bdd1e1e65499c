//! Regression metrics and the per-channel min-max scaler.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{BandId, MetricsReport, PolSet, SplitLabel};
use crate::error::MetricsError;
use crate::scalar::{pairwise_sum, Scalar};

fn check_pair<T: Scalar>(pred: &[T], truth: &[T]) -> Result<(), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T, MetricsError> {
    check_pair(pred, truth)?;
    let abs: Vec<T> = pred.iter().zip(truth).map(|(&p, &t)| (p - t).abs()).collect();
    Ok(pairwise_sum(&abs) / T::from_usize(abs.len()).unwrap())
}

/// Root mean squared error.
pub fn rmse<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T, MetricsError> {
    check_pair(pred, truth)?;
    let sq: Vec<T> = pred.iter().zip(truth).map(|(&p, &t)| (p - t) * (p - t)).collect();
    Ok((pairwise_sum(&sq) / T::from_usize(sq.len()).unwrap()).sqrt())
}

/// Coefficient of determination, `1 − SS_res / SS_tot`.
pub fn r2<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T, MetricsError> {
    check_pair(pred, truth)?;
    let n = T::from_usize(truth.len()).unwrap();
    let mean = pairwise_sum(truth) / n;
    let tot: Vec<T> = truth.iter().map(|&t| (t - mean) * (t - mean)).collect();
    let ss_tot = pairwise_sum(&tot);
    if ss_tot <= T::zero() {
        return Err(MetricsError::ZeroVariance);
    }
    let res: Vec<T> = pred.iter().zip(truth).map(|(&p, &t)| (p - t) * (p - t)).collect();
    Ok(T::one() - pairwise_sum(&res) / ss_tot)
}

/// MAE in units of the band's vertical resolution.
pub fn normalized_mae(mae_m: f64, band: BandId) -> f64 {
    mae_m / band.vertical_res_m()
}

/// All four metrics for one split. R² is NaN when the truth is constant.
pub fn evaluate(
    pred: &[f64],
    truth: &[f64],
    band: BandId,
    pols: &PolSet,
    split: SplitLabel,
) -> Result<MetricsReport, MetricsError> {
    let mae_m = mae(pred, truth)?;
    let rmse_m = rmse(pred, truth)?;
    let r2 = match r2(pred, truth) {
        Ok(v) => v,
        Err(MetricsError::ZeroVariance) => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        band,
        pols: pols.clone(),
        split,
        n_samples: pred.len(),
        mae_m,
        rmse_m,
        r2,
        normalized_mae: normalized_mae(mae_m, band),
    })
}

pub const METRICS_CSV_HEADER: &str = "band,pol,split,n,mae,rmse,r2,norm_mae";

pub fn metrics_csv_row(r: &MetricsReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.band,
        r.pols.label(),
        r.split.as_str(),
        r.n_samples,
        r.mae_m,
        r.rmse_m,
        r.r2,
        r.normalized_mae
    )
}

pub fn write_metrics_csv<W: Write>(mut w: W, reports: &[MetricsReport]) -> std::io::Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", metrics_csv_row(r))?;
    }
    Ok(())
}

/// Parse rows written by [`write_metrics_csv`].
pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsReport>, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != METRICS_CSV_HEADER {
        return Err(format!("unexpected metrics header {:?}", headers));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let f = |i: usize| -> Result<f64, String> {
            rec[i].parse::<f64>().map_err(|e| format!("column {i}: {e}"))
        };
        out.push(MetricsReport {
            band: rec[0].parse()?,
            pols: rec[1].parse()?,
            split: rec[2].parse()?,
            n_samples: rec[3].parse().map_err(|e| format!("n: {e}"))?,
            mae_m: f(4)?,
            rmse_m: f(5)?,
            r2: f(6)?,
            normalized_mae: f(7)?,
        });
    }
    Ok(out)
}

/// Per-channel min-max scaler fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler<T> {
    ranges: Option<Vec<(T, T)>>,
}

impl<T: Scalar> Default for MinMaxScaler<T> {
    fn default() -> Self {
        MinMaxScaler { ranges: None }
    }
}

impl<T: Scalar> MinMaxScaler<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ranges(ranges: Vec<(T, T)>) -> Result<Self, MetricsError> {
        for (c, &(lo, hi)) in ranges.iter().enumerate() {
            if !(hi > lo) {
                return Err(MetricsError::ConstantChannel(c));
            }
        }
        Ok(MinMaxScaler { ranges: Some(ranges) })
    }

    /// Fit one (min, max) per channel; each channel is an iterator of values.
    pub fn fit<I, C>(channels: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = C>,
        C: IntoIterator<Item = T>,
    {
        let mut ranges = Vec::new();
        for (c, values) in channels.into_iter().enumerate() {
            let mut lo = T::infinity();
            let mut hi = T::neg_infinity();
            let mut n = 0usize;
            for v in values {
                if !v.is_finite() {
                    return Err(MetricsError::NonFinite);
                }
                lo = lo.min(v);
                hi = hi.max(v);
                n += 1;
            }
            if n == 0 {
                return Err(MetricsError::EmptyInput);
            }
            if !(hi > lo) {
                return Err(MetricsError::ConstantChannel(c));
            }
            ranges.push((lo, hi));
        }
        if ranges.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        Ok(MinMaxScaler { ranges: Some(ranges) })
    }

    pub fn is_fitted(&self) -> bool {
        self.ranges.is_some()
    }

    pub fn ranges(&self) -> Result<&[(T, T)], MetricsError> {
        self.ranges.as_deref().ok_or(MetricsError::NotFitted)
    }

    pub fn n_channels(&self) -> usize {
        self.ranges.as_ref().map_or(0, Vec::len)
    }

    fn range(&self, channel: usize) -> Result<(T, T), MetricsError> {
        self.ranges()?
            .get(channel)
            .copied()
            .ok_or(MetricsError::LengthMismatch(channel, self.n_channels()))
    }

    /// `(x − min) / (max − min)`; values outside the fitted range are not clipped.
    pub fn transform_value(&self, channel: usize, x: T) -> Result<T, MetricsError> {
        let (lo, hi) = self.range(channel)?;
        Ok((x - lo) / (hi - lo))
    }

    pub fn transform(&self, channel: usize, values: &mut [T]) -> Result<(), MetricsError> {
        let (lo, hi) = self.range(channel)?;
        let inv = T::one() / (hi - lo);
        for v in values {
            *v = (*v - lo) * inv;
        }
        Ok(())
    }

    pub fn inverse(&self, channel: usize, values: &mut [T]) -> Result<(), MetricsError> {
        let (lo, hi) = self.range(channel)?;
        for v in values {
            *v = *v * (hi - lo) + lo;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.0], &[2.82]).unwrap(), 2.82);
        assert_eq!(mae::<f64>(&[], &[]), Err(MetricsError::EmptyInput));
        assert_eq!(mae(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch(1, 2)));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[4.0f32, 5.0], &[4.0, 5.0]).unwrap(), 0.0);
        let v = rmse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap();
        assert!((v - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((v - 1.29099).abs() < 1e-5);
    }

    #[test]
    fn r2_examples() {
        let t = [1.0, 4.0, 2.0, 8.0];
        assert_eq!(r2(&t, &t).unwrap(), 1.0);
        let m = t.iter().sum::<f64>() / 4.0;
        assert!(r2(&[m; 4], &t).unwrap().abs() < 1e-15);
        assert_eq!(r2(&[1.0, 2.0], &[3.0, 3.0]), Err(MetricsError::ZeroVariance));
    }

    #[test]
    fn normalized_mae_matches_band_table() {
        assert!((normalized_mae(3.06, BandId::P) - 1.02).abs() < 1e-12);
        assert_eq!(format!("{:.2}", normalized_mae(3.07, BandId::LBi)), "1.33");
        assert!((normalized_mae(3.07, BandId::LBi) - 1.3348).abs() < 1e-4);
        for b in BandId::ALL {
            assert_eq!(normalized_mae(0.0, b), 0.0);
        }
        // The published L-Mono cell (2.317) does not follow from 2.82 / 1.3.
        assert!((normalized_mae(2.82, BandId::LMono) - 2.169).abs() < 1e-3);
    }

    #[test]
    fn scaler_examples() {
        let s = MinMaxScaler::fit([vec![2.0, 4.0, 6.0]]).unwrap();
        assert_eq!(s.transform_value(0, 4.0).unwrap(), 0.5);
        assert_eq!(s.transform_value(0, 8.0).unwrap(), 1.5);
        assert_eq!(
            MinMaxScaler::fit([vec![5.0, 5.0, 5.0]]),
            Err(MetricsError::ConstantChannel(0))
        );
        let unfitted = MinMaxScaler::<f64>::new();
        assert_eq!(unfitted.transform_value(0, 1.0), Err(MetricsError::NotFitted));
    }

    #[test]
    fn metrics_csv_roundtrip() {
        let r = evaluate(&[1.0, 2.0, 4.0], &[1.5, 2.0, 3.0], BandId::LMono, &PolSet::union(), SplitLabel::Test).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[r.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("band,pol,split,n,mae,rmse,r2,norm_mae\nLMono,HH+HV+VV,test,3,"));
        assert_eq!(read_metrics_csv(&text).unwrap(), vec![r]);
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant(
            pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..40),
            rot in 0usize..40,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
            let k = rot % p.len();
            let mut p2 = p.clone();
            let mut t2 = t.clone();
            p2.rotate_left(k);
            t2.rotate_left(k);
            p2.reverse();
            t2.reverse();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
            prop_assert!(close(mae(&p, &t).unwrap(), mae(&p2, &t2).unwrap()));
            prop_assert!(close(rmse(&p, &t).unwrap(), rmse(&p2, &t2).unwrap()));
            if let (Ok(a), Ok(b)) = (r2(&p, &t), r2(&p2, &t2)) {
                prop_assert!(close(a, b));
            }
        }

        #[test]
        fn translation_and_affine_invariance(
            pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40),
            shift in -100.0f64..100.0,
            scale in prop::sample::select(vec![-3.0f64, -0.5, 0.25, 2.0, 7.0]),
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
            let ps: Vec<f64> = p.iter().map(|v| v + shift).collect();
            let ts: Vec<f64> = t.iter().map(|v| v + shift).collect();
            prop_assert!((mae(&p, &t).unwrap() - mae(&ps, &ts).unwrap()).abs() < 1e-9);
            prop_assert!((rmse(&p, &t).unwrap() - rmse(&ps, &ts).unwrap()).abs() < 1e-9);
            let pa: Vec<f64> = p.iter().map(|v| scale * v + shift).collect();
            let ta: Vec<f64> = t.iter().map(|v| scale * v + shift).collect();
            if let (Ok(a), Ok(b)) = (r2(&p, &t), r2(&pa, &ta)) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }

        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..60)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
            prop_assert!(rmse(&p, &t).unwrap() >= mae(&p, &t).unwrap() * (1.0 - 1e-12));
        }

        #[test]
        fn scaler_roundtrip(values in prop::collection::vec(-1e3f64..1e3, 2..50), probe in -1e4f64..1e4) {
            prop_assume!(values.iter().any(|&v| v != values[0]));
            let s = MinMaxScaler::fit([values.clone()]).unwrap();
            let mut v = values.clone();
            s.transform(0, &mut v).unwrap();
            prop_assert!(v.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
            let mut back = vec![probe];
            s.transform(0, &mut back).unwrap();
            s.inverse(0, &mut back).unwrap();
            prop_assert!((back[0] - probe).abs() <= 1e-9 * probe.abs().max(1.0));
        }
    }
}
