use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::spectral::Spectrogram;
use crate::stats::percentile_sorted;
use crate::{Error, Real, Result};

const LOWER_PCT: f64 = 5.0;
const UPPER_PCT: f64 = 95.0;
/// Below this range the bounds are treated as degenerate.
const MIN_RANGE: f64 = 1e-12;

/// How percentile bounds are fitted and looked up at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// One set of bounds per device, applied using the sample's own device.
    #[default]
    PerDevice,
    /// A single set of bounds pooled over all training devices.
    Global,
}

/// 5th/95th percentile dB bounds fitted on training spectrograms.
///
/// `device_id` is `None` for globally pooled bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentileBounds<T> {
    pub device_id: Option<usize>,
    pub v_min: T,
    pub v_max: T,
    pub fitted_on: usize,
}

fn pooled_bounds<'a, T: Real>(
    specs: impl Iterator<Item = &'a Spectrogram<T>>,
    device_id: Option<usize>,
) -> Result<PercentileBounds<T>> {
    let mut values = Vec::new();
    let mut count = 0;
    for s in specs {
        if let Some(d) = device_id {
            if s.device_id != d {
                return Err(Error::validation(format!(
                    "percentile bounds for device {d} given a spectrogram of device {}",
                    s.device_id
                )));
            }
        }
        values.extend(s.power_db.data.iter().map(|v| v.as_f64()));
        count += 1;
    }
    if count == 0 {
        return Err(Error::InsufficientData("no training spectrograms to fit bounds".into()));
    }
    values.sort_by(f64::total_cmp);
    Ok(PercentileBounds {
        device_id,
        v_min: T::lit(percentile_sorted(&values, LOWER_PCT)),
        v_max: T::lit(percentile_sorted(&values, UPPER_PCT)),
        fitted_on: count,
    })
}

/// Bounds for one device from its training spectrograms only.
pub fn fit_percentile_bounds<T: Real>(train_specs: &[&Spectrogram<T>]) -> Result<PercentileBounds<T>> {
    let first = train_specs
        .first()
        .ok_or_else(|| Error::InsufficientData("no training spectrograms to fit bounds".into()))?;
    pooled_bounds(train_specs.iter().copied(), Some(first.device_id))
}

pub fn fit_global_bounds<T: Real>(train_specs: &[&Spectrogram<T>]) -> Result<PercentileBounds<T>> {
    pooled_bounds(train_specs.iter().copied(), None)
}

/// Maps `[v_min, v_max]` onto `[0, 1]` with clipping. Returns the
/// frequency-by-time image view.
pub fn normalize_spectrogram<T: Real>(spec: &Spectrogram<T>, bounds: &PercentileBounds<T>) -> Result<Matrix<T>> {
    if let Some(d) = bounds.device_id {
        if d != spec.device_id {
            return Err(Error::validation(format!(
                "bounds fitted for device {d} applied to device {}",
                spec.device_id
            )));
        }
    }
    let range = bounds.v_max - bounds.v_min;
    let half = T::lit(0.5);
    let degenerate = range < T::lit(MIN_RANGE);
    Ok(spec.image_matrix().map(|v| {
        if degenerate {
            half
        } else {
            ((v - bounds.v_min) / range).max(T::zero()).min(T::one())
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Method;
    use proptest::prelude::*;

    pub(crate) fn spec(device_id: usize, values: Vec<f64>) -> Spectrogram<f64> {
        let n = values.len();
        Spectrogram {
            method: Method::Cwt,
            power_db: Matrix::from_vec(1, n, values).unwrap(),
            time_axis: (0..n).map(|i| i as f64).collect(),
            freq_axis: vec![0.5],
            device_id,
            segment_index: 0,
        }
    }

    #[test]
    fn degenerate_and_ramp() {
        let s = spec(3, vec![-40.0; 20]);
        let b = fit_percentile_bounds(&[&s]).unwrap();
        assert_eq!((b.v_min, b.v_max, b.device_id), (-40.0, -40.0, Some(3)));
        let n = normalize_spectrogram(&s, &b).unwrap();
        assert!(n.data.iter().all(|&v| v == 0.5));

        // Ramp split across two spectrograms still pools to one distribution.
        let a = spec(1, (0..50).map(f64::from).collect());
        let c = spec(1, (50..=100).map(f64::from).collect());
        let b = fit_percentile_bounds(&[&a, &c]).unwrap();
        assert_eq!((b.v_min, b.v_max, b.fitted_on), (5.0, 95.0, 2));
    }

    #[test]
    fn fit_errors() {
        assert!(fit_percentile_bounds::<f64>(&[]).is_err());
        let a = spec(0, vec![1.0]);
        let b = spec(1, vec![1.0]);
        assert!(matches!(fit_percentile_bounds(&[&a, &b]), Err(Error::Validation(_))));
        let g = fit_global_bounds(&[&a, &b]).unwrap();
        assert_eq!(g.device_id, None);
    }

    #[test]
    fn endpoint_mapping_and_clipping() {
        let b = PercentileBounds { device_id: Some(0), v_min: -20.0, v_max: 30.0, fitted_on: 1 };
        let s = spec(0, vec![-20.0, 30.0, 5.0, 40.0, -100.0]);
        let n = normalize_spectrogram(&s, &b).unwrap();
        assert_eq!(n.data, vec![0.0, 1.0, 0.5, 1.0, 0.0]);
        assert!(normalize_spectrogram(&spec(1, vec![0.0]), &b).is_err());
        let g = PercentileBounds { device_id: None, ..b };
        assert!(normalize_spectrogram(&spec(1, vec![0.0]), &g).is_ok());
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(x in -200.0f64..100.0, dx in 0.0f64..50.0, lo in -130.0f64..0.0, w in 0.0f64..80.0) {
            let b = PercentileBounds { device_id: Some(0), v_min: lo, v_max: lo + w, fitted_on: 1 };
            let n = normalize_spectrogram(&spec(0, vec![x, x + dx]), &b).unwrap();
            prop_assert!(n.data[0] <= n.data[1]);
            prop_assert!(n.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
