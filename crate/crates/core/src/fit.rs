//! Least-squares fits used to measure decay rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitudes at or below this are treated as rounding noise and dropped.
pub const FIT_FLOOR: f64 = 1e-14;

/// Minimum number of usable points for an exponential fit.
pub const MIN_FIT_POINTS: usize = 5;

/// `ln y ≈ intercept + slope · x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub floor_used: f64,
}

/// Ordinary least squares of `y` on `x`. Needs two distinct abscissae.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Fit(format!("need at least 2 points, got {n}")));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
        n_points: n,
    })
}

/// Fits `magnitude ≈ exp(intercept + slope · r)` after dropping magnitudes at
/// or below [`FIT_FLOOR`].
pub fn fit_exponential(points: &[(f64, f64)]) -> Result<DecayFit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.1 > FIT_FLOOR && p.0.is_finite() && p.1.is_finite())
        .map(|&(r, v)| (r, v.ln()))
        .collect();
    if logs.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} usable points above the floor {FIT_FLOOR:e}, need {MIN_FIT_POINTS}",
            logs.len()
        )));
    }
    let line = fit_line(&logs)?;
    Ok(DecayFit {
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        n_points: line.n_points,
        floor_used: FIT_FLOOR,
    })
}

/// Fits `y ≈ C x^p` on a log-log scale; returns `p` via the slope.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<LineFit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.0 > 0.0 && p.1 > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    fit_line(&logs)
}

/// Largest magnitude in each distance bin `[k w, (k+1) w)`, as
/// `(bin centre, max)`, ordered by distance. Empty bins are skipped.
pub fn binned_envelope(points: &[(f64, f64)], width: f64) -> Vec<(f64, f64)> {
    let mut bins: std::collections::BTreeMap<i64, f64> = std::collections::BTreeMap::new();
    for &(r, v) in points {
        let k = (r / width).floor() as i64;
        let e = bins.entry(k).or_insert(f64::NEG_INFINITY);
        *e = e.max(v);
    }
    bins.into_iter().map(|(k, v)| ((k as f64 + 0.5) * width, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential() {
        let pts: Vec<(f64, f64)> = (0..10).map(|k| (k as f64 * 0.7, (-2.0 * k as f64 * 0.7).exp())).collect();
        let f = fit_exponential(&pts).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(f.n_points, 10);
    }

    #[test]
    fn constant_magnitudes_are_reported() {
        let pts: Vec<(f64, f64)> = (0..6).map(|k| (k as f64, 0.3)).collect();
        let f = fit_exponential(&pts).unwrap();
        assert!(f.slope.abs() < 1e-12);
        assert_eq!(f.r_squared, 0.0);
    }

    #[test]
    fn too_few_points_after_floor() {
        let mut pts: Vec<(f64, f64)> = (0..4).map(|k| (k as f64, 1.0 / (1.0 + k as f64))).collect();
        pts.push((5.0, 1e-15));
        pts.push((6.0, 0.0));
        assert!(matches!(fit_exponential(&pts), Err(Error::Fit(_))));
    }

    #[test]
    fn power_law_slope() {
        let pts: Vec<(f64, f64)> = [3.0, 4.0, 6.0, 8.0, 11.0].iter().map(|&r: &f64| (r, 5.0 * r.powf(-2.0))).collect();
        assert!((fit_power_law(&pts).unwrap().slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_takes_bin_maxima() {
        let pts = [(0.2, 1.0), (0.7, 3.0), (1.5, 0.5), (3.1, 0.1)];
        let env = binned_envelope(&pts, 1.0);
        assert_eq!(env, vec![(0.5, 3.0), (1.5, 0.5), (3.5, 0.1)]);
    }
}
