//! Ordinary least squares on log-log data.

use crate::error::{Error, Result};

/// One row of the residual table of a log-log fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitRow {
    pub x: f64,
    pub y: f64,
    /// `ln y - (intercept + slope ln x)`.
    pub log_residual: f64,
}

/// Result of fitting `ln y = intercept + slope ln x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RemainderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub rows: Vec<FitRow>,
    /// Points dropped because `x` or `y` was not strictly positive.
    pub excluded: Vec<(f64, f64)>,
}

/// Fits a power law through positive data. Points with non-positive or
/// non-finite coordinates are excluded and reported in the result.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<RemainderFit> {
    if xs.len() != ys.len() {
        return Err(Error::Fit(format!(
            "length mismatch: {} abscissae, {} ordinates",
            xs.len(),
            ys.len()
        )));
    }
    let mut kept = Vec::with_capacity(xs.len());
    let mut excluded = Vec::new();
    for (&x, &y) in xs.iter().zip(ys) {
        if x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite() {
            kept.push((x, y));
        } else {
            excluded.push((x, y));
        }
    }
    if kept.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 positive points, have {}",
            kept.len()
        )));
    }
    let n = kept.len() as f64;
    let lx: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rows: Vec<FitRow> = kept
        .iter()
        .zip(lx.iter().zip(&ly))
        .map(|(&(x, y), (lxv, lyv))| FitRow {
            x,
            y,
            log_residual: lyv - (intercept + slope * lxv),
        })
        .collect();
    let ss_res: f64 = rows.iter().map(|r| r.log_residual.powi(2)).sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RemainderFit {
        slope,
        intercept,
        r_squared,
        rows,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometric(n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.2 * 0.774f64.powi(i as i32)).collect()
    }

    #[test]
    fn exact_square() {
        let xs = geometric(10);
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prefactor_goes_into_intercept() {
        let xs = geometric(8);
        let ys: Vec<f64> = xs.iter().map(|x| 5.0 * x.sqrt()).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.intercept - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..20).map(|i| 0.5 * 0.8f64.powi(i)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x.powf(1.5) * (1.0 + rng.random_range(-0.01..0.01)))
            .collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope - 1.5).abs() < 0.02, "slope {}", f.slope);
    }

    #[test]
    fn nonpositive_points_are_excluded() {
        let xs = [1.0, 0.5, 0.25, 0.125, 0.0625];
        let ys = [1.0, 0.0, 0.0625, -1.0, 0.00390625];
        let f = fit_loglog(&xs, &ys).unwrap();
        assert_eq!(f.excluded.len(), 2);
        assert!((f.slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(fit_loglog(&[1.0, 0.5], &[1.0, 0.5]), Err(Error::Fit(_))));
        assert!(matches!(
            fit_loglog(&[1.0, 0.5, 0.2], &[1.0, 0.0, 0.5]),
            Err(Error::Fit(_))
        ));
    }
}
