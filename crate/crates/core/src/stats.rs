//! Small statistics helpers: sample moments, log-log fits and extrapolation.

use serde::Serialize;

/// Sample mean and standard error `s/√n` (unbiased sample variance).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Least-squares line `log y = p log x + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS residual in log space.
    pub residual: f64,
}

pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<PowerFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    if xs.iter().chain(ys).any(|v| !(v.is_finite() && *v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    Some(PowerFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
    })
}

/// Value at `x = 0` of the line through `(x1, v1)` and `(x2, v2)`.
pub fn richardson_linear(x1: f64, v1: f64, x2: f64, v2: f64) -> f64 {
    (x1 * v2 - x2 * v1) / (x1 - x2)
}

pub fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

/// Nonincreasing, treating values below `floor` as settled at zero.
pub fn nonincreasing_with_floor(xs: &[f64], floor: f64) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] || w[1] < floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_se_of_constant() {
        assert_eq!(mean_se(&[3.0; 10]), (3.0, 0.0));
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fit_recovers_power_law() {
        let xs = [0.2, 0.1, 0.05, 0.025];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        let fit = loglog_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 1.7).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert!(loglog_fit(&xs, &[1.0, 0.0, 1.0, 1.0]).is_none());
    }

    #[test]
    fn richardson_is_exact_on_lines() {
        let v = |x: f64| 2.0 - 5.0 * x;
        assert!((richardson_linear(0.1, v(0.1), 0.05, v(0.05)) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn monotonicity_helpers() {
        assert!(strictly_decreasing(&[3.0, 2.0, 1.0]));
        assert!(!strictly_decreasing(&[3.0, 3.0]));
        assert!(nonincreasing_with_floor(&[1e-13, 2e-13], 1e-12));
        assert!(!nonincreasing_with_floor(&[1.0, 2.0], 1e-12));
    }
}
