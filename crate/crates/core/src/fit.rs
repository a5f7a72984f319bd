//! Least-squares line fits used by slope and decay-rate measurements.

/// Slope, intercept and coefficient of determination of y ≈ a·x + c.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn line_fit(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LineFit { slope, intercept: my - slope * mx, r2 }
}

/// Order of decay p in e ≈ C·t^p from a log-log fit. Positive when e grows with t.
pub fn loglog_slope(t: &[f64], e: &[f64]) -> f64 {
    let lx: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    line_fit(&lx, &ly).slope
}

/// Fit of y ≈ C·e^{−μt}; returns (C, μ, R²) of the log-linear regression.
pub fn exp_decay_fit(t: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let f = line_fit(t, &ly);
    (f.intercept.exp(), -f.slope, f.r2)
}
