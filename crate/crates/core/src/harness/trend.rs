//! Saturating trendline `r(x) = a - b·exp(-x/c)` and the derivative-ratio optimal range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const C_MIN: f64 = 10.0;
pub const C_MAX: f64 = 2000.0;
const GRID_POINTS: usize = 200;
const GOLDEN_ITERS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Sum of squared residuals.
    pub residual: f64,
    /// Set when the data carry no shape information (constant y).
    pub degenerate: bool,
}

impl Trend {
    pub fn value(&self, x: f64) -> f64 {
        self.a - self.b * (-x / self.c).exp()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.b / self.c * (-x / self.c).exp()
    }
}

/// Least-squares `(a, b)` for a fixed `c`, with the residual.
fn fit_linear(points: &[(f64, f64)], c: f64) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let f: Vec<f64> = points.iter().map(|&(x, _)| (-x / c).exp()).collect();
    let mf = f.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sff = 0.0;
    let mut sfy = 0.0;
    for (fi, &(_, y)) in f.iter().zip(points) {
        sff += (fi - mf).powi(2);
        sfy += (fi - mf) * (y - my);
    }
    // y ≈ a + slope·f with slope = -b.
    let slope = if sff > 0.0 { sfy / sff } else { 0.0 };
    let a = my - slope * mf;
    let b = -slope;
    let residual = f
        .iter()
        .zip(points)
        .map(|(fi, &(_, y))| (y - (a - b * fi)).powi(2))
        .sum();
    (a, b, residual)
}

fn trend_at(points: &[(f64, f64)], c: f64) -> Trend {
    let (a, b, residual) = fit_linear(points, c);
    Trend {
        a,
        b,
        c,
        residual,
        degenerate: false,
    }
}

/// Fits the saturating trend by a log-spaced search over `c` refined with golden-section steps.
///
/// Needs at least four points with three distinct x values.
pub fn fit_saturating_trend(points: &[(f64, f64)]) -> Result<Trend> {
    if points.len() < 4 {
        return Err(Error::Config(format!("trend fit needs at least 4 points, got {}", points.len())));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(Error::Config("trend fit needs at least 3 distinct ranges".into()));
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Config("trend fit points must be finite".into()));
    }
    let y0 = points[0].1;
    if points.iter().all(|p| p.1 == y0) {
        return Ok(Trend {
            a: y0,
            b: 0.0,
            c: C_MIN,
            residual: 0.0,
            degenerate: true,
        });
    }

    let (lo, hi) = (C_MIN.ln(), C_MAX.ln());
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let (best_i, grid_best) = grid
        .iter()
        .map(|&u| trend_at(points, u.exp()))
        .enumerate()
        .min_by(|a, b| a.1.residual.total_cmp(&b.1.residual))
        .expect("grid is nonempty");

    let mut left = grid[best_i.saturating_sub(1)];
    let mut right = grid[(best_i + 1).min(GRID_POINTS - 1)];
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut u1 = right - phi * (right - left);
    let mut u2 = left + phi * (right - left);
    let mut f1 = trend_at(points, u1.exp()).residual;
    let mut f2 = trend_at(points, u2.exp()).residual;
    for _ in 0..GOLDEN_ITERS {
        if right - left < 1e-13 {
            break;
        }
        if f1 <= f2 {
            right = u2;
            u2 = u1;
            f2 = f1;
            u1 = right - phi * (right - left);
            f1 = trend_at(points, u1.exp()).residual;
        } else {
            left = u1;
            u1 = u2;
            f1 = f2;
            u2 = left + phi * (right - left);
            f2 = trend_at(points, u2.exp()).residual;
        }
    }
    let refined = trend_at(points, (0.5 * (left + right)).exp());
    Ok(if refined.residual <= grid_best.residual {
        refined
    } else {
        grid_best
    })
}

/// Smallest `x ≥ x0` where the trend's slope has fallen to `ratio` times its slope at `x0`.
pub fn optimal_range(trend: &Trend, x0: f64, ratio: f64) -> Result<f64> {
    if trend.degenerate || !(trend.b > 0.0) {
        return Err(Error::NoSaturation(trend.b));
    }
    if !(trend.c > 0.0) {
        return Err(Error::Config(format!("trend scale must be positive, got {}", trend.c)));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("ratio must lie in (0, 1], got {ratio}")));
    }
    Ok(x0 + trend.c * (1.0 / ratio).ln())
}

/// Slope of the trend at `x0`.
pub fn baseline_gradient(trend: &Trend, x0: f64) -> f64 {
    trend.derivative(x0)
}
