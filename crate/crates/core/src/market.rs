//! Economic side of the model: production-cost price anchor, Ornstein-Uhlenbeck
//! token price, cost and utility of hashrate, node-population growth, and the
//! curve fits used to estimate those coefficients from data.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Fitted market coefficients. Time is in fortnights, hashrate in
/// TeraHash/fortnight, money in the units of the fitted coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub unit_cost: f64,
    pub sigma: f64,
    pub beta: f64,
    pub discount: f64,
    pub node_growth_a: f64,
    pub node_growth_b: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            theta1: 132.82,
            theta2: 1.19e5,
            theta3: -1551.86,
            unit_cost: 8.43e-14,
            sigma: 0.005,
            beta: 2e4,
            discount: 7.67e-4,
            node_growth_a: 6.58e-3,
            node_growth_b: 4.0,
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.theta1 > 0.0, "theta1 must be positive"),
            (self.theta2 > 0.0, "theta2 must be positive"),
            (self.theta3.is_finite(), "theta3 must be finite"),
            (self.unit_cost > 0.0, "unit_cost must be positive"),
            (self.sigma >= 0.0, "sigma must be nonnegative"),
            (self.beta > 0.0, "beta must be positive"),
            (self.discount > 0.0, "discount must be positive"),
            (self.node_growth_a > 0.0, "node_growth_a must be positive"),
            (self.node_growth_b.is_finite(), "node_growth_b must be finite"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }

    /// Price level the token reverts to: `beta * c * h / K`.
    pub fn production_price(&self, total_hashrate: f64, supply: f64) -> Result<f64> {
        if !(supply > 0.0) {
            return Err(Error::domain(format!("supply must be positive, got {supply}")));
        }
        if !(total_hashrate >= 0.0) {
            return Err(Error::domain(format!("hashrate must be nonnegative, got {total_hashrate}")));
        }
        Ok(self.beta * self.cost(total_hashrate) / supply)
    }

    /// One Euler-Maruyama step of the mean-reverting price, reflected into
    /// `[0, b_max]`.
    pub fn ou_step(&self, price: f64, anchor: f64, dt: f64, noise: f64, b_max: f64) -> f64 {
        let next = price + (anchor - price) * dt + self.sigma * dt.sqrt() * noise;
        next.clamp(0.0, b_max)
    }

    pub fn cost(&self, alpha: f64) -> f64 {
        self.unit_cost * alpha
    }

    /// Revenue minus cost of running hashrate `alpha` for one fortnight.
    pub fn utility(&self, alpha: f64) -> Result<f64> {
        if !(alpha >= 0.0) {
            return Err(Error::domain(format!("hashrate must be nonnegative, got {alpha}")));
        }
        Ok(self.utility_unchecked(alpha))
    }

    /// [`Self::utility`] without the sign check, for solver inner loops where
    /// the control is already clamped.
    #[inline]
    pub fn utility_unchecked(&self, alpha: f64) -> f64 {
        self.theta1 * (alpha + self.theta2).ln() + self.theta3 - self.unit_cost * alpha
    }

    /// Maximizer of the static utility, `theta1 / c - theta2`, clamped at zero.
    pub fn static_maximizer(&self) -> f64 {
        (self.theta1 / self.unit_cost - self.theta2).max(0.0)
    }

    /// Number of mining nodes at time `t`, floored at one.
    pub fn node_count(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        (self.node_growth_a * t.powf(self.node_growth_b)).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    /// 95% confidence half-widths; NaN when a coefficient is not identifiable
    /// or there are no residual degrees of freedom.
    pub confidence_halfwidths: Vec<f64>,
    pub residual_norm: f64,
}

fn check_samples(samples: &[(f64, f64)], min: usize) -> Result<()> {
    if samples.len() < min {
        return Err(Error::Fit(format!("need at least {min} samples, got {}", samples.len())));
    }
    if samples.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Fit("samples must be finite".into()));
    }
    let first = samples[0].0;
    if samples.iter().all(|(x, _)| *x == first) {
        return Err(Error::Fit("abscissae are all equal; the fit is rank deficient".into()));
    }
    Ok(())
}

fn t_quantile(dof: usize) -> f64 {
    if dof == 0 {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, dof as f64).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::NAN)
}

/// Ordinary least squares `y = intercept + slope * x`. Returns
/// `(intercept, slope, se_intercept, se_slope, residual_norm)`.
fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64, f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let sse: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let dof = points.len().saturating_sub(2);
    let (se_intercept, se_slope) = if dof == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let s2 = sse / dof as f64;
        let sum_x2: f64 = points.iter().map(|p| p.0 * p.0).sum();
        ((s2 * sum_x2 / (n * sxx)).sqrt(), (s2 / sxx).sqrt())
    };
    (intercept, slope, se_intercept, se_slope, sse.sqrt())
}

/// Fits `M = a * t^b` by least squares on `ln M = ln a + b ln t`.
/// Coefficients are `[a, b]`.
pub fn fit_power_law(samples: &[(f64, f64)]) -> Result<FitResult> {
    check_samples(samples, 2)?;
    if samples.iter().any(|(t, m)| *t <= 0.0 || *m <= 0.0) {
        return Err(Error::Fit("power-law fit needs positive t and M".into()));
    }
    let logs: Vec<(f64, f64)> = samples.iter().map(|(t, m)| (t.ln(), m.ln())).collect();
    let (ln_a, b, se_ln_a, se_b, residual_norm) = linear_fit(&logs);
    let q = t_quantile(samples.len() - 2);
    let a = ln_a.exp();
    Ok(FitResult { coefficients: vec![a, b], confidence_halfwidths: vec![a * q * se_ln_a, q * se_b], residual_norm })
}

/// Fits `ln y = rate * t + intercept`. Coefficients are `[rate, intercept]`.
pub fn fit_exponential(samples: &[(f64, f64)]) -> Result<FitResult> {
    check_samples(samples, 2)?;
    if samples.iter().any(|(_, y)| *y <= 0.0) {
        return Err(Error::Fit("exponential fit needs positive values".into()));
    }
    let logs: Vec<(f64, f64)> = samples.iter().map(|(t, y)| (*t, y.ln())).collect();
    let (intercept, rate, se_intercept, se_rate, residual_norm) = linear_fit(&logs);
    let q = t_quantile(samples.len() - 2);
    Ok(FitResult {
        coefficients: vec![rate, intercept],
        confidence_halfwidths: vec![q * se_rate, q * se_intercept],
        residual_norm,
    })
}

/// Fits `revenue = theta1 * ln(alpha + theta2) + theta3`.
/// Coefficients are `[theta1, theta2, theta3]`.
///
/// `theta2` enters nonlinearly, so a log-spaced scan over it (solving the
/// linear sub-problem exactly at each candidate) seeds a damped Gauss-Newton
/// refinement in `(theta1, ln theta2, theta3)`.
pub fn fit_log_revenue(samples: &[(f64, f64)]) -> Result<FitResult> {
    check_samples(samples, 3)?;
    if samples.iter().any(|(a, _)| *a < 0.0) {
        return Err(Error::Fit("hashrate samples must be nonnegative".into()));
    }
    let alpha_max = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let hi = (alpha_max.max(1.0)).log10() + 3.0;
    let lo = -3.0;
    let scan = 400;
    let mut best = (f64::INFINITY, 1.0, 0.0, 0.0);
    for k in 0..=scan {
        let theta2 = 10f64.powf(lo + (hi - lo) * k as f64 / scan as f64);
        let pts: Vec<(f64, f64)> = samples.iter().map(|(a, y)| ((a + theta2).ln(), *y)).collect();
        let (theta3, theta1, _, _, rn) = linear_fit(&pts);
        if rn.is_finite() && theta1.is_finite() && rn < best.0 {
            best = (rn, theta2, theta1, theta3);
        }
    }
    let (_, theta2, theta1, theta3) = best;
    let mut params = Vector3::new(theta1, theta2.ln(), theta3);

    let residuals = |p: &Vector3<f64>| -> Vec<f64> {
        let t2 = p[1].exp();
        samples.iter().map(|(a, y)| y - (p[0] * (a + t2).ln() + p[2])).collect()
    };
    let sse = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let normal = |p: &Vector3<f64>, r: &[f64]| -> (Matrix3<f64>, Vector3<f64>) {
        let t2 = p[1].exp();
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for ((a, _), ri) in samples.iter().zip(r) {
            let row = Vector3::new((a + t2).ln(), p[0] * t2 / (a + t2), 1.0);
            jtj += row * row.transpose();
            jtr += row * *ri;
        }
        (jtj, jtr)
    };

    let mut r = residuals(&params);
    let mut current = sse(&r);
    let mut damping = 1e-12;
    for _ in 0..500 {
        let (jtj, jtr) = normal(&params, &r);
        let mut improved = false;
        for _ in 0..60 {
            let mut lhs = jtj;
            for d in 0..3 {
                lhs[(d, d)] += damping * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = lhs.lu().solve(&jtr) else {
                damping *= 10.0;
                continue;
            };
            let trial = params + step;
            let rt = residuals(&trial);
            let st = sse(&rt);
            if st.is_finite() && st <= current {
                let rel = (current - st) / current.max(f64::MIN_POSITIVE);
                params = trial;
                r = rt;
                current = st;
                damping = (damping * 0.1).max(1e-15);
                improved = rel > 1e-14 && step.norm() > 1e-14 * params.norm();
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let theta2 = params[1].exp();
    let dof = samples.len() - 3;
    let (jtj, _) = normal(&params, &r);
    let mut half = vec![f64::NAN; 3];
    if dof > 0 {
        if let Some(cov) = jtj.try_inverse() {
            let s2 = current / dof as f64;
            let q = t_quantile(dof);
            let se: Vec<f64> = (0..3).map(|d| (s2 * cov[(d, d)]).sqrt()).collect();
            if se.iter().all(|v| v.is_finite()) {
                half = vec![q * se[0], theta2 * q * se[1], q * se[2]];
            }
        }
    }
    Ok(FitResult {
        coefficients: vec![params[0], theta2, params[2]],
        confidence_halfwidths: half,
        residual_norm: current.sqrt(),
    })
}
