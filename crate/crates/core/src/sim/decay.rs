use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// `-slope` of `½ log(series)`, in 1/s.
    pub delta: f64,
    /// Standard error of the fitted slope.
    pub residual: f64,
    pub points: usize,
    /// Window actually used, after shrinking at the first non-positive value.
    pub t_start: f64,
    pub t_end: f64,
}

/// Least-squares decay rate of `series` over `[t_start, t_end]`.
pub fn estimate_decay_rate(times: &[f64], series: &[f64], t_start: f64, t_end: f64) -> Result<DecayFit> {
    if times.len() != series.len() {
        return Err(Error::invalid("times and series differ in length"));
    }
    let mut pts = Vec::new();
    for (&t, &v) in times.iter().zip(series) {
        if t < t_start {
            continue;
        }
        if t > t_end || !(v > 0.0) || !v.is_finite() {
            break;
        }
        pts.push((t, 0.5 * v.ln()));
    }
    if pts.len() < 10 {
        return Err(Error::invalid(format!(
            "decay window [{t_start}, {t_end}] holds {} positive samples, need at least 10",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let sse: f64 = pts.iter().map(|p| (p.1 - ym - slope * (p.0 - tm)).powi(2)).sum();
    let residual = (sse / (n - 2.0) / sxx).sqrt();
    Ok(DecayFit {
        delta: -slope,
        residual,
        points: pts.len(),
        t_start: pts[0].0,
        t_end: pts[pts.len() - 1].0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let s: Vec<f64> = t.iter().map(|t| (-2.0 * 0.7 * t).exp()).collect();
        let fit = estimate_decay_rate(&t, &s, 0.0, 10.0).unwrap();
        assert!((fit.delta - 0.7).abs() < 1e-6);
        assert!(fit.residual < 1e-10);
    }

    #[test]
    fn constant_series() {
        let t: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let fit = estimate_decay_rate(&t, &vec![3.0; 50], 0.0, 100.0).unwrap();
        assert!(fit.delta.abs() < 1e-14);
    }

    #[test]
    fn short_window_is_rejected() {
        let t: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert!(estimate_decay_rate(&t, &vec![1.0; 50], 0.0, 5.0).is_err());
    }

    #[test]
    fn window_shrinks_at_zero() {
        let t: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let mut s: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        s[30] = 0.0;
        let fit = estimate_decay_rate(&t, &s, 0.0, 100.0).unwrap();
        assert_eq!(fit.points, 30);
        assert!((fit.delta - 0.5).abs() < 1e-12);
    }
}
