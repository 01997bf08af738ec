//! Reference solver for the KL-regularized linearized step
//!
//! ```text
//! argmin_{p in simplex}  <eta * g, p> + KL(p || p_prev)
//! ```
//!
//! solved numerically by damped Newton on the simplex with one coordinate
//! eliminated. It never forms the exponentiated-gradient closed form, so it
//! can serve as an independent check of the mirror-descent update.

use crate::domain::Mixture;
use crate::error::{Error, Result};

const MAX_ITERS: usize = 200;
const GRAD_TOL: f64 = 1e-15;

fn objective(p: &[f64], prior: &[f64], lin: &[f64]) -> f64 {
    p.iter()
        .zip(prior)
        .zip(lin)
        .map(|((pi, qi), ci)| {
            let kl = if *pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 };
            ci * pi + kl
        })
        .sum()
}

pub fn proximal_oracle(p_prev: &Mixture, gradient: &[f64], eta: f64) -> Result<Mixture> {
    let k = p_prev.len();
    if gradient.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: gradient.len(),
        });
    }
    let prior = p_prev.as_slice();
    if let Some(i) = prior.iter().position(|q| *q <= 0.0) {
        return Err(Error::ZeroPrior(i));
    }
    if k == 1 {
        return Ok(p_prev.clone());
    }
    let lin: Vec<f64> = gradient.iter().map(|g| eta * g).collect();

    // eliminate the largest prior coordinate: p_last = 1 - sum(free)
    let last = p_prev.argmax();
    let free: Vec<usize> = (0..k).filter(|&i| i != last).collect();
    let mut p = prior.to_vec();

    for _ in 0..MAX_ITERS {
        // c_i = d/dp_i of the objective
        let c: Vec<f64> = (0..k).map(|i| lin[i] + (p[i] / prior[i]).ln() + 1.0).collect();
        let grad: Vec<f64> = free.iter().map(|&i| c[i] - c[last]).collect();
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm < GRAD_TOL {
            break;
        }
        // Hessian = diag(1/p_free) + (1/p_last) 11^T, inverted by Sherman-Morrison
        let dinv: Vec<f64> = free.iter().map(|&i| p[i]).collect();
        let u = 1.0 / p[last];
        let dinv_g: Vec<f64> = dinv.iter().zip(&grad).map(|(d, g)| d * g).collect();
        let s_g: f64 = dinv_g.iter().sum();
        let s_1: f64 = dinv.iter().sum();
        let coef = u * s_g / (1.0 + u * s_1);
        let step: Vec<f64> = dinv_g.iter().zip(&dinv).map(|(dg, d)| -(dg - d * coef)).collect();

        // backtrack until strictly interior and the objective decreases
        let f0 = objective(&p, prior, &lin);
        let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = p.clone();
            for (idx, &i) in free.iter().enumerate() {
                cand[i] = p[i] + t * step[idx];
            }
            cand[last] = 1.0 - free.iter().map(|&i| cand[i]).sum::<f64>();
            if cand.iter().all(|v| *v > 0.0) {
                let f1 = objective(&cand, prior, &lin);
                if f1 <= f0 + 1e-4 * t * slope || (f1 - f0).abs() <= 1e-16 * f0.abs().max(1.0) {
                    accepted = Some(cand);
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some(cand) => p = cand,
            None => break,
        }
    }
    let sum: f64 = p.iter().sum();
    Mixture::new(p.iter().map(|v| v / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let q = Mixture::new(vec![0.1, 0.2, 0.7]).unwrap();
        let p = proximal_oracle(&q, &[0.0; 3], 0.5).unwrap();
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_gradient_is_identity() {
        let q = Mixture::new(vec![0.25, 0.25, 0.5]).unwrap();
        let p = proximal_oracle(&q, &[3.0; 3], 0.8).unwrap();
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_prior_rejected() {
        let q = Mixture::new(vec![0.0, 1.0]).unwrap();
        assert!(matches!(proximal_oracle(&q, &[1.0, 0.0], 1.0), Err(Error::ZeroPrior(0))));
    }

    #[test]
    fn two_point_solution() {
        // stationarity: ln(p0/p1) = ln(q0/q1) - eta (g0 - g1)
        let q = Mixture::uniform(2);
        let p = proximal_oracle(&q, &[-1.0, 0.0], 0.5).unwrap();
        let ratio = p[0] / p[1];
        assert!((ratio.ln() - 0.5).abs() < 1e-10);
    }
}
