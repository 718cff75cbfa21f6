//! Entropy-regularised optimal transport between two spectral distributions.
//!
//! Plain scaling iterations on `exp(-C/ν)`; when the kernel underflows (or a
//! scaling turns non-finite) the solve restarts in the log domain.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_NU_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    /// ν as a fraction of the largest cost entry.
    pub nu_scale: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self { nu_scale: DEFAULT_NU_SCALE, max_iters: 500, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub xi: Vec<Vec<f64>>,
    /// ⟨ξ, C⟩.
    pub cost: f64,
    /// Shannon entropy −Σ ξ log ξ.
    pub entropy: f64,
    /// ⟨ξ, C⟩ − ν·entropy.
    pub objective: f64,
    pub nu: f64,
    pub iters: usize,
    pub log_domain: bool,
    /// L1 distance of the row sums from `p` (columns match `q` by construction).
    pub marginal_error: f64,
    /// Negated dual objective after each iteration.
    pub neg_dual_trace: Vec<f64>,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.xi.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let m = self.xi.first().map_or(0, Vec::len);
        (0..m).map(|j| self.xi.iter().map(|r| r[j]).sum()).collect()
    }
}

/// Squared frequency distance `(f_j − f_k)²`.
pub fn cost_matrix(fp: &[f64], fq: &[f64]) -> Vec<Vec<f64>> {
    fp.iter().map(|a| fq.iter().map(|b| (a - b) * (a - b)).collect()).collect()
}

pub fn default_nu(cost: &[Vec<f64>], nu_scale: f64) -> f64 {
    let max = cost.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    if max > 0.0 {
        nu_scale * max
    } else {
        nu_scale
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(invalid(format!("{what} is empty")));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid(format!("{what} has negative or non-finite mass")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Transport between distributions supported on frequency grids `fp` and `fq`.
pub fn sinkhorn(p: &[f64], q: &[f64], fp: &[f64], fq: &[f64], nu: f64, max_iters: usize, tol: f64) -> Result<TransportPlan> {
    if fp.len() != p.len() || fq.len() != q.len() {
        return Err(Error::ShapeMismatch("frequency grids must match the distributions".into()));
    }
    sinkhorn_with_cost(p, q, &cost_matrix(fp, fq), nu, max_iters, tol)
}

pub fn sinkhorn_with_cost(p: &[f64], q: &[f64], cost: &[Vec<f64>], nu: f64, max_iters: usize, tol: f64) -> Result<TransportPlan> {
    check_distribution(p, "source distribution")?;
    check_distribution(q, "target distribution")?;
    if cost.len() != p.len() || cost.iter().any(|r| r.len() != q.len()) {
        return Err(Error::ShapeMismatch("cost matrix must be |p| × |q|".into()));
    }
    if !(nu > 0.0 && nu.is_finite()) || max_iters == 0 || !(tol > 0.0) {
        return Err(invalid("Sinkhorn needs nu > 0, tol > 0 and max_iters >= 1"));
    }
    match scaling(p, q, cost, nu, max_iters, tol) {
        Some(plan) => Ok(plan),
        None => Ok(log_domain(p, q, cost, nu, max_iters, tol)),
    }
}

fn finish(xi: Vec<Vec<f64>>, cost: &[Vec<f64>], p: &[f64], nu: f64, iters: usize, log_domain: bool, trace: Vec<f64>) -> TransportPlan {
    let mut c = 0.0;
    let mut h = 0.0;
    let mut err = 0.0;
    for (i, row) in xi.iter().enumerate() {
        let mut s = 0.0;
        for (j, &v) in row.iter().enumerate() {
            c += v * cost[i][j];
            if v > 0.0 {
                h -= v * v.ln();
            }
            s += v;
        }
        err += (s - p[i]).abs();
    }
    TransportPlan { xi, cost: c, entropy: h, objective: c - nu * h, nu, iters, log_domain, marginal_error: err, neg_dual_trace: trace }
}

fn plogx(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * b.ln()).sum()
}

fn scaling(p: &[f64], q: &[f64], cost: &[Vec<f64>], nu: f64, max_iters: usize, tol: f64) -> Option<TransportPlan> {
    let (n, m) = (p.len(), q.len());
    let k: Vec<Vec<f64>> = cost.iter().map(|r| r.iter().map(|c| (-c / nu).exp()).collect()).collect();
    if k.iter().flatten().any(|&v| v < f64::MIN_POSITIVE) {
        return None;
    }
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut trace = Vec::new();
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        for i in 0..n {
            let kv: f64 = k[i].iter().zip(&v).map(|(a, b)| a * b).sum();
            if p[i] > 0.0 {
                if !(kv > f64::MIN_POSITIVE) {
                    return None;
                }
                u[i] = p[i] / kv;
            } else {
                u[i] = 0.0;
            }
        }
        let mut ktu = vec![0.0; m];
        for i in 0..n {
            if u[i] != 0.0 {
                for j in 0..m {
                    ktu[j] += k[i][j] * u[i];
                }
            }
        }
        for j in 0..m {
            if q[j] > 0.0 {
                if !(ktu[j] > f64::MIN_POSITIVE) {
                    return None;
                }
                v[j] = q[j] / ktu[j];
            } else {
                v[j] = 0.0;
            }
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return None;
        }
        trace.push(-(nu * (plogx(p, &u) + plogx(q, &v)) - nu));
        let err: f64 = (0..n)
            .map(|i| (u[i] * k[i].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() - p[i]).abs())
            .sum();
        if err < tol {
            break;
        }
    }
    let xi = (0..n).map(|i| (0..m).map(|j| u[i] * k[i][j] * v[j]).collect()).collect();
    Some(finish(xi, cost, p, nu, iters, false, trace))
}

fn lse(vals: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = vals.collect();
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

fn log_domain(p: &[f64], q: &[f64], cost: &[Vec<f64>], nu: f64, max_iters: usize, tol: f64) -> TransportPlan {
    let (n, m) = (p.len(), q.len());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut trace = Vec::new();
    let mut iters = 0;
    let dual = |f: &[f64], g: &[f64]| -> f64 {
        let a: f64 = p.iter().zip(f).filter(|(w, _)| **w > 0.0).map(|(w, x)| w * x).sum();
        let b: f64 = q.iter().zip(g).filter(|(w, _)| **w > 0.0).map(|(w, x)| w * x).sum();
        a + b - nu
    };
    while iters < max_iters {
        iters += 1;
        for i in 0..n {
            f[i] = if p[i] > 0.0 {
                nu * (p[i].ln() - lse((0..m).map(|j| (g[j] - cost[i][j]) / nu)))
            } else {
                f64::NEG_INFINITY
            };
        }
        for j in 0..m {
            g[j] = if q[j] > 0.0 {
                nu * (q[j].ln() - lse((0..n).map(|i| (f[i] - cost[i][j]) / nu)))
            } else {
                f64::NEG_INFINITY
            };
        }
        trace.push(-dual(&f, &g));
        let err: f64 = (0..n)
            .map(|i| {
                let s = if p[i] > 0.0 { lse((0..m).map(|j| (f[i] + g[j] - cost[i][j]) / nu)).exp() } else { 0.0 };
                (s - p[i]).abs()
            })
            .sum();
        if err < tol {
            break;
        }
    }
    let xi = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let e = (f[i] + g[j] - cost[i][j]) / nu;
                    if e.is_finite() {
                        e.exp()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    finish(xi, cost, p, nu, iters, true, trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_one_hot_costs_nothing() {
        let f = [0.1, 0.2, 0.3];
        let p = [0.0, 1.0, 0.0];
        let t = sinkhorn(&p, &p, &f, &f, 0.01, 500, 1e-9).unwrap();
        assert!(t.cost.abs() < 1e-12);
        assert!((t.xi[1][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn swap_example() {
        let c = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let t = sinkhorn_with_cost(&[1.0, 0.0], &[0.0, 1.0], &c, 0.01, 500, 1e-9).unwrap();
        assert!((t.cost - 1.0).abs() < 1e-9 && t.cost <= 1.05);
    }

    #[test]
    fn marginals_and_dual_monotone() {
        let fp: Vec<f64> = (0..12).map(|i| 0.1 + 0.035 * i as f64).collect();
        let mut p: Vec<f64> = (0..12).map(|i| 1.0 + (i as f64 * 0.9).sin().abs()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        let q = vec![1.0 / 12.0; 12];
        let c = cost_matrix(&fp, &fp);
        let t = sinkhorn(&p, &q, &fp, &fp, default_nu(&c, 0.05), 500, 1e-9).unwrap();
        assert!(!t.log_domain);
        let rows: f64 = t.row_sums().iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        let cols: f64 = t.col_sums().iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
        assert!(rows < 1e-6 && cols < 1e-6);
        assert!(t.neg_dual_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn log_domain_fallback_on_underflow() {
        let fp = [0.0, 0.5, 1.0, 1.5];
        let p = [0.25; 4];
        let q = [0.1, 0.2, 0.3, 0.4];
        let t = sinkhorn(&p, &q, &fp, &fp, 0.001, 5000, 1e-9).unwrap();
        assert!(t.log_domain);
        assert!(t.xi.iter().flatten().all(|v| v.is_finite() && *v >= 0.0));
        assert!(t.marginal_error < 1e-6);
        assert!(t.neg_dual_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn rejects_invalid_inputs() {
        let f = [0.0, 1.0];
        assert!(sinkhorn(&[0.5, 0.6], &[0.5, 0.5], &f, &f, 0.1, 10, 1e-6).is_err());
        assert!(sinkhorn(&[0.5, 0.5], &[0.5, 0.5], &f, &f, 0.0, 10, 1e-6).is_err());
        assert!(sinkhorn(&[0.5, 0.5], &[1.0], &f, &f, 0.1, 10, 1e-6).is_err());
    }
}
