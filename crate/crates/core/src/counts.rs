//! Closed-form laws of the particle count `N(t)` started from one particle.
//!
//! With `E = exp(delta t)` the count is zero-modified geometric:
//! `P(N=0) = gamma (E-1)/(E-gamma)` and
//! `P(N=k) = (1-gamma)^2 E (E-1)^(k-1) / (E-gamma)^(k+1)` for `k >= 1`.
//! Everything below is written so that each factor is positive.

use crate::params::DerivedParams;

/// Tail mass left out by [`gw_pmf_table`].
pub const PMF_TAIL_TOL: f64 = 1e-12;

struct Geometric {
    p0: f64,
    p1: f64,
    /// `ln r` with `r = (E-1)/(E-gamma)` the ratio `P(N=k+1)/P(N=k)`.
    ln_ratio: f64,
}

fn geometric(t: f64, d: &DerivedParams) -> Geometric {
    let g = d.gamma;
    let x = d.delta * t;
    let e = x.exp();
    let em1 = x.exp_m1();
    let e_minus_g = em1 + (1.0 - g);
    let p0 = g * em1 / e_minus_g;
    let p1 = (1.0 - g) * (1.0 - g) * e / (e_minus_g * e_minus_g);
    let ln_ratio = (-(1.0 - g) / e_minus_g).ln_1p();
    Geometric { p0, p1, ln_ratio }
}

/// `P(N(t) = k)`.
pub fn gw_pmf(k: u64, t: f64, d: &DerivedParams) -> f64 {
    let geo = geometric(t, d);
    match k {
        0 => geo.p0,
        1 => geo.p1,
        _ if geo.ln_ratio == f64::NEG_INFINITY => 0.0,
        _ => geo.p1 * ((k - 1) as f64 * geo.ln_ratio).exp(),
    }
}

/// Smallest `K` with `sum_{k > K} P(N(t)=k) < tol`.
pub fn gw_support_bound(t: f64, d: &DerivedParams, tol: f64) -> u64 {
    let geo = geometric(t, d);
    if geo.ln_ratio == f64::NEG_INFINITY {
        return 1;
    }
    // tail beyond K equals p1 r^K / (1 - r)
    let one_minus_r = -geo.ln_ratio.exp_m1();
    let needed = (tol * one_minus_r / geo.p1).ln() / geo.ln_ratio;
    needed.ceil().max(1.0) as u64
}

/// `P(N(t)=k)` for `k = 0..=K`, with `K` from [`gw_support_bound`].
pub fn gw_pmf_table(t: f64, d: &DerivedParams, tol: f64) -> Vec<f64> {
    let kmax = gw_support_bound(t, d, tol);
    let geo = geometric(t, d);
    let mut out = Vec::with_capacity(kmax as usize + 1);
    out.push(geo.p0);
    let r = geo.ln_ratio.exp();
    let mut pk = geo.p1;
    for _ in 1..=kmax {
        out.push(pk);
        pk *= r;
    }
    out
}

/// `E N(t) = exp(delta t)`.
pub fn gw_mean(t: f64, d: &DerivedParams) -> f64 {
    (d.delta * t).exp()
}

/// CDF of `W = lim N(t) exp(-delta t)`: an atom `gamma` at zero and, on survival,
/// an exponential law with rate `1 - gamma` so that `E W = 1`.
pub fn gw_limit_cdf(x: f64, gamma: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    gamma + (1.0 - gamma) * gw_limit_survivor_cdf(x, gamma)
}

/// CDF of `W` conditioned on `W > 0`.
pub fn gw_limit_survivor_cdf(x: f64, gamma: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    -(-(1.0 - gamma) * x).exp_m1()
}

/// Alternative limit law `gamma * delta_0 + (1 - gamma) Exp(1)`; it has mean
/// `1 - gamma` and agrees with [`gw_limit_cdf`] only when `gamma = 0`.
pub fn gw_limit_cdf_unit_rate(x: f64, gamma: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    gamma + (1.0 - gamma) * (-(-x).exp_m1())
}
