//! First and second moments of the total mass as functions of the initial mass.
//!
//! `L1(t, m) = E_m M(t)` and `L2(t, m) = E_m M(t)^2` solve the functional
//! differential equations
//!
//! ```text
//! dL1/dt = v dL1/dm + 2 beta int (L1(t, theta m) - L1(t, m)) q(theta) dtheta + delta L1
//! dL2/dt = (same operator applied to L2) + 2 beta int L1(t, theta m) L1(t, (1-theta) m) q(theta) dtheta
//! ```
//!
//! with `L1(0, m) = m`, `L2(0, m) = m^2`. They are solved here by the method of
//! lines and also in closed form: affine functions of `m` are invariant under
//! the first equation, quadratics under the second.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SplitKernel;
use crate::ode::{dopri5, Control, OdeOptions};
use crate::params::ModelParams;

/// Default grid size.
pub const DEFAULT_POINTS: usize = 1024;
/// Default grid extent in units of `v / beta`.
pub const DEFAULT_EXTENT: f64 = 20.0;

/// Uniform grid `m_i = i * m_max / (n - 1)`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassGrid {
    pub m_max: f64,
    pub n_points: usize,
}

impl MassGrid {
    pub fn new(m_max: f64, n_points: usize, p: &ModelParams) -> Result<Self> {
        p.validate()?;
        let min_extent = 10.0 * p.v / p.beta;
        if !(m_max >= min_extent) || !m_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid extent {m_max} is below 10 v/beta = {min_extent}"
            )));
        }
        if n_points < 256 {
            return Err(Error::InvalidParameter(format!("grid needs >= 256 points, got {n_points}")));
        }
        Ok(Self { m_max, n_points })
    }

    pub fn default_for(p: &ModelParams) -> Result<Self> {
        Self::new(DEFAULT_EXTENT * p.v / p.beta, DEFAULT_POINTS, p)
    }

    pub fn spacing(&self) -> f64 {
        self.m_max / (self.n_points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentField {
    pub grid: MassGrid,
    pub t: f64,
    pub values: Vec<f64>,
}

impl MomentField {
    pub fn from_fn(grid: MassGrid, t: f64, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            t,
            values: grid.nodes().into_iter().map(f).collect(),
        }
    }

    /// `max_i |L_i - exact(m_i)| / (1 + |exact(m_i)|)`.
    pub fn max_relative_error(&self, exact: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let e = exact(self.grid.node(i));
                (v - e).abs() / (1.0 + e.abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Sparse linear map `f -> (f(theta_j m_i))` averaged over the kernel
/// quadrature, with 4-point Lagrange interpolation between nodes.
#[derive(Debug, Clone)]
struct ContractionOperator {
    rows: Vec<Vec<(usize, f64)>>,
}

fn lagrange_stencil(x: f64, h: f64, n: usize) -> [(usize, f64); 4] {
    let k = (x / h).floor() as isize;
    let start = (k - 1).clamp(0, n as isize - 4) as usize;
    let mut out = [(0, 0.0); 4];
    for (s, slot) in out.iter_mut().enumerate() {
        let xs = (start + s) as f64 * h;
        let mut w = 1.0;
        for r in 0..4 {
            if r != s {
                let xr = (start + r) as f64 * h;
                w *= (x - xr) / (xs - xr);
            }
        }
        *slot = (start + s, w);
    }
    out
}

impl ContractionOperator {
    fn new(grid: &MassGrid, q: &SplitKernel) -> Self {
        let rule = q.quadrature();
        let h = grid.spacing();
        let n = grid.n_points;
        let rows = (0..n)
            .map(|i| {
                let m = grid.node(i);
                let mut row: Vec<(usize, f64)> = Vec::new();
                for (&th, &w) in rule.nodes.iter().zip(&rule.weights) {
                    for (idx, lw) in lagrange_stencil(th * m, h, n) {
                        match row.iter_mut().find(|(j, _)| *j == idx) {
                            Some(entry) => entry.1 += w * lw,
                            None => row.push((idx, w * lw)),
                        }
                    }
                }
                row
            })
            .collect();
        Self { rows }
    }

    fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, w)| w * f[j]).sum();
        }
    }
}

/// `int (f(theta m_i) - f(m_i)) q(theta) dtheta` at every node.
pub fn nonlocal_term(f: &MomentField, q: &SplitKernel) -> Vec<f64> {
    let op = ContractionOperator::new(&f.grid, q);
    let mut out = vec![0.0; f.values.len()];
    op.apply_into(&f.values, &mut out);
    for (o, v) in out.iter_mut().zip(&f.values) {
        *o -= v;
    }
    out
}

/// Weights `g` such that `sum_k g_k f_k` is the value at `m_max + offset * dm`
/// of the least-squares polynomial of the given degree through the top 10% of nodes.
#[allow(clippy::needless_range_loop)]
fn ghost_weights(grid: &MassGrid, degree: usize, offset: f64) -> (usize, Vec<f64>) {
    let n = grid.n_points;
    let count = (n / 10).max(degree + 2);
    let first = n - count;
    // local coordinate: node offset from the last node, in steps
    let s: Vec<f64> = (first..n).map(|i| (i as f64) - (n - 1) as f64).collect();
    let cols = degree + 1;
    let mut ata = vec![vec![0.0; cols]; cols];
    for &x in &s {
        for r in 0..cols {
            for c in 0..cols {
                ata[r][c] += x.powi((r + c) as i32);
            }
        }
    }
    // ghost = phi(offset)^T (A^T A)^{-1} A^T f with phi(s) = (1, s, s^2, ...)
    let target: Vec<f64> = (0..cols).map(|r| offset.powi(r as i32)).collect();
    let z = solve_dense(ata, target);
    let weights = s
        .iter()
        .map(|&x| (0..cols).map(|r| z[r] * x.powi(r as i32)).sum())
        .collect();
    (first, weights)
}

#[allow(clippy::needless_range_loop)]
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Largest stable step, `min(0.5 dm / v, 0.1 / (2 beta + delta))`.
pub fn stable_dt(p: &ModelParams, grid: &MassGrid) -> f64 {
    (0.5 * grid.spacing() / p.v).min(0.1 / (2.0 * p.beta + p.delta()))
}

/// One-sided difference used for `v dL/dm`; both reach toward larger `m`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Advection {
    /// `(f[i+1] - f[i]) / dm`.
    FirstOrder,
    /// `(-3 f[i] + 4 f[i+1] - f[i+2]) / (2 dm)`.
    #[default]
    SecondOrder,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Time step; defaults to [`stable_dt`]. Larger values are rejected.
    pub dt: Option<f64>,
    pub advection: Advection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSolution {
    pub field: MomentField,
    pub steps: usize,
    pub dt: f64,
    /// Smallest value seen at any node and stage.
    pub min_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Moment {
    First,
    Second,
}

struct Rhs<'a> {
    p: &'a ModelParams,
    grid: MassGrid,
    op: ContractionOperator,
    advection: Advection,
    ghost_first: usize,
    /// Extrapolation weights for the two nodes beyond `m_max`.
    ghost: [Vec<f64>; 2],
    /// Quadrature of the L2 source (empty for L1).
    source_rule: Option<(Vec<f64>, Vec<f64>)>,
    scratch: Vec<f64>,
}

impl<'a> Rhs<'a> {
    fn new(p: &'a ModelParams, q: &SplitKernel, grid: MassGrid, moment: Moment, advection: Advection) -> Self {
        let degree = match moment {
            Moment::First => 1,
            Moment::Second => 2,
        };
        let (ghost_first, g1) = ghost_weights(&grid, degree, 1.0);
        let (_, g2) = ghost_weights(&grid, degree, 2.0);
        let source_rule = (moment == Moment::Second).then(|| {
            let r = q.quadrature();
            (r.nodes, r.weights)
        });
        Self {
            p,
            grid,
            op: ContractionOperator::new(&grid, q),
            advection,
            ghost_first,
            ghost: [g1, g2],
            source_rule,
            scratch: vec![0.0; grid.n_points],
        }
    }

    fn eval(&mut self, t: f64, f: &[f64], out: &mut [f64]) {
        let n = f.len();
        let h = self.grid.spacing();
        let v = self.p.v;
        let two_beta = 2.0 * self.p.beta;
        let delta = self.p.delta();
        self.op.apply_into(f, &mut self.scratch);
        let tail = &f[self.ghost_first..];
        let ghost = self
            .ghost
            .each_ref()
            .map(|w| w.iter().zip(tail).map(|(w, x)| w * x).sum::<f64>());
        let at = |j: usize| if j < n { f[j] } else { ghost[j - n] };
        for i in 0..n {
            let slope = match self.advection {
                Advection::FirstOrder => (at(i + 1) - f[i]) / h,
                Advection::SecondOrder => (-3.0 * f[i] + 4.0 * at(i + 1) - at(i + 2)) / (2.0 * h),
            };
            out[i] = v * slope + two_beta * (self.scratch[i] - f[i]) + delta * f[i];
        }
        if let Some((nodes, weights)) = &self.source_rule {
            let (a, b) = l1_coefficients(self.p, t);
            for (i, o) in out.iter_mut().enumerate() {
                let m = self.grid.node(i);
                let s: f64 = nodes
                    .iter()
                    .zip(weights)
                    .map(|(&th, &w)| w * (a * th * m + b) * (a * (1.0 - th) * m + b))
                    .sum();
                *o += two_beta * s;
            }
        }
    }
}

fn solve(
    p: &ModelParams,
    q: &SplitKernel,
    grid: &MassGrid,
    t_end: f64,
    opts: &SolverOptions,
    moment: Moment,
) -> Result<MomentSolution> {
    p.validate()?;
    q.validate()?;
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidParameter(format!("t_end must be >= 0, got {t_end}")));
    }
    let bound = stable_dt(p, grid);
    let dt_max = match opts.dt {
        Some(dt) if dt > bound => return Err(Error::CflViolation { dt, bound }),
        Some(dt) if !(dt > 0.0) => {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")))
        }
        Some(dt) => dt,
        None => bound,
    };
    let steps = (t_end / dt_max).ceil() as usize;
    let dt = if steps == 0 { 0.0 } else { t_end / steps as f64 };

    let init = |m: f64| match moment {
        Moment::First => m,
        Moment::Second => m * m,
    };
    let mut y: Vec<f64> = grid.nodes().into_iter().map(init).collect();
    let mut rhs = Rhs::new(p, q, *grid, moment, opts.advection);
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut min_value = y.iter().copied().fold(f64::INFINITY, f64::min);
    let mut track = |v: &[f64]| {
        for &x in v {
            min_value = min_value.min(x);
        }
    };

    for s in 0..steps {
        let t = s as f64 * dt;
        rhs.eval(t, &y, &mut k1);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * dt * k1[i];
        }
        track(&stage);
        rhs.eval(t + 0.5 * dt, &stage, &mut k2);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * dt * k2[i];
        }
        track(&stage);
        rhs.eval(t + 0.5 * dt, &stage, &mut k3);
        for i in 0..n {
            stage[i] = y[i] + dt * k3[i];
        }
        track(&stage);
        rhs.eval(t + dt, &stage, &mut k4);
        for i in 0..n {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        track(&y);
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::IntegrationFailure(format!("non-finite moment value {bad}")));
    }
    Ok(MomentSolution {
        field: MomentField {
            grid: *grid,
            t: t_end,
            values: y,
        },
        steps,
        dt,
        min_value,
    })
}

pub fn solve_l1(p: &ModelParams, q: &SplitKernel, grid: &MassGrid, t_end: f64) -> Result<MomentField> {
    Ok(solve_l1_with(p, q, grid, t_end, &SolverOptions::default())?.field)
}

pub fn solve_l1_with(
    p: &ModelParams,
    q: &SplitKernel,
    grid: &MassGrid,
    t_end: f64,
    opts: &SolverOptions,
) -> Result<MomentSolution> {
    solve(p, q, grid, t_end, opts, Moment::First)
}

/// Second moment; the source term uses the closed-form `L1`.
pub fn solve_l2(p: &ModelParams, q: &SplitKernel, grid: &MassGrid, t_end: f64) -> Result<MomentField> {
    Ok(solve_l2_with(p, q, grid, t_end, &SolverOptions::default())?.field)
}

pub fn solve_l2_with(
    p: &ModelParams,
    q: &SplitKernel,
    grid: &MassGrid,
    t_end: f64,
    opts: &SolverOptions,
) -> Result<MomentSolution> {
    solve(p, q, grid, t_end, opts, Moment::Second)
}

/// `(a, b)` with `L1(t, m) = a m + b`.
pub fn l1_coefficients(p: &ModelParams, t: f64) -> (f64, f64) {
    let a = (-p.mu * t).exp();
    let b = p.v / p.beta * (p.delta() * t).exp() * -(-p.beta * t).exp_m1();
    (a, b)
}

/// `m exp(-mu t) + (v/beta) exp(delta t) (1 - exp(-beta t))`.
pub fn exact_l1(p: &ModelParams, m: f64, t: f64) -> f64 {
    let (a, b) = l1_coefficients(p, t);
    a * m + b
}

/// `(c, d, e)` with `L2(t, m) = c m^2 + d m + e`, integrated to 1e-12 relative.
pub fn l2_coefficients(p: &ModelParams, q: &SplitKernel, t: f64) -> Result<[f64; 3]> {
    p.validate()?;
    q.validate()?;
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("t must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok([1.0, 0.0, 0.0]);
    }
    let theta2 = q.moment(2);
    let cross = 0.5 - theta2; // E theta (1 - theta)
    let delta = p.delta();
    let rhs = |s: f64, y: &[f64; 3], dy: &mut [f64; 3]| {
        let (a, b) = l1_coefficients(p, s);
        dy[0] = (2.0 * p.beta * (theta2 - 1.0) + delta) * y[0] + 2.0 * p.beta * a * a * cross;
        dy[1] = 2.0 * p.v * y[0] + (delta - p.beta) * y[1] + 2.0 * p.beta * a * b;
        dy[2] = p.v * y[1] + delta * y[2] + 2.0 * p.beta * b * b;
    };
    let opts = OdeOptions {
        rtol: 1e-12,
        atol: 1e-14,
        ..OdeOptions::default()
    };
    Ok(dopri5(rhs, 0.0, [1.0, 0.0, 0.0], t, &opts, |_, _| Control::Continue)?.y)
}

pub fn exact_l2_ode(p: &ModelParams, q: &SplitKernel, m: f64, t: f64) -> Result<f64> {
    let [c, d, e] = l2_coefficients(p, q, t)?;
    Ok(c * m * m + d * m + e)
}

/// Leading large-time term of `L2`: `2 v^2 / (beta delta) exp(2 delta t)`,
/// which reduces to `2 (v/beta)^2 exp(2 beta t)` when `mu = 0`.
pub fn l2_leading_term(p: &ModelParams, t: f64) -> f64 {
    2.0 * p.v * p.v / (p.beta * p.delta()) * (2.0 * p.delta() * t).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub t: f64,
    pub grid_sizes: Vec<usize>,
    pub spacings: Vec<f64>,
    pub errors: Vec<f64>,
    /// `ln(e_k / e_{k+1}) / ln(h_k / h_{k+1})` for consecutive grids.
    pub observed_order: Vec<f64>,
    /// `e_k / e_{k+1}`.
    pub error_ratios: Vec<f64>,
}

/// Solver error against the closed form on a sequence of grids of common extent.
pub fn convergence_study(
    p: &ModelParams,
    q: &SplitKernel,
    m_max: f64,
    sizes: &[usize],
    t: f64,
    second_moment: bool,
    opts: &SolverOptions,
) -> Result<ConvergenceReport> {
    let coeffs = if second_moment { Some(l2_coefficients(p, q, t)?) } else { None };
    let mut spacings = Vec::new();
    let mut errors = Vec::new();
    for &n in sizes {
        let grid = MassGrid::new(m_max, n, p)?;
        let err = match coeffs {
            Some([c, d, e]) => solve_l2_with(p, q, &grid, t, opts)?
                .field
                .max_relative_error(|m| c * m * m + d * m + e),
            None => solve_l1_with(p, q, &grid, t, opts)?
                .field
                .max_relative_error(|m| exact_l1(p, m, t)),
        };
        spacings.push(grid.spacing());
        errors.push(err);
    }
    let pairs = || errors.windows(2).zip(spacings.windows(2));
    Ok(ConvergenceReport {
        t,
        grid_sizes: sizes.to_vec(),
        observed_order: pairs().map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()).collect(),
        error_ratios: errors.windows(2).map(|e| e[0] / e[1]).collect(),
        spacings,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ModelParams {
        ModelParams::new(1.0, 0.0, 1.0)
    }

    fn grid(p: &ModelParams) -> MassGrid {
        MassGrid::default_for(p).unwrap()
    }

    #[test]
    fn grid_invariants() {
        let p = unit();
        assert!(MassGrid::new(9.0, 1024, &p).is_err());
        assert!(MassGrid::new(10.0, 255, &p).is_err());
        let g = grid(&p);
        assert_eq!(g.node(0), 0.0);
        assert!((g.node(g.n_points - 1) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn nonlocal_on_polynomials() {
        let p = unit();
        let g = grid(&p);
        let uni = SplitKernel::uniform(0.25).unwrap();
        let constant = MomentField::from_fn(g, 0.0, |_| 3.0);
        assert!(nonlocal_term(&constant, &uni).iter().all(|x| x.abs() < 1e-13));
        let linear = MomentField::from_fn(g, 0.0, |m| m);
        for (i, x) in nonlocal_term(&linear, &uni).iter().enumerate() {
            assert!((x + 0.5 * g.node(i)).abs() < 1e-12);
        }
        let square = MomentField::from_fn(g, 0.0, |m| m * m);
        for (i, x) in nonlocal_term(&square, &SplitKernel::AtomicHalf).iter().enumerate() {
            let m = g.node(i);
            assert!((x + 0.75 * m * m).abs() < 1e-10 * (1.0 + m * m));
        }
    }

    #[test]
    fn affine_closure_coefficient_map() {
        // applied to alpha m + g0 the full operator gives -mu alpha m + (v alpha + delta g0)
        let p = ModelParams::new(1.4, 0.3, 0.8);
        let g = grid(&p);
        let q = SplitKernel::uniform(0.2).unwrap();
        let (alpha, g0) = (1.7, -0.4);
        let f: Vec<f64> = g.nodes().iter().map(|m| alpha * m + g0).collect();
        let mut rhs = Rhs::new(&p, &q, g, Moment::First, Advection::FirstOrder);
        let mut out = vec![0.0; f.len()];
        rhs.eval(0.0, &f, &mut out);
        for (i, o) in out.iter().enumerate() {
            let m = g.node(i);
            let expected = -p.mu * alpha * m + p.v * alpha + p.delta() * g0;
            assert!((o - expected).abs() < 1e-10, "{i} {o} {expected}");
        }
    }

    #[test]
    fn exact_l1_satisfies_equation() {
        let p = ModelParams::new(2.0, 0.7, 1.3);
        let q = SplitKernel::uniform(0.3).unwrap();
        let h = 1e-5;
        for &t in &[0.2, 1.0, 2.5] {
            for &m in &[0.0, 0.4, 3.0] {
                let dt = (exact_l1(&p, m, t + h) - exact_l1(&p, m, t - h)) / (2.0 * h);
                let dm = (exact_l1(&p, m + h, t) - exact_l1(&p, m - h, t)) / (2.0 * h);
                let rule = q.quadrature();
                let nl: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&th, &w)| w * (exact_l1(&p, th * m, t) - exact_l1(&p, m, t)))
                    .sum();
                let rhs = p.v * dm + 2.0 * p.beta * nl + p.delta() * exact_l1(&p, m, t);
                assert!((dt - rhs).abs() < 1e-6 * (1.0 + dt.abs()), "{t} {m} {dt} {rhs}");
            }
        }
        assert_eq!(exact_l1(&p, 2.5, 0.0), 2.5);
        assert!((exact_l1(&unit(), 1.0, 1.0) - std::f64::consts::E).abs() < 1e-14);
    }

    #[test]
    fn exact_l2_satisfies_equation() {
        let p = ModelParams::new(1.2, 0.4, 0.9);
        let q = SplitKernel::uniform(0.25).unwrap();
        let rule = q.quadrature();
        let l2 = |m: f64, t: f64| exact_l2_ode(&p, &q, m, t).unwrap();
        let h = 1e-4;
        for &t in &[0.5, 1.5] {
            for &m in &[0.0, 0.7, 2.0] {
                let dt = (l2(m, t + h) - l2(m, t - h)) / (2.0 * h);
                let dm = (l2(m + h, t) - l2(m - h, t)) / (2.0 * h);
                let nl: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&th, &w)| {
                        w * (l2(th * m, t) - l2(m, t)
                            + exact_l1(&p, th * m, t) * exact_l1(&p, (1.0 - th) * m, t))
                    })
                    .sum();
                let rhs = p.v * dm + 2.0 * p.beta * nl + p.delta() * l2(m, t);
                assert!((dt - rhs).abs() < 1e-6 * (1.0 + dt.abs()), "{t} {m} {dt} {rhs}");
            }
        }
    }

    #[test]
    fn l2_closed_form_for_atomic_unit_rates() {
        // c = 1, d = 2(e^t - 1), e = 2e^{2t} - 2e^t - 2t e^t
        let q = SplitKernel::AtomicHalf;
        for &t in &[0.5, 3.0, 6.0] {
            let [c, d, e] = l2_coefficients(&unit(), &q, t).unwrap();
            let et = t.exp();
            assert!((c - 1.0).abs() < 1e-10);
            assert!((d - 2.0 * (et - 1.0)).abs() < 1e-9 * d);
            let e_exact = 2.0 * et * et - 2.0 * et - 2.0 * t * et;
            assert!((e - e_exact).abs() < 1e-9 * e_exact);
        }
        assert_eq!(exact_l2_ode(&unit(), &q, 1.5, 0.0).unwrap(), 2.25);
    }

    #[test]
    fn l2_leading_term_limits() {
        let q = SplitKernel::AtomicHalf;
        let r = exact_l2_ode(&unit(), &q, 1.0, 6.0).unwrap() / l2_leading_term(&unit(), 6.0);
        assert!((0.95..=1.05).contains(&r));
        let p = ModelParams::new(1.0, 0.5, 1.0);
        let r = exact_l2_ode(&p, &q, 1.0, 30.0).unwrap() / l2_leading_term(&p, 30.0);
        assert!((r - 1.0).abs() < 1e-3, "{r}");
    }

    #[test]
    fn solver_initial_conditions() {
        let p = unit();
        let g = grid(&p);
        let q = SplitKernel::AtomicHalf;
        let l1 = solve_l1(&p, &q, &g, 0.0).unwrap();
        assert!(l1.values.iter().enumerate().all(|(i, &v)| v == g.node(i)));
        let l2 = solve_l2(&p, &q, &g, 0.0).unwrap();
        assert!(l2.values.iter().enumerate().all(|(i, &v)| v == g.node(i) * g.node(i)));
    }

    #[test]
    fn solver_matches_examples() {
        let q = SplitKernel::uniform(0.25).unwrap();
        let p = unit();
        let l1 = solve_l1(&p, &q, &grid(&p), 2.0).unwrap();
        let at_one = l1.values[(1.0 / l1.grid.spacing()).round() as usize];
        let m = (1.0 / l1.grid.spacing()).round() * l1.grid.spacing();
        assert!((at_one - exact_l1(&p, m, 2.0)).abs() < 1e-3 * at_one);
        assert!((exact_l1(&p, 1.0, 2.0) - 7.389_056).abs() < 1e-6);
        let p = ModelParams::new(2.0, 1.0, 1.0);
        let l1 = solve_l1(&p, &q, &grid(&p), 1.0).unwrap();
        assert!((l1.values[0] - 1.175_201).abs() < 1e-3 * 1.175_201);
    }

    #[test]
    fn user_dt_above_bound_rejected() {
        let p = unit();
        let g = grid(&p);
        let bound = stable_dt(&p, &g);
        let opts = SolverOptions {
            dt: Some(bound * 1.01),
            ..SolverOptions::default()
        };
        assert!(matches!(
            solve_l1_with(&p, &SplitKernel::AtomicHalf, &g, 1.0, &opts),
            Err(Error::CflViolation { .. })
        ));
        let ok = SolverOptions {
            dt: Some(bound / 2.0),
            ..SolverOptions::default()
        };
        assert!(solve_l1_with(&p, &SplitKernel::AtomicHalf, &g, 0.3, &ok).is_ok());
    }

    #[test]
    fn l1_grid_refinement_reduces_error() {
        let p = ModelParams::new(1.0, 0.5, 1.0);
        let q = SplitKernel::uniform(0.25).unwrap();
        let r = convergence_study(&p, &q, 20.0, &[257, 513], 2.0, false, &SolverOptions::default()).unwrap();
        assert!(r.error_ratios[0] >= 2.0, "{r:?}");
    }

    #[test]
    fn first_order_advection_converges_at_first_order() {
        let p = unit();
        let q = SplitKernel::AtomicHalf;
        let opts = SolverOptions {
            advection: Advection::FirstOrder,
            ..SolverOptions::default()
        };
        let r = convergence_study(&p, &q, 20.0, &[257, 513, 1025], 2.0, true, &opts).unwrap();
        for order in &r.observed_order {
            assert!((order - 1.0).abs() < 0.05, "{r:?}");
        }
    }

    #[test]
    fn second_order_advection_exact_on_quadratics() {
        let p = ModelParams::new(1.0, 0.5, 1.0);
        let q = SplitKernel::uniform(0.25).unwrap();
        let g = grid(&p);
        for t in [0.5, 1.0, 3.0] {
            let [c, d, e] = l2_coefficients(&p, &q, t).unwrap();
            let sol = solve_l2_with(&p, &q, &g, t, &SolverOptions::default()).unwrap();
            assert!(sol.field.max_relative_error(|m| c * m * m + d * m + e) < 1e-8);
            assert!(sol.min_value >= 0.0);
        }
    }

    #[test]
    fn ghost_weights_reproduce_polynomials() {
        let p = unit();
        let g = grid(&p);
        for (degree, offset) in [(1usize, 1.0), (2, 1.0), (2, 2.0)] {
            let (first, w) = ghost_weights(&g, degree, offset);
            let ghost = g.m_max + offset * g.spacing();
            let f = |m: f64| 0.3 + 1.1 * m + if degree == 2 { 0.7 * m * m } else { 0.0 };
            let est: f64 = w.iter().enumerate().map(|(k, wk)| wk * f(g.node(first + k))).sum();
            assert!((est - f(ghost)).abs() < 1e-9 * f(ghost));
        }
    }
}
