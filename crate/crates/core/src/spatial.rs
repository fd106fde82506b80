//! Branching Brownian motion with masses.
//!
//! Particles additionally diffuse in `R^d` with generator `kappa * Laplacian`,
//! so a coordinate moves by `N(0, 2 kappa dt)` over a time `dt`. Branching and
//! masses follow the non-spatial model; daughters start at the parent's
//! position. Positions are only advanced at the particle's own events and at
//! output times, using exact Gaussian increments.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fde::exact_l1;
use crate::kernel::SplitKernel;
use crate::ode::{dopri5, Control, OdeOptions};
use crate::params::ModelParams;
use crate::quadrature::QuadratureRule;
use crate::rng::stream_rng;
use crate::stats::{ks_one_sample, linear_fit, MeanSe};

/// Replicates needed by [`occupation_law`].
pub const MIN_OCCUPATION_REPLICATES: usize = 1_000;

/// Particles at one output time; `positions` holds `n * dim` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSnapshot {
    pub t: f64,
    pub dim: usize,
    pub positions: Vec<f64>,
    pub masses: Vec<f64>,
}

impl SpatialSnapshot {
    pub fn n(&self) -> usize {
        self.masses.len()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.position(i).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// `N(t, region)`.
    pub fn count_in(&self, region: &Region) -> usize {
        (0..self.n()).filter(|&i| region.contains(self.position(i))).count()
    }

    /// `M(t, region)`.
    pub fn mass_in(&self, region: &Region) -> f64 {
        (0..self.n())
            .filter(|&i| region.contains(self.position(i)))
            .map(|i| self.masses[i])
            .sum()
    }
}

/// Subsets of space used for counting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Region {
    All,
    /// `[lo, hi)` in the first coordinate (one dimension).
    Interval { lo: f64, hi: f64 },
    /// Product of half-open intervals.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Closed Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::All => true,
            Region::Interval { lo, hi } => x[0] >= *lo && x[0] < *hi,
            Region::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| x >= l && x < h),
            Region::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= radius * radius
            }
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            Region::All => Ok(()),
            Region::Interval { lo, hi } if !(lo < hi) => bad(format!("empty interval [{lo}, {hi})")),
            Region::Interval { .. } if dim != 1 => bad("intervals need dim = 1".into()),
            Region::Box { lo, hi } if lo.len() != dim || hi.len() != dim => {
                bad(format!("box corners must have {dim} coordinates"))
            }
            Region::Box { lo, hi } if lo.iter().zip(hi).any(|(l, h)| !(l < h)) => bad("empty box".into()),
            Region::Ball { center, .. } if center.len() != dim => {
                bad(format!("ball center must have {dim} coordinates"))
            }
            Region::Ball { radius, .. } if !(*radius > 0.0) => bad(format!("ball radius must be positive, got {radius}")),
            _ => Ok(()),
        }
    }
}

fn check_inputs(p: &ModelParams, q: &SplitKernel, m0: f64, times: &[f64], cap: usize) -> Result<()> {
    p.validate()?;
    q.validate()?;
    if !(m0 > 0.0) || !m0.is_finite() {
        return Err(Error::InvalidParameter(format!("initial mass must be positive, got {m0}")));
    }
    if times.is_empty() || times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParameter("output times must be finite and >= 0".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("output times must be nondecreasing".into()));
    }
    if cap == 0 {
        return Err(Error::InvalidParameter("cap must be >= 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    mass: f64,
    birth: f64,
    /// Time at which the stored position is valid.
    pos_time: f64,
    alive: bool,
}

#[derive(Debug, Clone, Copy)]
struct Ring {
    t: f64,
    slot: usize,
}

impl PartialEq for Ring {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ring {}

impl PartialOrd for Ring {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ring {
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t)
    }
}

struct Engine<'a, R: Rng + ?Sized> {
    p: &'a ModelParams,
    rng: &'a mut R,
    slots: Vec<Slot>,
    pos: Vec<f64>,
    free: Vec<usize>,
    live: usize,
    sd_rate: f64,
}

impl<R: Rng + ?Sized> Engine<'_, R> {
    fn advance(&mut self, s: usize, t: f64) {
        let dt = t - self.slots[s].pos_time;
        if dt > 0.0 && self.sd_rate > 0.0 {
            let sd = self.sd_rate * dt.sqrt();
            let d = self.p.dim;
            for x in &mut self.pos[s * d..(s + 1) * d] {
                let z: f64 = StandardNormal.sample(self.rng);
                *x += sd * z;
            }
        }
        self.slots[s].pos_time = t;
    }

    fn allocate(&mut self, slot: Slot, from: usize) -> usize {
        let d = self.p.dim;
        let s = match self.free.pop() {
            Some(s) => {
                self.slots[s] = slot;
                s
            }
            None => {
                self.slots.push(slot);
                self.pos.extend(std::iter::repeat_n(0.0, d));
                self.slots.len() - 1
            }
        };
        self.pos.copy_within(from * d..(from + 1) * d, s * d);
        s
    }
}

/// Simulates one replicate and records the population at each of `times`
/// (nondecreasing). The initial particle sits at the origin.
pub fn simulate_bbm_at<R: Rng + ?Sized>(
    p: &ModelParams,
    q: &SplitKernel,
    m0: f64,
    times: &[f64],
    rng: &mut R,
    cap: usize,
) -> Result<Vec<SpatialSnapshot>> {
    check_inputs(p, q, m0, times, cap)?;
    let total_rate = p.beta + p.mu;
    let split_prob = p.beta / total_rate;
    let clock = Exp::new(total_rate).expect("positive rate");
    let theta = q.distribution();
    let d = p.dim;

    let mut heap = BinaryHeap::new();
    let mut eng = Engine {
        p,
        rng,
        slots: vec![Slot {
            mass: m0,
            birth: 0.0,
            pos_time: 0.0,
            alive: true,
        }],
        pos: vec![0.0; d],
        free: Vec::new(),
        live: 1,
        sd_rate: (2.0 * p.kappa).sqrt(),
    };
    heap.push(Ring {
        t: clock.sample(eng.rng),
        slot: 0,
    });

    let mut out = Vec::with_capacity(times.len());
    for &t_out in times {
        while let Some(&Ring { t, slot }) = heap.peek() {
            if t > t_out {
                break;
            }
            heap.pop();
            eng.advance(slot, t);
            let parent = eng.slots[slot];
            let mass = parent.mass + p.v * (t - parent.birth);
            if eng.rng.random::<f64>() < split_prob {
                let th: f64 = theta.sample(eng.rng);
                let first = th * mass;
                eng.slots[slot] = Slot {
                    mass: first,
                    birth: t,
                    pos_time: t,
                    alive: true,
                };
                let other = eng.allocate(
                    Slot {
                        mass: mass - first,
                        birth: t,
                        pos_time: t,
                        alive: true,
                    },
                    slot,
                );
                eng.live += 1;
                for s in [slot, other] {
                    heap.push(Ring {
                        t: t + clock.sample(eng.rng),
                        slot: s,
                    });
                }
                if eng.live > cap {
                    return Err(Error::PopulationCap {
                        cap,
                        t,
                        replicate: None,
                    });
                }
            } else {
                eng.slots[slot].alive = false;
                eng.free.push(slot);
                eng.live -= 1;
            }
        }
        let mut positions = Vec::with_capacity(eng.live * d);
        let mut masses = Vec::with_capacity(eng.live);
        for s in 0..eng.slots.len() {
            if eng.slots[s].alive {
                eng.advance(s, t_out);
                positions.extend_from_slice(&eng.pos[s * d..(s + 1) * d]);
                let sl = eng.slots[s];
                masses.push(sl.mass + p.v * (t_out - sl.birth));
            }
        }
        out.push(SpatialSnapshot {
            t: t_out,
            dim: d,
            positions,
            masses,
        });
    }
    Ok(out)
}

/// One replicate at `t_end`; `seed` selects stream 0.
pub fn simulate_bbm(
    p: &ModelParams,
    q: &SplitKernel,
    m0: f64,
    t_end: f64,
    seed: u64,
    cap: usize,
) -> Result<SpatialSnapshot> {
    let mut rng = stream_rng(seed, 0);
    Ok(simulate_bbm_at(p, q, m0, &[t_end], &mut rng, cap)?.remove(0))
}

/// Runs `replicates` replicates (replicate `r` on stream `r`) and reduces each
/// to a summary with `summarize(r, snapshots)`. Output order follows `r`.
#[allow(clippy::too_many_arguments)]
pub fn bbm_ensemble<T, F>(
    p: &ModelParams,
    q: &SplitKernel,
    m0: f64,
    times: &[f64],
    replicates: usize,
    seed: u64,
    cap: usize,
    summarize: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, Vec<SpatialSnapshot>) -> T + Sync,
{
    if replicates == 0 {
        return Err(Error::InvalidParameter("replicate count must be >= 1".into()));
    }
    check_inputs(p, q, m0, times, cap)?;
    let rows: Vec<Result<T>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let snaps = simulate_bbm_at(p, q, m0, times, &mut rng, cap).map_err(|e| match e {
                Error::PopulationCap { cap, t, .. } => Error::PopulationCap {
                    cap,
                    t,
                    replicate: Some(r),
                },
                other => other,
            })?;
            Ok(summarize(r, snaps))
        })
        .collect();
    rows.into_iter().collect()
}

/// Mean particle density `exp(-|y|^2 / (4 kappa t) + delta t) / (4 kappa pi t)^(d/2)`
/// for a population started from one particle at the origin. Requires `t > 0`
/// and `kappa > 0`.
pub fn mean_density(t: f64, y: &[f64], p: &ModelParams) -> f64 {
    let r2: f64 = y.iter().map(|x| x * x).sum();
    let four_kt = 4.0 * p.kappa * t;
    (-r2 / four_kt + p.delta() * t).exp() / (four_kt * std::f64::consts::PI).powf(p.dim as f64 / 2.0)
}

/// Radius where the mean density equals one:
/// `sqrt(4 kappa t (delta t - (d/2) ln(4 kappa pi t)))`.
pub fn density_front_radius(t: f64, p: &ModelParams) -> Result<f64> {
    let undefined = |reason: &str| Error::FrontUndefined {
        t,
        reason: reason.to_string(),
    };
    if !(t > 0.0) || !(p.kappa > 0.0) {
        return Err(undefined("needs t > 0 and kappa > 0"));
    }
    let four_kt = 4.0 * p.kappa * t;
    let excess = p.delta() * t - 0.5 * p.dim as f64 * (four_kt * std::f64::consts::PI).ln();
    if !(excess > 0.0) {
        return Err(undefined("mean density at the origin is below one"));
    }
    Ok((four_kt * excess).sqrt())
}

/// Same radius found by bisection on `ln mean_density(t, r e_1) = 0`.
pub fn density_front_radius_bisect(t: f64, p: &ModelParams, tol: f64) -> Result<f64> {
    let log_density = |r: f64| {
        let four_kt = 4.0 * p.kappa * t;
        -r * r / four_kt + p.delta() * t - 0.5 * p.dim as f64 * (four_kt * std::f64::consts::PI).ln()
    };
    if !(t > 0.0 && p.kappa > 0.0) || log_density(0.0) <= 0.0 {
        return Err(Error::FrontUndefined {
            t,
            reason: "mean density at the origin is below one".into(),
        });
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while log_density(hi) > 0.0 {
        hi *= 2.0;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if log_density(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn ball_volume(dim: usize, r: f64) -> f64 {
    let h = dim as f64 / 2.0;
    std::f64::consts::PI.powf(h) / libm::tgamma(h + 1.0) * r.powi(dim as i32)
}

/// Ensemble histogram of particle distances from the origin, per output time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEstimator {
    pub times: Vec<f64>,
    pub dim: usize,
    pub bin_width: f64,
    /// `counts[k][b]`: particles at `times[k]` with `|x|` in bin `b`.
    pub counts: Vec<Vec<u64>>,
    pub replicates: usize,
}

impl FrontEstimator {
    pub fn new(times: &[f64], dim: usize, bin_width: f64, r_max: f64) -> Self {
        let bins = (r_max / bin_width).ceil() as usize;
        Self {
            times: times.to_vec(),
            dim,
            bin_width,
            counts: vec![vec![0; bins]; times.len()],
            replicates: 0,
        }
    }

    /// Adds one replicate (one snapshot per output time).
    pub fn add(&mut self, snapshots: &[SpatialSnapshot]) {
        for (k, snap) in snapshots.iter().enumerate() {
            let row = &mut self.counts[k];
            let bins = row.len();
            for i in 0..snap.n() {
                let b = (snap.radius(i) / self.bin_width) as usize;
                if b < bins {
                    row[b] += 1;
                }
            }
        }
        self.replicates += 1;
    }

    pub fn merge(mut self, other: &FrontEstimator) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.replicates += other.replicates;
        self
    }

    /// Mean particle density (per unit volume) in bin `b` at `times[k]`.
    pub fn density(&self, k: usize, b: usize) -> f64 {
        let w = self.bin_width;
        let shell = ball_volume(self.dim, (b + 1) as f64 * w) - ball_volume(self.dim, b as f64 * w);
        self.counts[k][b] as f64 / (self.replicates as f64 * shell)
    }

    /// Outermost radius with density at least `threshold`, refined by
    /// log-linear interpolation between bin centers. `None` if no bin qualifies.
    pub fn front_radius(&self, k: usize, threshold: f64) -> Option<f64> {
        let bins = self.counts[k].len();
        let last = (0..bins).rev().find(|&b| self.density(k, b) >= threshold)?;
        let center = |b: usize| (b as f64 + 0.5) * self.bin_width;
        let inside = self.density(k, last);
        let outside = if last + 1 < bins { self.density(k, last + 1) } else { 0.0 };
        if outside <= 0.0 {
            return Some(center(last));
        }
        let frac = (inside / threshold).ln() / (inside / outside).ln();
        Some(center(last) + frac * self.bin_width)
    }

    /// Front radii at every output time and a least-squares speed over times `>= fit_from`.
    pub fn finish(&self, p: &ModelParams, threshold: f64, fit_from: f64) -> Result<FrontStats> {
        let mut rows = Vec::with_capacity(self.times.len());
        for (k, &t) in self.times.iter().enumerate() {
            rows.push(FrontRow {
                t,
                empirical: self.front_radius(k, threshold),
                exact: density_front_radius(t, p).ok(),
                leading: 2.0 * (p.kappa * p.delta()).sqrt() * t,
            });
        }
        let (x, y): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.t >= fit_from)
            .filter_map(|r| r.empirical.map(|e| (r.t, e)))
            .unzip();
        if x.len() < 3 {
            return Err(Error::FrontUndefined {
                t: fit_from,
                reason: format!("only {} output times with a resolved front", x.len()),
            });
        }
        let fit = linear_fit(&x, &y, None);
        Ok(FrontStats {
            rows,
            replicates: self.replicates,
            fit_from,
            speed: fit.slope,
            speed_se: fit.slope_se,
            leading_speed: 2.0 * (p.kappa * p.delta()).sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontRow {
    pub t: f64,
    pub empirical: Option<f64>,
    pub exact: Option<f64>,
    /// `2 sqrt(kappa delta) t`.
    pub leading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontStats {
    pub rows: Vec<FrontRow>,
    pub replicates: usize,
    pub fit_from: f64,
    pub speed: f64,
    pub speed_se: f64,
    pub leading_speed: f64,
}

/// Simulates `replicates` populations observed at `times` and estimates the
/// density front with unit threshold and bins of width `bin_width`. The speed
/// is fitted over the second half of the time window.
#[allow(clippy::too_many_arguments)]
pub fn empirical_front(
    p: &ModelParams,
    q: &SplitKernel,
    m0: f64,
    times: &[f64],
    replicates: usize,
    seed: u64,
    cap: usize,
    bin_width: f64,
) -> Result<FrontStats> {
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let t_min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let r_max = 2.0 * (2.0 * (p.kappa * p.delta()).sqrt() * t_max + 4.0 * (p.kappa * t_max).sqrt()) + bin_width;
    let template = FrontEstimator::new(times, p.dim, bin_width, r_max);
    let parts = bbm_ensemble(p, q, m0, times, replicates, seed, cap, |_, snaps| {
        let mut est = template.clone();
        est.add(&snaps);
        est
    })?;
    let total = parts.iter().fold(template.clone(), |acc, part| acc.merge(part));
    total.finish(p, 1.0, 0.5 * (t_min + t_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaveClass {
    MonotoneFront,
    Oscillatory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveProfile {
    pub c: f64,
    pub z: Vec<f64>,
    pub phi: Vec<f64>,
    pub classification: WaveClass,
    /// True when the shooting trajectory went below zero.
    pub crossed_zero: bool,
}

/// Shoots `kappa phi'' + c phi' + beta phi (1 - phi) = 0` from the unstable
/// manifold of `phi = 1` over `[0, z_span]`. The approach to `phi = 0` is
/// classified by the discriminant `c^2 - 4 kappa beta` of its linearization;
/// an observed zero crossing always means an oscillatory approach.
pub fn traveling_wave(c: f64, p: &ModelParams, z_span: f64, tol: f64) -> Result<WaveProfile> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("wave speed must be positive, got {c}")));
    }
    if !(p.kappa > 0.0) || !(p.beta > 0.0) {
        return Err(Error::InvalidParameter("traveling waves need kappa > 0 and beta > 0".into()));
    }
    if !(z_span > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidParameter("z_span and tol must be positive".into()));
    }
    let (kappa, beta) = (p.kappa, p.beta);
    let lambda = (-c + (c * c + 4.0 * kappa * beta).sqrt()) / (2.0 * kappa);
    let eps = 1e-6;
    let mut z = vec![0.0];
    let mut phi = vec![1.0 - eps];
    let mut crossed = false;
    let mut blew_up = false;
    let opts = OdeOptions {
        rtol: tol,
        atol: tol * 1e-3,
        h_max: 0.05 * z_span.min(10.0),
        ..OdeOptions::default()
    };
    dopri5(
        |_, y: &[f64; 2], dy| {
            dy[0] = y[1];
            dy[1] = -(c * y[1] + beta * y[0] * (1.0 - y[0])) / kappa;
        },
        0.0,
        [1.0 - eps, -eps * lambda],
        z_span,
        &opts,
        |s, y| {
            z.push(s);
            phi.push(y[0]);
            if y[0] < -1e-9 {
                crossed = true;
                Control::Stop
            } else if !y[0].is_finite() || y[0].abs() > 10.0 {
                blew_up = true;
                Control::Stop
            } else if y[0] < 1e-14 && y[1].abs() < 1e-14 {
                Control::Stop
            } else {
                Control::Continue
            }
        },
    )?;
    if blew_up {
        return Err(Error::IntegrationFailure(format!("wave profile blew up at c = {c}")));
    }
    let classification = if crossed || c * c < 4.0 * kappa * beta {
        WaveClass::Oscillatory
    } else {
        WaveClass::MonotoneFront
    };
    Ok(WaveProfile {
        c,
        z,
        phi,
        classification,
        crossed_zero: crossed,
    })
}

/// Smallest speed with a monotone front, by bisection on the classification.
pub fn minimal_speed(p: &ModelParams, tol: f64) -> Result<f64> {
    let class = |c: f64| traveling_wave(c, p, 200.0, 1e-9).map(|w| w.classification);
    let mut lo = 1e-3;
    let mut hi = 1.0;
    if class(lo)? == WaveClass::MonotoneFront {
        return Err(Error::IntegrationFailure("monotone front at vanishing speed".into()));
    }
    while class(hi)? != WaveClass::MonotoneFront {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::IntegrationFailure("no monotone front found".into()));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if class(mid)? == WaveClass::MonotoneFront {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `P(x + sqrt(2 kappa t) Z in region)` for standard normal `Z`.
pub fn region_probability(t: f64, x: &[f64], region: &Region, p: &ModelParams) -> Result<f64> {
    region.check(p.dim)?;
    if x.len() != p.dim {
        return Err(Error::InvalidParameter(format!("start point must have {} coordinates", p.dim)));
    }
    let sd = (2.0 * p.kappa * t).sqrt();
    if sd == 0.0 {
        return Ok(if region.contains(x) { 1.0 } else { 0.0 });
    }
    let interval = |x0: f64, lo: f64, hi: f64| {
        let a = lo.max(x0 - 40.0 * sd);
        let b = hi.min(x0 + 40.0 * sd);
        if a >= b {
            return 0.0;
        }
        let panels = (((b - a) / sd).ceil() as usize).clamp(1, 200);
        let rule = QuadratureRule::composite(panels, 16, a, b);
        let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
        rule.integrate(|y| norm * (-0.5 * ((y - x0) / sd).powi(2)).exp())
    };
    match region {
        Region::All => Ok(1.0),
        Region::Interval { lo, hi } => Ok(interval(x[0], *lo, *hi)),
        Region::Box { lo, hi } => Ok((0..p.dim).map(|i| interval(x[i], lo[i], hi[i])).product()),
        Region::Ball { center, radius } if p.dim == 1 => {
            Ok(interval(x[0], center[0] - radius, center[0] + radius))
        }
        Region::Ball { .. } => Err(Error::InvalidParameter(
            "ball probabilities are implemented for dim = 1 only".into(),
        )),
    }
}

/// `E M(t, region)` from one particle of mass `m` at `x`: the probability that
/// a Brownian path lands in `region` times the mean total mass. The product
/// form holds because motion is independent of branching and masses.
pub fn spatial_first_moment(t: f64, x: &[f64], m: f64, region: &Region, p: &ModelParams) -> Result<f64> {
    p.validate()?;
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("t must be >= 0, got {t}")));
    }
    Ok(region_probability(t, x, region, p)? * exact_l1(p, m, t))
}

/// `E N(t, region)` from one particle at `x`.
pub fn expected_count(t: f64, x: &[f64], region: &Region, p: &ModelParams) -> Result<f64> {
    p.validate()?;
    Ok(region_probability(t, x, region, p)? * (p.delta() * t).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    pub t: f64,
    pub center: Vec<f64>,
    pub radius: f64,
    pub replicates: usize,
    pub mean_count: MeanSe,
    /// Closed-form `E N(t, B)`.
    pub expected_count: f64,
    /// KS distance of `N(t, B) / mean` against `Exp(1)`.
    pub ks: f64,
}

/// Compares the normalized ball counts `N(t, B_r(x)) / mean` with `Exp(1)`.
pub fn occupation_law(
    counts: &[u64],
    t: f64,
    center: &[f64],
    radius: f64,
    p: &ModelParams,
) -> Result<OccupationReport> {
    if counts.len() < MIN_OCCUPATION_REPLICATES {
        return Err(Error::InsufficientSamples {
            needed: MIN_OCCUPATION_REPLICATES,
            got: counts.len(),
        });
    }
    let region = Region::Ball {
        center: center.to_vec(),
        radius,
    };
    let origin = vec![0.0; p.dim];
    let expected = expected_count(t, &origin, &region, p)?;
    if expected < 1.0 {
        return Err(Error::FrontUndefined {
            t,
            reason: format!("ball lies outside the front (expected count {expected:.3e})"),
        });
    }
    let mean_count = MeanSe::from_iter(counts.iter().map(|&n| n as f64));
    if mean_count.mean <= 0.0 {
        return Err(Error::InsufficientSamples {
            needed: 1,
            got: 0,
        });
    }
    let normalized: Vec<f64> = counts.iter().map(|&n| n as f64 / mean_count.mean).collect();
    let ks = ks_one_sample(&normalized, |a| -(-a).exp_m1());
    Ok(OccupationReport {
        t,
        center: center.to_vec(),
        radius,
        replicates: counts.len(),
        mean_count,
        expected_count: expected,
        ks,
    })
}

/// Ball counts `N(t, B_r(x))` for `replicates` replicates.
#[allow(clippy::too_many_arguments)]
pub fn occupation_counts(
    p: &ModelParams,
    q: &SplitKernel,
    m0: f64,
    t: f64,
    center: &[f64],
    radius: f64,
    replicates: usize,
    seed: u64,
    cap: usize,
) -> Result<Vec<u64>> {
    let region = Region::Ball {
        center: center.to_vec(),
        radius,
    };
    region.check(p.dim)?;
    bbm_ensemble(p, q, m0, &[t], replicates, seed, cap, |_, snaps| snaps[0].count_in(&region) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bbm(kappa: f64) -> ModelParams {
        ModelParams::new(1.0, 0.0, 1.0).with_diffusion(kappa, 1)
    }

    #[test]
    fn zero_time_single_particle_at_origin() {
        let s = simulate_bbm(&bbm(1.0), &SplitKernel::AtomicHalf, 2.0, 0.0, 3, 100).unwrap();
        assert_eq!(s.n(), 1);
        assert_eq!(s.position(0), &[0.0]);
        assert_eq!(s.masses, vec![2.0]);
    }

    #[test]
    fn density_example_and_normalization() {
        let p = bbm(1.0);
        let v = mean_density(1.0, &[0.0], &p);
        assert!((v - std::f64::consts::E / (4.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!((v - 0.766_813).abs() < 1e-6);
        assert!(mean_density(1.0, &[1e3], &p) == 0.0);
        let rule = QuadratureRule::composite(200, 16, -60.0, 60.0);
        let total = rule.integrate(|y| mean_density(3.0, &[y], &p));
        assert!((total - 3f64.exp()).abs() < 1e-9 * total);
    }

    #[test]
    fn front_radius_closed_form_and_root() {
        let p = bbm(1.0);
        let r = density_front_radius(10.0, &p).unwrap();
        let expected = (40.0 * (10.0 - 0.5 * (40.0 * std::f64::consts::PI).ln())).sqrt();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 17.4163).abs() < 1e-4);
        assert!((mean_density(10.0, &[r], &p) - 1.0).abs() < 1e-12);
        let b = density_front_radius_bisect(10.0, &p, 1e-12).unwrap();
        assert!((r - b).abs() < 1e-9);
        // (4 kappa pi t)^(1/2) exceeds e^t at kappa = 10, t = 1
        let wide = ModelParams::new(1.0, 0.0, 1.0).with_diffusion(10.0, 1);
        assert!(matches!(density_front_radius(1.0, &wide), Err(Error::FrontUndefined { .. })));
        assert!(density_front_radius_bisect(1.0, &wide, 1e-9).is_err());
    }

    #[test]
    fn wave_examples() {
        let p = bbm(1.0);
        let w = traveling_wave(3.0, &p, 150.0, 1e-10).unwrap();
        assert_eq!(w.classification, WaveClass::MonotoneFront);
        assert!(w.phi.iter().all(|&x| (-1e-9..=1.0).contains(&x)));
        assert!(*w.phi.last().unwrap() < 1e-3);
        let w = traveling_wave(1.0, &p, 40.0, 1e-10).unwrap();
        assert_eq!(w.classification, WaveClass::Oscillatory);
        assert!(w.crossed_zero);
    }

    #[test]
    fn region_probability_limits() {
        let p = bbm(1.0);
        let all = region_probability(2.0, &[0.0], &Region::Interval { lo: -1e3, hi: 1e3 }, &p).unwrap();
        assert!((all - 1.0).abs() < 1e-12);
        let half = region_probability(2.0, &[0.0], &Region::Interval { lo: 0.0, hi: 1e3 }, &p).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        let erf = libm::erf(1.0 / (2.0 * 2f64.sqrt()));
        let sym = region_probability(2.0, &[0.0], &Region::Interval { lo: -1.0, hi: 1.0 }, &p).unwrap();
        assert!((sym - erf).abs() < 1e-12);
        let tiny = region_probability(1e-12, &[0.3], &Region::Interval { lo: 0.0, hi: 1.0 }, &p).unwrap();
        assert!((tiny - 1.0).abs() < 1e-9);
    }

    #[test]
    fn whole_space_first_moment_is_exact_l1() {
        let p = bbm(1.0);
        for &(t, m) in &[(0.5, 1.0), (2.0, 3.0)] {
            let a = spatial_first_moment(t, &[0.0], m, &Region::All, &p).unwrap();
            let expected = m + (p.v / p.beta) * ((p.beta * t).exp() - 1.0);
            assert!((a - expected).abs() < 1e-10 * expected);
        }
        let near_zero = spatial_first_moment(1e-14, &[0.0], 2.0, &Region::Interval { lo: -1.0, hi: 1.0 }, &p).unwrap();
        assert!((near_zero - 2.0).abs() < 1e-9);
    }

    #[test]
    fn partition_counts_add_up() {
        let p = bbm(1.0);
        let s = simulate_bbm(&p, &SplitKernel::AtomicHalf, 1.0, 4.0, 5, 100_000).unwrap();
        let edges: Vec<f64> = (-10..=10).map(|k| k as f64 * 2.0).collect();
        let pieces: usize = edges
            .windows(2)
            .map(|w| s.count_in(&Region::Interval { lo: w[0], hi: w[1] }))
            .sum();
        assert_eq!(pieces, s.count_in(&Region::Interval { lo: -20.0, hi: 20.0 }));
    }

    #[test]
    fn multiple_output_times_are_nested() {
        let p = bbm(0.5);
        let mut rng = stream_rng(4, 0);
        let snaps = simulate_bbm_at(&p, &SplitKernel::AtomicHalf, 1.0, &[1.0, 2.0, 3.0], &mut rng, 100_000).unwrap();
        assert_eq!(snaps.len(), 3);
        assert!(snaps.windows(2).all(|w| w[0].n() <= w[1].n()));
        assert!(snaps.iter().all(|s| s.positions.len() == s.n()));
    }

    #[test]
    fn occupation_guards() {
        let p = bbm(1.0);
        assert!(matches!(
            occupation_law(&[1; 10], 8.0, &[0.0], 1.0, &p),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            occupation_law(&[0; 1000], 8.0, &[20.0], 1.0, &p),
            Err(Error::FrontUndefined { .. })
        ));
    }
}
