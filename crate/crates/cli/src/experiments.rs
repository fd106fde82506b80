//! One function per experiment kind. Each writes its tables into the output
//! directory and returns the criteria it checked.

use std::path::{Path, PathBuf};

use mitograph::counts::{gw_mean, gw_pmf};
use mitograph::export::{self, EnsembleSummary};
use mitograph::fde::{
    convergence_study, exact_l1, exact_l2_ode, l2_coefficients, solve_l1, solve_l2, MomentField, SolverOptions,
};
use mitograph::mass_process::{
    default_test_functions, estimate_alpha, fit_tail, invariant_moments, small_mass_bound_check,
    stationarity_residual, tagged_mass_samples, tail_approximation, InvariantSeries, DEFAULT_EPS_REL,
};
use mitograph::population::{compare_counts_law, replicate_ensemble, EnsembleOptions};
use mitograph::rng::{chunked_samples, derive_seed};
use mitograph::spatial::{
    bbm_ensemble, density_front_radius, density_front_radius_bisect, empirical_front, minimal_speed,
    occupation_law, spatial_first_moment, traveling_wave, Region, WaveClass,
};
use mitograph::stats::{ks_two_sample, EmpiricalDistribution, Histogram, MeanSe};
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::report::{CriterionResult, Rule};
use crate::CliError;

/// Counts above this expected size make the limit-law check meaningful.
const LIMIT_LAW_MIN_MEAN: f64 = 1000.0;
const WAVE_SCAN_POINTS: usize = 80;

pub struct Outcome {
    pub criteria: Vec<CriterionResult>,
    pub artifacts: Vec<String>,
}

struct Artifacts<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.names.push(name.to_string());
        self.dir.join(name)
    }

    fn csv<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<(), CliError> {
        Ok(export::write_csv(&self.path(name), rows)?)
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        Ok(export::write_json(&self.path(name), value)?)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let mut out = Artifacts { dir, names: Vec::new() };
    let criteria = match cfg.kind {
        ExperimentKind::CountsLaw => counts_law(cfg, &mut out)?,
        ExperimentKind::TotalMassMoments => total_mass_moments(cfg, &mut out)?,
        ExperimentKind::InvariantDensity => invariant_density(cfg, &mut out)?,
        ExperimentKind::TailAsymptotics => tail_asymptotics(cfg, &mut out)?,
        ExperimentKind::SmallMassBound => small_mass(cfg, &mut out)?,
        ExperimentKind::FdeSolve => fde_solve(cfg, &mut out)?,
        ExperimentKind::KppFront => kpp_front(cfg, &mut out)?,
        ExperimentKind::TravelingWave => traveling_wave_scan(cfg, &mut out)?,
        ExperimentKind::OccupationLaw => occupation(cfg, &mut out)?,
    };
    Ok(Outcome { criteria, artifacts: out.names })
}

fn ensemble_options(cfg: &ExperimentConfig) -> EnsembleOptions {
    EnsembleOptions {
        cap: cfg.cap(),
        retain_masses: false,
    }
}

fn counts_law(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Vec<CriterionResult>, CliError> {
    let p = &cfg.params;
    let d = p.validate()?;
    let t = cfg.horizon();
    let stats = replicate_ensemble(p, &cfg.kernel, cfg.m0, t, cfg.replicates(), cfg.seed, &ensemble_options(cfg))?;
    let law = compare_counts_law(&stats, &d, t)?;
    out.csv("ensemble.csv", export::ensemble_rows(&stats))?;
    out.json("summary.json", &EnsembleSummary::new(p, &stats, Some(&law)))?;

    let mut criteria = vec![
        CriterionResult::new("counts-tv", "total variation between empirical and exact pmf of N(t)", law.tv_counts, Rule::Below, 0.01),
        CriterionResult::z_test("mean-counts", "mean N(t) against e^{delta t}", stats.mean_n.mean, stats.mean_n.se, gw_mean(t, &d), 3.0),
        CriterionResult::z_test("extinction", "extinct fraction against P{N(t) = 0}", stats.extinct.mean, stats.extinct.se, gw_pmf(0, t, &d), 3.0),
    ];
    if gw_mean(t, &d) >= LIMIT_LAW_MIN_MEAN {
        if let Some(ks) = law.ks_limit {
            criteria.push(CriterionResult::new("limit-law", "KS of N(t) e^{-delta t} on survival against the limit law", ks, Rule::Below, 0.02));
        }
    }
    Ok(criteria)
}

fn total_mass_moments(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Vec<CriterionResult>, CliError> {
    let p = &cfg.params;
    let t = cfg.horizon();
    let stats = replicate_ensemble(p, &cfg.kernel, cfg.m0, t, cfg.replicates(), cfg.seed, &ensemble_options(cfg))?;
    out.csv("ensemble.csv", export::ensemble_rows(&stats))?;
    out.json("summary.json", &EnsembleSummary::new(p, &stats, None))?;
    let l1 = exact_l1(p, cfg.m0, t);
    let l2 = exact_l2_ode(p, &cfg.kernel, cfg.m0, t)?;
    Ok(vec![
        CriterionResult::z_test("first-moment", "mean total mass against L1", stats.mean_m.mean, stats.mean_m.se, l1, 3.0),
        CriterionResult::z_test("second-moment", "mean squared total mass against L2", stats.mean_m_sq.mean, stats.mean_m_sq.se, l2, 3.0),
    ])
}

#[derive(Serialize)]
struct MomentRow {
    k: u32,
    exact: f64,
    monte_carlo: f64,
    se: f64,
    z: f64,
}

#[derive(Serialize)]
struct InvariantReport<'a> {
    moments: &'a [MomentRow],
    closed_form_rel_error: f64,
    fixed_point_ks: f64,
    tagged_ks: f64,
    stationarity: &'a mitograph::mass_process::StationarityReport,
    exp_control: &'a mitograph::mass_process::StationarityReport,
}

fn invariant_density(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Vec<CriterionResult>, CliError> {
    let p = &cfg.params;
    let q = &cfg.kernel;
    let n = cfg.replicates();
    let series = InvariantSeries::new(p, q, DEFAULT_EPS_REL)?;
    let xi = series.samples(n, cfg.seed);
    let exact = invariant_moments(p, q, 6)?;
    let moments: Vec<MomentRow> = (1..=6u32)
        .map(|k| {
            let mc = MeanSe::from_iter(xi.iter().map(|x| x.powi(k as i32)));
            let target = exact[k as usize - 1];
            MomentRow { k, exact: target, monte_carlo: mc.mean, se: mc.se, z: mc.z_score(target) }
        })
        .collect();
    let max_z = moments.iter().map(|r| r.z).fold(0.0, f64::max);

    let (v, b) = (p.v, p.beta);
    let (t2, t3) = (q.moment(2), q.moment(3));
    let closed = [
        v / b,
        v * v / (b * b * (1.0 - t2)),
        3.0 * v.powi(3) / (2.0 * b.powi(3) * (1.0 - t2) * (1.0 - t3)),
    ];
    let closed_err = closed.iter().zip(&exact).map(|(c, e)| ((c - e) / c).abs()).fold(0.0, f64::max);

    let image = series.fixed_point_samples(n, derive_seed(cfg.seed, 1));
    let fixed_ks = ks_two_sample(&xi, &image);
    let tagged = tagged_mass_samples(p, q, cfg.m0, 12.0 / b, n, derive_seed(cfg.seed, 2))?;
    let tagged_ks = ks_two_sample(&xi, &tagged);
    let functions = default_test_functions(p);
    let residual = stationarity_residual(&xi, q, p, &functions);
    let exp = Exp::new(b / v).map_err(|e| CliError::Config(e.to_string()))?;
    let control: Vec<f64> = chunked_samples(n, derive_seed(cfg.seed, 3), |rng| exp.sample(rng));
    let negative = stationarity_residual(&control, q, p, &functions);

    out.csv("samples.csv", export::sample_rows(&xi))?;
    out.json(
        "invariant.json",
        &InvariantReport {
            moments: &moments,
            closed_form_rel_error: closed_err,
            fixed_point_ks: fixed_ks,
            tagged_ks,
            stationarity: &residual,
            exp_control: &negative,
        },
    )?;
    Ok(vec![
        CriterionResult::new("moments", "largest |z| of Monte Carlo moments k = 1..6 against the recursion", max_z, Rule::Below, 3.0),
        CriterionResult::new("moment-closed-forms", "relative error of the recursion against closed forms for k = 1..3", closed_err, Rule::AtMost, 1e-12),
        CriterionResult::new("fixed-point", "two-sample KS between xi and v tau + theta xi'", fixed_ks, Rule::Below, 0.01),
        CriterionResult::new("tagged-process", "two-sample KS between the tagged mass at t = 12/beta and xi", tagged_ks, Rule::Below, 0.02),
        CriterionResult::new("stationarity", "largest |z| of the weak stationarity residual", residual.max_z, Rule::Below, 3.0),
        CriterionResult::new("negative-control", "largest |z| of the residual for an exponential law", negative.max_z, Rule::Above, 5.0),
    ])
}

#[derive(Serialize)]
struct DensityRow {
    m: f64,
    density: f64,
    approximation: f64,
}

fn tail_asymptotics(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Vec<CriterionResult>, CliError> {
    let p = &cfg.params;
    let q = &cfg.kernel;
    let scale = p.v / p.beta;
    let xi = InvariantSeries::new(p, q, DEFAULT_EPS_REL)?.samples(cfg.replicates(), cfg.seed);
    let fit = fit_tail(&xi, p, q, (3.0 * scale, 6.0 * scale), 0.1 * scale)?;
    let alpha = estimate_alpha(q, 1_000, 1e-15, derive_seed(cfg.seed, 1))?;
    let hist = Histogram::from_samples(&xi, 0.0, 8.0 * scale, 80);
    let rows: Vec<DensityRow> = (0..hist.counts.len())
        .map(|bin| {
            let m = hist.center(bin);
            DensityRow { m, density: hist.density(bin), approximation: tail_approximation(m, alpha.value, p) }
        })
        .collect();
    out.csv("tail_density.csv", rows)?;
    out.json("tail.json", &serde_json::json!({ "fit": fit, "alpha": alpha }))?;
    let prefactor = 2.0 * alpha.value * p.beta / p.v;
    Ok(vec![
        CriterionResult::relative("tail-slope", "fitted log-density slope against -2 beta / v", fit.slope, -2.0 * p.beta / p.v, 0.10),
        CriterionResult::relative("tail-prefactor", "fitted prefactor against 2 alpha beta / v", fit.prefactor, prefactor, 0.25),
    ])
}

fn small_mass(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Vec<CriterionResult>, CliError> {
    let p = &cfg.params;
    let q = &cfg.kernel;
    let scale = p.v / p.beta;
    let grid: Vec<f64> = cfg
        .mass_grid
        .clone()
        .unwrap_or_else(|| vec![0.05, 0.1, 0.2, 0.3])
        .iter()
        .map(|m| m * scale)
        .collect();
    let n = cfg.replicates();
    let xi = InvariantSeries::new(p, q, DEFAULT_EPS_REL)?.samples(n, cfg.seed);
    let report = small_mass_bound_check(&EmpiricalDistribution::new(xi), q, p, &grid)?;
    let exp = Exp::new(p.beta / p.v).map_err(|e| CliError::Config(e.to_string()))?;
    let control: Vec<f64> = chunked_samples(n, derive_seed(cfg.seed, 1), |rng| exp.sample(rng));
    let negative = small_mass_bound_check(&EmpiricalDistribution::new(control), q, p, &grid)?;
    out.csv("small_mass.csv", report.rows.iter())?;
    out.json("small_mass.json", &serde_json::json!({ "series": report, "exp_control": negative }))?;
    Ok(vec![
        CriterionResult::new(
            "log-square-fit",
            "RSS of the ln^2(1/m) fit minus RSS of the ln(1/m) fit",
            report.rss_log_square - report.rss_log_linear,
            Rule::Below,
            0.0,
        ),
        CriterionResult::new("c1-positive", "fitted c1", report.c1_hat, Rule::Above, 0.0),
        CriterionResult::new(
            "negative-control",
            "exponential control flagged as a violation (1 = flagged)",
            if negative.violation { 1.0 } else { 0.0 },
            Rule::Above,
            0.5,
        ),
    ])
}

fn fde_solve(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Vec<CriterionResult>, CliError> {
    let p = &cfg.params;
    let q = &cfg.kernel;
    let grid = cfg.mass_grid_spec()?;
    let t_end = cfg.horizon();
    let times = cfg.times.clone().unwrap_or_else(|| vec![t_end]);
    let mut err1: f64 = 0.0;
    let mut err2: f64 = 0.0;
    let mut last: Option<MomentField> = None;
    for &t in &times {
        let l1 = solve_l1(p, q, &grid, t)?;
        let l2 = solve_l2(p, q, &grid, t)?;
        let [c, d, e] = l2_coefficients(p, q, t)?;
        let exact2 = |m: f64| c * m * m + d * m + e;
        err1 = err1.max(l1.max_relative_error(|m| exact_l1(p, m, t)));
        err2 = err2.max(l2.max_relative_error(exact2));
        out.csv(&format!("field_t{t}.csv"), export::field_rows(&l1, &l2, |m| exact_l1(p, m, t), exact2))?;
        last = Some(l2);
    }
    let conv = convergence_study(p, q, grid.m_max, &[grid.n_points / 2, grid.n_points], t_end, false, &SolverOptions::default())?;
    out.json("convergence.json", &conv)?;
    let mut criteria = vec![
        CriterionResult::new("l1-error", "max relative error of the L1 solver over output times", err1, Rule::AtMost, 1e-3),
        CriterionResult::new("l2-error", "max relative error of the L2 solver over output times", err2, Rule::AtMost, 1e-3),
        CriterionResult::new("refinement", "L1 error ratio when the grid spacing halves", conv.error_ratios[0], Rule::Above, 2.0 - 1e-9),
    ];
    let t_last = *times.last().expect("nonempty");
    if p.mu == 0.0 && t_last >= 6.0 {
        let l2 = last.expect("at least one time");
        let m = p.v / p.beta;
        let h = l2.grid.spacing();
        let i = ((m / h).floor() as usize).min(l2.values.len() - 2);
        let w = m / h - i as f64;
        let value = (1.0 - w) * l2.values[i] + w * l2.values[i + 1];
        let leading = 2.0 * ((p.beta * t_last).exp() * p.v / p.beta).powi(2);
        criteria.push(CriterionResult::relative("l2-leading-term", "L2 at m = v/beta against 2 (e^{beta t} v/beta)^2", value, leading, 0.05));
    }
    Ok(criteria)
}

fn default_front_times(t_end: f64) -> Vec<f64> {
    (0..=20).map(|k| t_end * (0.5 + 0.025 * k as f64)).collect()
}

fn kpp_front(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Vec<CriterionResult>, CliError> {
    let p = &cfg.params;
    let times = cfg.times.clone().unwrap_or_else(|| default_front_times(cfg.horizon()));
    let stats = empirical_front(p, &cfg.kernel, cfg.m0, &times, cfg.replicates(), cfg.seed, cfg.cap(), 1.0)?;
    let mut root_err: f64 = 0.0;
    for &t in &times {
        if let Ok(closed) = density_front_radius(t, p) {
            root_err = root_err.max((closed - density_front_radius_bisect(t, p, 1e-12)?).abs());
        }
    }
    let t_end = *times.last().expect("nonempty");
    let sample = cfg.replicates().min(5);
    let snapshots = bbm_ensemble(p, &cfg.kernel, cfg.m0, &[t_end], sample, derive_seed(cfg.seed, 1), cfg.cap(), |_, mut s| s.remove(0))?;
    out.csv("particles.csv", export::particle_rows(snapshots.iter().enumerate()))?;
    out.csv("front.csv", export::front_rows(&stats))?;
    out.json("front.json", &stats)?;
    Ok(vec![
        CriterionResult::relative("front-speed", "fitted empirical front speed against 2 sqrt(kappa beta)", stats.speed, stats.leading_speed, 0.10),
        CriterionResult::new("front-radius-root", "closed-form front radius against bisection", root_err, Rule::Below, 1e-9),
    ])
}

#[derive(Serialize)]
struct ScanRow {
    c: f64,
    classification: WaveClass,
}

#[derive(Serialize)]
struct ProfileRow {
    z: f64,
    phi: f64,
}

fn traveling_wave_scan(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Vec<CriterionResult>, CliError> {
    let p = &cfg.params;
    let target = 2.0 * (p.kappa * p.beta).sqrt();
    let c_min = minimal_speed(p, 1e-5)?;
    let scan = (1..=WAVE_SCAN_POINTS)
        .map(|k| {
            let c = 2.0 * target * k as f64 / WAVE_SCAN_POINTS as f64;
            traveling_wave(c, p, 200.0, 1e-9).map(|w| ScanRow { c, classification: w.classification })
        })
        .collect::<mitograph::Result<Vec<_>>>()?;
    let flips = scan.windows(2).filter(|w| w[0].classification != w[1].classification).count();
    let profile = traveling_wave(1.25 * target, p, 150.0, 1e-9)?;
    out.csv("wave_profile.csv", profile.z.iter().zip(&profile.phi).map(|(&z, &phi)| ProfileRow { z, phi }))?;
    out.json("wave.json", &serde_json::json!({ "minimal_speed": c_min, "scan": scan }))?;
    Ok(vec![
        CriterionResult::new("minimal-speed", "|c* - 2 sqrt(kappa beta)|", (c_min - target).abs(), Rule::Below, 1e-3)
            .with_values(c_min, Some(target)),
        CriterionResult::new("single-flip", "classification changes along the speed scan (must be exactly one)", (flips as f64 - 1.0).abs(), Rule::Below, 0.5)
            .with_values(flips as f64, Some(1.0)),
    ])
}

#[derive(Serialize)]
struct OccupationRow {
    replicate: usize,
    count: u64,
    mass: f64,
}

fn occupation(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Vec<CriterionResult>, CliError> {
    let p = &cfg.params;
    let t = cfg.horizon();
    let center = cfg.center.clone().unwrap_or_else(|| vec![0.0; p.dim]);
    let radius = cfg.radius.unwrap_or(1.0);
    let ball = Region::Ball { center: center.clone(), radius };
    let rows = bbm_ensemble(p, &cfg.kernel, cfg.m0, &[t], cfg.replicates(), cfg.seed, cfg.cap(), |replicate, s| OccupationRow {
        replicate,
        count: s[0].count_in(&ball) as u64,
        mass: s[0].mass_in(&ball),
    })?;
    let counts: Vec<u64> = rows.iter().map(|r| r.count).collect();
    let law = occupation_law(&counts, t, &center, radius, p)?;
    let mass = MeanSe::from_iter(rows.iter().map(|r| r.mass));
    let origin = vec![0.0; p.dim];
    let first_moment = spatial_first_moment(t, &origin, cfg.m0, &ball, p)?;
    out.csv("occupation.csv", rows)?;
    out.json("occupation.json", &serde_json::json!({ "law": law, "mass_in_ball": mass, "first_moment": first_moment }))?;
    Ok(vec![
        CriterionResult::new("occupation-ks", "KS of N(t, B) / mean against Exp(1)", law.ks, Rule::Below, 0.05),
        CriterionResult::z_test("spatial-first-moment", "mean mass in the ball against the first-moment formula", mass.mean, mass.se, first_moment, 3.0),
    ])
}
