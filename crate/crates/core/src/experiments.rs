//! Study harness: estimator-versus-truth grids, the variance counterexample,
//! hyperparameter RMSE sweeps and the boundary-error study.
//!
//! Every (parameter, realization) task owns an [`RngStream`] derived from the
//! master seed and a fixed task index, and results are collected in task
//! order, so outputs do not depend on the number of worker threads.

use rayon::prelude::*;
use thiserror::Error;

use crate::density::{
    build_histogram, select_tail, ulam_density, BinPosition, BoundaryMode, DensityError, HMinRule,
    TailHistogram, ULAM_TOL,
};
use crate::dynamics::{
    lambda_true, minimal_invariant_interval, parameter_for_lambda, solve_fold, DynamicsError, InvariantInterval,
    MapFamily, MapModel, Side,
};
use crate::estimator::{
    estimate_from_histogram, fit_tail, interval_method, lambda_from_a2, place_intervals, tail_points, Basis,
    EstimatorError, Method,
};
use crate::noise::{NoiseKind, NoiseModel, RngStream};
use crate::simulate::{continuation_sweep_with, generate, SimulateError, SweepConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("invalid study: {0}")]
    InvalidSpec(String),
}

impl ExperimentError {
    pub fn module(&self) -> &'static str {
        match self {
            ExperimentError::Dynamics(_) => "dynamics",
            ExperimentError::Simulate(_) => "simulate",
            ExperimentError::Density(_) => "density",
            ExperimentError::Estimator(_) => "estimator",
            ExperimentError::InvalidSpec(_) => "experiments",
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ExperimentError::Dynamics(e) => e.code(),
            ExperimentError::Simulate(e) => e.code(),
            ExperimentError::Density(e) => e.code(),
            ExperimentError::Estimator(e) => e.code(),
            ExperimentError::InvalidSpec(_) => "InvalidSpec",
        }
    }
}

/// How the left boundary is supplied to the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    True,
    Estimated,
}

impl BoundaryKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryKind::True => "true",
            BoundaryKind::Estimated => "estimated",
        }
    }

    fn mode(self, x_minus: Option<f64>) -> Option<BoundaryMode> {
        match self {
            BoundaryKind::Estimated => Some(BoundaryMode::Estimated),
            BoundaryKind::True => x_minus.map(BoundaryMode::True),
        }
    }
}

impl std::str::FromStr for BoundaryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "true" | "known" => Ok(BoundaryKind::True),
            "estimated" | "estimate" => Ok(BoundaryKind::Estimated),
            other => Err(format!("unknown boundary mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    /// Every (a, realization) run starts from the midpoint of the reference
    /// interval and discards `burn_in` iterates.
    Independent { burn_in: usize },
    /// One continuation sweep per realization; the first run starts at `y0`.
    Continuation { y0: f64, burn_in: usize },
}

/// Ground truth at one parameter value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub a: f64,
    pub interval: InvariantInterval,
    pub lambda: f64,
}

/// Minimal invariant interval and `λ` at `a`, trying the seed points in order.
pub fn reference(family: MapFamily, epsilon: f64, a: f64, seed_points: &[f64]) -> Result<Reference, ExperimentError> {
    let model = MapModel::new(family, a, epsilon)?;
    let mut last = DynamicsError::NoInterval { seed: f64::NAN };
    for &s in seed_points {
        match minimal_invariant_interval(&model, s) {
            Ok(interval) => {
                return Ok(Reference { a, interval, lambda: lambda_true(&model, &interval, Side::Lower) });
            }
            Err(e) => last = e,
        }
    }
    Err(last.into())
}

pub fn default_seed_points(family: MapFamily) -> Vec<f64> {
    match family {
        MapFamily::Linear => vec![0.0],
        MapFamily::TanhShift => vec![3.0, -3.0],
        MapFamily::ModifiedTanh => vec![3.0],
    }
}

/// `start:step:stop` inclusive of `stop` up to rounding.
pub fn linspace_step(start: f64, step: f64, stop: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| start + i as f64 * step).collect()
}

/// `count` equally spaced points on `[start, stop]`.
pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![start];
    }
    (0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect()
}

/// Shared estimator settings of the studies.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSettings {
    pub b: usize,
    pub q: f64,
    pub h_min: HMinRule,
    pub position: BinPosition,
    pub methods: Vec<Method>,
    /// Minimum visits per interval for the interval method.
    pub min_visits: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            b: 200,
            q: 0.3,
            h_min: HMinRule::default(),
            position: BinPosition::Midpoint,
            methods: vec![Method::LeadingOrder],
            min_visits: 100,
        }
    }
}

/// Raw estimate of each requested method; the histogram is built once.
pub fn estimate_methods(values: &[f64], boundary: BoundaryMode, s: &EstimatorSettings) -> Vec<Result<f64, EstimatorError>> {
    let hist = build_histogram(values, s.b, boundary, s.position);
    s.methods
        .iter()
        .map(|&m| {
            let hist = hist.as_ref().map_err(|e| EstimatorError::from(e.clone()))?;
            match m.basis() {
                Some(basis) => estimate_from_histogram(hist, s.q, s.h_min, basis, values.len()).map(|e| e.lambda_hat),
                None => {
                    let (i1, i2) = place_intervals(values, hist.x_hat_minus, hist.dz, s.min_visits)?;
                    interval_method(values, i1, i2)
                }
            }
        })
        .collect()
}

/// Value compared with the truth: the interval method is reported signed and
/// compared through its magnitude.
pub fn comparable(method: Method, lambda_hat: f64) -> f64 {
    match method {
        Method::Interval => lambda_hat.abs(),
        _ => lambda_hat,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub family: MapFamily,
    pub epsilon: f64,
    pub noise: NoiseKind,
    pub a_grid: Vec<f64>,
    pub n: usize,
    pub estimator: EstimatorSettings,
    pub boundary: BoundaryKind,
    pub realizations: usize,
    pub seed: u64,
    pub protocol: Protocol,
    pub seed_points: Vec<f64>,
}

impl GridSpec {
    pub fn new(family: MapFamily, epsilon: f64, noise: NoiseKind, a_grid: Vec<f64>) -> Self {
        GridSpec {
            family,
            epsilon,
            noise,
            a_grid,
            n: 100_000,
            estimator: EstimatorSettings::default(),
            boundary: BoundaryKind::Estimated,
            realizations: 100,
            seed: 0,
            protocol: Protocol::Independent { burn_in: 100 },
            seed_points: default_seed_points(family),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub a: f64,
    /// NaN when no reference interval exists.
    pub lambda_true: f64,
    pub method: Method,
    pub boundary: BoundaryKind,
    pub n: usize,
    pub b: usize,
    pub q: f64,
    pub realization: usize,
    pub lambda_hat: Option<f64>,
    pub abs_error: Option<f64>,
    /// `ok` or the error code.
    pub status: String,
}

/// Box-plot statistics of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub a: f64,
    pub method: Method,
    pub boundary: BoundaryKind,
    pub count: usize,
    pub failures: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub n_outliers: usize,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridStudyResult {
    pub references: Vec<Option<Reference>>,
    pub rows: Vec<GridRow>,
    pub summaries: Vec<CellSummary>,
}

impl GridStudyResult {
    pub fn summary(&self, a_index: usize, method: Method) -> Option<&CellSummary> {
        self.summaries.iter().filter(|s| s.method == method).nth(a_index)
    }

    /// Root mean squared error over successful rows accepted by `keep`.
    pub fn rmse(&self, method: Method, keep: impl Fn(&GridRow) -> bool) -> (f64, usize, usize) {
        rmse_of(self.rows.iter().filter(|r| r.method == method && keep(r)))
    }
}

/// `(rmse, used, skipped)` over rows with and without an error value.
pub fn rmse_of<'a>(rows: impl Iterator<Item = &'a GridRow>) -> (f64, usize, usize) {
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for r in rows {
        match r.abs_error {
            Some(e) => {
                sum += e * e;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    let rmse = if used > 0 { (sum / used as f64).sqrt() } else { f64::NAN };
    (rmse, used, skipped)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Summary statistics of the comparable values of `rows`.
pub fn summarize(a: f64, method: Method, boundary: BoundaryKind, rows: &[&GridRow]) -> CellSummary {
    let mut vals: Vec<f64> = rows.iter().filter_map(|r| r.lambda_hat.map(|v| comparable(method, v))).collect();
    vals.sort_by(|x, y| x.total_cmp(y));
    let errs: Vec<f64> = rows.iter().filter_map(|r| r.abs_error).collect();
    let count = vals.len();
    let (q1, median, q3) = (quantile_sorted(&vals, 0.25), quantile_sorted(&vals, 0.5), quantile_sorted(&vals, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = vals.iter().cloned().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
    CellSummary {
        a,
        method,
        boundary,
        count,
        failures: rows.len() - count,
        mean: if count > 0 { vals.iter().sum::<f64>() / count as f64 } else { f64::NAN },
        q1,
        median,
        q3,
        whisker_low: inside.first().copied().unwrap_or(f64::NAN),
        whisker_high: inside.last().copied().unwrap_or(f64::NAN),
        n_outliers: count - inside.len(),
        mean_abs_error: if errs.is_empty() { f64::NAN } else { errs.iter().sum::<f64>() / errs.len() as f64 },
    }
}

fn make_rows(
    spec: &GridSpec,
    a: f64,
    reference: Option<&Reference>,
    realization: usize,
    estimates: Vec<Result<f64, String>>,
) -> Vec<GridRow> {
    let lambda = reference.map_or(f64::NAN, |r| r.lambda);
    spec.estimator
        .methods
        .iter()
        .zip(estimates)
        .map(|(&method, est)| {
            let (lambda_hat, status) = match est {
                Ok(v) => (Some(v), "ok".to_string()),
                Err(code) => (None, code),
            };
            let abs_error = lambda_hat.filter(|_| lambda.is_finite()).map(|v| (lambda - comparable(method, v)).abs());
            GridRow {
                a,
                lambda_true: lambda,
                method,
                boundary: spec.boundary,
                n: spec.n,
                b: spec.estimator.b,
                q: spec.estimator.q,
                realization,
                lambda_hat,
                abs_error,
                status,
            }
        })
        .collect()
}

fn estimates_for(spec: &GridSpec, values: &[f64], reference: Option<&Reference>) -> Vec<Result<f64, String>> {
    match spec.boundary.mode(reference.map(|r| r.interval.x_minus)) {
        Some(mode) => estimate_methods(values, mode, &spec.estimator)
            .into_iter()
            .map(|r| r.map_err(|e| e.code().to_string()))
            .collect(),
        None => spec.estimator.methods.iter().map(|_| Err("NoInterval".to_string())).collect(),
    }
}

fn validate_grid(spec: &GridSpec) -> Result<(), ExperimentError> {
    if spec.a_grid.is_empty() {
        return Err(ExperimentError::InvalidSpec("empty parameter grid".into()));
    }
    if spec.realizations == 0 {
        return Err(ExperimentError::InvalidSpec("realizations must be positive".into()));
    }
    if spec.estimator.methods.is_empty() {
        return Err(ExperimentError::InvalidSpec("no methods requested".into()));
    }
    if spec.n < spec.estimator.b {
        return Err(ExperimentError::InvalidSpec(format!("n = {} is smaller than b = {}", spec.n, spec.estimator.b)));
    }
    Ok(())
}

/// Estimator-versus-truth grid. Failed estimates become rows with a status
/// code rather than aborting the study.
pub fn run_grid_study(spec: &GridSpec) -> Result<GridStudyResult, ExperimentError> {
    validate_grid(spec)?;
    let references: Vec<Option<Reference>> = spec
        .a_grid
        .iter()
        .map(|&a| reference(spec.family, spec.epsilon, a, &spec.seed_points).ok())
        .collect();
    let r_count = spec.realizations;
    // rows grouped as [a][realization][method]
    let mut grouped: Vec<Vec<Vec<GridRow>>> = match spec.protocol {
        Protocol::Independent { burn_in } => {
            let tasks: Vec<(usize, usize)> =
                (0..spec.a_grid.len()).flat_map(|i| (0..r_count).map(move |r| (i, r))).collect();
            let flat: Vec<Result<Vec<GridRow>, ExperimentError>> = tasks
                .par_iter()
                .map(|&(i, r)| {
                    let a = spec.a_grid[i];
                    let model = MapModel::new(spec.family, a, spec.epsilon)?;
                    let noise = NoiseModel::for_model(spec.noise, &model);
                    let refr = references[i].as_ref();
                    let y0 = refr.map_or(spec.seed_points[0], |r| r.interval.midpoint());
                    let mut rng = RngStream::new(spec.seed, (i * r_count + r) as u64);
                    let est = match generate(&model, &noise, y0, spec.n, burn_in, &mut rng) {
                        Ok(s) => estimates_for(spec, &s.values, refr),
                        Err(e) => spec.estimator.methods.iter().map(|_| Err(e.code().to_string())).collect(),
                    };
                    Ok(make_rows(spec, a, refr, r, est))
                })
                .collect();
            let mut grouped = vec![Vec::with_capacity(r_count); spec.a_grid.len()];
            for (&(i, _), rows) in tasks.iter().zip(flat) {
                grouped[i].push(rows?);
            }
            grouped
        }
        Protocol::Continuation { y0, burn_in } => {
            let per_r: Vec<Result<Vec<Vec<GridRow>>, ExperimentError>> = (0..r_count)
                .into_par_iter()
                .map(|r| {
                    let cfg = SweepConfig {
                        family: spec.family,
                        epsilon: spec.epsilon,
                        noise_kind: spec.noise,
                        a_grid: spec.a_grid.clone(),
                        n_per_a: spec.n,
                        y0_first: y0,
                        burn_in_first: burn_in,
                        keep_series: false,
                        tipping_reference: None,
                    };
                    let mut rows = Vec::with_capacity(spec.a_grid.len());
                    let mut rng = RngStream::new(spec.seed, r as u64);
                    continuation_sweep_with(&cfg, &mut rng, |i, a, series| {
                        let refr = references[i].as_ref();
                        rows.push(make_rows(spec, a, refr, r, estimates_for(spec, &series.values, refr)));
                    })?;
                    Ok(rows)
                })
                .collect();
            let mut grouped = vec![Vec::with_capacity(r_count); spec.a_grid.len()];
            for rows in per_r {
                for (i, cell) in rows?.into_iter().enumerate() {
                    grouped[i].push(cell);
                }
            }
            grouped
        }
    };
    let mut rows = Vec::with_capacity(spec.a_grid.len() * r_count * spec.estimator.methods.len());
    let mut summaries = Vec::new();
    for (i, cell) in grouped.iter_mut().enumerate() {
        for (k, &m) in spec.estimator.methods.iter().enumerate() {
            let of_method: Vec<&GridRow> = cell.iter().map(|rs| &rs[k]).collect();
            summaries.push(summarize(spec.a_grid[i], m, spec.boundary, &of_method));
        }
        for rs in cell.drain(..) {
            rows.extend(rs);
        }
    }
    // summaries are ordered by a then method; regroup to method-major for lookup
    let mut by_method = Vec::with_capacity(summaries.len());
    for &m in &spec.estimator.methods {
        by_method.extend(summaries.iter().filter(|s| s.method == m).cloned());
    }
    Ok(GridStudyResult { references, rows, summaries: by_method })
}

/// Variance counterexample on the modified tanh family.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceDemoSpec {
    pub epsilon: f64,
    pub a_grid: Vec<f64>,
    pub n: usize,
    pub realizations: usize,
    pub seed: u64,
    pub burn_in: usize,
    /// Seed point of the reference attractor; the first run starts at the
    /// midpoint of its interval at the first grid value.
    pub seed_point: f64,
    pub estimator: EstimatorSettings,
    /// Escape margin as a fraction of the reference interval's width.
    pub margin_fraction: f64,
    pub ulam: Option<UlamVariant>,
}

/// Estimates from the Ulam density on the known support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlamVariant {
    pub bins: usize,
    pub q: f64,
    /// Exact densities have no sampling floor, so the threshold sits far
    /// below the one used for histograms of data.
    pub h_min: HMinRule,
}

impl Default for UlamVariant {
    fn default() -> Self {
        UlamVariant { bins: 1 << 13, q: 1e-4, h_min: HMinRule::FractionOfMax(1e-12) }
    }
}

impl Default for VarianceDemoSpec {
    fn default() -> Self {
        VarianceDemoSpec {
            epsilon: 0.8,
            a_grid: linspace_step(0.0, 0.01, 0.8),
            n: 1_000_000,
            realizations: 10,
            seed: 0,
            burn_in: 100,
            seed_point: 3.0,
            estimator: EstimatorSettings {
                q: 0.1,
                methods: vec![Method::LeadingOrder, Method::HigherOrder],
                ..Default::default()
            },
            margin_fraction: 0.05,
            ulam: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub a: f64,
    pub realization: usize,
    pub variance: f64,
    /// One entry per configured method.
    pub lambda_hat: Vec<Option<f64>>,
    pub tipped: bool,
    pub tip_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UlamRow {
    pub a: f64,
    pub lambda_true: f64,
    pub lambda_hat: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceDemoResult {
    pub methods: Vec<Method>,
    pub rows: Vec<VarianceRow>,
    /// Parameter at which each realization first escaped, if it did.
    pub tip_parameters: Vec<Option<f64>>,
    pub reference_a: f64,
    pub reference_interval: InvariantInterval,
    pub ulam: Vec<UlamRow>,
}

impl VarianceDemoResult {
    pub fn mean_variance(&self, a_index: usize, realizations: usize) -> f64 {
        let rows = &self.rows[a_index * realizations..(a_index + 1) * realizations];
        rows.iter().map(|r| r.variance).sum::<f64>() / realizations as f64
    }

    /// Mean of the successful estimates of method `k` at grid index `a_index`.
    pub fn mean_lambda(&self, a_index: usize, realizations: usize, k: usize) -> f64 {
        let rows = &self.rows[a_index * realizations..(a_index + 1) * realizations];
        let v: Vec<f64> = rows.iter().filter_map(|r| r.lambda_hat[k]).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn run_variance_demo(spec: &VarianceDemoSpec) -> Result<VarianceDemoResult, ExperimentError> {
    if spec.a_grid.is_empty() || spec.realizations == 0 {
        return Err(ExperimentError::InvalidSpec("empty grid or no realizations".into()));
    }
    let family = MapFamily::ModifiedTanh;
    let fold = solve_fold(family, spec.epsilon, Side::Lower)?;
    // Reference interval: last grid value before the fold.
    let reference_a = spec
        .a_grid
        .iter()
        .copied()
        .filter(|&a| a < fold.a_star)
        .last()
        .ok_or_else(|| ExperimentError::InvalidSpec("grid has no parameter below the fold".into()))?;
    let ref_model = MapModel::new(family, reference_a, spec.epsilon)?;
    let reference_interval = minimal_invariant_interval(&ref_model, spec.seed_point)?;
    let margin = spec.margin_fraction * reference_interval.width();
    let first_model = MapModel::new(family, spec.a_grid[0], spec.epsilon)?;
    let y0 = minimal_invariant_interval(&first_model, spec.seed_point)?.midpoint();

    let per_r: Vec<Result<Vec<VarianceRow>, ExperimentError>> = (0..spec.realizations)
        .into_par_iter()
        .map(|r| {
            let cfg = SweepConfig {
                family,
                epsilon: spec.epsilon,
                noise_kind: NoiseKind::Uniform,
                a_grid: spec.a_grid.clone(),
                n_per_a: spec.n,
                y0_first: y0,
                burn_in_first: spec.burn_in,
                keep_series: false,
                tipping_reference: Some((reference_interval, margin)),
            };
            let mut lambdas = Vec::with_capacity(spec.a_grid.len());
            let mut rng = RngStream::new(spec.seed, r as u64);
            let sweep = continuation_sweep_with(&cfg, &mut rng, |_, _, series| {
                let est = estimate_methods(&series.values, BoundaryMode::Estimated, &spec.estimator);
                lambdas.push(est.into_iter().map(|e| e.ok()).collect::<Vec<_>>());
            })?;
            Ok(sweep
                .records
                .iter()
                .zip(lambdas)
                .map(|(rec, lambda_hat)| VarianceRow {
                    a: rec.a,
                    realization: r,
                    variance: rec.variance,
                    lambda_hat,
                    tipped: rec.tipped(),
                    tip_index: rec.tip_index,
                })
                .collect())
        })
        .collect();
    let mut by_r = Vec::with_capacity(spec.realizations);
    for rows in per_r {
        by_r.push(rows?);
    }
    let tip_parameters = by_r.iter().map(|rows| rows.iter().find(|row| row.tipped).map(|row| row.a)).collect();
    let mut rows = Vec::with_capacity(spec.a_grid.len() * spec.realizations);
    for i in 0..spec.a_grid.len() {
        for rs in &by_r {
            rows.push(rs[i].clone());
        }
    }

    let ulam = match spec.ulam {
        None => Vec::new(),
        Some(UlamVariant { bins, q, h_min }) => spec
            .a_grid
            .par_iter()
            .map(|&a| -> Result<UlamRow, ExperimentError> {
                // past the fold there is no interval to discretize
                let Ok(refr) = reference(family, spec.epsilon, a, &[spec.seed_point]) else {
                    return Ok(UlamRow { a, lambda_true: f64::NAN, lambda_hat: vec![None; spec.estimator.methods.len()] });
                };
                let model = MapModel::new(family, a, spec.epsilon)?;
                let noise = NoiseModel::for_model(NoiseKind::Uniform, &model);
                let u = match ulam_density(&model, &noise, &refr.interval, bins, ULAM_TOL) {
                    Ok(u) => u,
                    Err(DensityError::NoConvergence { .. }) => {
                        return Ok(UlamRow {
                            a,
                            lambda_true: refr.lambda,
                            lambda_hat: vec![None; spec.estimator.methods.len()],
                        })
                    }
                    Err(e) => return Err(e.into()),
                };
                let hist = u.histogram(spec.estimator.position);
                let lambda_hat = spec
                    .estimator
                    .methods
                    .iter()
                    .map(|m| {
                        m.basis()
                            .and_then(|basis| estimate_from_histogram(&hist, q, h_min, basis, 0).ok())
                            .map(|e| e.lambda_hat)
                    })
                    .collect();
                Ok(UlamRow { a, lambda_true: refr.lambda, lambda_hat })
            })
            .collect::<Result<Vec<_>, _>>()?,
    };

    Ok(VarianceDemoResult {
        methods: spec.estimator.methods.clone(),
        rows,
        tip_parameters,
        reference_a,
        reference_interval,
        ulam,
    })
}

/// Hyperparameter sweep: one panel varies `b` at each fixed `q`, the other
/// varies `q` at each fixed `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseSpec {
    pub family: MapFamily,
    pub epsilon: f64,
    pub noise: NoiseKind,
    pub a_grid: Vec<f64>,
    pub n: usize,
    pub realizations: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub boundary: BoundaryKind,
    pub methods: Vec<Method>,
    pub h_min: HMinRule,
    pub b_grid: Vec<usize>,
    pub q_fixed: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub b_fixed: Vec<usize>,
    pub seed_points: Vec<f64>,
    pub min_visits: usize,
}

impl RmseSpec {
    pub fn new(family: MapFamily, epsilon: f64, noise: NoiseKind) -> Self {
        RmseSpec {
            family,
            epsilon,
            noise,
            a_grid: linspace_step(-0.5, 0.01, 0.31),
            n: 100_000,
            realizations: 10,
            seed: 0,
            burn_in: 100,
            boundary: BoundaryKind::Estimated,
            methods: vec![Method::LeadingOrder],
            h_min: HMinRule::default(),
            b_grid: linspace_step(20.0, 20.0, 500.0).into_iter().map(|v| v as usize).collect(),
            q_fixed: vec![0.1, 0.35, 0.6],
            q_grid: linspace_step(0.01, 0.01, 0.8),
            b_fixed: vec![100, 200, 300],
            seed_points: default_seed_points(family),
            min_visits: 100,
        }
    }

    /// `(b, q)` pairs in output order.
    pub fn combinations(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for &q in &self.q_fixed {
            for &b in &self.b_grid {
                out.push((b, q));
            }
        }
        for &b in &self.b_fixed {
            for &q in &self.q_grid {
                out.push((b, q));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub b: usize,
    pub q: f64,
    pub method: Method,
    pub rmse: f64,
    pub used: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseTable {
    pub rows: Vec<RmseRow>,
    /// Every individual estimate, for recomputation.
    pub raw: Vec<GridRow>,
}

pub fn run_rmse_sweep(spec: &RmseSpec) -> Result<RmseTable, ExperimentError> {
    if spec.a_grid.is_empty() || spec.realizations == 0 || spec.methods.is_empty() {
        return Err(ExperimentError::InvalidSpec("empty grid, methods or realizations".into()));
    }
    let combos = spec.combinations();
    if combos.is_empty() {
        return Err(ExperimentError::InvalidSpec("no (b, q) combinations".into()));
    }
    if let Some(&(b, _)) = combos.iter().find(|(b, _)| *b < 2 || *b > spec.n) {
        return Err(ExperimentError::InvalidSpec(format!("b = {b} is outside [2, n]")));
    }
    let references: Vec<Option<Reference>> = spec
        .a_grid
        .iter()
        .map(|&a| reference(spec.family, spec.epsilon, a, &spec.seed_points).ok())
        .collect();
    let r_count = spec.realizations;
    let tasks: Vec<(usize, usize)> = (0..spec.a_grid.len()).flat_map(|i| (0..r_count).map(move |r| (i, r))).collect();
    let per_task: Vec<Result<Vec<GridRow>, ExperimentError>> = tasks
        .par_iter()
        .map(|&(i, r)| {
            let a = spec.a_grid[i];
            let refr = references[i].as_ref();
            let lambda = refr.map_or(f64::NAN, |r| r.lambda);
            let model = MapModel::new(spec.family, a, spec.epsilon)?;
            let noise = NoiseModel::for_model(spec.noise, &model);
            let y0 = refr.map_or(spec.seed_points[0], |r| r.interval.midpoint());
            let mut rng = RngStream::new(spec.seed, (i * r_count + r) as u64);
            let series = generate(&model, &noise, y0, spec.n, spec.burn_in, &mut rng)?;
            let mode = spec.boundary.mode(refr.map(|r| r.interval.x_minus));
            let mut out = Vec::with_capacity(combos.len() * spec.methods.len());
            let mut cached: Option<(usize, Result<TailHistogram, DensityError>)> = None;
            for &(b, q) in &combos {
                let settings = EstimatorSettings {
                    b,
                    q,
                    h_min: spec.h_min,
                    position: BinPosition::Midpoint,
                    methods: spec.methods.clone(),
                    min_visits: spec.min_visits,
                };
                let ests: Vec<Result<f64, String>> = match mode {
                    None => spec.methods.iter().map(|_| Err("NoInterval".to_string())).collect(),
                    Some(mode) => {
                        if cached.as_ref().map(|c| c.0) != Some(b) {
                            cached = Some((b, build_histogram(&series.values, b, mode, BinPosition::Midpoint)));
                        }
                        let hist = &cached.as_ref().unwrap().1;
                        spec.methods
                            .iter()
                            .map(|&m| match (hist, m.basis()) {
                                (Err(e), _) => Err(e.code().to_string()),
                                (Ok(h), Some(basis)) => estimate_from_histogram(h, q, spec.h_min, basis, spec.n)
                                    .map(|e| e.lambda_hat)
                                    .map_err(|e| e.code().to_string()),
                                (Ok(h), None) => place_intervals(&series.values, h.x_hat_minus, h.dz, settings.min_visits)
                                    .and_then(|(i1, i2)| interval_method(&series.values, i1, i2))
                                    .map_err(|e| e.code().to_string()),
                            })
                            .collect()
                    }
                };
                for (&method, est) in spec.methods.iter().zip(ests) {
                    let (lambda_hat, status) = match est {
                        Ok(v) => (Some(v), "ok".to_string()),
                        Err(c) => (None, c),
                    };
                    out.push(GridRow {
                        a,
                        lambda_true: lambda,
                        method,
                        boundary: spec.boundary,
                        n: spec.n,
                        b,
                        q,
                        realization: r,
                        lambda_hat,
                        abs_error: lambda_hat
                            .filter(|_| lambda.is_finite())
                            .map(|v| (lambda - comparable(method, v)).abs()),
                        status,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut raw = Vec::with_capacity(tasks.len() * combos.len() * spec.methods.len());
    for rows in per_task {
        raw.extend(rows?);
    }
    let per = combos.len() * spec.methods.len();
    let mut rows = Vec::with_capacity(per);
    for (c, &(b, q)) in combos.iter().enumerate() {
        for (k, &method) in spec.methods.iter().enumerate() {
            let idx = c * spec.methods.len() + k;
            let (rmse, used, skipped) = rmse_of(raw.chunks(per).map(|chunk| &chunk[idx]));
            rows.push(RmseRow { b, q, method, rmse, used, skipped });
        }
    }
    Ok(RmseTable { rows, raw })
}

/// Sensitivity of the tail fit to the boundary estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    pub family: MapFamily,
    pub epsilon: f64,
    pub noise: NoiseKind,
    pub lambda_targets: Vec<f64>,
    pub n: usize,
    pub b: usize,
    pub q: f64,
    pub h_min: HMinRule,
    pub methods: Vec<Method>,
    pub realizations: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub n_offsets: usize,
    pub seed_point: f64,
}

impl BoundarySpec {
    pub fn new(family: MapFamily, epsilon: f64, noise: NoiseKind) -> Self {
        BoundarySpec {
            family,
            epsilon,
            noise,
            lambda_targets: vec![0.24, 0.42, 0.65, 0.8],
            n: 100_000,
            b: 200,
            q: 0.3,
            h_min: HMinRule::default(),
            methods: vec![Method::LeadingOrder, Method::HigherOrder],
            realizations: 100,
            seed: 0,
            burn_in: 100,
            n_offsets: 20,
            seed_point: default_seed_points(family)[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRow {
    pub lambda_true: f64,
    pub method: Method,
    pub realization: usize,
    /// `x̂'₋ - x₋`.
    pub offset: f64,
    /// `λ̂(x₋) - λ̂(x̂'₋)`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySlope {
    pub lambda_true: f64,
    pub method: Method,
    pub mean_slope: f64,
    /// Realizations with at least two usable offsets.
    pub n_realizations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryStudyResult {
    pub rows: Vec<BoundaryRow>,
    pub slopes: Vec<BoundarySlope>,
}

/// `count` log-spaced points on `[lo, hi]`.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// `λ̂` from a histogram measured from `x₋ + offset`, keeping the selection
/// fixed.
fn lambda_with_offset(
    base: &TailHistogram,
    kept: &crate::density::TailSelection,
    offset: f64,
    basis: Basis,
) -> Option<f64> {
    let h = base.with_boundary_offset(offset);
    let (pts, _) = tail_points(&h, kept, basis);
    let coef = fit_tail(&pts, basis).ok()?;
    lambda_from_a2(coef.a2).ok()
}

pub fn run_boundary_study(spec: &BoundarySpec) -> Result<BoundaryStudyResult, ExperimentError> {
    if spec.methods.iter().any(|m| m.basis().is_none()) {
        return Err(ExperimentError::InvalidSpec("boundary study needs fit-based methods".into()));
    }
    if spec.realizations == 0 || spec.lambda_targets.is_empty() || spec.n_offsets == 0 {
        return Err(ExperimentError::InvalidSpec("empty study".into()));
    }
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &target in &spec.lambda_targets {
        let a = match spec.family {
            MapFamily::Linear => target,
            _ => {
                let fold = solve_fold(spec.family, spec.epsilon, Side::Lower)?;
                parameter_for_lambda(spec.family, spec.epsilon, target, (fold.a_star - 5.0, fold.a_star), spec.seed_point)?
            }
        };
        let refr = reference(spec.family, spec.epsilon, a, &[spec.seed_point])?;
        let model = MapModel::new(spec.family, a, spec.epsilon)?;
        let noise = NoiseModel::for_model(spec.noise, &model);
        let lambda = refr.lambda;
        let per_r: Vec<Result<Vec<BoundaryRow>, ExperimentError>> = (0..spec.realizations)
            .into_par_iter()
            .map(|r| {
                let mut rng = RngStream::new(spec.seed, r as u64);
                let series = generate(&model, &noise, refr.interval.midpoint(), spec.n, spec.burn_in, &mut rng)?;
                let base = build_histogram(&series.values, spec.b, BoundaryMode::True(refr.interval.x_minus), BinPosition::Midpoint)?;
                let sel = select_tail(&base, spec.q, spec.h_min)?;
                // x̂₋ - x₋ with x̂₋ = x₁ - Δz
                let max_offset = base.distance(0) - base.dz;
                let offsets: Vec<f64> = logspace(base.dz / 100.0, base.dz, spec.n_offsets)
                    .into_iter()
                    .filter(|&o| o <= max_offset)
                    .collect();
                let mut out = Vec::new();
                for &m in &spec.methods {
                    let basis = m.basis().expect("fit method");
                    let Some(at_true) = lambda_with_offset(&base, &sel, 0.0, basis) else { continue };
                    for &o in &offsets {
                        if let Some(v) = lambda_with_offset(&base, &sel, o, basis) {
                            out.push(BoundaryRow { lambda_true: lambda, method: m, realization: r, offset: o, gap: at_true - v });
                        }
                    }
                }
                Ok(out)
            })
            .collect();
        let mut this: Vec<BoundaryRow> = Vec::new();
        for rs in per_r {
            this.extend(rs?);
        }
        for &m in &spec.methods {
            let mut per_real = Vec::new();
            for r in 0..spec.realizations {
                let pts: Vec<(f64, f64)> = this
                    .iter()
                    .filter(|row| row.method == m && row.realization == r && row.gap > 0.0)
                    .map(|row| (row.offset.ln(), row.gap.ln()))
                    .collect();
                if pts.len() >= 2 {
                    per_real.push(ols_slope(&pts));
                }
            }
            let mean_slope = if per_real.is_empty() { f64::NAN } else { per_real.iter().sum::<f64>() / per_real.len() as f64 };
            slopes.push(BoundarySlope { lambda_true: lambda, method: m, mean_slope, n_realizations: per_real.len() });
        }
        rows.extend(this);
    }
    Ok(BoundaryStudyResult { rows, slopes })
}
