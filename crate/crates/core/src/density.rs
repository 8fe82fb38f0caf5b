//! Normalized histograms with boundary estimates, tail selection, and the
//! Ulam approximation of the stationary density.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use thiserror::Error;

use crate::dynamics::{InvariantInterval, MapModel};
use crate::noise::{NoiseKind, NoiseModel};

/// Power-iteration cap of [`ulam_density`].
pub const ULAM_MAX_ITER: usize = 100_000;
/// Default L1 tolerance of [`ulam_density`].
pub const ULAM_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("all values are equal ({0}); the histogram range is empty")]
    DegenerateRange(f64),
    #[error("no bins survive tail selection (b_l = {b_l}, h_min = {h_min})")]
    EmptyTail { b_l: usize, h_min: f64 },
    #[error("window holds {0} usable bins, at least 2 are needed")]
    EmptyWindow(usize),
    #[error("power iteration stopped at residual {residual} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl DensityError {
    pub fn code(&self) -> &'static str {
        match self {
            DensityError::DegenerateRange(_) => "DegenerateRange",
            DensityError::EmptyTail { .. } => "EmptyTail",
            DensityError::EmptyWindow(_) => "EmptyWindow",
            DensityError::NoConvergence { .. } => "NoConvergence",
            DensityError::InvalidInput(_) => "InvalidInput",
        }
    }
}

/// Left boundary used for the tail coordinate `x - x̂₋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryMode {
    /// Known boundary `x₋`.
    True(f64),
    /// `x̂₋ = x₁ - Δz` from the data.
    Estimated,
}

impl BoundaryMode {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryMode::True(_) => "true",
            BoundaryMode::Estimated => "estimated",
        }
    }
}

/// Representative point of each bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BinPosition {
    #[default]
    Midpoint,
    LeftEdge,
    RightEdge,
}

impl BinPosition {
    fn offset(self) -> f64 {
        match self {
            BinPosition::Midpoint => 0.5,
            BinPosition::LeftEdge => 0.0,
            BinPosition::RightEdge => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BinPosition::Midpoint => "midpoint",
            BinPosition::LeftEdge => "left",
            BinPosition::RightEdge => "right",
        }
    }
}

impl fmt::Display for BinPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BinPosition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "midpoint" | "mid" => Ok(BinPosition::Midpoint),
            "left" | "left-edge" => Ok(BinPosition::LeftEdge),
            "right" | "right-edge" => Ok(BinPosition::RightEdge),
            other => Err(format!("unknown bin position '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailHistogram {
    /// `z_0 < z_1 < ... < z_b`.
    pub edges: Vec<f64>,
    /// Raw counts; empty for histograms built from a density.
    pub counts: Vec<u64>,
    /// Density-normalized heights, `Σ h_i Δz = 1`.
    pub heights: Vec<f64>,
    pub dz: f64,
    pub boundary: BoundaryMode,
    pub position: BinPosition,
    pub x_hat_minus: f64,
    pub x_hat_plus: f64,
    /// `z_0 - x̂₋`, kept separately so distances do not suffer cancellation.
    left_gap: f64,
}

impl TailHistogram {
    pub fn bins(&self) -> usize {
        self.heights.len()
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.edges[0] + (i as f64 + 0.5) * self.dz
    }

    /// Representative point of bin `i` under the configured position rule.
    pub fn position_of(&self, i: usize) -> f64 {
        self.edges[0] + (i as f64 + self.position.offset()) * self.dz
    }

    /// `x_i - x̂₋` for bin `i` (0-based).
    pub fn distance(&self, i: usize) -> f64 {
        self.left_gap + (i as f64 + self.position.offset()) * self.dz
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().cloned().fold(0.0, f64::max)
    }

    /// Same bins measured from another left boundary.
    pub fn with_boundary(&self, x_minus: f64) -> TailHistogram {
        let mut h = self.clone();
        h.boundary = BoundaryMode::True(x_minus);
        h.x_hat_minus = x_minus;
        h.left_gap = self.edges[0] - x_minus;
        h
    }

    /// Same bins measured from `x̂₋ + shift`, with the gap formed without
    /// cancellation against the data range.
    pub fn with_boundary_offset(&self, shift: f64) -> TailHistogram {
        let mut h = self.clone();
        h.boundary = BoundaryMode::True(self.x_hat_minus + shift);
        h.x_hat_minus = self.x_hat_minus + shift;
        h.left_gap = self.left_gap - shift;
        h
    }

    /// Histogram view of a piecewise-constant density on `[x_minus, x_plus]`.
    pub fn from_density(x_minus: f64, x_plus: f64, heights: &[f64], position: BinPosition) -> Result<Self, DensityError> {
        let b = heights.len();
        if b < 2 || !(x_plus > x_minus) {
            return Err(DensityError::InvalidInput("density needs at least 2 bins on a nonempty support".into()));
        }
        let dz = (x_plus - x_minus) / b as f64;
        let mut edges: Vec<f64> = (0..=b).map(|i| x_minus + i as f64 * dz).collect();
        edges[b] = x_plus;
        Ok(TailHistogram {
            edges,
            counts: Vec::new(),
            heights: heights.to_vec(),
            dz,
            boundary: BoundaryMode::True(x_minus),
            position,
            x_hat_minus: x_minus,
            x_hat_plus: x_plus,
            left_gap: 0.0,
        })
    }
}

/// Equal-width histogram of `values` over `[min, max]` with `b` bins.
///
/// Bins are half-open `[z_{i-1}, z_i)` except the last, which is closed.
pub fn build_histogram(
    values: &[f64],
    b: usize,
    boundary: BoundaryMode,
    position: BinPosition,
) -> Result<TailHistogram, DensityError> {
    if b < 2 {
        return Err(DensityError::InvalidInput(format!("b must be at least 2, got {b}")));
    }
    if values.len() < b {
        return Err(DensityError::InvalidInput(format!(
            "series of length {} is shorter than b = {b}",
            values.len()
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(DensityError::InvalidInput("series contains a non-finite value".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == lo {
        return Err(DensityError::DegenerateRange(lo));
    }
    let dz = (hi - lo) / b as f64;
    let mut edges: Vec<f64> = (0..=b).map(|i| lo + i as f64 * dz).collect();
    edges[b] = hi;
    let mut counts = vec![0u64; b];
    for &v in values {
        let mut k = ((v - lo) / dz).floor() as usize;
        // Rounding in the division can disagree with the stored edges by one bin.
        if k >= b {
            k = b - 1;
        } else if k + 1 < b && v >= edges[k + 1] {
            k += 1;
        } else if k > 0 && v < edges[k] {
            k -= 1;
        }
        counts[k] += 1;
    }
    let norm = dz * values.len() as f64;
    let heights: Vec<f64> = counts.iter().map(|&c| c as f64 / norm).collect();
    let (x_hat_minus, left_gap) = match boundary {
        // x₁ - Δz with x₁ the first midpoint
        BoundaryMode::Estimated => (lo + 0.5 * dz - dz, 0.5 * dz),
        BoundaryMode::True(x) => (x, lo - x),
    };
    Ok(TailHistogram {
        edges,
        counts,
        heights,
        dz,
        boundary,
        position,
        x_hat_minus,
        x_hat_plus: hi - 0.5 * dz + dz,
        left_gap,
    })
}

/// Threshold below which bins are dropped from the tail fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HMinRule {
    /// `h_min = fraction * max_i h_i`.
    FractionOfMax(f64),
    Absolute(f64),
}

impl Default for HMinRule {
    fn default() -> Self {
        HMinRule::FractionOfMax(0.01)
    }
}

impl HMinRule {
    pub fn resolve(&self, hist: &TailHistogram) -> f64 {
        match *self {
            HMinRule::FractionOfMax(f) => f * hist.max_height(),
            HMinRule::Absolute(h) => h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailSelection {
    /// Number of leading bins whose cumulative mass stays below `q`.
    pub b_l: usize,
    /// 0-based bins among the first `b_l` with `h_i > h_min`.
    pub kept_indices: Vec<usize>,
    pub q: f64,
    pub h_min: f64,
}

/// Largest `b_l` with `Σ_{i ≤ b_l} h_i Δz < q`.
pub fn tail_length(hist: &TailHistogram, q: f64) -> usize {
    let mut cum = 0.0;
    let mut b_l = 0;
    for &h in &hist.heights {
        cum += h * hist.dz;
        if cum < q {
            b_l += 1;
        } else {
            break;
        }
    }
    b_l
}

pub fn select_tail(hist: &TailHistogram, q: f64, rule: HMinRule) -> Result<TailSelection, DensityError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(DensityError::InvalidInput(format!("q must lie in (0,1), got {q}")));
    }
    let b_l = tail_length(hist, q);
    let h_min = rule.resolve(hist);
    let kept_indices: Vec<usize> = (0..b_l).filter(|&i| hist.heights[i] > h_min).collect();
    if kept_indices.is_empty() {
        return Err(DensityError::EmptyTail { b_l, h_min });
    }
    Ok(TailSelection { b_l, kept_indices, q, h_min })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UlamDensity {
    pub x_minus: f64,
    pub x_plus: f64,
    pub bins: usize,
    pub heights: Vec<f64>,
    /// `‖πP - π‖₁` at the last iteration.
    pub residual: f64,
    pub iterations: usize,
}

impl UlamDensity {
    pub fn dz(&self) -> f64 {
        (self.x_plus - self.x_minus) / self.bins as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.x_minus + (i as f64 + 0.5) * self.dz()
    }

    pub fn histogram(&self, position: BinPosition) -> TailHistogram {
        TailHistogram::from_density(self.x_minus, self.x_plus, &self.heights, position)
            .expect("valid Ulam support")
    }
}

/// Banded row-stochastic Ulam matrix: row `i` holds `P_{i, start_i + k}`.
#[derive(Debug, Clone)]
pub struct UlamMatrix {
    pub bins: usize,
    pub starts: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

impl UlamMatrix {
    /// Midpoint collocation: `P_ij = F(z_j - f(x_i)) - F(z_{j-1} - f(x_i))`,
    /// with mass outside the support dropped and each row renormalized.
    pub fn assemble(
        model: &MapModel,
        noise: &NoiseModel,
        interval: &InvariantInterval,
        bins: usize,
    ) -> Result<Self, DensityError> {
        let (x0, x1) = (interval.x_minus, interval.x_plus);
        let delta = (x1 - x0) / bins as f64;
        let eps = noise.epsilon;
        let edge = |j: usize| if j == bins { x1 } else { x0 + j as f64 * delta };
        let mut starts = Vec::with_capacity(bins);
        let mut rows = Vec::with_capacity(bins);
        for i in 0..bins {
            let fx = model.value(x0 + (i as f64 + 0.5) * delta);
            let lo = ((fx - eps - x0) / delta).floor().max(0.0) as usize;
            let hi = (((fx + eps - x0) / delta).ceil().max(0.0) as usize).min(bins);
            let lo = lo.min(bins);
            let mut row = Vec::with_capacity(hi.saturating_sub(lo));
            let mut prev = noise.cdf(edge(lo) - fx);
            for j in lo..hi {
                let next = noise.cdf(edge(j + 1) - fx);
                row.push(next - prev);
                prev = next;
            }
            let total: f64 = row.iter().sum();
            if !(total > 0.0) {
                return Err(DensityError::InvalidInput(format!(
                    "row {i} maps entirely outside the support"
                )));
            }
            row.iter_mut().for_each(|p| *p /= total);
            starts.push(lo);
            rows.push(row);
        }
        Ok(UlamMatrix { bins, starts, rows })
    }

    /// `out = π P`.
    pub fn apply(&self, pi: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for ((row, &start), &w) in self.rows.iter().zip(&self.starts).zip(pi) {
            if w == 0.0 {
                continue;
            }
            for (o, p) in out[start..start + row.len()].iter_mut().zip(row) {
                *o += w * p;
            }
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Transfer step for uniform noise without storing the matrix.
///
/// Row `i` spreads its mass uniformly over `[f(x_i) - ε, f(x_i) + ε]`
/// clipped to the support, so the pushed-forward distribution function is
/// piecewise linear with kinks at the clipped interval ends. Because `f` is
/// increasing both end sequences are sorted and one sweep evaluates it at all
/// bin edges.
struct UniformTransfer {
    bins: usize,
    x0: f64,
    delta: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    slope: Vec<f64>,
}

impl UniformTransfer {
    fn new(model: &MapModel, eps: f64, interval: &InvariantInterval, bins: usize) -> Result<Self, DensityError> {
        let (x0, x1) = (interval.x_minus, interval.x_plus);
        let delta = (x1 - x0) / bins as f64;
        let mut lo = Vec::with_capacity(bins);
        let mut hi = Vec::with_capacity(bins);
        let mut slope = Vec::with_capacity(bins);
        for i in 0..bins {
            let fx = model.value(x0 + (i as f64 + 0.5) * delta);
            let (l, h) = ((fx - eps).max(x0), (fx + eps).min(x1));
            if !(h > l) {
                return Err(DensityError::InvalidInput(format!("row {i} maps entirely outside the support")));
            }
            lo.push(l);
            hi.push(h);
            slope.push(1.0 / (h - l));
        }
        Ok(UniformTransfer { bins, x0, delta, lo, hi, slope })
    }

    fn apply(&self, pi: &[f64], out: &mut [f64]) {
        // Sweep the edges in order while merging the sorted kink positions.
        let (mut a, mut b) = (0usize, 0usize);
        let mut slope = 0.0;
        let mut value = 0.0f64;
        let mut pos = self.x0;
        let mut prev_value = 0.0f64;
        for j in 1..=self.bins {
            let z = if j == self.bins { f64::INFINITY } else { self.x0 + j as f64 * self.delta };
            loop {
                let next_on = if a < self.bins { self.lo[a] } else { f64::INFINITY };
                let next_off = if b < self.bins { self.hi[b] } else { f64::INFINITY };
                let k = next_on.min(next_off);
                if k > z || k == f64::INFINITY {
                    break;
                }
                value += slope * (k - pos);
                pos = k;
                if next_on <= next_off {
                    slope += pi[a] * self.slope[a];
                    a += 1;
                } else {
                    slope -= pi[b] * self.slope[b];
                    b += 1;
                }
            }
            if j == self.bins {
                // Everything has been switched off by the top edge.
                out[j - 1] = (1.0 - prev_value).max(0.0);
            } else {
                value += slope * (z - pos);
                pos = z;
                out[j - 1] = (value - prev_value).max(0.0);
                prev_value = value;
            }
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
    }
}

fn power_iteration(
    bins: usize,
    tol: f64,
    mut step: impl FnMut(&[f64], &mut [f64]),
) -> Result<(Vec<f64>, f64, usize), DensityError> {
    let mut pi = vec![1.0 / bins as f64; bins];
    let mut next = vec![0.0; bins];
    let mut residual = f64::INFINITY;
    for it in 1..=ULAM_MAX_ITER {
        step(&pi, &mut next);
        residual = pi.iter().zip(&next).map(|(p, q)| (p - q).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if residual <= tol {
            return Ok((pi, residual, it));
        }
    }
    Err(DensityError::NoConvergence { iterations: ULAM_MAX_ITER, residual })
}

/// Stationary density of the Ulam approximation on the minimal invariant
/// interval, by power iteration from the uniform vector.
pub fn ulam_density(
    model: &MapModel,
    noise: &NoiseModel,
    interval: &InvariantInterval,
    bins: usize,
    tol: f64,
) -> Result<UlamDensity, DensityError> {
    if bins < 2 {
        return Err(DensityError::InvalidInput(format!("bins must be at least 2, got {bins}")));
    }
    if !(interval.x_plus > interval.x_minus) {
        return Err(DensityError::InvalidInput("empty support".into()));
    }
    let (pi, residual, iterations) = match noise.kind {
        NoiseKind::Uniform => {
            let t = UniformTransfer::new(model, noise.epsilon, interval, bins)?;
            power_iteration(bins, tol, |p, o| t.apply(p, o))?
        }
        NoiseKind::TruncatedNormal => {
            let m = UlamMatrix::assemble(model, noise, interval, bins)?;
            power_iteration(bins, tol, |p, o| m.apply(p, o))?
        }
    };
    Ok(density_from_vector(interval, pi, residual, iterations))
}

/// Same as [`ulam_density`] but always through the stored matrix.
pub fn ulam_density_matrix(
    model: &MapModel,
    noise: &NoiseModel,
    interval: &InvariantInterval,
    bins: usize,
    tol: f64,
) -> Result<UlamDensity, DensityError> {
    if bins < 2 {
        return Err(DensityError::InvalidInput(format!("bins must be at least 2, got {bins}")));
    }
    let m = UlamMatrix::assemble(model, noise, interval, bins)?;
    let (pi, residual, iterations) = power_iteration(bins, tol, |p, o| m.apply(p, o))?;
    Ok(density_from_vector(interval, pi, residual, iterations))
}

fn density_from_vector(interval: &InvariantInterval, pi: Vec<f64>, residual: f64, iterations: usize) -> UlamDensity {
    let bins = pi.len();
    let delta = (interval.x_plus - interval.x_minus) / bins as f64;
    UlamDensity {
        x_minus: interval.x_minus,
        x_plus: interval.x_plus,
        bins,
        heights: pi.iter().map(|p| p / delta).collect(),
        residual,
        iterations,
    }
}

/// Bins used by [`tail_asymptotics_check`] when no window is given: from the
/// first bin above `1e-12 · max h` up to, not including, the bin where the
/// cumulative mass reaches `mass`.
pub fn default_tail_window(ulam: &UlamDensity, mass: f64) -> Range<usize> {
    let max_h = ulam.heights.iter().cloned().fold(0.0f64, f64::max);
    let first = ulam.heights.iter().position(|&h| h > 1e-12 * max_h).unwrap_or(0);
    let dz = ulam.dz();
    let mut cum = 0.0;
    let mut end = 0;
    while end < ulam.bins && cum + ulam.heights[end] * dz < mass {
        cum += ulam.heights[end] * dz;
        end += 1;
    }
    first..end.max(first)
}

/// Compares the curvature of `log φ` in `l = log(x - x₋)` over `window` with
/// the asymptotic value `1/(2 log λ)`.
///
/// Fits `log φ ≈ c + a₁ l + a₂ l²` by least squares over the bins of the window
/// with positive height and returns `a₂ · 2 log λ`.
pub fn tail_asymptotics_check(ulam: &UlamDensity, lambda: f64, window: Range<usize>) -> Result<f64, DensityError> {
    tail_asymptotics_check_with(ulam, lambda, window, false)
}

/// As [`tail_asymptotics_check`]; with `higher` the quadratic basis function is
/// `l² - 2l log(-l)`, which absorbs the next term of the expansion.
pub fn tail_asymptotics_check_with(
    ulam: &UlamDensity,
    lambda: f64,
    window: Range<usize>,
    higher: bool,
) -> Result<f64, DensityError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(DensityError::InvalidInput(format!("λ must lie in (0,1), got {lambda}")));
    }
    let dz = ulam.dz();
    let pts: Vec<(f64, f64)> = window
        .filter(|&i| i < ulam.bins && ulam.heights[i] > 0.0)
        .map(|i| (((i as f64 + 0.5) * dz).ln(), ulam.heights[i].ln()))
        .collect();
    if pts.len() < 3 {
        return Err(DensityError::EmptyWindow(pts.len()));
    }
    if higher && pts.iter().any(|p| p.0 >= 0.0) {
        return Err(DensityError::InvalidInput("higher basis needs x - x₋ < 1 in the window".into()));
    }
    let rows: Vec<([f64; 3], f64)> = pts
        .iter()
        .map(|&(l, y)| {
            let q = if higher { l * l - 2.0 * l * (-l).ln() } else { l * l };
            ([1.0, l, q], y)
        })
        .collect();
    let a2 = least_squares3(&rows)[2];
    Ok(a2 * 2.0 * lambda.ln())
}

/// Least squares with three basis columns, each scaled to unit norm before
/// forming the normal equations.
fn least_squares3(rows: &[([f64; 3], f64)]) -> [f64; 3] {
    let mut norm = [0.0f64; 3];
    for (x, _) in rows {
        for c in 0..3 {
            norm[c] += x[c] * x[c];
        }
    }
    let norm = norm.map(|v| v.sqrt().max(f64::MIN_POSITIVE));
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    for (x, y) in rows {
        let xs = [x[0] / norm[0], x[1] / norm[1], x[2] / norm[2]];
        for r in 0..3 {
            aty[r] += xs[r] * y;
            for c in 0..3 {
                ata[r][c] += xs[r] * xs[c];
            }
        }
    }
    let c = solve3(ata, aty);
    [c[0] / norm[0], c[1] / norm[1], c[2] / norm[2]]
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}
