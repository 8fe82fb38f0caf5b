//! Tail-fit estimators of `λ` and the interval-method baseline.
//!
//! Near the left boundary the stationary density satisfies
//! `log φ(x) ≈ a₂ l² + a₁ l` with `l = log(x - x₋)` and `a₂ = 1/(2 log λ)`, so a
//! least-squares fit of the histogram tail gives `λ̂ = exp(1/(2a₂))`. The
//! higher-order variant replaces `l²` by `l² - 2l log(-l)`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::density::{
    build_histogram, select_tail, BinPosition, BoundaryMode, DensityError, HMinRule, TailHistogram, TailSelection,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("fitted a2 = {a2} gives no tail signal")]
    DegenerateFit { a2: f64 },
    #[error("normal equations are singular ({points} points)")]
    CollinearBasis { points: usize },
    #[error("higher-order basis needs log(x - x̂₋) < 0 for every point")]
    PositiveLog,
    #[error("a2 = {0} is not negative")]
    NonNegativeA2(f64),
    #[error("interval {which} has no visits with a successor")]
    EmptyInterval { which: u8 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl EstimatorError {
    pub fn code(&self) -> &'static str {
        match self {
            EstimatorError::Density(e) => e.code(),
            EstimatorError::DegenerateFit { .. } => "DegenerateFit",
            EstimatorError::CollinearBasis { .. } => "CollinearBasis",
            EstimatorError::PositiveLog => "PositiveLog",
            EstimatorError::NonNegativeA2(_) => "NonNegativeA2",
            EstimatorError::EmptyInterval { .. } => "EmptyInterval",
            EstimatorError::InvalidInput(_) => "InvalidInput",
        }
    }
}

/// Second basis function of the tail fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Basis {
    /// `{l, l²}`
    #[default]
    LeadingOrder,
    /// `{l, l² - 2l log(-l)}`
    HigherOrder,
}

impl Basis {
    fn second(self, l: f64) -> f64 {
        match self {
            Basis::LeadingOrder => l * l,
            Basis::HigherOrder => l * l - 2.0 * l * (-l).ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    LeadingOrder,
    HigherOrder,
    Interval,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::LeadingOrder => "leading",
            Method::HigherOrder => "higher",
            Method::Interval => "interval",
        }
    }

    pub fn basis(self) -> Option<Basis> {
        match self {
            Method::LeadingOrder => Some(Basis::LeadingOrder),
            Method::HigherOrder => Some(Basis::HigherOrder),
            Method::Interval => None,
        }
    }
}

impl From<Basis> for Method {
    fn from(b: Basis) -> Self {
        match b {
            Basis::LeadingOrder => Method::LeadingOrder,
            Basis::HigherOrder => Method::HigherOrder,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "leading" | "leading-order" => Ok(Method::LeadingOrder),
            "higher" | "higher-order" => Ok(Method::HigherOrder),
            "interval" => Ok(Method::Interval),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitCoefficients {
    pub a1: f64,
    pub a2: f64,
    pub basis: Basis,
    pub sse: f64,
    pub points_used: usize,
}

/// Least-squares fit of `y ≈ a₁ l + a₂ g(l)` without intercept, via the 2×2
/// normal equations. Points are `(l, log h)`.
pub fn fit_tail(points: &[(f64, f64)], basis: Basis) -> Result<FitCoefficients, EstimatorError> {
    if basis == Basis::HigherOrder && points.iter().any(|p| !(p.0 < 0.0)) {
        return Err(EstimatorError::PositiveLog);
    }
    let (mut suu, mut suv, mut svv, mut suy, mut svy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(l, y) in points {
        let v = basis.second(l);
        suu += l * l;
        suv += l * v;
        svv += v * v;
        suy += l * y;
        svy += v * y;
    }
    let det = suu * svv - suv * suv;
    if points.len() < 2 || !(det > 1e-13 * suu * svv) {
        return Err(EstimatorError::CollinearBasis { points: points.len() });
    }
    let a1 = (svv * suy - suv * svy) / det;
    let a2 = (suu * svy - suv * suy) / det;
    if !(a2 < 0.0) {
        return Err(EstimatorError::DegenerateFit { a2 });
    }
    let sse = points
        .iter()
        .map(|&(l, y)| {
            let r = y - a1 * l - a2 * basis.second(l);
            r * r
        })
        .sum();
    Ok(FitCoefficients { a1, a2, basis, sse, points_used: points.len() })
}

/// `λ̂ = exp(1/(2a₂))`.
pub fn lambda_from_a2(a2: f64) -> Result<f64, EstimatorError> {
    if !(a2 < 0.0) {
        return Err(EstimatorError::NonNegativeA2(a2));
    }
    Ok((1.0 / (2.0 * a2)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub b: usize,
    pub q: f64,
    pub h_min: HMinRule,
    pub boundary: BoundaryMode,
    pub basis: Basis,
    pub position: BinPosition,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            b: 200,
            q: 0.3,
            h_min: HMinRule::default(),
            boundary: BoundaryMode::Estimated,
            basis: Basis::LeadingOrder,
            position: BinPosition::Midpoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaEstimate {
    /// Raw value; signed for the interval method.
    pub lambda_hat: f64,
    pub method: Method,
    pub coefficients: Option<FitCoefficients>,
    pub boundary: BoundaryMode,
    pub x_hat_minus: f64,
    pub n: usize,
    pub b: usize,
    pub q: f64,
    pub h_min: f64,
    /// Kept bins dropped because `x - x̂₋` was not positive, or for the
    /// higher-order basis not below one.
    pub excluded: usize,
    pub histogram: Option<TailHistogram>,
    pub selection: Option<TailSelection>,
    /// Intervals used by the interval method.
    pub intervals: Option<((f64, f64), (f64, f64))>,
}

/// Tail points `(log(x_i - x̂₋), log h_i)` of the selected bins.
pub fn tail_points(hist: &TailHistogram, sel: &TailSelection, basis: Basis) -> (Vec<(f64, f64)>, usize) {
    let mut excluded = 0;
    let mut pts = Vec::with_capacity(sel.kept_indices.len());
    for &i in &sel.kept_indices {
        let d = hist.distance(i);
        if !(d > 0.0) || (basis == Basis::HigherOrder && !(d < 1.0)) {
            excluded += 1;
            continue;
        }
        pts.push((d.ln(), hist.heights[i].ln()));
    }
    (pts, excluded)
}

/// Tail fit on an existing histogram.
pub fn estimate_from_histogram(
    hist: &TailHistogram,
    q: f64,
    h_min: HMinRule,
    basis: Basis,
    n: usize,
) -> Result<LambdaEstimate, EstimatorError> {
    let sel = select_tail(hist, q, h_min)?;
    let (pts, excluded) = tail_points(hist, &sel, basis);
    if pts.is_empty() && basis == Basis::HigherOrder {
        return Err(EstimatorError::PositiveLog);
    }
    let coef = fit_tail(&pts, basis)?;
    let lambda_hat = lambda_from_a2(coef.a2)?;
    if !(lambda_hat > 0.0 && lambda_hat < 1.0) {
        return Err(EstimatorError::DegenerateFit { a2: coef.a2 });
    }
    Ok(LambdaEstimate {
        lambda_hat,
        method: basis.into(),
        coefficients: Some(coef),
        boundary: hist.boundary,
        x_hat_minus: hist.x_hat_minus,
        n,
        b: hist.bins(),
        q,
        h_min: sel.h_min,
        excluded,
        histogram: Some(hist.clone()),
        selection: Some(sel),
        intervals: None,
    })
}

/// Histogram, tail selection, fit and `λ̂` in one call.
pub fn estimate_lambda(values: &[f64], config: &EstimatorConfig) -> Result<LambdaEstimate, EstimatorError> {
    if values.is_empty() {
        return Err(EstimatorError::InvalidInput("empty series".into()));
    }
    let hist = build_histogram(values, config.b, config.boundary, config.position)?;
    estimate_from_histogram(&hist, config.q, config.h_min, config.basis, values.len())
}

/// Interval-method value `(m₁ - m₂)/(b₂ - a₁)` where `m_k` is the mean successor
/// of the visits to `I_k`. Increasing maps give a negative value.
pub fn interval_method(values: &[f64], i1: (f64, f64), i2: (f64, f64)) -> Result<f64, EstimatorError> {
    let ((a1, b1), (a2, b2)) = (i1, i2);
    if !(a1 <= b1 && a2 <= b2 && b1 < a2) {
        return Err(EstimatorError::InvalidInput(format!(
            "intervals [{a1}, {b1}] and [{a2}, {b2}] must be ordered and disjoint"
        )));
    }
    let (mut s1, mut c1, mut s2, mut c2) = (0.0, 0usize, 0.0, 0usize);
    for w in values.windows(2) {
        let (y, next) = (w[0], w[1]);
        if y >= a1 && y <= b1 {
            s1 += next;
            c1 += 1;
        } else if y >= a2 && y <= b2 {
            s2 += next;
            c2 += 1;
        }
    }
    if c1 == 0 {
        return Err(EstimatorError::EmptyInterval { which: 1 });
    }
    if c2 == 0 {
        return Err(EstimatorError::EmptyInterval { which: 2 });
    }
    Ok((s1 / c1 as f64 - s2 / c2 as f64) / (b2 - a1))
}

/// `I₁` and `I₂` as the first and third quarters of `[x̂₋, x̂₋ + 4kΔz]`, with the
/// smallest `k ≥ 1` that puts at least `min_visits` visits in each.
pub fn place_intervals(
    values: &[f64],
    x_hat_minus: f64,
    dz: f64,
    min_visits: usize,
) -> Result<((f64, f64), (f64, f64)), EstimatorError> {
    if values.len() < 2 || !(dz > 0.0) {
        return Err(EstimatorError::InvalidInput("need at least two values and Δz > 0".into()));
    }
    let mut visited: Vec<f64> = values[..values.len() - 1].to_vec();
    visited.sort_by(|a, b| a.total_cmp(b));
    let count = |lo: f64, hi: f64| {
        let s = visited.partition_point(|&v| v < lo);
        let e = visited.partition_point(|&v| v <= hi);
        e - s
    };
    let top = *visited.last().unwrap();
    let mut k = 1usize;
    loop {
        let w = k as f64 * dz;
        let i1 = (x_hat_minus, x_hat_minus + w);
        let i2 = (x_hat_minus + 2.0 * w, x_hat_minus + 3.0 * w);
        if count(i1.0, i1.1) >= min_visits && count(i2.0, i2.1) >= min_visits {
            return Ok((i1, i2));
        }
        if i2.0 > top {
            // Intervals no longer fit inside the data: keep the last feasible pair.
            let w = (k - 1).max(1) as f64 * dz;
            let i1 = (x_hat_minus, x_hat_minus + w);
            let i2 = (x_hat_minus + 2.0 * w, x_hat_minus + 3.0 * w);
            return Ok((i1, i2));
        }
        k += 1;
    }
}

/// Interval method with intervals placed from the histogram boundary estimate.
pub fn interval_estimate(
    values: &[f64],
    b: usize,
    boundary: BoundaryMode,
    min_visits: usize,
) -> Result<LambdaEstimate, EstimatorError> {
    let hist = build_histogram(values, b, boundary, BinPosition::Midpoint)?;
    let (i1, i2) = place_intervals(values, hist.x_hat_minus, hist.dz, min_visits)?;
    let raw = interval_method(values, i1, i2)?;
    Ok(LambdaEstimate {
        lambda_hat: raw,
        method: Method::Interval,
        coefficients: None,
        boundary,
        x_hat_minus: hist.x_hat_minus,
        n: values.len(),
        b,
        q: f64::NAN,
        h_min: f64::NAN,
        excluded: 0,
        histogram: None,
        selection: None,
        intervals: Some((i1, i2)),
    })
}

/// Mirror image `-y_t`; the right tail of a series is the left tail of its
/// reflection.
pub fn reflect_series(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{minimal_invariant_interval, MapFamily, MapModel};
    use crate::noise::{NoiseKind, NoiseModel, RngStream};
    use crate::simulate::{generate, generate_with_noise};
    use proptest::prelude::*;

    fn synth(a1: f64, a2: f64, basis: Basis, ls: &[f64]) -> Vec<(f64, f64)> {
        ls.iter().map(|&l| (l, a1 * l + a2 * basis.second(l))).collect()
    }

    #[test]
    fn exact_fits() {
        let c = fit_tail(&synth(0.5, -1.0, Basis::LeadingOrder, &[-1.0, -2.0, -3.0]), Basis::LeadingOrder).unwrap();
        assert!((c.a1 - 0.5).abs() < 1e-12 && (c.a2 + 1.0).abs() < 1e-12 && c.sse < 1e-24);
        let c = fit_tail(&synth(0.3, -0.8, Basis::HigherOrder, &[-0.5, -1.5, -2.5]), Basis::HigherOrder).unwrap();
        assert!((c.a1 - 0.3).abs() < 1e-12 && (c.a2 + 0.8).abs() < 1e-12 && c.sse < 1e-24);
        assert_eq!(c.points_used, 3);
    }

    #[test]
    fn fit_errors() {
        let convex: Vec<(f64, f64)> = [-1.0, -2.0, -3.0].iter().map(|&l| (l, l * l)).collect();
        assert!(matches!(fit_tail(&convex, Basis::LeadingOrder), Err(EstimatorError::DegenerateFit { .. })));
        assert!(matches!(fit_tail(&[(-1.0, -1.0)], Basis::LeadingOrder), Err(EstimatorError::CollinearBasis { .. })));
        assert!(matches!(
            fit_tail(&[(-1.0, -1.0), (-1.0, -2.0)], Basis::LeadingOrder),
            Err(EstimatorError::CollinearBasis { .. })
        ));
        assert!(matches!(fit_tail(&[(-1.0, 0.0), (0.5, 0.0)], Basis::HigherOrder), Err(EstimatorError::PositiveLog)));
    }

    #[test]
    fn lambda_map_examples() {
        assert!((lambda_from_a2(-1.0 / (2.0 * 2f64.ln())).unwrap() - 0.5).abs() < 1e-15);
        assert!((lambda_from_a2(-50.0).unwrap() - (-0.01f64).exp()).abs() < 1e-15);
        assert!((lambda_from_a2(-0.1).unwrap() - 0.006_737_946_999_085_467).abs() < 1e-15);
        assert!(matches!(lambda_from_a2(0.0), Err(EstimatorError::NonNegativeA2(_))));
    }

    proptest! {
        #[test]
        fn normal_equation_optimality(
            a1 in -2.0f64..2.0, a2 in -3.0f64..-0.05, noise in proptest::collection::vec(-0.1f64..0.1, 8),
            higher in any::<bool>(),
        ) {
            let basis = if higher { Basis::HigherOrder } else { Basis::LeadingOrder };
            let ls: Vec<f64> = (0..8).map(|i| -0.3 - 0.4 * i as f64).collect();
            let pts: Vec<(f64, f64)> = synth(a1, a2, basis, &ls).into_iter().zip(&noise).map(|((l, y), e)| (l, y + e)).collect();
            let c = fit_tail(&pts, basis).unwrap();
            let sse = |p: f64, q: f64| pts.iter().map(|&(l, y)| (y - p * l - q * basis.second(l)).powi(2)).sum::<f64>();
            let base = sse(c.a1, c.a2);
            prop_assert!((base - c.sse).abs() <= 1e-12 * (1.0 + base));
            for (d1, d2) in [(1e-6, 0.0), (-1e-6, 0.0), (0.0, 1e-6), (0.0, -1e-6), (1e-6, 1e-6), (1e-6, -1e-6), (-1e-6, 1e-6), (-1e-6, -1e-6)] {
                prop_assert!(sse(c.a1 + d1, c.a2 + d2) >= base - 1e-15);
            }
        }
    }

    #[test]
    fn interval_method_example() {
        let m = MapModel::new(MapFamily::Linear, 0.5, 0.1).unwrap();
        // 0.05 -> 0.025, then jump to 0.25 -> 0.125
        let s = generate_with_noise(&m, 0.05, &[0.0, 0.25 - 0.0125, 0.0]).unwrap();
        assert_eq!(s.values.len(), 4);
        let v = interval_method(&s.values, (0.0, 0.1), (0.2, 0.3)).unwrap();
        // visits to I1: 0.05 -> 0.025 and 0.025 -> 0.25; to I2: 0.25 -> 0.125
        let expected = ((0.025 + 0.25) / 2.0 - 0.125) / 0.3;
        assert!((v - expected).abs() < 1e-15);
        let v = interval_method(&[0.05, 0.025, 0.25, 0.125], (0.0, 0.03), (0.2, 0.3)).unwrap();
        assert!((v - (0.25 - 0.125) / 0.3).abs() < 1e-15);
        // one visit each: 0.25 -> 0.125 and 0.05 -> 0.025
        let v = interval_method(&[0.25, 0.125, 0.9, 0.05, 0.025], (0.0, 0.1), (0.2, 0.3)).unwrap();
        assert!((v + 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(interval_method(&[5.0, 6.0], (0.0, 0.1), (0.2, 0.3)), Err(EstimatorError::EmptyInterval { which: 1 })));
    }

    #[test]
    fn interval_method_linear_monte_carlo() {
        let m = MapModel::new(MapFamily::Linear, 0.5, 0.1).unwrap();
        let noise = NoiseModel::for_model(NoiseKind::Uniform, &m);
        let s = generate(&m, &noise, 0.0, 100_000, 0, &mut RngStream::new(4, 0)).unwrap();
        // 100 visits leave the thin-tail interval dominated by noise; 1000 do not
        let e = interval_estimate(&s.values, 200, BoundaryMode::Estimated, 1000).unwrap();
        assert!((e.lambda_hat.abs() - 0.5).abs() <= 0.25, "{}", e.lambda_hat);
        assert!(e.lambda_hat < 0.0);
    }

    #[test]
    fn linear_pipeline_known_boundary() {
        let m = MapModel::new(MapFamily::Linear, 0.684, 0.1).unwrap();
        let noise = NoiseModel::for_model(NoiseKind::Uniform, &m);
        let s = generate(&m, &noise, 0.0, 100_000, 0, &mut RngStream::new(1, 7)).unwrap();
        let cfg = EstimatorConfig { boundary: BoundaryMode::True(-0.1), ..Default::default() };
        let e = estimate_lambda(&s.values, &cfg).unwrap();
        assert!((e.lambda_hat - 0.684).abs() <= 0.15, "{}", e.lambda_hat);
        let c = e.coefficients.unwrap();
        assert_eq!(e.lambda_hat, (1.0 / (2.0 * c.a2)).exp());
        // nearest-to-boundary bins fall below h_min and are discarded
        let sel = e.selection.as_ref().unwrap();
        assert!(sel.kept_indices.len() < sel.b_l);
        assert!(sel.kept_indices[0] > 0);
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(
            estimate_lambda(&[1.0; 500], &EstimatorConfig::default()),
            Err(EstimatorError::Density(DensityError::DegenerateRange(_)))
        ));
    }

    #[test]
    fn shift_invariance_is_bit_exact() {
        let m = MapModel::new(MapFamily::TanhShift, 0.0, 0.1).unwrap();
        let noise = NoiseModel::for_model(NoiseKind::Uniform, &m);
        let iv = minimal_invariant_interval(&m, 3.0).unwrap();
        let s = generate(&m, &noise, iv.midpoint(), 50_000, 100, &mut RngStream::new(8, 0)).unwrap();
        // Round data to a dyadic grid so the shift below is exact in binary.
        let base: Vec<f64> = s.values.iter().map(|v| (v * 1024.0 * 1024.0).round() / (1024.0 * 1024.0)).collect();
        let x_minus = (iv.x_minus * 1024.0).floor() / 1024.0;
        let c = 0.75;
        let shifted: Vec<f64> = base.iter().map(|v| v + c).collect();
        for basis in [Basis::LeadingOrder, Basis::HigherOrder] {
            for boundary in [BoundaryMode::True(x_minus), BoundaryMode::Estimated] {
                let cfg = EstimatorConfig { basis, boundary, ..Default::default() };
                let shifted_boundary = match boundary {
                    BoundaryMode::True(x) => BoundaryMode::True(x + c),
                    b => b,
                };
                let a = estimate_lambda(&base, &cfg).unwrap();
                let b = estimate_lambda(&shifted, &EstimatorConfig { boundary: shifted_boundary, ..cfg }).unwrap();
                assert_eq!(a.lambda_hat.to_bits(), b.lambda_hat.to_bits(), "{basis:?} {boundary:?}");
            }
        }
    }

    #[test]
    fn reflection_swaps_tails() {
        assert_eq!(reflect_series(&[1.0, -2.0]), vec![-1.0, 2.0]);
    }
}
