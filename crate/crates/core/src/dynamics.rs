//! Deterministic map families, their extremal maps and the boundary geometry
//! of minimal invariant intervals.
//!
//! Every family is an order-preserving diffeomorphism `f_a`. Bounded additive
//! noise of amplitude `ε` turns it into the pair of extremal maps
//! `f_±(x) = f_a(x) ± ε`, whose stable fixed points bound the minimal
//! invariant interval `[x₋, x₊]`. The early-warning parameter is
//! `λ = f₋'(x₋)`, which tends to one at a fold of the lower extremal map.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Relative residual tolerance for fixed points of the extremal maps.
pub const FIXED_POINT_TOL: f64 = 1e-12;
/// Iteration cap of the Newton/bisection fixed-point solver.
pub const FIXED_POINT_MAX_ITER: usize = 200;
/// Iteration cap for [`hitting_time`] and for the extremal-map iterations used
/// to locate invariant intervals.
pub const ITERATION_CAP: u64 = 1_000_000;
/// Residual tolerance of [`solve_fold`].
pub const FOLD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("g(x) = f(x) - x has the same sign at both ends of [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("no convergence after {iterations} iterations (last x = {x})")]
    NoConvergence { iterations: usize, x: f64 },
    #[error("no minimal invariant interval on the branch containing {seed}")]
    NoInterval { seed: f64 },
    #[error("iteration diverged after {steps} steps")]
    Diverged { steps: u64 },
    #[error("fold continuation is not defined for the {0} family")]
    UnsupportedFamily(MapFamily),
}

impl DynamicsError {
    pub fn code(&self) -> &'static str {
        match self {
            DynamicsError::InvalidModel(_) => "InvalidModel",
            DynamicsError::InvalidInput(_) => "InvalidInput",
            DynamicsError::NoSignChange { .. } => "NoSignChange",
            DynamicsError::NoConvergence { .. } => "NoConvergence",
            DynamicsError::NoInterval { .. } => "NoInterval",
            DynamicsError::Diverged { .. } => "Diverged",
            DynamicsError::UnsupportedFamily(_) => "UnsupportedFamily",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapFamily {
    /// `f(x) = λx`, with the noise amplitude scaled to `(1-λ)ε` so that the
    /// invariant interval is `[-ε, ε]` for every `λ`.
    Linear,
    /// `f_a(x) = 3 tanh(x/2) - a`.
    TanhShift,
    /// `f_a(x) = 3 tanh((e^a x + g(a))/2) + h(a) + 0.5` with cubic `g` and
    /// cube-root `h`; its variance does not rise ahead of the fold.
    ModifiedTanh,
}

impl MapFamily {
    pub fn name(self) -> &'static str {
        match self {
            MapFamily::Linear => "linear",
            MapFamily::TanhShift => "tanh-shift",
            MapFamily::ModifiedTanh => "modified-tanh",
        }
    }
}

impl fmt::Display for MapFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "linear" => Ok(MapFamily::Linear),
            "tanh-shift" | "tanh" => Ok(MapFamily::TanhShift),
            "modified-tanh" => Ok(MapFamily::ModifiedTanh),
            other => Err(format!("unknown map family '{other}'")),
        }
    }
}

/// Which extremal map: `Lower` is `f - ε`, `Upper` is `f + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Lower => "lower",
            Side::Upper => "upper",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lower" | "minus" | "left" => Ok(Side::Lower),
            "upper" | "plus" | "right" => Ok(Side::Upper),
            other => Err(format!("unknown side '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapModel {
    pub family: MapFamily,
    /// Family parameter; for `Linear` this is `λ` itself.
    pub a: f64,
    /// Noise amplitude `ε`.
    pub epsilon: f64,
}

fn mod_g(a: f64) -> f64 {
    -0.72 * (a + 0.8).powi(3) + 0.36
}

fn mod_g_prime(a: f64) -> f64 {
    -2.16 * (a + 0.8).powi(2)
}

// Real signed cube root, so the family stays defined for a < -0.0011.
fn mod_h(a: f64) -> f64 {
    -0.2 * (a + 0.0011).cbrt() + 0.021
}

fn mod_h_prime(a: f64) -> f64 {
    let c = (a + 0.0011).cbrt();
    -0.2 / (3.0 * c * c)
}

fn sech2(u: f64) -> f64 {
    let t = u.tanh();
    1.0 - t * t
}

impl MapModel {
    pub fn new(family: MapFamily, a: f64, epsilon: f64) -> Result<Self, DynamicsError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(DynamicsError::InvalidModel(format!(
                "epsilon must be finite and positive, got {epsilon}"
            )));
        }
        if !a.is_finite() {
            return Err(DynamicsError::InvalidModel(format!("parameter a = {a} is not finite")));
        }
        if family == MapFamily::Linear && !(a > 0.0 && a < 1.0) {
            return Err(DynamicsError::InvalidModel(format!(
                "linear family needs 0 < a < 1, got {a}"
            )));
        }
        Ok(MapModel { family, a, epsilon })
    }

    /// Same family and noise amplitude at another parameter value.
    pub fn with_parameter(&self, a: f64) -> Result<Self, DynamicsError> {
        MapModel::new(self.family, a, self.epsilon)
    }

    /// Half-width of the additive noise. The linear family scales it by `1 - λ`.
    pub fn noise_amplitude(&self) -> f64 {
        match self.family {
            MapFamily::Linear => (1.0 - self.a) * self.epsilon,
            _ => self.epsilon,
        }
    }

    // Inner argument of the modified family, u = e^a x + g(a).
    fn mod_inner(&self, x: f64) -> f64 {
        self.a.exp() * x + mod_g(self.a)
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.family {
            MapFamily::Linear => self.a * x,
            MapFamily::TanhShift => 3.0 * (0.5 * x).tanh() - self.a,
            MapFamily::ModifiedTanh => {
                3.0 * (0.5 * self.mod_inner(x)).tanh() + mod_h(self.a) + 0.5
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self.family {
            MapFamily::Linear => self.a,
            MapFamily::TanhShift => 1.5 * sech2(0.5 * x),
            MapFamily::ModifiedTanh => 1.5 * sech2(0.5 * self.mod_inner(x)) * self.a.exp(),
        }
    }

    /// `f_a⁻¹(y)`, or `None` when `y` lies outside the range of `f_a`.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        match self.family {
            MapFamily::Linear => Some(y / self.a),
            MapFamily::TanhShift => {
                let t = (y + self.a) / 3.0;
                (t.abs() < 1.0).then(|| 2.0 * t.atanh())
            }
            MapFamily::ModifiedTanh => {
                let t = (y - mod_h(self.a) - 0.5) / 3.0;
                if t.abs() >= 1.0 {
                    return None;
                }
                let u = 2.0 * t.atanh();
                Some((u - mod_g(self.a)) * (-self.a).exp())
            }
        }
    }

    pub fn extremal(&self, side: Side, x: f64) -> f64 {
        self.value(x) + side.sign() * self.noise_amplitude()
    }

    /// Partial derivatives used by the fold continuation:
    /// `(∂f/∂a, ∂f'/∂x, ∂f'/∂a)` at `x`.
    fn parameter_partials(&self, x: f64) -> (f64, f64, f64) {
        match self.family {
            MapFamily::Linear => (x, 0.0, 1.0),
            MapFamily::TanhShift => {
                let t = (0.5 * x).tanh();
                let s = 1.0 - t * t;
                (-1.0, -1.5 * s * t, 0.0)
            }
            MapFamily::ModifiedTanh => {
                let ea = self.a.exp();
                let u = self.mod_inner(x);
                let t = (0.5 * u).tanh();
                let s = 1.0 - t * t;
                let du_da = ea * x + mod_g_prime(self.a);
                let df_da = 1.5 * s * du_da + mod_h_prime(self.a);
                // d/du sech²(u/2) = -sech²(u/2) tanh(u/2)
                let dfp_dx = -1.5 * s * t * ea * ea;
                let dfp_da = 1.5 * s * ea - 1.5 * s * t * ea * du_da;
                (df_da, dfp_dx, dfp_da)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointResult {
    pub x: f64,
    /// `|f±(x) - x|`.
    pub residual: f64,
    pub iterations: usize,
    /// `|f±'(x)| < 1`.
    pub stable: bool,
}

/// Minimal invariant interval `[x₋, x₊]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantInterval {
    pub x_minus: f64,
    pub x_plus: f64,
}

impl InvariantInterval {
    pub fn width(&self) -> f64 {
        self.x_plus - self.x_minus
    }

    pub fn contains(&self, x: f64, slack: f64) -> bool {
        x >= self.x_minus - slack && x <= self.x_plus + slack
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.x_minus + self.x_plus)
    }
}

/// Safeguarded Newton iteration for a root of `g` on a sign-changing bracket.
///
/// A Newton step that leaves the current bracket is replaced by bisection.
/// Converges when `|g(x)| <= tol * (1 + |x|)`.
pub(crate) fn bracketed_root(
    g: impl Fn(f64) -> f64,
    dg: impl Fn(f64) -> f64,
    bracket: (f64, f64),
    tol: f64,
    max_iter: usize,
) -> Result<(f64, usize), DynamicsError> {
    let (mut lo, mut hi) = if bracket.0 <= bracket.1 { bracket } else { (bracket.1, bracket.0) };
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(DynamicsError::InvalidInput(format!("bracket [{lo}, {hi}] is not finite")));
    }
    let mut glo = g(lo);
    let ghi = g(hi);
    if glo == 0.0 {
        return Ok((lo, 0));
    }
    if ghi == 0.0 {
        return Ok((hi, 0));
    }
    if glo.signum() == ghi.signum() || glo.is_nan() || ghi.is_nan() {
        return Err(DynamicsError::NoSignChange { lo, hi });
    }
    let mut x = if glo.abs() < ghi.abs() { lo } else { hi };
    let mut best = (f64::INFINITY, x);
    for it in 1..=max_iter {
        let gx = g(x);
        if gx.abs() < best.0 {
            best = (gx.abs(), x);
        }
        if gx.abs() <= tol * (1.0 + x.abs()) {
            // One extra Newton step costs little and usually lands on the
            // nearest representable root.
            let d = dg(x);
            let polished = x - gx / d;
            if d != 0.0 && polished.is_finite() && g(polished).abs() <= gx.abs() {
                return Ok((polished, it));
            }
            return Ok((x, it));
        }
        if gx.signum() == glo.signum() {
            lo = x;
            glo = gx;
        } else {
            hi = x;
        }
        if hi - lo <= 2.0 * f64::EPSILON * (1.0 + x.abs()) {
            // Bracket at machine width: accept the better end if it is good enough.
            let (r, xb) = best;
            if r <= tol * (1.0 + xb.abs()) {
                return Ok((xb, it));
            }
            return Err(DynamicsError::NoConvergence { iterations: it, x: xb });
        }
        let d = dg(x);
        let newton = x - gx / d;
        x = if d != 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(DynamicsError::NoConvergence { iterations: max_iter, x: best.1 })
}

pub fn fixed_point(
    model: &MapModel,
    side: Side,
    bracket: (f64, f64),
) -> Result<FixedPointResult, DynamicsError> {
    let g = |x: f64| model.extremal(side, x) - x;
    let dg = |x: f64| model.derivative(x) - 1.0;
    let (x, iterations) = bracketed_root(g, dg, bracket, FIXED_POINT_TOL, FIXED_POINT_MAX_ITER)?;
    Ok(FixedPointResult {
        x,
        residual: g(x).abs(),
        iterations,
        stable: model.derivative(x).abs() < 1.0,
    })
}

/// Follows `x ← f±(x)` from `start` to the fixed point it converges to, then
/// polishes that point with the bracketed solver.
fn iteration_limit(model: &MapModel, side: Side, start: f64) -> Result<FixedPointResult, DynamicsError> {
    let no_interval = DynamicsError::NoInterval { seed: start };
    let mut x = start;
    for _ in 0..ITERATION_CAP {
        let next = model.extremal(side, x);
        if !next.is_finite() {
            return Err(no_interval);
        }
        let step = next - x;
        if step == 0.0 {
            return fixed_point_at(model, side, next);
        }
        if step.abs() <= 1e-10 * (1.0 + next.abs()) {
            // The limit lies further along the direction of motion; expand a
            // bracket from the last iterate until g changes sign.
            let g = |y: f64| model.extremal(side, y) - y;
            let g_next = g(next);
            if g_next == 0.0 {
                return fixed_point_at(model, side, next);
            }
            let dir = step.signum();
            let mut w = 4.0 * step.abs() + 1e-14 * (1.0 + next.abs());
            for _ in 0..200 {
                let far = next + dir * w;
                let gf = g(far);
                if gf.signum() != g_next.signum() || gf == 0.0 {
                    return fixed_point(model, side, (next, far));
                }
                w *= 2.0;
            }
            return Err(no_interval);
        }
        x = next;
    }
    Err(no_interval)
}

fn fixed_point_at(model: &MapModel, side: Side, x: f64) -> Result<FixedPointResult, DynamicsError> {
    Ok(FixedPointResult {
        x,
        residual: (model.extremal(side, x) - x).abs(),
        iterations: 0,
        stable: model.derivative(x).abs() < 1.0,
    })
}

/// Minimal invariant interval attracting `seed_point`.
///
/// `x₋` is the limit of the lower extremal map iterated from the seed and `x₊`
/// the limit of the upper one. The pair bounds a minimal invariant interval
/// only if iterating `f₋` down from `x₊` returns to `x₋` and `f₊` up from `x₋`
/// returns to `x₊`, i.e. neither extremal map has another fixed point inside.
pub fn minimal_invariant_interval(
    model: &MapModel,
    seed_point: f64,
) -> Result<InvariantInterval, DynamicsError> {
    let no_interval = DynamicsError::NoInterval { seed: seed_point };
    if !seed_point.is_finite() {
        return Err(DynamicsError::InvalidInput(format!("seed point {seed_point} is not finite")));
    }
    let lower = iteration_limit(model, Side::Lower, seed_point).map_err(|_| no_interval.clone())?;
    let upper = iteration_limit(model, Side::Upper, seed_point).map_err(|_| no_interval.clone())?;
    if !(lower.x < upper.x) || !lower.stable || !upper.stable {
        return Err(no_interval);
    }
    let lower_back = iteration_limit(model, Side::Lower, upper.x).map_err(|_| no_interval.clone())?;
    let upper_back = iteration_limit(model, Side::Upper, lower.x).map_err(|_| no_interval.clone())?;
    let same = |p: f64, q: f64| (p - q).abs() <= 1e-9 * (1.0 + p.abs());
    if !same(lower.x, lower_back.x) || !same(upper.x, upper_back.x) {
        return Err(no_interval);
    }
    Ok(InvariantInterval { x_minus: lower.x, x_plus: upper.x })
}

/// `λ = f₋'(x₋)` (or `f₊'(x₊)` for the upper side).
pub fn lambda_true(model: &MapModel, interval: &InvariantInterval, side: Side) -> f64 {
    match side {
        Side::Lower => model.derivative(interval.x_minus),
        Side::Upper => model.derivative(interval.x_plus),
    }
}

/// Convenience: λ at the boundary of the interval attracting `seed_point`.
pub fn lambda_at(model: &MapModel, seed_point: f64, side: Side) -> Result<(f64, InvariantInterval), DynamicsError> {
    let interval = minimal_invariant_interval(model, seed_point)?;
    Ok((lambda_true(model, &interval, side), interval))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldPoint {
    pub x_star: f64,
    pub a_star: f64,
    /// `|f±(x*) - x*|` at `a*`.
    pub value_residual: f64,
    /// `|f'(x*) - 1|` at `a*`.
    pub slope_residual: f64,
}

/// Fold of the chosen extremal map: `f_{a*}(x*) ± ε = x*` and `f'_{a*}(x*) = 1`.
///
/// For the lower side this is the tangency on the `x > 0` (upper) branch that
/// destroys the upper attractor as `a` grows; the upper side uses the mirror
/// tangency on the lower branch.
pub fn solve_fold(family: MapFamily, epsilon: f64, side: Side) -> Result<FoldPoint, DynamicsError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(DynamicsError::InvalidModel(format!("epsilon must be positive, got {epsilon}")));
    }
    let (x_star, a_star) = match family {
        MapFamily::Linear => return Err(DynamicsError::UnsupportedFamily(family)),
        MapFamily::TanhShift => {
            // a enters additively: f_a = f_0 - a, so eliminate a and solve f_0'(x) = 1.
            let f0 = MapModel { family, a: 0.0, epsilon };
            let bracket = match side {
                Side::Lower => (0.0, 20.0),
                Side::Upper => (-20.0, 0.0),
            };
            let (x, _) = bracketed_root(
                |x| f0.derivative(x) - 1.0,
                |x| f0.parameter_partials(x).1,
                bracket,
                1e-15,
                FIXED_POINT_MAX_ITER,
            )?;
            (x, f0.value(x) + side.sign() * epsilon - x)
        }
        MapFamily::ModifiedTanh => modified_tanh_fold(epsilon, side)?,
    };
    let model = MapModel { family, a: a_star, epsilon };
    let value_residual = (model.extremal(side, x_star) - x_star).abs();
    let slope_residual = (model.derivative(x_star) - 1.0).abs();
    if value_residual > FOLD_TOL || slope_residual > FOLD_TOL {
        return Err(DynamicsError::NoConvergence { iterations: 0, x: x_star });
    }
    Ok(FoldPoint { x_star, a_star, value_residual, slope_residual })
}

fn modified_tanh_fold(epsilon: f64, side: Side) -> Result<(f64, f64), DynamicsError> {
    // Tangency point x(a) where f_a' = 1: sech²(u/2) = 1/(1.5 e^a), with u > 0
    // for the lower side and u < 0 for the upper side.
    let tangency = |a: f64| -> Option<f64> {
        let c = (1.5 * a.exp()).sqrt();
        if c < 1.0 {
            return None;
        }
        let u = 2.0 * c.acosh() * if side == Side::Lower { 1.0 } else { -1.0 };
        Some((u - mod_g(a)) * (-a).exp())
    };
    let residual_at = |a: f64| -> Option<f64> {
        let x = tangency(a)?;
        let m = MapModel { family: MapFamily::ModifiedTanh, a, epsilon };
        Some(m.extremal(side, x) - x)
    };
    // Coarse scan for a sign change of the tangency residual gives the
    // starting point of the Newton iteration.
    let mut guess = None;
    let mut prev: Option<(f64, f64)> = None;
    let mut k = 0;
    while guess.is_none() && k <= 400 {
        let a = -1.0 + 0.01 * k as f64;
        if let Some(r) = residual_at(a) {
            if let Some((pa, pr)) = prev {
                if pr.signum() != r.signum() {
                    let t = pr / (pr - r);
                    guess = Some(pa + t * (a - pa));
                }
            }
            prev = Some((a, r));
        } else {
            prev = None;
        }
        k += 1;
    }
    let a0 = guess.ok_or(DynamicsError::NoConvergence { iterations: k, x: f64::NAN })?;
    let x0 = tangency(a0).ok_or(DynamicsError::NoConvergence { iterations: 0, x: f64::NAN })?;

    // Damped Newton on F(x, a) = (f_a(x) ± ε - x, f_a'(x) - 1).
    let eval = |x: f64, a: f64| {
        let m = MapModel { family: MapFamily::ModifiedTanh, a, epsilon };
        (m.extremal(side, x) - x, m.derivative(x) - 1.0)
    };
    let norm = |(p, q): (f64, f64)| p.hypot(q);
    let (mut x, mut a) = (x0, a0);
    let mut f = eval(x, a);
    for it in 0..100 {
        if f.0.abs() <= 1e-14 && f.1.abs() <= 1e-14 {
            return Ok((x, a));
        }
        let m = MapModel { family: MapFamily::ModifiedTanh, a, epsilon };
        let (df_da, dfp_dx, dfp_da) = m.parameter_partials(x);
        let j11 = m.derivative(x) - 1.0;
        let det = j11 * dfp_da - df_da * dfp_dx;
        if det == 0.0 || !det.is_finite() {
            return Err(DynamicsError::NoConvergence { iterations: it, x });
        }
        let dx = -(dfp_da * f.0 - df_da * f.1) / det;
        let da = -(-dfp_dx * f.0 + j11 * f.1) / det;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = eval(x + t * dx, a + t * da);
            if norm(trial) < norm(f) {
                x += t * dx;
                a += t * da;
                f = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No decrease possible at machine precision.
            if f.0.abs() <= FOLD_TOL && f.1.abs() <= FOLD_TOL {
                return Ok((x, a));
            }
            return Err(DynamicsError::NoConvergence { iterations: it, x });
        }
    }
    if f.0.abs() <= FOLD_TOL && f.1.abs() <= FOLD_TOL {
        Ok((x, a))
    } else {
        Err(DynamicsError::NoConvergence { iterations: 100, x })
    }
}

/// First `n ≥ 0` with `f₋ⁿ(x0) < x`.
pub fn hitting_time(model: &MapModel, x0: f64, x: f64) -> Result<u64, DynamicsError> {
    if !(x0.is_finite() && x.is_finite()) || x >= x0 {
        return Err(DynamicsError::InvalidInput(format!("hitting time needs x < x0, got x = {x}, x0 = {x0}")));
    }
    let mut y = x0;
    let mut n = 0u64;
    while y >= x {
        let next = model.extremal(Side::Lower, y);
        n += 1;
        if !next.is_finite() || next > x0 || n > ITERATION_CAP {
            return Err(DynamicsError::Diverged { steps: n });
        }
        y = next;
    }
    Ok(n)
}

/// Parameter `a` at which `λ(a)` on the branch attracting `seed_point` equals
/// `target`, found by bisection over `a_range`. Parameters without a minimal
/// invariant interval count as `λ = 1` (past the fold).
pub fn parameter_for_lambda(
    family: MapFamily,
    epsilon: f64,
    target: f64,
    a_range: (f64, f64),
    seed_point: f64,
) -> Result<f64, DynamicsError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(DynamicsError::InvalidInput(format!("target λ must lie in (0,1), got {target}")));
    }
    if family == MapFamily::Linear {
        return Ok(target);
    }
    let lambda_of = |a: f64| -> Result<f64, DynamicsError> {
        let model = MapModel::new(family, a, epsilon)?;
        Ok(match lambda_at(&model, seed_point, Side::Lower) {
            Ok((l, _)) => l,
            Err(DynamicsError::NoInterval { .. }) => 1.0,
            Err(e) => return Err(e),
        })
    };
    let (mut lo, mut hi) = a_range;
    let (flo, fhi) = (lambda_of(lo)? - target, lambda_of(hi)? - target);
    if flo.signum() == fhi.signum() {
        return Err(DynamicsError::NoSignChange { lo, hi });
    }
    let increasing = flo < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
            break;
        }
        let below = lambda_of(mid)? < target;
        if below == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(family: MapFamily, a: f64, eps: f64) -> MapModel {
        MapModel::new(family, a, eps).unwrap()
    }

    // Plain bisection, independent of the Newton path.
    fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let glo = g(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (g(mid) > 0.0) == (glo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn eval_map_examples() {
        assert_eq!(model(MapFamily::Linear, 0.5, 0.1).value(2.0), 1.0);
        assert_eq!(model(MapFamily::TanhShift, 0.0, 0.1).value(0.0), 0.0);
        let v = model(MapFamily::TanhShift, 0.4, 0.1).value(2.0);
        assert!((v - (3.0 * 1f64.tanh() - 0.4)).abs() < 1e-15);
        assert!((v - 1.884_782_467_867_294_6).abs() < 1e-12);
    }

    #[test]
    fn modified_tanh_matches_formula() {
        let a = 0.3;
        let x = 1.7;
        let g = -0.72 * (a + 0.8f64).powi(3) + 0.36;
        let h = -0.2 * (a + 0.0011f64).powf(1.0 / 3.0) + 0.021;
        let expected = 3.0 * ((a.exp() * x + g) / 2.0).tanh() + h + 0.5;
        let m = model(MapFamily::ModifiedTanh, a, 0.8);
        assert!((m.value(x) - expected).abs() < 1e-14);
        // negative cube-root branch stays real
        let m = model(MapFamily::ModifiedTanh, -0.5, 0.8);
        assert!(m.value(0.0).is_finite());
        assert!(m.value(0.0) > 0.5 + 0.021);
    }

    #[test]
    fn extremal_examples() {
        let lin = model(MapFamily::Linear, 0.5, 0.1);
        assert!((lin.extremal(Side::Lower, 0.0) + 0.05).abs() < 1e-17);
        assert!((lin.extremal(Side::Lower, -0.1) + 0.1).abs() < 1e-17);
        assert_eq!(model(MapFamily::TanhShift, 0.0, 0.1).extremal(Side::Upper, 0.0), 0.1);
    }

    #[test]
    fn derivative_examples_and_finite_differences() {
        assert_eq!(model(MapFamily::Linear, 0.7, 0.1).derivative(3.0), 0.7);
        assert_eq!(model(MapFamily::TanhShift, 0.2, 0.1).derivative(0.0), 1.5);
        let x = (2.0 + 3f64.sqrt()).ln();
        assert!((model(MapFamily::TanhShift, 0.2, 0.1).derivative(x) - 1.0).abs() < 1e-14);

        let h = 1e-5;
        for m in [
            model(MapFamily::Linear, 0.3, 0.1),
            model(MapFamily::TanhShift, -0.3, 0.1),
            model(MapFamily::TanhShift, 0.4, 0.1),
            model(MapFamily::ModifiedTanh, 0.0, 0.8),
            model(MapFamily::ModifiedTanh, 0.6, 0.8),
            model(MapFamily::ModifiedTanh, -0.4, 0.8),
        ] {
            for i in 0..=200 {
                let x = -5.0 + 0.05 * i as f64;
                let fd = (m.value(x + h) - m.value(x - h)) / (2.0 * h);
                let d = m.derivative(x);
                assert!((fd - d).abs() <= 1e-6 * d.abs().max(1e-3), "{m:?} at {x}: {fd} vs {d}");
            }
        }
    }

    #[test]
    fn parameter_partials_match_finite_differences() {
        let h = 1e-6;
        for &(a, x) in &[(0.17, 1.6), (0.3, -0.8), (-0.2, 2.5)] {
            let m = model(MapFamily::ModifiedTanh, a, 0.8);
            let (df_da, dfp_dx, dfp_da) = m.parameter_partials(x);
            let mp = model(MapFamily::ModifiedTanh, a + h, 0.8);
            let mm = model(MapFamily::ModifiedTanh, a - h, 0.8);
            assert!(((mp.value(x) - mm.value(x)) / (2.0 * h) - df_da).abs() < 1e-6);
            assert!(((mp.derivative(x) - mm.derivative(x)) / (2.0 * h) - dfp_da).abs() < 1e-6);
            assert!(((m.derivative(x + h) - m.derivative(x - h)) / (2.0 * h) - dfp_dx).abs() < 1e-6);
        }
    }

    #[test]
    fn inverse_round_trip() {
        for m in [
            model(MapFamily::Linear, 0.684, 0.1),
            model(MapFamily::TanhShift, 0.1, 0.1),
            model(MapFamily::ModifiedTanh, 0.1, 0.8),
        ] {
            for i in 0..1000 {
                let x = -4.0 + 8.0 * i as f64 / 999.0;
                let back = m.inverse(m.value(x)).unwrap();
                assert!((back - x).abs() <= 1e-10, "{m:?} {x} {back}");
            }
        }
        assert_eq!(model(MapFamily::TanhShift, 0.0, 0.1).inverse(5.0), None);
    }

    #[test]
    fn fixed_point_linear() {
        let r = fixed_point(&model(MapFamily::Linear, 0.5, 0.1), Side::Lower, (-1.0, 0.0)).unwrap();
        assert!((r.x + 0.1).abs() < 1e-13);
        assert!(r.stable);
    }

    #[test]
    fn fixed_point_tanh_against_bisection() {
        let m = model(MapFamily::TanhShift, 0.0, 0.1);
        let r = fixed_point(&m, Side::Lower, (2.0, 4.0)).unwrap();
        let oracle = bisect(|x| 3.0 * (x / 2.0).tanh() - 0.1 - x, 2.0, 4.0);
        assert!((r.x - oracle).abs() < 1e-12);
        assert!((r.x - 2.401_775_618_891_4).abs() < 1e-11);
        assert!(r.residual < 1e-12);
        assert!(r.stable);

        // Right of the fold on the lower branch, upper extremal map.
        let m = model(MapFamily::TanhShift, 0.4, 0.1);
        let r = fixed_point(&m, Side::Upper, (-5.0, -1.5)).unwrap();
        let oracle = bisect(|x| 3.0 * (x / 2.0).tanh() - 0.4 + 0.1 - x, -5.0, -1.5);
        assert!((r.x - oracle).abs() < 1e-12);
        assert!(r.residual < 1e-12 && r.stable);
    }

    #[test]
    fn fixed_point_errors() {
        let m = model(MapFamily::TanhShift, 0.0, 0.1);
        assert!(matches!(
            fixed_point(&m, Side::Lower, (3.0, 4.0)),
            Err(DynamicsError::NoSignChange { .. })
        ));
    }

    #[test]
    fn invariant_interval_examples() {
        let lin = model(MapFamily::Linear, 0.5, 0.1);
        let iv = minimal_invariant_interval(&lin, 0.0).unwrap();
        assert!((iv.x_minus + 0.1).abs() < 1e-12 && (iv.x_plus - 0.1).abs() < 1e-12);

        let past = model(MapFamily::TanhShift, 0.32, 0.1);
        assert!(matches!(minimal_invariant_interval(&past, 3.0), Err(DynamicsError::NoInterval { .. })));

        let m = model(MapFamily::TanhShift, 0.0, 0.1);
        let iv = minimal_invariant_interval(&m, 3.0).unwrap();
        let lo = bisect(|x| 3.0 * (x / 2.0).tanh() - 0.1 - x, 2.0, 4.0);
        let hi = bisect(|x| 3.0 * (x / 2.0).tanh() + 0.1 - x, 2.0, 4.0);
        assert!((iv.x_minus - lo).abs() < 1e-12 && (iv.x_plus - hi).abs() < 1e-12);
        assert!((m.extremal(Side::Lower, iv.x_minus) - iv.x_minus).abs() < 1e-12);
        assert!((m.extremal(Side::Upper, iv.x_plus) - iv.x_plus).abs() < 1e-12);

        // Seed at the unstable centre straddles both attractors.
        assert!(minimal_invariant_interval(&m, 0.0).is_err());
    }

    #[test]
    fn lambda_true_examples() {
        let lin = model(MapFamily::Linear, 0.684, 0.1);
        let iv = minimal_invariant_interval(&lin, 0.0).unwrap();
        assert!((lambda_true(&lin, &iv, Side::Lower) - 0.684).abs() < 1e-15);

        let m = model(MapFamily::TanhShift, -0.5, 0.1);
        let (l, _) = lambda_at(&m, 3.0, Side::Lower).unwrap();
        assert!((0.18..=0.26).contains(&l), "{l}");

        let fold = solve_fold(MapFamily::TanhShift, 0.1, Side::Lower).unwrap();
        let at_fold = model(MapFamily::TanhShift, fold.a_star, 0.1);
        assert!((at_fold.derivative(fold.x_star) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fold_tanh_shift() {
        let fold = solve_fold(MapFamily::TanhShift, 0.1, Side::Lower).unwrap();
        let s3 = 3f64.sqrt();
        assert!((fold.x_star - (2.0 + s3).ln()).abs() < 1e-12);
        assert!((fold.a_star - (s3 - 0.1 - (2.0 + s3).ln())).abs() < 1e-12);
        assert!(fold.value_residual <= FOLD_TOL && fold.slope_residual <= FOLD_TOL);

        let up = solve_fold(MapFamily::TanhShift, 0.1, Side::Upper).unwrap();
        assert!((up.a_star + fold.a_star).abs() < 1e-12);
        assert!(matches!(
            solve_fold(MapFamily::Linear, 0.1, Side::Lower),
            Err(DynamicsError::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn fold_modified_tanh() {
        let fold = solve_fold(MapFamily::ModifiedTanh, 0.8, Side::Lower).unwrap();
        assert!((0.170..=0.180).contains(&fold.a_star), "{fold:?}");
        assert!(fold.value_residual <= FOLD_TOL && fold.slope_residual <= FOLD_TOL);
        // interval exists just before the fold and not just after
        let before = model(MapFamily::ModifiedTanh, fold.a_star - 1e-3, 0.8);
        let after = model(MapFamily::ModifiedTanh, fold.a_star + 1e-3, 0.8);
        let iv = minimal_invariant_interval(&before, 3.0).unwrap();
        assert!(iv.x_minus > 1.0 && iv.x_minus < 2.0);
        let exploded = minimal_invariant_interval(&after, 3.0).unwrap();
        assert!(exploded.x_minus < -3.0);
    }

    #[test]
    fn hitting_time_examples() {
        let lin = model(MapFamily::Linear, 0.5, 0.1);
        assert_eq!(hitting_time(&lin, 0.0, -0.09).unwrap(), 4);
        // distance to x₋ shrinks 0.1 -> 1e-4: 0.1 * 0.5^n < 1e-4 first at n = 10
        assert_eq!(hitting_time(&lin, 0.0, -0.0999).unwrap(), 10);
        let just_below = lin.extremal(Side::Lower, 0.0) + 1e-12;
        assert_eq!(hitting_time(&lin, 0.0, just_below).unwrap(), 1);
        assert!(hitting_time(&lin, 0.0, 0.01).is_err());
        assert!(matches!(hitting_time(&lin, 0.0, -0.2), Err(DynamicsError::Diverged { .. })));
    }

    #[test]
    fn parameter_for_lambda_inverts_lambda() {
        let a = parameter_for_lambda(MapFamily::TanhShift, 0.1, 0.65, (-2.0, 0.32), 3.0).unwrap();
        let (l, _) = lambda_at(&model(MapFamily::TanhShift, a, 0.1), 3.0, Side::Lower).unwrap();
        assert!((l - 0.65).abs() < 1e-9);
        assert_eq!(parameter_for_lambda(MapFamily::Linear, 0.1, 0.42, (0.0, 1.0), 0.0).unwrap(), 0.42);
    }
}
