//! Trajectories of the random map `y_{t+1} = f(y_t) + ξ_t`, parameter
//! continuation sweeps, the variance indicator and tipping detection.

use thiserror::Error;

use crate::dynamics::{InvariantInterval, MapFamily, MapModel};
use crate::noise::{NoiseKind, NoiseModel, RngStream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("iterate {index} is not finite")]
    NonFinite { index: usize },
    #[error("series of length {0} is too short")]
    TooShort(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
}

impl SimulateError {
    pub fn code(&self) -> &'static str {
        match self {
            SimulateError::NonFinite { .. } => "NonFinite",
            SimulateError::TooShort(_) => "TooShort",
            SimulateError::InvalidInput(_) => "InvalidInput",
            SimulateError::Dynamics(e) => e.code(),
        }
    }
}

/// Where a series came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub model: MapModel,
    /// `None` when the noise sequence was injected by the caller.
    pub noise: Option<NoiseModel>,
    pub y0: f64,
    /// `(master_seed, stream_index)`.
    pub seed: Option<(u64, u64)>,
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub provenance: Option<Provenance>,
}

impl TimeSeries {
    pub fn from_values(values: Vec<f64>) -> Self {
        TimeSeries { values, provenance: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

/// Iterate the random map `n` times in total, after discarding `burn_in`
/// iterates. `values[0]` is `y0` when `burn_in` is zero.
pub fn generate(
    model: &MapModel,
    noise: &NoiseModel,
    y0: f64,
    n: usize,
    burn_in: usize,
    rng: &mut RngStream,
) -> Result<TimeSeries, SimulateError> {
    if n == 0 {
        return Err(SimulateError::InvalidInput("n must be at least 1".into()));
    }
    if !y0.is_finite() {
        return Err(SimulateError::NonFinite { index: 0 });
    }
    let mut y = y0;
    for i in 0..burn_in {
        y = model.value(y) + noise.sample(rng);
        if !y.is_finite() {
            return Err(SimulateError::NonFinite { index: i + 1 });
        }
    }
    let mut values = Vec::with_capacity(n);
    values.push(y);
    for t in 1..n {
        y = model.value(y) + noise.sample(rng);
        if !y.is_finite() {
            return Err(SimulateError::NonFinite { index: burn_in + t });
        }
        values.push(y);
    }
    Ok(TimeSeries {
        values,
        provenance: Some(Provenance {
            model: *model,
            noise: Some(*noise),
            y0,
            seed: Some((rng.master_seed, rng.stream_index)),
            burn_in,
        }),
    })
}

/// Same recurrence with a caller-supplied noise sequence; the series has
/// `noise.len() + 1` values.
pub fn generate_with_noise(model: &MapModel, y0: f64, noise: &[f64]) -> Result<TimeSeries, SimulateError> {
    let mut values = Vec::with_capacity(noise.len() + 1);
    let mut y = y0;
    values.push(y);
    for (t, xi) in noise.iter().enumerate() {
        y = model.value(y) + xi;
        if !y.is_finite() {
            return Err(SimulateError::NonFinite { index: t + 1 });
        }
        values.push(y);
    }
    Ok(TimeSeries {
        values,
        provenance: Some(Provenance { model: *model, noise: None, y0, seed: None, burn_in: 0 }),
    })
}

/// Unbiased sample variance (divisor `n - 1`), computed with Welford's update.
pub fn sample_variance(values: &[f64]) -> Result<f64, SimulateError> {
    if values.len() < 2 {
        return Err(SimulateError::TooShort(values.len()));
    }
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &x) in values.iter().enumerate() {
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    Ok(m2 / (values.len() - 1) as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// First index whose value leaves `[x₋ - margin, x₊ + margin]`.
pub fn detect_tipping(values: &[f64], interval: &InvariantInterval, margin: f64) -> Option<usize> {
    values
        .iter()
        .position(|&v| v < interval.x_minus - margin || v > interval.x_plus + margin)
}

/// Default escape margin: 5% of the reference interval's width.
pub fn default_margin(interval: &InvariantInterval) -> f64 {
    0.05 * interval.width()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub family: MapFamily,
    pub epsilon: f64,
    pub noise_kind: NoiseKind,
    /// Strictly increasing.
    pub a_grid: Vec<f64>,
    pub n_per_a: usize,
    pub y0_first: f64,
    /// Discarded iterates before the first parameter only.
    pub burn_in_first: usize,
    pub keep_series: bool,
    /// Interval and margin used to flag escapes.
    pub tipping_reference: Option<(InvariantInterval, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub a: f64,
    pub initial_value: f64,
    pub final_value: f64,
    pub mean: f64,
    pub variance: f64,
    pub tip_index: Option<usize>,
    pub series: Option<TimeSeries>,
}

impl SweepRecord {
    pub fn tipped(&self) -> bool {
        self.tip_index.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
}

impl SweepResult {
    /// First parameter at which the trajectory escaped the reference interval.
    pub fn first_tipped(&self) -> Option<f64> {
        self.records.iter().find(|r| r.tipped()).map(|r| r.a)
    }
}

/// Continuation sweep over `a_grid`: each run starts from the final iterate of
/// the previous one. `visit` sees every full series before it is dropped.
pub fn continuation_sweep_with<F>(
    config: &SweepConfig,
    rng: &mut RngStream,
    mut visit: F,
) -> Result<SweepResult, SimulateError>
where
    F: FnMut(usize, f64, &TimeSeries),
{
    if config.a_grid.is_empty() {
        return Err(SimulateError::InvalidInput("empty parameter grid".into()));
    }
    if config.a_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SimulateError::InvalidInput("parameter grid must be strictly increasing".into()));
    }
    if config.n_per_a < 2 {
        return Err(SimulateError::InvalidInput("n_per_a must be at least 2".into()));
    }
    let mut records = Vec::with_capacity(config.a_grid.len());
    let mut y = config.y0_first;
    for (i, &a) in config.a_grid.iter().enumerate() {
        let model = MapModel::new(config.family, a, config.epsilon)?;
        let noise = NoiseModel::for_model(config.noise_kind, &model);
        let burn = if i == 0 { config.burn_in_first } else { 0 };
        let series = generate(&model, &noise, y, config.n_per_a, burn, rng)?;
        let tip_index = config
            .tipping_reference
            .as_ref()
            .and_then(|(iv, margin)| detect_tipping(&series.values, iv, *margin));
        visit(i, a, &series);
        let final_value = series.last().expect("nonempty series");
        records.push(SweepRecord {
            a,
            initial_value: series.values[0],
            final_value,
            mean: mean(&series.values),
            variance: sample_variance(&series.values)?,
            tip_index,
            series: config.keep_series.then_some(series),
        });
        y = final_value;
    }
    Ok(SweepResult { records })
}

pub fn continuation_sweep(config: &SweepConfig, rng: &mut RngStream) -> Result<SweepResult, SimulateError> {
    continuation_sweep_with(config, rng, |_, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::minimal_invariant_interval;

    #[test]
    fn injected_zero_noise() {
        let m = MapModel::new(MapFamily::Linear, 0.5, 0.1).unwrap();
        let s = generate_with_noise(&m, 1.0, &[0.0, 0.0]).unwrap();
        assert_eq!(s.values, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn non_finite_is_reported() {
        let m = MapModel::new(MapFamily::Linear, 0.5, 0.1).unwrap();
        assert!(matches!(
            generate_with_noise(&m, 0.0, &[1.0, f64::INFINITY]),
            Err(SimulateError::NonFinite { index: 2 })
        ));
    }

    #[test]
    fn linear_confinement() {
        let m = MapModel::new(MapFamily::Linear, 0.5, 0.1).unwrap();
        let noise = NoiseModel::for_model(NoiseKind::Uniform, &m);
        let s = generate(&m, &noise, 0.0, 1_000_000, 0, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(s.len(), 1_000_000);
        assert!(s.values.iter().all(|v| v.abs() <= 0.1 + 1e-9));
    }

    #[test]
    fn tanh_extremes_approach_interval_ends() {
        let m = MapModel::new(MapFamily::TanhShift, 0.0, 0.1).unwrap();
        let noise = NoiseModel::for_model(NoiseKind::Uniform, &m);
        // y0 = 3 sits above x₊, so the transient is burned off first.
        let s = generate(&m, &noise, 3.0, 100_000, 100, &mut RngStream::new(5, 0)).unwrap();
        let lo = s.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - 2.401_775_618_891_412_6).abs() < 0.02, "{lo}");
        assert!((hi - 2.734_030_570_479_664_6).abs() < 0.02, "{hi}");
    }

    #[test]
    fn variance_examples() {
        assert_eq!(sample_variance(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(sample_variance(&[4.0; 10]).unwrap(), 0.0);
        assert!(matches!(sample_variance(&[1.0]), Err(SimulateError::TooShort(1))));
        let noise = NoiseModel::new(NoiseKind::Uniform, 0.1);
        let mut rng = RngStream::new(9, 9);
        let xs: Vec<f64> = (0..1_000_000).map(|_| noise.sample(&mut rng)).collect();
        let v = sample_variance(&xs).unwrap();
        assert!((v / (0.01 / 3.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn tipping_detection() {
        let iv = InvariantInterval { x_minus: 0.0, x_plus: 1.0 };
        assert_eq!(detect_tipping(&[0.1, 0.5, 0.9], &iv, 0.05), None);
        assert_eq!(detect_tipping(&[0.1, 0.5, -0.1, 0.9], &iv, 0.05), Some(2));
    }

    #[test]
    fn sweep_chains_exactly_and_single_point_matches_generate() {
        let cfg = SweepConfig {
            family: MapFamily::TanhShift,
            epsilon: 0.1,
            noise_kind: NoiseKind::Uniform,
            a_grid: vec![-0.5, -0.4, -0.3],
            n_per_a: 1000,
            y0_first: 3.0,
            burn_in_first: 100,
            keep_series: true,
            tipping_reference: None,
        };
        let res = continuation_sweep(&cfg, &mut RngStream::new(3, 0)).unwrap();
        for w in res.records.windows(2) {
            assert_eq!(w[1].initial_value.to_bits(), w[0].final_value.to_bits());
        }

        let single = SweepConfig { a_grid: vec![-0.5], ..cfg.clone() };
        let r = continuation_sweep(&single, &mut RngStream::new(3, 0)).unwrap();
        let m = MapModel::new(MapFamily::TanhShift, -0.5, 0.1).unwrap();
        let noise = NoiseModel::for_model(NoiseKind::Uniform, &m);
        let g = generate(&m, &noise, 3.0, 1000, 100, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(r.records[0].series.as_ref().unwrap().values, g.values);

        let bad = SweepConfig { a_grid: vec![0.1, 0.1], ..cfg };
        assert!(continuation_sweep(&bad, &mut RngStream::new(3, 0)).is_err());
    }

    #[test]
    fn stationarity_halves() {
        let m = MapModel::new(MapFamily::TanhShift, 0.0, 0.1).unwrap();
        let noise = NoiseModel::for_model(NoiseKind::Uniform, &m);
        let iv = minimal_invariant_interval(&m, 3.0).unwrap();
        let s = generate(&m, &noise, iv.midpoint(), 1_000_000, 100, &mut RngStream::new(11, 0)).unwrap();
        let (a, b) = s.values.split_at(500_000);
        // Batch means give a standard error that accounts for autocorrelation.
        let batch = |xs: &[f64]| -> (f64, f64) {
            let means: Vec<f64> = xs.chunks(5000).map(mean).collect();
            let v = sample_variance(&means).unwrap();
            (mean(&means), (v / means.len() as f64).sqrt())
        };
        let (ma, sa) = batch(a);
        let (mb, sb) = batch(b);
        assert!((ma - mb).abs() < 5.0 * (sa * sa + sb * sb).sqrt());
    }
}
