//! Bounded noise laws on `[-ε, ε]` and seeded random streams.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recorded in run manifests so that outputs can be regenerated bit for bit.
pub const GENERATOR_ID: &str = "rand_chacha 0.3 ChaCha8Rng (seed_from_u64(master), set_stream(index)); \
uniform f64 via rand 0.8 Standard; truncated normal by Box-Muller rejection, two draws per attempt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Uniform,
    TruncatedNormal,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Uniform => "uniform",
            NoiseKind::TruncatedNormal => "truncated-normal",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "uniform" => Ok(NoiseKind::Uniform),
            "truncated-normal" | "normal" | "truncnorm" => Ok(NoiseKind::TruncatedNormal),
            other => Err(format!("unknown noise kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub epsilon: f64,
    /// Location of the truncated normal.
    pub mu: f64,
    /// Scale of the truncated normal.
    pub sigma: f64,
}

fn std_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

impl NoiseModel {
    /// Noise with `μ = 0` and `σ = ε/2`.
    pub fn new(kind: NoiseKind, epsilon: f64) -> Self {
        NoiseModel { kind, epsilon, mu: 0.0, sigma: 0.5 * epsilon }
    }

    /// Noise matching the amplitude of a map model (scaled for the linear family).
    pub fn for_model(kind: NoiseKind, model: &crate::dynamics::MapModel) -> Self {
        NoiseModel::new(kind, model.noise_amplitude())
    }

    fn alpha_beta(&self) -> (f64, f64) {
        ((-self.epsilon - self.mu) / self.sigma, (self.epsilon - self.mu) / self.sigma)
    }

    pub fn density(&self, z: f64) -> f64 {
        if !(z >= -self.epsilon && z <= self.epsilon) {
            return 0.0;
        }
        match self.kind {
            NoiseKind::Uniform => 0.5 / self.epsilon,
            NoiseKind::TruncatedNormal => {
                let (alpha, beta) = self.alpha_beta();
                std_pdf((z - self.mu) / self.sigma) / (self.sigma * (std_cdf(beta) - std_cdf(alpha)))
            }
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        if z <= -self.epsilon {
            return 0.0;
        }
        if z >= self.epsilon {
            return 1.0;
        }
        let v = match self.kind {
            NoiseKind::Uniform => (z + self.epsilon) / (2.0 * self.epsilon),
            NoiseKind::TruncatedNormal => {
                let (alpha, beta) = self.alpha_beta();
                let lo = std_cdf(alpha);
                (std_cdf((z - self.mu) / self.sigma) - lo) / (std_cdf(beta) - lo)
            }
        };
        v.clamp(0.0, 1.0)
    }

    /// Variance of the noise law.
    pub fn variance(&self) -> f64 {
        match self.kind {
            NoiseKind::Uniform => self.epsilon * self.epsilon / 3.0,
            NoiseKind::TruncatedNormal => {
                let (alpha, beta) = self.alpha_beta();
                let z = std_cdf(beta) - std_cdf(alpha);
                let (pa, pb) = (std_pdf(alpha), std_pdf(beta));
                let m = (pa - pb) / z;
                self.sigma * self.sigma * (1.0 + (alpha * pa - beta * pb) / z - m * m)
            }
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match self.kind {
            NoiseKind::Uniform => self.epsilon * (2.0 * rng.next_f64() - 1.0),
            NoiseKind::TruncatedNormal => loop {
                // Box-Muller, cosine branch only: every attempt uses exactly two draws.
                let u1 = 1.0 - rng.next_f64();
                let u2 = rng.next_f64();
                let r = (-2.0 * u1.ln()).sqrt();
                let z = self.mu + self.sigma * r * (2.0 * std::f64::consts::PI * u2).cos();
                if z >= -self.epsilon && z <= self.epsilon {
                    break z;
                }
            },
        }
    }
}

/// Independent random stream identified by `(master_seed, stream_index)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        RngStream { master_seed, stream_index, rng }
    }

    /// Uniform draw on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}
