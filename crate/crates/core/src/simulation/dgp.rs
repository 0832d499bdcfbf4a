//! Data-generating processes for the Monte Carlo experiments.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{SeedLedger, StreamRole};

/// CES core weight and elasticity of the S-shaped production function.
pub const SSHAPE_BETA: f64 = 0.45;
pub const SSHAPE_SIGMA: f64 = 1.51;

/// True regression function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DgpKind {
    /// `prod x_k^(0.8/d)`.
    CobbDouglas { d: usize },
    /// Logistic scale function of a CES core, two inputs.
    SShape,
    /// `(1/d) sum x_k^p`; `x^p` in one dimension.
    PowerTest { p: f64, d: usize },
    /// `1 / (1 + exp(-5 log 2x))`, one input.
    SigmoidTest,
}

impl DgpKind {
    pub fn dim(&self) -> usize {
        match *self {
            DgpKind::CobbDouglas { d } | DgpKind::PowerTest { d, .. } => d,
            DgpKind::SShape => 2,
            DgpKind::SigmoidTest => 1,
        }
    }

    /// Same family in dimension `d`, when the family allows it.
    pub fn with_dim(&self, d: usize) -> Result<Self> {
        match *self {
            DgpKind::CobbDouglas { .. } => Ok(DgpKind::CobbDouglas { d }),
            DgpKind::PowerTest { p, .. } => Ok(DgpKind::PowerTest { p, d }),
            k if k.dim() == d => Ok(k),
            k => Err(Error::InvalidParameter(format!("{k:?} is only defined for d = {}", k.dim()))),
        }
    }

    pub fn default_input_law(&self) -> InputLaw {
        match self {
            DgpKind::CobbDouglas { .. } => InputLaw::Uniform { lo: 1.0, hi: 10.0 },
            DgpKind::SShape => InputLaw::PolarSShape,
            DgpKind::PowerTest { .. } | DgpKind::SigmoidTest => InputLaw::Uniform { lo: 0.0, hi: 1.0 },
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            DgpKind::CobbDouglas { d } => {
                let e = 0.8 / d as f64;
                x.iter().map(|v| v.powf(e)).product()
            }
            DgpKind::SShape => sshape_scale(ces_core(x[0], x[1])),
            DgpKind::PowerTest { p, d } => x.iter().map(|v| v.powf(p)).sum::<f64>() / d as f64,
            DgpKind::SigmoidTest => {
                // 1/(1 + (2x)^-5) written to stay finite at x = 0
                let w5 = (2.0 * x[0]).powi(5);
                w5 / (1.0 + w5)
            }
        }
    }

    pub fn eval_many(&self, x: &Matrix) -> Vec<f64> {
        x.rows_iter().map(|r| self.eval(r)).collect()
    }
}

/// CES aggregate `(β x1^r + (1-β) x2^r)^(1/r)` with `r = (σ-1)/σ`.
pub fn ces_core(x1: f64, x2: f64) -> f64 {
    let r = (SSHAPE_SIGMA - 1.0) / SSHAPE_SIGMA;
    (SSHAPE_BETA * x1.powf(r) + (1.0 - SSHAPE_BETA) * x2.powf(r)).powf(1.0 / r)
}

/// `15 / (1 + exp(-5 log w))`.
pub fn sshape_scale(w: f64) -> f64 {
    let w5 = w.powi(5);
    15.0 * w5 / (1.0 + w5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum InputLaw {
    /// Independent uniforms on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Independent exponentials with `rate`, truncated to `[lo, hi]`.
    TruncExp { rate: f64, lo: f64, hi: f64 },
    /// Angle uniform on `[0.05, π/2 − 0.05]`, modulus uniform on `[0, 2.5]`.
    PolarSShape,
}

impl InputLaw {
    fn support(&self) -> (f64, f64) {
        match *self {
            InputLaw::Uniform { lo, hi } | InputLaw::TruncExp { lo, hi, .. } => (lo, hi),
            InputLaw::PolarSShape => (0.0, 2.5),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R, n: usize, d: usize) -> Matrix {
        let mut x = Matrix::zeros(n, d);
        for j in 0..n {
            let row = x.row_mut(j);
            match *self {
                InputLaw::Uniform { lo, hi } => {
                    for v in row.iter_mut() {
                        *v = lo + (hi - lo) * rng.random::<f64>();
                    }
                }
                InputLaw::TruncExp { rate, lo, hi } => {
                    let mass = -(-rate * (hi - lo)).exp_m1();
                    for v in row.iter_mut() {
                        let u: f64 = rng.random();
                        *v = (lo - (-u * mass).ln_1p() / rate).min(hi);
                    }
                }
                InputLaw::PolarSShape => {
                    let lo = 0.05;
                    let hi = std::f64::consts::FRAC_PI_2 - 0.05;
                    let angle = lo + (hi - lo) * rng.random::<f64>();
                    let modulus = 2.5 * rng.random::<f64>();
                    row[0] = modulus * angle.cos();
                    row[1] = modulus * angle.sin();
                }
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum NoiseLaw {
    AdditiveNormal {
        sigma: f64,
    },
    /// `(1 + mean_k x_k) ε`, i.e. `(x + 1) ε` in one dimension.
    Multiplicative {
        sigma: f64,
    },
}

impl NoiseLaw {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseLaw::AdditiveNormal { sigma } | NoiseLaw::Multiplicative { sigma } => sigma,
        }
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        match self {
            NoiseLaw::AdditiveNormal { .. } => NoiseLaw::AdditiveNormal { sigma },
            NoiseLaw::Multiplicative { .. } => NoiseLaw::Multiplicative { sigma },
        }
    }

    fn scale(&self, x: &[f64]) -> f64 {
        match self {
            NoiseLaw::AdditiveNormal { .. } => 1.0,
            NoiseLaw::Multiplicative { .. } => 1.0 + x.iter().sum::<f64>() / x.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub input_law: InputLaw,
    pub noise: NoiseLaw,
    pub n: usize,
    pub seed: u64,
    /// Coefficients of independent Uniform[0,1] contextual variables added
    /// linearly to the response. Empty for the plain model.
    #[serde(default)]
    pub gamma: Vec<f64>,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, noise: NoiseLaw, n: usize, seed: u64) -> Self {
        Self { kind, input_law: kind.default_input_law(), noise, n, seed, gamma: Vec::new() }
    }

    /// Cobb–Douglas on Uniform[1,10]^d with N(0, 0.7²) noise.
    pub fn cobb_douglas(d: usize, n: usize, seed: u64) -> Self {
        Self::new(DgpKind::CobbDouglas { d }, NoiseLaw::AdditiveNormal { sigma: 0.7 }, n, seed)
    }

    pub fn s_shape(n: usize, seed: u64) -> Self {
        Self::new(DgpKind::SShape, NoiseLaw::AdditiveNormal { sigma: 0.7 }, n, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.kind.dim();
        if d == 0 {
            return Err(Error::InvalidParameter("input dimension must be at least 1".into()));
        }
        let sigma = self.noise.sigma();
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("noise sd must be positive, got {sigma}")));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("sample size must be positive".into()));
        }
        if let DgpKind::PowerTest { p, .. } = self.kind {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidParameter(format!("power must be finite and >= 0, got {p}")));
            }
        }
        match self.input_law {
            InputLaw::PolarSShape if d != 2 => {
                return Err(Error::InvalidParameter("polar input law needs two inputs".into()));
            }
            InputLaw::TruncExp { rate, .. } if !(rate > 0.0) || !rate.is_finite() => {
                return Err(Error::InvalidParameter(format!("exponential rate must be positive, got {rate}")));
            }
            _ => {}
        }
        let (lo, hi) = self.input_law.support();
        if !(lo >= 0.0) || !(hi > lo) || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("input support [{lo}, {hi}] must be a non-negative interval")));
        }
        if self.gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("contextual coefficients"));
        }
        Ok(())
    }
}

/// One simulated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    /// Truth at the observations, without the contextual part.
    pub g0: Vec<f64>,
    /// n x l contextual variables, present when `gamma` is non-empty.
    pub z: Option<Matrix>,
    pub truth: DgpKind,
}

pub fn gen_dgp(spec: &DgpSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.kind.dim();
    let ledger = SeedLedger::new(spec.seed);
    let x = spec.input_law.sample(&mut ledger.stream(0, StreamRole::Inputs), spec.n, d);
    let g0 = spec.kind.eval_many(&x);
    let mut noise = ledger.stream(0, StreamRole::Noise);
    let sigma = spec.noise.sigma();
    let mut y: Vec<f64> = g0
        .iter()
        .zip(x.rows_iter())
        .map(|(g, r)| {
            let e: f64 = noise.sample(StandardNormal);
            g + spec.noise.scale(r) * sigma * e
        })
        .collect();
    let z = if spec.gamma.is_empty() {
        None
    } else {
        let l = spec.gamma.len();
        let mut rng = ledger.stream(0, StreamRole::Contextual);
        let z = Matrix::from_vec(spec.n, l, (0..spec.n * l).map(|_| rng.random::<f64>()).collect())?;
        for (yj, r) in y.iter_mut().zip(z.rows_iter()) {
            *yj += r.iter().zip(&spec.gamma).map(|(a, b)| a * b).sum::<f64>();
        }
        Some(z)
    };
    Ok(Dataset { x, y, g0, z, truth: spec.kind })
}

/// Per-dimension lattice count: the largest `c` with `c^d <= 1.1 * target`
/// (at least 2).
pub fn grid_counts(target: usize, d: usize) -> Vec<usize> {
    let cap = 1.1 * target as f64;
    let mut c = 2usize;
    while ((c + 1) as f64).powi(d as i32) <= cap {
        c += 1;
    }
    vec![c; d]
}
