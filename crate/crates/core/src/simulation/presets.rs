//! Ready-made configurations for the standard studies.

use super::{
    BandwidthRule, DgpKind, EstimatorKind, NoiseLaw, PowerConfig, PowerScenario, RmseConfig, SweepConfig, TestKind,
};
use crate::kernel::Kernel;
use crate::shape_tests::WeightKind;

/// Cobb–Douglas on Uniform[1,10]^d with N(0, 0.7²) noise, all three
/// estimators, about 400 evaluation points.
pub fn exp1(dims: Vec<usize>, n: Vec<usize>, reps: usize, seed: u64) -> RmseConfig {
    RmseConfig {
        kind: DgpKind::CobbDouglas { d: dims.first().copied().unwrap_or(2) },
        input_law: None,
        noise: NoiseLaw::AdditiveNormal { sigma: 0.7 },
        gamma: Vec::new(),
        dims,
        n,
        m: vec![400],
        estimators: vec![EstimatorKind::Sckls, EstimatorKind::Cnls, EstimatorKind::LocalLinear],
        reps,
        seed,
        kernel: Kernel::Gaussian,
        bandwidth: BandwidthRule::Loocv,
        shape: "concave-increasing".into(),
        interior_trim: 0.1,
    }
}

/// Same truth as [`exp1`], SCKLS only, over several grid sizes.
pub fn exp4(d: usize, n: usize, m: Vec<usize>, reps: usize, seed: u64) -> RmseConfig {
    RmseConfig { m, estimators: vec![EstimatorKind::Sckls], ..exp1(vec![d], vec![n], reps, seed) }
}

/// [`exp1`] with independent Uniform[0,1] contextual variables.
pub fn contextual(d: usize, n: usize, gamma: Vec<f64>, reps: usize, seed: u64) -> RmseConfig {
    RmseConfig { gamma, estimators: vec![EstimatorKind::Sckls], ..exp1(vec![d], vec![n], reps, seed) }
}

fn multiplicative(name: &str, kind: DgpKind, sigma: f64, n: usize) -> PowerScenario {
    PowerScenario { name: name.into(), kind, noise: NoiseLaw::Multiplicative { sigma }, input_law: None, n }
}

/// Size and power of the concavity test: A has a flat truth (on the null
/// boundary), B is convex and C is S-shaped.
pub fn shape_test(reps: usize, b: usize, seed: u64) -> PowerConfig {
    PowerConfig {
        test: TestKind::Shape,
        scenarios: vec![
            multiplicative("A", DgpKind::PowerTest { p: 0.0, d: 1 }, 0.1, 300),
            multiplicative("B", DgpKind::PowerTest { p: 2.0, d: 1 }, 0.1, 300),
            multiplicative("C", DgpKind::SigmoidTest, 0.2, 500),
        ],
        reps,
        b,
        weights: WeightKind::Rademacher,
        alphas: vec![0.05, 0.01],
        seed,
        kernel: Kernel::Gaussian,
        bandwidth: BandwidthRule::Loocv,
        grid_points: 20,
        shape: "concave-increasing".into(),
        monotone: false,
        ordinary: false,
    }
}

/// Affinity test on `x^p` with p in {1, 2, 0.5}, one input, n = 100.
pub fn affinity_test(reps: usize, b: usize, seed: u64) -> PowerConfig {
    let scenario = |name: &str, p: f64| PowerScenario {
        name: name.into(),
        kind: DgpKind::PowerTest { p, d: 1 },
        noise: NoiseLaw::AdditiveNormal { sigma: 0.1 },
        input_law: None,
        n: 100,
    };
    PowerConfig {
        test: TestKind::Affinity,
        scenarios: vec![scenario("p=1", 1.0), scenario("p=2", 2.0), scenario("p=0.5", 0.5)],
        ordinary: true,
        ..shape_test(reps, b, seed)
    }
}

/// Bandwidth sweep on the two-input Cobb–Douglas truth.
pub fn sweep(n: usize, reps: usize, seed: u64) -> SweepConfig {
    SweepConfig {
        kind: DgpKind::CobbDouglas { d: 2 },
        input_law: None,
        noise: NoiseLaw::AdditiveNormal { sigma: 0.7 },
        n,
        m: 100,
        h_values: vec![0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 10.0, 20.0],
        reps,
        seed,
        kernel: Kernel::Gaussian,
        shape: "concave-increasing".into(),
    }
}
