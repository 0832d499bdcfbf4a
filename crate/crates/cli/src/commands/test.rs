use serde::Serialize;

use sckls_core::estimators::ShapeSpec;
use sckls_core::grid::uniform_grid;
use sckls_core::io::{read_data, to_json_pretty, Provenance};
use sckls_core::shape_tests::{
    affinity_test_with, wild_bootstrap_shape_test_with, AffinityOptions, BootstrapScheme, ShapeTestOptions, TestResult,
    WeightKind,
};

use super::emit;
use crate::options::{parse_kernel, BandwidthChoice, BandwidthOpt, CvOpts};
use crate::{CliError, CliResult, TestArgs, TestCommand};

/// Every setting that shaped the result.
#[derive(Debug, Serialize)]
struct TestConfig {
    test: &'static str,
    shape: Option<String>,
    grid_points_per_dim: usize,
    m: usize,
    kernel: String,
    b: usize,
    weights: WeightKind,
    alpha: f64,
    seed: u64,
    delta_c: Option<f64>,
    recentre: bool,
    monotone: bool,
    ordinary: bool,
}

#[derive(Debug, Serialize)]
struct TestReport {
    provenance: Provenance,
    config: TestConfig,
    bandwidth: BandwidthChoice,
    result: TestResult,
}

fn weights(s: &str) -> CliResult<WeightKind> {
    match s {
        "rademacher" => Ok(WeightKind::Rademacher),
        "mammen" => Ok(WeightKind::MammenTwoPoint),
        other => Err(CliError::Usage(format!("unknown weights '{other}': expected rademacher or mammen"))),
    }
}

pub fn run(cmd: &TestCommand) -> CliResult<()> {
    let c: &TestArgs = match cmd {
        TestCommand::Shape { common, .. } | TestCommand::Affinity { common, .. } => common,
    };
    let data = read_data(&c.data)?;
    let d = data.dim();
    let kernel = parse_kernel(&c.smoothing.kernel)?;
    let bw_opt: BandwidthOpt = c.smoothing.bandwidth.parse()?;
    let cv = CvOpts::parse(c.smoothing.cv_grid.as_deref(), c.smoothing.knn_k.as_deref())?;
    let grid = uniform_grid(&data.x, &vec![c.grid_points; d])?;
    let choice = bw_opt.resolve(&data.x, &data.y, kernel, &cv)?;
    let scheme = BootstrapScheme { kind: weights(&c.weights)?, b: c.b };
    let mut config = TestConfig {
        test: "shape",
        shape: None,
        grid_points_per_dim: c.grid_points,
        m: grid.len(),
        kernel: kernel.name().into(),
        b: c.b,
        weights: scheme.kind,
        alpha: c.alpha,
        seed: c.seed,
        delta_c: None,
        recentre: false,
        monotone: false,
        ordinary: false,
    };
    let result = match cmd {
        TestCommand::Shape { shape, delta_c, recentre, .. } => {
            let spec = ShapeSpec::parse(shape, d)?;
            let opts =
                ShapeTestOptions { delta_c: delta_c.unwrap_or(0.0), recentre_on_fit: *recentre, ..Default::default() };
            config.shape = Some(shape.clone());
            config.delta_c = *delta_c;
            config.recentre = *recentre;
            wild_bootstrap_shape_test_with(
                &data.x,
                &data.y,
                &grid,
                &choice.selected,
                kernel,
                &spec,
                &scheme,
                c.alpha,
                c.seed,
                delta_c.is_some(),
                &opts,
            )?
        }
        TestCommand::Affinity { monotone, ordinary, .. } => {
            config.test = "affinity";
            config.monotone = *monotone;
            config.ordinary = *ordinary;
            let opts = AffinityOptions { ordinary: *ordinary, ..Default::default() };
            affinity_test_with(
                &data.x,
                &data.y,
                &grid,
                &choice.selected,
                kernel,
                &scheme,
                c.alpha,
                c.seed,
                *monotone,
                &opts,
            )?
        }
    };
    eprintln!(
        "{} test: T = {:e}, p = {}, {} at alpha = {}",
        config.test,
        result.statistic,
        result.p_value,
        if result.reject { "reject" } else { "do not reject" },
        result.alpha
    );
    let report = TestReport { provenance: Provenance::new(&data.sha256, c.seed), config, bandwidth: choice, result };
    emit(c.out.as_deref(), to_json_pretty(&report)?.as_bytes())
}
