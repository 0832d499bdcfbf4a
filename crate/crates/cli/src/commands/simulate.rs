use std::path::Path;
use std::time::Instant;

use serde::de::DeserializeOwned;

use sckls_core::io::to_json_pretty;
use sckls_core::simulation::{
    bandwidth_sensitivity_sweep, presets, run_power_study, run_rmse_experiment, EstimatorKind, PowerConfig, RmseConfig,
    SweepConfig,
};

use super::{csv_bytes, write_file};
use crate::options::{parse_f64_list, parse_usize_list};
use crate::{CliError, CliResult, Experiment, SimulateArgs};

fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(sckls_core::Error::from)?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn unused(a: &SimulateArgs, names: &[(&str, bool)]) -> CliResult<()> {
    match names.iter().find(|(_, given)| *given) {
        Some((flag, _)) => Err(CliError::Usage(format!("--{flag} does not apply to {:?}", a.experiment))),
        None => Ok(()),
    }
}

fn estimators(s: &str) -> CliResult<Vec<EstimatorKind>> {
    s.split(',')
        .map(|v| match v.trim() {
            "sckls" => Ok(EstimatorKind::Sckls),
            "cnls" => Ok(EstimatorKind::Cnls),
            "local-linear" | "ll" => Ok(EstimatorKind::LocalLinear),
            other => Err(CliError::Usage(format!("unknown estimator '{other}'"))),
        })
        .collect()
}

fn rmse_config(a: &SimulateArgs) -> CliResult<RmseConfig> {
    unused(a, &[("b", a.b.is_some()), ("h", a.h.is_some())])?;
    let mut cfg = match (&a.config, a.experiment) {
        (Some(p), _) => load(p)?,
        (None, Experiment::Exp4) => presets::exp4(2, 400, vec![100, 300, 500], 10, 0),
        (None, _) => presets::exp1(vec![2], vec![500], 10, 0),
    };
    if let Some(d) = &a.d {
        cfg.dims = parse_usize_list(d, "--d")?;
        cfg.kind = cfg.kind.with_dim(cfg.dims[0])?;
    }
    if let Some(n) = &a.n {
        cfg.n = parse_usize_list(n, "--n")?;
    }
    if let Some(m) = &a.m {
        cfg.m = parse_usize_list(m, "--m")?;
    }
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = &a.estimators {
        cfg.estimators = estimators(e)?;
    }
    if let Some(g) = &a.gamma {
        cfg.gamma = parse_f64_list(g, "--gamma")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn power_config(a: &SimulateArgs) -> CliResult<PowerConfig> {
    unused(
        a,
        &[
            ("d", a.d.is_some()),
            ("m", a.m.is_some()),
            ("estimators", a.estimators.is_some()),
            ("gamma", a.gamma.is_some()),
            ("h", a.h.is_some()),
        ],
    )?;
    let mut cfg = match (&a.config, a.experiment) {
        (Some(p), _) => load(p)?,
        (None, Experiment::AffinityTest) => presets::affinity_test(100, 500, 0),
        (None, _) => presets::shape_test(200, 200, 0),
    };
    if let Some(n) = &a.n {
        let n = parse_usize_list(n, "--n")?;
        let [n] = n[..] else {
            return Err(CliError::Usage("--n takes a single sample size for test studies".into()));
        };
        cfg.scenarios.iter_mut().for_each(|s| s.n = n);
    }
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.b {
        cfg.b = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sweep_config(a: &SimulateArgs) -> CliResult<SweepConfig> {
    unused(
        a,
        &[
            ("d", a.d.is_some()),
            ("b", a.b.is_some()),
            ("estimators", a.estimators.is_some()),
            ("gamma", a.gamma.is_some()),
        ],
    )?;
    let mut cfg = match &a.config {
        Some(p) => load(p)?,
        None => presets::sweep(500, 10, 0),
    };
    let single = |s: &str, flag: &str| -> CliResult<usize> {
        match parse_usize_list(s, flag)?[..] {
            [v] => Ok(v),
            _ => Err(CliError::Usage(format!("{flag} takes a single value for the sweep"))),
        }
    };
    if let Some(n) = &a.n {
        cfg.n = single(n, "--n")?;
    }
    if let Some(m) = &a.m {
        cfg.m = single(m, "--m")?;
    }
    if let Some(h) = &a.h {
        cfg.h_values = parse_f64_list(h, "--h")?;
    }
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn run(a: &SimulateArgs) -> CliResult<()> {
    std::fs::create_dir_all(&a.out_dir).map_err(|source| CliError::Output { path: a.out_dir.clone(), source })?;
    let dir = &a.out_dir;
    let start = Instant::now();
    let timings = match a.experiment {
        Experiment::Exp1 | Experiment::Exp4 => {
            let report = run_rmse_experiment(&rmse_config(a)?)?;
            write_file(&dir.join("report.json"), to_json_pretty(&report)?.as_bytes())?;
            write_file(&dir.join("report.csv"), &csv_bytes(|w| report.write_csv(w))?)?;
            write_file(&dir.join("summary.csv"), &csv_bytes(|w| report.write_summary_csv(w))?)?;
            for c in &report.cells {
                for e in &c.estimators {
                    eprintln!(
                        "d={} n={} m={} {:<13} obs {:.4} ({:.4})  eval {:.4} ({:.4})",
                        c.d,
                        c.n,
                        c.m,
                        e.estimator.name(),
                        e.obs_mean,
                        e.obs_sd,
                        e.eval_mean,
                        e.eval_sd
                    );
                }
            }
            csv_bytes(|w| report.write_timings_csv(w))?
        }
        Experiment::ShapeTest | Experiment::AffinityTest => {
            let report = run_power_study(&power_config(a)?)?;
            write_file(&dir.join("report.json"), to_json_pretty(&report)?.as_bytes())?;
            write_file(&dir.join("report.csv"), &csv_bytes(|w| report.write_csv(w))?)?;
            for row in &report.rows {
                let rates: Vec<String> =
                    row.rejection_rates.iter().map(|r| format!("alpha {}: {:.3}", r.alpha, r.rate)).collect();
                eprintln!(
                    "{:<8} n={} completed {}/{}  {}",
                    row.scenario,
                    row.n,
                    row.completed,
                    row.reps,
                    rates.join("  ")
                );
            }
            format!("stage,seconds\ntotal,{}\n", start.elapsed().as_secs_f64()).into_bytes()
        }
        Experiment::Sweep => {
            let report = bandwidth_sensitivity_sweep(&sweep_config(a)?)?;
            write_file(&dir.join("report.json"), to_json_pretty(&report)?.as_bytes())?;
            write_file(&dir.join("report.csv"), &csv_bytes(|w| report.write_csv(w))?)?;
            format!("stage,seconds\ntotal,{}\n", start.elapsed().as_secs_f64()).into_bytes()
        }
    };
    // wall-clock numbers live apart from the reports so those stay reproducible
    write_file(&dir.join("timings.csv"), &timings)
}
