use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;

use sckls_core::estimators::{
    cnls_fit, marginal_stats, min_norm_gradients, mpss, sckls_fit, sckls_qp, HyperplaneModel, LocalDesign,
    MarginalTable, DEFAULT_PERCENTILES,
};
use sckls_core::io::{
    fit_statistics, read_data, write_marginals_csv, write_mpss_csv, write_planes_csv, write_plot_data_csv, ModelFile,
    Provenance, MODEL_FORMAT_VERSION,
};
use sckls_core::partially_linear::{conditional_bandwidths, estimate_gamma_with, ContextualFit};
use sckls_core::Error;

use super::{csv_bytes, sibling, write_file};
use crate::options::{parse_f64_list, parse_kernel, shape_with_bounds, BandwidthChoice, BandwidthOpt, CvOpts, GridOpt};
use crate::{CliError, CliResult, EstimatorArg, FitArgs};

const PLOT_RESOLUTION: usize = 101;

pub fn run(a: &FitArgs) -> CliResult<()> {
    let data = read_data(&a.data)?;
    let d = data.dim();
    let shape = shape_with_bounds(&a.shape, d, &a.bounds)?;
    let kernel = parse_kernel(&a.smoothing.kernel)?;
    let grid_opt: GridOpt = a.grid.parse()?;
    let bw_opt: BandwidthOpt = a.smoothing.bandwidth.parse()?;
    let cv = CvOpts::parse(a.smoothing.cv_grid.as_deref(), a.smoothing.knn_k.as_deref())?;

    let ctx: Option<ContextualFit> = if a.contextual {
        let z = data.z.as_ref().ok_or_else(|| Error::Data("--contextual needs z1, z2, ... columns".into()))?;
        let bws = conditional_bandwidths(&data.x, &data.y, z, kernel)?;
        Some(estimate_gamma_with(z, &data.y, &data.x, &bws, kernel)?)
    } else {
        None
    };
    let y = ctx.as_ref().map_or(&data.y, |c| &c.adjusted_y);

    let (model, choice) = match a.estimator {
        EstimatorArg::Sckls => {
            let grid = grid_opt.build(&data.x, a.hull_filter)?;
            let choice = bw_opt.resolve(&data.x, y, kernel, &cv)?;
            if let Some(path) = &a.dump_qp {
                let design = LocalDesign::new(&data.x, &grid, &choice.selected, kernel)?;
                let qp = sckls_qp(&design, y, &shape)?;
                let f = File::create(path).map_err(|source| CliError::Output { path: path.clone(), source })?;
                qp.write_dump(BufWriter::new(f))?;
            }
            let model = sckls_fit(&data.x, y, &grid, &choice.selected, kernel, &shape, true)?;
            (model, Some(choice))
        }
        EstimatorArg::Cnls => {
            if a.dump_qp.is_some() {
                return Err(CliError::Usage("--dump-qp is only available for the sckls estimator".into()));
            }
            (min_norm_gradients(&cnls_fit(&data.x, y, &shape)?)?, None)
        }
    };

    let fit = fit_statistics(&model, &data, ctx.as_ref());
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        provenance: Provenance::new(&data.sha256, a.seed),
        estimator: match a.estimator {
            EstimatorArg::Sckls => "sckls".into(),
            EstimatorArg::Cnls => "cnls".into(),
        },
        model,
        contextual: ctx,
        fit,
    };
    write_file(&a.out, file.to_json()?.as_bytes())?;

    let model = &file.model;
    write_file(&sibling(&a.out, "planes.csv"), &csv_bytes(|w| write_planes_csv(model, w))?)?;
    let ratios: Vec<(usize, usize)> =
        (0..d).flat_map(|k| (0..d).filter(move |&l| l != k).map(move |l| (k, l))).collect();
    let table = marginal_stats(model, Some(&data.x), &DEFAULT_PERCENTILES, &ratios)?;
    write_file(&sibling(&a.out, "marginals.csv"), &csv_bytes(|w| write_marginals_csv(&table, w))?)?;

    let mut mpss_line = None;
    if let Some(dir) = &a.mpss_direction {
        let dir = parse_f64_list(dir, "--mpss-direction")?;
        let range = match &a.mpss_range {
            Some(r) => match parse_f64_list(r, "--mpss-range")?[..] {
                [lo, hi] => (lo, hi),
                _ => return Err(CliError::Usage("--mpss-range takes LO,HI".into())),
            },
            None => default_scale_range(&data.x, &dir),
        };
        let m = mpss(model, &dir, range)?;
        mpss_line = Some(format!(
            "MPSS along {:?}: t = {}, output {}, average product {}",
            dir, m.t, m.output, m.average_product
        ));
        write_file(&sibling(&a.out, "mpss.csv"), &csv_bytes(|w| write_mpss_csv(&[(dir, m)], w))?)?;
    }
    if let Some(path) = &a.emit_plot_data {
        write_file(path, &csv_bytes(|w| write_plot_data_csv(model, &data, PLOT_RESOLUTION, w))?)?;
    }

    let report = render_report(a, &file, choice.as_ref(), &table, mpss_line.as_deref());
    write_file(&sibling(&a.out, "report.txt"), report.as_bytes())?;
    print!("{report}");
    Ok(())
}

/// Scales that keep `t * direction` inside the bounding box of the data.
fn default_scale_range(x: &sckls_core::Matrix, dir: &[f64]) -> (f64, f64) {
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    for ((l, h), u) in x.column_ranges().into_iter().zip(dir) {
        if *u > 0.0 {
            lo = lo.max(l / u);
            hi = hi.min(h / u);
        }
    }
    (lo, hi)
}

fn render_report(
    a: &FitArgs,
    file: &ModelFile,
    choice: Option<&BandwidthChoice>,
    table: &MarginalTable,
    mpss_line: Option<&str>,
) -> String {
    let m: &HyperplaneModel = &file.model;
    let diag = &m.diagnostics;
    let mut s = String::new();
    let _ = writeln!(s, "sckls fit");
    let _ = writeln!(s, "tool version    {}", file.provenance.tool_version);
    let _ = writeln!(s, "input sha256    {}", file.provenance.input_sha256);
    let _ = writeln!(s, "seed            {}", file.provenance.seed);
    let _ = writeln!(s, "observations    {} with {} inputs", file.fit.n, m.dim());
    let _ = writeln!(s, "estimator       {} ({})", file.estimator, m.shape);
    let _ = writeln!(
        s,
        "grid            {} points{} from '{}' ({:?})",
        m.len(),
        if a.hull_filter { " after hull filtering" } else { "" },
        a.grid,
        m.grid.provenance()
    );
    if let Some(c) = choice {
        let _ = writeln!(s, "bandwidth       {:?} by {} with {} kernel", c.selected, c.method, a.smoothing.kernel);
    }
    let _ = writeln!(
        s,
        "solver          {:?}; {} iterations, {} rounds, {} of {} Afriat rows; stationarity {:e}, primal {:e}, complementarity {:e}",
        diag.status,
        diag.iterations,
        diag.rounds,
        diag.afriat_rows,
        diag.afriat_family,
        diag.kkt.stationarity,
        diag.kkt.primal,
        diag.kkt.complementarity
    );
    if diag.unconstrained_feasible {
        let _ = writeln!(s, "                unconstrained local linear fit already satisfies the shape");
    }
    let _ = writeln!(s, "R^2 (raw y)      {:.10}", file.fit.r_squared_raw);
    let _ = writeln!(s, "R^2 (adjusted y) {:.10}", file.fit.r_squared_adjusted);
    if let Some(c) = &file.contextual {
        let _ = writeln!(s, "contextual      coef         se           p            95% bounds");
        for k in 0..c.gamma.len() {
            let _ = writeln!(
                s,
                "  z{:<13}{:<13.6}{:<13.6}{:<13.4e}[{:.6}, {:.6}]",
                k + 1,
                c.gamma[k],
                c.std_errors[k],
                c.p_values[k],
                c.lower[k],
                c.upper[k]
            );
        }
    }
    let _ = writeln!(s, "marginal products at the observations (percentiles {:?})", table.percentiles);
    for col in &table.columns {
        let vals: Vec<String> = col.values.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "  {:<8}{}", col.name, vals.join("  "));
    }
    if let Some(l) = mpss_line {
        let _ = writeln!(s, "{l}");
    }
    s
}
