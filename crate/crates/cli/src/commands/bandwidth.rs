use serde::Serialize;

use sckls_core::io::{read_data, to_json_pretty, Provenance};

use super::emit;
use crate::options::{parse_kernel, BandwidthChoice, BandwidthOpt, CvOpts};
use crate::{BandwidthArgs, CliResult};

#[derive(Debug, Serialize)]
struct BandwidthReport {
    provenance: Provenance,
    kernel: String,
    choice: BandwidthChoice,
}

pub fn run(a: &BandwidthArgs) -> CliResult<()> {
    let data = read_data(&a.data)?;
    let kernel = parse_kernel(&a.kernel)?;
    let cv = CvOpts::parse(a.cv_grid.as_deref(), a.knn_k.as_deref())?;
    let opt = if a.knn { BandwidthOpt::KnnAuto } else { BandwidthOpt::Auto };
    let choice = opt.resolve(&data.x, &data.y, kernel, &cv)?;
    eprintln!("selected {:?}", choice.selected);
    let report = BandwidthReport { provenance: Provenance::new(&data.sha256, 0), kernel: kernel.name().into(), choice };
    emit(a.out.as_deref(), to_json_pretty(&report)?.as_bytes())
}
