use sckls_core::io::{parse_points, write_predictions_csv, ModelFile};
use sckls_core::Error;

use super::{csv_bytes, emit};
use crate::{CliResult, PredictArgs};

pub fn run(a: &PredictArgs) -> CliResult<()> {
    let file = ModelFile::load(&a.model)?;
    let bytes = std::fs::read(&a.points).map_err(Error::from)?;
    // an empty query file gets an empty answer
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return emit(a.out.as_deref(), b"");
    }
    let points = parse_points(&bytes, file.model.dim())?;
    let out = csv_bytes(|w| write_predictions_csv(&file.model, &points, w))?;
    emit(a.out.as_deref(), &out)
}
