//! Long-format dump of the pseudo-observation matrix.

use std::io::Write;
use std::path::PathBuf;

use pseudosurv::pseudo::pseudo_observations;
use pseudosurv::surv::{select_time_grid_with, GridRule};

use crate::data::{read_dataset, ColumnMap};
use crate::error::{CliError, CliResult};

pub struct PseudoArgs {
    pub input: PathBuf,
    pub map: ColumnMap,
    pub k: usize,
    pub grid_rule: GridRule,
    /// Standard output when absent.
    pub out: Option<PathBuf>,
}

pub fn run(args: PseudoArgs) -> CliResult<()> {
    let data = read_dataset(&args.input, &args.map)?;
    let grid = select_time_grid_with(&data, args.k, args.grid_rule)?;
    let y = pseudo_observations(&data, &grid)?;
    let mut buf = Vec::new();
    y.write_long_csv(&mut buf).map_err(CliError::io("formatting pseudo-observations"))?;
    match &args.out {
        Some(path) => std::fs::write(path, buf).map_err(CliError::io(format!("writing {}", path.display()))),
        None => std::io::stdout()
            .lock()
            .write_all(&buf)
            .map_err(CliError::io("writing to standard output")),
    }
}
