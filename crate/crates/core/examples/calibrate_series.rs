//! Intercalibrates a three-year nighttime-light series onto its brightest grid.
//!
//! ```text
//! cargo run --release --example calibrate_series
//! ```

use std::collections::BTreeMap;

use natcity::calib::{calibrate_series, sum_of_lights, write_models_csv, WholeAreaSampler};
use natcity::rastergrid::{load_grid, GridFormat};
use natcity_testkit::{FixtureKind, FixtureSpec, NtlBlobsParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let params = NtlBlobsParams::default();
    FixtureSpec { kind: FixtureKind::NtlBlobs(params.clone()), seed: 7 }.write(dir.path())?;

    let mut grids = BTreeMap::new();
    for (sat, year, ..) in &params.years {
        let grid = load_grid(&dir.path().join(format!("{sat}{year}.asc")), GridFormat::EsriAscii)?;
        println!("{sat} {year}: sum of lights {}", sum_of_lights(&grid));
        grids.insert((sat.clone(), *year), grid);
    }

    let series = calibrate_series(&grids, &WholeAreaSampler)?;
    println!("reference: {} {}\n", series.reference.0, series.reference.1);
    write_models_csv(series.models.values(), std::io::stdout().lock())?;
    for (key, grid) in &series.grids {
        println!("{} {}: calibrated sum of lights {}", key.0, key.1, sum_of_lights(grid));
    }
    Ok(())
}
