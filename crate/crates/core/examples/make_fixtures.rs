//! Writes every synthetic fixture into a directory, ready for the CLI.
//!
//! ```text
//! cargo run --release --example make_fixtures -- fixtures/
//! natcity ntl run --config fixtures/ntl/ntl_config.json --out-dir runs/ntl
//! natcity streets run --config fixtures/streets/streets_config.json --out-dir runs/streets
//! ```

use std::path::PathBuf;

use natcity_testkit::{FixtureKind, FixtureSpec, NtlBlobsParams, StreetGridParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let seed = std::env::args().nth(2).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let specs = [
        ("ntl", FixtureKind::NtlBlobs(NtlBlobsParams::default())),
        ("streets", FixtureKind::StreetGridCity(StreetGridParams::default())),
        ("pareto", FixtureKind::ParetoSample { alpha: 2.5, x_min: 1.0, n: 2000 }),
        ("table1", FixtureKind::Table1Histogram),
        ("table2", FixtureKind::Table2Areas),
    ];
    for (name, kind) in specs {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir)?;
        let out = FixtureSpec { kind, seed }.write(&dir)?;
        std::fs::write(dir.join("planted.json"), serde_json::to_string_pretty(&out.planted)?)?;
        println!("{name}: {}", out.primary.display());
    }
    Ok(())
}
