//! Runs the street-network pipeline on a synthetic grid city, then again
//! resuming from the stored block polygons.
//!
//! ```text
//! cargo run --release --example street_pipeline -- [out-dir]
//! ```

use std::path::PathBuf;

use natcity::pipeline::{load_config, run_street_pipeline, StreetRunConfig};
use natcity_testkit::{FixtureKind, FixtureSpec, StreetGridParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "street_run".into()));
    let fixtures = tempfile::tempdir()?;
    let fx = FixtureSpec { kind: FixtureKind::StreetGridCity(StreetGridParams::default()), seed: 7 }.write(fixtures.path())?;

    let mut cfg: StreetRunConfig = load_config(&fx.primary)?;
    cfg.out_dir = Some(out_dir.clone());
    let out = run_street_pipeline(&cfg)?;
    println!("{} segments → {} nodes → {:?} blocks → {} clusters", out.n_segments, out.n_nodes, out.n_faces, out.all_clusters.len());
    for l in &out.levels {
        println!("level {}: area > {:.4} km², {} clusters, plausible {}", l.level, l.threshold_km2, l.n_clusters, l.plausible);
    }
    println!("chosen level {}: {} clusters", out.chosen_level, out.clusters.len());
    println!("{}", serde_json::to_string_pretty(&out.summary)?);

    cfg.resume = true;
    let again = run_street_pipeline(&cfg)?;
    println!("resumed run reused stages {:?}", again.reused_stages);
    Ok(())
}
