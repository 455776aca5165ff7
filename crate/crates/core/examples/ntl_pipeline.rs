//! Runs the full nighttime-light pipeline on a synthetic three-year series and
//! reports the candidate thresholds and the one selected.
//!
//! ```text
//! cargo run --release --example ntl_pipeline -- [out-dir]
//! ```

use std::path::PathBuf;

use natcity::pipeline::{load_config, run_ntl_pipeline, NtlRunConfig};
use natcity_testkit::{FixtureKind, FixtureSpec, NtlBlobsParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ntl_run".into()));
    let fixtures = tempfile::tempdir()?;
    let fx = FixtureSpec { kind: FixtureKind::NtlBlobs(NtlBlobsParams::default()), seed: 7 }.write(fixtures.path())?;

    let mut cfg: NtlRunConfig = load_config(&fx.primary)?;
    cfg.out_dir = Some(out_dir.clone());
    let out = run_ntl_pipeline(&cfg)?;

    println!("reference grid: {} {}", out.reference.0, out.reference.1);
    for c in &out.candidates {
        let alpha = c.fit.as_ref().map_or("-".to_string(), |f| format!("{:.2}", f.alpha));
        let p = c.fit.as_ref().and_then(|f| f.p_value).map_or("-".to_string(), |p| format!("{p:.2}"));
        println!("DN > {:>2}: {:>3} clusters, alpha {alpha:>5}, p {p:>5}, plausible {}", c.threshold, c.n_clusters, c.plausible);
    }
    println!("chosen threshold: {} (evaluated on {})", out.chosen_threshold, out.evaluation_year);
    for (year, clusters) in &out.clusters {
        println!("{year}: {} clusters", clusters.len());
    }
    println!("outputs in {}", out_dir.display());
    Ok(())
}
