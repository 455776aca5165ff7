//! Extracts urban clusters from one nighttime-light grid: clip, threshold,
//! label, vectorize, and write GeoJSON.
//!
//! ```text
//! cargo run --release --example raster_clusters -- [threshold] [out.geojson]
//! ```

use std::fs::File;
use std::io::BufWriter;

use natcity::io::{read_boundary, write_clusters_geojson};
use natcity::rastergrid::{
    clip, cluster_areas, connected_components, load_grid, threshold_mask, vectorize, Connectivity, GridFormat, Smoothing, ThresholdRule,
};
use natcity_testkit::{FixtureKind, FixtureSpec, NtlBlobsParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let threshold: u8 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(29);
    let out = std::env::args().nth(2).unwrap_or_else(|| "raster_clusters.geojson".into());

    let dir = tempfile::tempdir()?;
    FixtureSpec { kind: FixtureKind::NtlBlobs(NtlBlobsParams::default()), seed: 7 }.write(dir.path())?;
    let boundary = read_boundary(&dir.path().join("boundary.geojson"))?;
    let grid = clip(&load_grid(&dir.path().join("F182012.asc"), GridFormat::EsriAscii)?, &boundary)?;

    let mask = threshold_mask(&grid, threshold, ThresholdRule::Strict);
    for conn in [Connectivity::Four, Connectivity::Eight] {
        println!("{conn:?}-connectivity: {} clusters", connected_components(&mask, conn).n_clusters);
    }
    let labels = connected_components(&mask, Connectivity::Eight);
    let clusters = vectorize(&labels, &grid.meta, Smoothing::None);
    let cell_km2 = grid.meta.cell_size * grid.meta.cell_size * 1e-6;
    let areas = cluster_areas(&clusters, cell_km2);
    println!("DN > {threshold}: {} clusters, {:.1} km² in total", clusters.len(), areas.total_km2);

    write_clusters_geojson(&clusters, BufWriter::new(File::create(&out)?))?;
    println!("wrote {out}");
    Ok(())
}
