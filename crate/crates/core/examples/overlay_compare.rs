//! Compares two sets of urban areas: union areas, their intersection, and
//! shares of the study region.
//!
//! ```text
//! cargo run --example overlay_compare
//! ```

use natcity::cluster::{ClusterSource, UrbanCluster};
use natcity::compare::{concentration, largest_cluster, overlay_stats};
use natcity::geometry::Polygon;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Coordinates in metres; the region is 20 km × 20 km.
    let blocks = [[0.0, 0.0, 4000.0, 3000.0], [3000.0, 2000.0, 6000.0, 6000.0], [12000.0, 12000.0, 13000.0, 14000.0]];
    let clusters: Vec<UrbanCluster> = blocks
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let poly = Polygon::rectangle(r[0], r[1], r[2], r[3]);
            UrbanCluster {
                id: i as u32,
                area_km2: poly.area() * 1e-6,
                geometry: poly.into(),
                source: ClusterSource::Street,
                year: None,
                threshold_used: None,
                cell_count: None,
            }
        })
        .collect();
    let reference = vec![Polygon::rectangle(1000.0, 1000.0, 5000.0, 5000.0), Polygon::rectangle(12500.0, 12000.0, 15000.0, 13000.0)];

    let r = overlay_stats(&clusters, &reference, 400.0, 1e-6)?;
    println!("clusters:     {:.2} km² ({:.2}% of region)", r.total_area_a, r.pct_of_region_a);
    println!("reference:    {:.2} km² ({:.2}% of region)", r.total_area_b, r.pct_of_region_b);
    println!("intersection: {:.2} km²", r.intersection_area);
    let (id, area) = largest_cluster(&clusters)?;
    println!("largest cluster #{id}: {area:.2} km², {:.0}% of the total", 100.0 * concentration(&clusters)?);
    Ok(())
}
