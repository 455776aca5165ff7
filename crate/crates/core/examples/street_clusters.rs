//! Street nodes → Voronoi graph → short edges → blocks → merged clusters,
//! then a head/tail hierarchy over the cluster areas.
//!
//! ```text
//! cargo run --release --example street_clusters
//! ```

use natcity::headtail::{head_tail_breaks, TieRule};
use natcity::io::read_segments;
use natcity::streetnet::{
    build_voronoi, default_snap_tol, dual_clusters, extract_nodes, merge_adjacent, polygonize, select_short_edges, threshold_clusters,
    KM2_PER_SQ_METRE,
};
use natcity_testkit::{FixtureKind, FixtureSpec, StreetGridParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    FixtureSpec { kind: FixtureKind::StreetGridCity(StreetGridParams::default()), seed: 7 }.write(dir.path())?;

    let segments = read_segments(&dir.path().join("segments.csv"))?;
    let nodes = extract_nodes(&segments, default_snap_tol(&segments))?;
    let graph = build_voronoi(&nodes, 0.1)?;
    let short = select_short_edges(&graph)?;
    let edges: Vec<(usize, usize)> = short.edges.iter().map(|&i| (graph.edges[i].a, graph.edges[i].b)).collect();
    let faces = polygonize(&graph.vertices, &edges, KM2_PER_SQ_METRE);
    let clusters = merge_adjacent(&faces);
    println!(
        "{} segments → {} nodes → {} short edges (mean length {:.1} m) → {} blocks → {} clusters",
        segments.len(),
        nodes.len(),
        short.edges.len(),
        short.mean_length,
        faces.faces.len(),
        clusters.len()
    );

    let areas: Vec<f64> = clusters.iter().map(|c| c.area_km2).collect();
    let h = head_tail_breaks(&areas, 0.5, TieRule::Head)?;
    for (level, l) in h.levels.iter().enumerate() {
        let kept = threshold_clusters(&clusters, &h, level)?;
        println!("level {level}: area > {:.4} km² keeps {} clusters", l.mean, kept.len());
    }

    let (dual, threshold) = dual_clusters(&graph, KM2_PER_SQ_METRE);
    println!("dual mode: {} clusters from cells smaller than {threshold:.4} km²", dual.len());
    Ok(())
}
