use natcity::geometry::Point;
use natcity::headtail::{head_tail_breaks, TieRule};
use natcity::io::read_segments;
use natcity::streetnet::{
    build_voronoi, extract_nodes, extract_nodes_with_crossings, merge_adjacent, polygonize, select_short_edges, threshold_clusters, StreetError,
    StreetNode, StreetSegment, KM2_PER_SQ_METRE,
};
use natcity_testkit::{nearest_site_oracle, FixtureKind, FixtureSpec, StreetGridParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn nodes(pts: &[(f64, f64)]) -> Vec<StreetNode> {
    pts.iter().enumerate().map(|(id, &(x, y))| StreetNode { id, position: Point::new(x, y), degree: 1 }).collect()
}

fn random_sites(seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=20);
    (0..n).map(|_| (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0))).collect()
}

#[test]
fn cells_agree_with_brute_force_nearest_site() {
    for seed in 0..100 {
        let sites = random_sites(seed);
        let g = build_voronoi(&nodes(&sites), 0.1).unwrap();
        assert_eq!(g.euler_characteristic(), 2, "seed {seed}");
        let cells = g.cells();
        assert_eq!(cells.len(), sites.len());
        let b = g.clip_box;
        let samples = nearest_site_oracle(&sites, [b.min.x, b.min.y, b.max.x, b.max.y], 64);
        let mut cell_of = vec![None; sites.len()];
        for (site, poly) in &cells {
            cell_of[g.sites[*site].id] = Some(poly);
        }
        for s in samples.iter().filter(|s| s.margin > 1e-6) {
            let poly = cell_of[s.owner].unwrap();
            assert!(poly.contains(Point::new(s.x, s.y)), "seed {seed}: ({}, {}) not in cell of {}", s.x, s.y, s.owner);
        }
        let total: f64 = cells.iter().map(|(_, p)| p.area()).sum();
        assert!((total - b.width() * b.height()).abs() < 1e-6 * total);
    }
}

#[test]
fn degenerate_site_sets() {
    assert_eq!(build_voronoi(&nodes(&[(0.0, 0.0), (1.0, 1.0)]), 0.1), Err(StreetError::TooFewSites(2)));
    assert_eq!(build_voronoi(&nodes(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]), 0.1), Err(StreetError::AllCollinear));
}

#[test]
fn snapping_merges_nearby_endpoints() {
    let segs = vec![
        StreetSegment::new(1, vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0)]).unwrap(),
        StreetSegment::new(2, vec![Point::new(10.0005, 0.0), Point::new(10.0, 10.0)]).unwrap(),
    ];
    let n = extract_nodes(&segs, 0.001).unwrap();
    assert_eq!(n.len(), 3);
    assert_eq!(n.iter().map(|n| n.degree).max(), Some(2));
    assert_eq!(extract_nodes(&segs, 0.0).unwrap().len(), 4);
    assert_eq!(extract_nodes(&segs, -1.0), Err(StreetError::InvalidTolerance));
}

#[test]
fn crossings_become_nodes() {
    let segs = vec![
        StreetSegment::new(1, vec![Point::new(0.0, 5.0), Point::new(10.0, 5.0)]).unwrap(),
        StreetSegment::new(2, vec![Point::new(5.0, 0.0), Point::new(5.0, 10.0)]).unwrap(),
    ];
    assert_eq!(extract_nodes(&segs, 0.0).unwrap().len(), 4);
    let n = extract_nodes_with_crossings(&segs, 0.0).unwrap();
    assert_eq!(n.len(), 5);
    let centre = n.iter().find(|n| n.position == Point::new(5.0, 5.0)).unwrap();
    assert_eq!(centre.degree, 4);
}

#[test]
fn lattice_faces_merge_into_one_block() {
    // 3 × 3 lattice of unit squares with side 1.
    let mut vertices = Vec::new();
    for j in 0..4 {
        for i in 0..4 {
            vertices.push(Point::new(i as f64, j as f64));
        }
    }
    let id = |i: usize, j: usize| j * 4 + i;
    let mut edges = Vec::new();
    for j in 0..4 {
        for i in 0..3 {
            edges.push((id(i, j), id(i + 1, j)));
            edges.push((id(j, i), id(j, i + 1)));
        }
    }
    let faces = polygonize(&vertices, &edges, 1.0);
    assert_eq!(faces.faces.len(), 9);
    assert!(faces.faces.iter().all(|f| f.area_km2 == 1.0));
    let merged = merge_adjacent(&faces);
    assert_eq!(merged.len(), 1);
    assert_eq!(merged[0].area_km2, 9.0);
    assert_eq!(merged[0].geometry.0[0].exterior.len(), 4);
}

#[test]
fn grid_city_fixture_has_one_core_at_the_deepest_level() {
    let dir = tempfile::tempdir().unwrap();
    let params = StreetGridParams::default();
    let out = FixtureSpec { kind: FixtureKind::StreetGridCity(params.clone()), seed: 5 }.write(dir.path()).unwrap();
    let segments = read_segments(&dir.path().join("segments.csv")).unwrap();
    assert_eq!(segments.len() as u64, out.planted["segments"].as_u64().unwrap());
    let nodes = extract_nodes(&segments, 1e-3).unwrap();
    let graph = build_voronoi(&nodes, 0.1).unwrap();
    assert_eq!(graph.euler_characteristic(), 2);
    let short = select_short_edges(&graph).unwrap();
    let edges: Vec<(usize, usize)> = short.edges.iter().map(|&i| (graph.edges[i].a, graph.edges[i].b)).collect();
    let faces = polygonize(&graph.vertices, &edges, KM2_PER_SQ_METRE);
    let clusters = merge_adjacent(&faces);
    assert_eq!(clusters.len(), params.n_towns + 1);

    let h = head_tail_breaks(&clusters.iter().map(|c| c.area_km2).collect::<Vec<_>>(), 0.5, TieRule::Head).unwrap();
    let deepest = (0..h.len()).rev().map(|l| threshold_clusters(&clusters, &h, l).unwrap()).find(|s| !s.is_empty()).unwrap();
    assert_eq!(deepest.len(), 1);
    let core = &deepest[0];
    let centre = &out.planted["core"]["center"];
    let centre = Point::new(centre[0].as_f64().unwrap(), centre[1].as_f64().unwrap());
    assert!(core.geometry.contains(centre));
    let planted_area = out.planted["core"]["area_km2"].as_f64().unwrap();
    assert!((core.area_km2 - planted_area).abs() < 1e-6 * planted_area, "{} vs {planted_area}", core.area_km2);
}
