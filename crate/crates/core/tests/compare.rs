use natcity::cluster::{ClusterSource, UrbanCluster};
use natcity::compare::{concentration, largest_cluster, overlay_stats, CompareError};
use natcity::geometry::Polygon;
use natcity_testkit::rect_overlay_oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rect(r: [f64; 4]) -> Polygon {
    Polygon::rectangle(r[0], r[1], r[2], r[3])
}

fn clusters(rects: &[[f64; 4]]) -> Vec<UrbanCluster> {
    rects
        .iter()
        .enumerate()
        .map(|(i, r)| UrbanCluster {
            id: i as u32,
            geometry: rect(*r).into(),
            area_km2: (r[2] - r[0]) * (r[3] - r[1]),
            source: ClusterSource::Ntl,
            year: None,
            threshold_used: None,
            cell_count: None,
        })
        .collect()
}

fn random_rects(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 4]> {
    (0..n)
        .map(|_| {
            let (x, y) = (rng.gen_range(0..20) as f64, rng.gen_range(0..20) as f64);
            [x, y, x + rng.gen_range(1..6) as f64, y + rng.gen_range(1..6) as f64]
        })
        .collect()
}

#[test]
fn matches_rectangle_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (na, nb) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let (a, b) = (random_rects(&mut rng, na), random_rects(&mut rng, nb));
        let (ua, ub, inter) = rect_overlay_oracle(&a, &b);
        let r = overlay_stats(&clusters(&a), &b.iter().map(|r| rect(*r)).collect::<Vec<_>>(), 1000.0, 1.0).unwrap();
        assert!((r.total_area_a - ua).abs() < 1e-9, "{} vs {ua}", r.total_area_a);
        assert!((r.total_area_b - ub).abs() < 1e-9);
        assert!((r.intersection_area - inter).abs() < 1e-9);
        assert!(r.intersection_area <= r.total_area_a.min(r.total_area_b) + 1e-9);

        // Symmetry.
        let s = overlay_stats(&clusters(&b), &a.iter().map(|r| rect(*r)).collect::<Vec<_>>(), 1000.0, 1.0).unwrap();
        assert!((s.intersection_area - r.intersection_area).abs() <= 1e-9 * r.intersection_area.max(1.0));
    }
}

#[test]
fn contained_set_is_fully_covered() {
    let a = [[1.0, 1.0, 2.0, 3.0], [4.0, 4.0, 5.0, 5.0]];
    let r = overlay_stats(&clusters(&a), &[rect([0.0, 0.0, 10.0, 10.0])], 100.0, 1.0).unwrap();
    assert_eq!(r.intersection_area, r.total_area_a);
    assert_eq!(r.total_area_a, 3.0);
    assert_eq!(r.pct_of_region_a, 3.0);
    assert_eq!(r.pct_of_region_b, 100.0);
}

#[test]
fn unit_conversion_applies_to_all_areas() {
    let a = [[0.0, 0.0, 1000.0, 1000.0]];
    let r = overlay_stats(&clusters(&a), &[rect([500.0, 0.0, 1500.0, 1000.0])], 10.0, 1e-6).unwrap();
    assert!((r.total_area_a - 1.0).abs() < 1e-12);
    assert!((r.intersection_area - 0.5).abs() < 1e-12);
    assert!((r.pct_of_region_a - 10.0).abs() < 1e-9);
}

#[test]
fn rejects_bad_region_area() {
    assert_eq!(overlay_stats(&[], &[], -1.0, 1.0), Err(CompareError::NonPositiveRegionArea(-1.0)));
}

#[test]
fn largest_and_concentration() {
    let c = clusters(&[[0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 3.0, 3.0], [0.0, 0.0, 3.0, 3.0]]);
    assert_eq!(largest_cluster(&c).unwrap(), (1, 9.0));
    assert!((concentration(&c).unwrap() - 9.0 / 19.0).abs() < 1e-15);
    assert_eq!(concentration(&[]), Err(CompareError::EmptyInput));
}
