use std::collections::BTreeMap;

use natcity::calib::{
    apply_calibration, calibrate_series, fit_calibration, select_reference, sum_of_lights, CalibError, CalibrationModel, WholeAreaSampler,
};
use natcity::geometry::Point;
use natcity::rastergrid::{DnGrid, GridMeta};
use natcity_testkit::quadratic_normal_equations;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(w: usize, h: usize, cells: Vec<Option<u8>>) -> DnGrid {
    let meta = GridMeta { width: w, height: h, origin: Point::new(0.0, 0.0), cell_size: 1000.0, crs_tag: "projected".into() };
    DnGrid::new(meta, -1, cells).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn exact_quadratic_is_recovered() {
    for (c0, c1, c2) in [(0.5, 1.2, -0.004), (-2.0, 0.8, 0.01), (0.0, 1.0, 0.0), (3.25, -0.5, 0.02)] {
        let pairs: Vec<(f64, f64)> = (1..=63).map(|x| x as f64).map(|x| (x, c0 + c1 * x + c2 * x * x)).collect();
        let m = fit_calibration(&pairs).unwrap();
        assert!(rel_close(m.c0, c0, 1e-9) && rel_close(m.c1, c1, 1e-9) && rel_close(m.c2, c2, 1e-9), "{m:?}");
        assert!((m.r_squared - 1.0).abs() < 1e-9 || c1 == 0.0);
        assert_eq!(m.n_samples, 63);
    }
}

#[test]
fn least_squares_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let n = rng.gen_range(20..400);
        let (c0, c1, c2) = (rng.gen_range(-3.0..3.0), rng.gen_range(0.5..1.5), rng.gen_range(-0.01..0.01));
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let x = rng.gen_range(1..=63) as f64;
                (x, c0 + c1 * x + c2 * x * x + rng.gen_range(-2.0..2.0))
            })
            .collect();
        let Some(oracle) = quadratic_normal_equations(&pairs) else { continue };
        let m = fit_calibration(&pairs).unwrap();
        for (got, want) in [m.c0, m.c1, m.c2].into_iter().zip(oracle) {
            assert!(rel_close(got, want, 1e-8), "{got} vs {want}");
        }
    }
}

#[test]
fn too_few_distinct_x_is_degenerate() {
    let pairs = [(1.0, 2.0), (1.0, 2.5), (2.0, 3.0)];
    assert!(matches!(fit_calibration(&pairs), Err(CalibError::DegenerateDesign(_))));
}

#[test]
fn self_calibration_is_identity() {
    let cells: Vec<Option<u8>> = (0..=63u8).map(Some).chain([None]).collect();
    let g = grid(65, 1, cells.clone());
    let mut grids = BTreeMap::new();
    grids.insert(("F18".to_string(), 2012), g.clone());
    let s = calibrate_series(&grids, &WholeAreaSampler).unwrap();
    assert_eq!(s.reference, ("F18".to_string(), 2012));
    assert_eq!(s.models[&s.reference], CalibrationModel::identity("F18", 2012, 63));
    assert_eq!(s.grids[&s.reference], g);

    // Fitting a grid against itself also yields the identity after rounding.
    let pairs: Vec<(f64, f64)> = (1..=63).map(|x| (x as f64, x as f64)).collect();
    let m = fit_calibration(&pairs).unwrap();
    assert_eq!(apply_calibration(&g, &m, 0..=63).cells(), cells.as_slice());
}

#[test]
fn series_uses_brightest_grid_as_reference() {
    let dim = grid(8, 8, (0..64).map(|i| Some((i % 40) as u8)).collect());
    // A quadratic brightening of the same scene.
    let f = |v: u8| -> u8 { (1.0 + 1.1 * v as f64 + 0.005 * (v as f64).powi(2)).round().min(63.0) as u8 };
    let bright = grid(8, 8, dim.cells().iter().map(|c| c.map(|v| if v == 0 { 0 } else { f(v) })).collect());
    let mut grids = BTreeMap::new();
    grids.insert(("F10".to_string(), 1992), dim.clone());
    grids.insert(("F12".to_string(), 1996), bright.clone());
    assert_eq!(select_reference(&grids).unwrap(), ("F12".to_string(), 1996));
    let s = calibrate_series(&grids, &WholeAreaSampler).unwrap();
    let m = &s.models[&("F10".to_string(), 1992)];
    assert!(m.c1 > 1.0 && m.r_squared > 0.99);
    let calibrated = &s.grids[&("F10".to_string(), 1992)];
    let diff: i64 = calibrated.cells().iter().zip(bright.cells()).map(|(a, b)| (a.unwrap() as i64 - b.unwrap() as i64).abs()).max().unwrap();
    assert!(diff <= 1, "max deviation {diff}");
    assert!(sum_of_lights(calibrated) > sum_of_lights(&dim));
}

#[test]
fn equal_sums_prefer_the_later_year() {
    let g = grid(2, 1, vec![Some(3), Some(4)]);
    let mut grids = BTreeMap::new();
    grids.insert(("F15".to_string(), 2003), g.clone());
    grids.insert(("F14".to_string(), 2001), g.clone());
    assert_eq!(select_reference(&grids).unwrap(), ("F15".to_string(), 2003));
    assert!(matches!(select_reference(&BTreeMap::new()), Err(CalibError::EmptyInput)));
}

#[test]
fn shape_mismatch_is_rejected() {
    let mut grids = BTreeMap::new();
    grids.insert(("A".to_string(), 2000), grid(2, 2, vec![Some(1); 4]));
    grids.insert(("B".to_string(), 2001), grid(4, 1, vec![Some(9); 4]));
    assert!(matches!(calibrate_series(&grids, &WholeAreaSampler), Err(CalibError::ShapeMismatch(..))));
}

proptest! {
    #[test]
    fn calibrated_values_stay_in_range(c0 in -10.0f64..10.0, c1 in -2.0f64..3.0, c2 in -0.05f64..0.05,
                                       cells in prop::collection::vec(prop::option::of(0u8..=63), 1..200)) {
        let g = grid(cells.len(), 1, cells.clone());
        let m = CalibrationModel { c0, c1, c2, ..CalibrationModel::identity("X", 2000, 0) };
        let out = apply_calibration(&g, &m, 0..=63);
        for (a, b) in cells.iter().zip(out.cells()) {
            match (a, b) {
                (None, None) | (Some(0), Some(0)) => {}
                (Some(_), Some(v)) => prop_assert!(*v <= 63),
                _ => prop_assert!(false, "nodata or zero changed"),
            }
        }
    }
}
