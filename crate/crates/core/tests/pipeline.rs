use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use natcity::calib::CalibrationModel;
use natcity::io::read_boundary;
use natcity::pipeline::{
    load_config, run_ntl_pipeline, run_street_pipeline, NtlRunConfig, PipelineError, StreetRunConfig, LOCK_FILE, MANIFEST_FILE, SUMMARY_FILE,
};
use natcity::rastergrid::{clip, connected_components, load_grid, threshold_mask, vectorize, Connectivity, GridFormat, Smoothing, ThresholdRule};
use natcity_testkit::{FixtureKind, FixtureOutput, FixtureSpec, NtlBlobsParams, StreetGridParams};
use tempfile::TempDir;

fn ntl_fixture(seed: u64) -> (TempDir, FixtureOutput, NtlRunConfig) {
    let dir = tempfile::tempdir().unwrap();
    let out = FixtureSpec { kind: FixtureKind::NtlBlobs(NtlBlobsParams::default()), seed }.write(dir.path()).unwrap();
    let cfg: NtlRunConfig = load_config(&out.primary).unwrap();
    (dir, out, cfg)
}

fn street_fixture(seed: u64) -> (TempDir, FixtureOutput, StreetRunConfig) {
    let dir = tempfile::tempdir().unwrap();
    let out = FixtureSpec { kind: FixtureKind::StreetGridCity(StreetGridParams::default()), seed }.write(dir.path()).unwrap();
    let cfg: StreetRunConfig = load_config(&out.primary).unwrap();
    (dir, out, cfg)
}

/// Relative path → contents for every GeoJSON and CSV file under `dir`.
fn tabular_outputs(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("geojson" | "csv")))
        .map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn ntl_selects_the_planted_candidate() {
    let (dir, fx, mut cfg) = ntl_fixture(7);
    cfg.out_dir = Some(dir.path().join("run"));
    let out = run_ntl_pipeline(&cfg).unwrap();
    let planted = fx.planted["candidate_index"].as_u64().unwrap() as usize;
    assert!(out.candidates.len() > planted);
    assert_eq!(out.chosen_threshold, out.candidates[planted].threshold);
    assert!(out.candidates[planted].plausible);
    assert!(out.candidates[planted + 1..].iter().all(|c| !c.plausible));
    assert_eq!(out.evaluation_year, 2012);
    assert_eq!(out.reference, ("F18".to_string(), 2012));

    // Clusters at the chosen threshold are exactly the planted cores.
    for (year, clusters) in &out.clusters {
        let mut got: Vec<u64> = clusters.iter().map(|c| c.cell_count.unwrap()).collect();
        let mut want: Vec<u64> = fx.planted["core_cells"][year.to_string()].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want, "year {year}");
    }
    let run = dir.path().join("run");
    for f in
        ["candidates.csv", "calibration.csv", "clusters_2012.geojson", "headtail_1992.csv", "fit.json", "rank_size.svg", SUMMARY_FILE, MANIFEST_FILE]
    {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert!(!run.join(LOCK_FILE).exists());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(run.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["interpretations"]["evaluation_year"], 2012);
    assert_eq!(manifest["seeds"]["bootstrap"], cfg.seed);
    assert!(manifest["stages"]["calibrate"]["files"].as_object().unwrap().len() >= 4);
}

#[test]
fn ntl_override_is_selected_unconditionally() {
    let (_dir, _fx, mut cfg) = ntl_fixture(7);
    cfg.candidate_override = Some(vec![34]);
    let out = run_ntl_pipeline(&cfg).unwrap();
    assert_eq!(out.chosen_threshold, 34);
    assert!(out.clusters.values().all(|cs| cs.iter().all(|c| c.threshold_used == Some(34.0))));
}

#[test]
fn raising_the_threshold_never_adds_area() {
    let (_dir, _fx, mut cfg) = ntl_fixture(3);
    let mut previous: Option<Vec<f64>> = None;
    for t in [2, 10, 19, 25, 34, 47, 60] {
        cfg.candidate_override = Some(vec![t]);
        let out = run_ntl_pipeline(&cfg).unwrap();
        let totals: Vec<f64> = out.clusters.values().map(|cs| cs.iter().map(|c| c.area_km2).sum()).collect();
        if let Some(prev) = &previous {
            assert!(totals.iter().zip(prev).all(|(a, b)| a <= b), "threshold {t}");
        }
        previous = Some(totals);
    }
}

#[test]
fn single_year_run_is_direct_extraction() {
    let (dir, _fx, mut cfg) = ntl_fixture(4);
    cfg.grids.retain(|g| g.year == 2002);
    cfg.candidate_override = Some(vec![25]);
    let out = run_ntl_pipeline(&cfg).unwrap();
    assert_eq!(out.models.len(), 1);
    let m = &out.models[0];
    assert_eq!((m.c0, m.c1, m.c2), (0.0, 1.0, 0.0));
    assert_eq!(*m, CalibrationModel::identity("F15", 2002, m.n_samples));

    let boundary = read_boundary(&dir.path().join("boundary.geojson")).unwrap();
    let grid = clip(&load_grid(&dir.path().join("F152002.asc"), GridFormat::EsriAscii).unwrap(), &boundary).unwrap();
    let labels = connected_components(&threshold_mask(&grid, 25, ThresholdRule::Strict), Connectivity::Eight);
    let direct = vectorize(&labels, &grid.meta, Smoothing::None);
    let got = &out.clusters[&2002];
    assert_eq!(got.len(), direct.len());
    for (a, b) in got.iter().zip(&direct) {
        assert_eq!(a.geometry, b.geometry);
        assert_eq!(a.area_km2, b.area_km2);
    }
}

#[test]
fn ntl_runs_are_byte_identical_and_resumable() {
    let (dir, _fx, mut cfg) = ntl_fixture(9);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cfg.out_dir = Some(a.clone());
    run_ntl_pipeline(&cfg).unwrap();
    cfg.out_dir = Some(b.clone());
    run_ntl_pipeline(&cfg).unwrap();
    let first = tabular_outputs(&a);
    assert!(first.len() >= 8);
    assert_eq!(first, tabular_outputs(&b));
    assert_eq!(fs::read(a.join(MANIFEST_FILE)).unwrap(), fs::read(b.join(MANIFEST_FILE)).unwrap());

    // Drop the final products and continue from the stored calibrated grids.
    for f in fs::read_dir(&b).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()) {
        if f.file_name().unwrap() != MANIFEST_FILE {
            fs::remove_file(f).unwrap();
        }
    }
    cfg.resume = true;
    let out = run_ntl_pipeline(&cfg).unwrap();
    assert_eq!(out.reused_stages, vec!["calibrate".to_string()]);
    assert_eq!(first, tabular_outputs(&b));

    // A damaged stage file is recomputed rather than trusted.
    let stage = b.join("stages/calibrate/F10_1992.bin");
    let mut bytes = fs::read(&stage).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&stage, bytes).unwrap();
    let out = run_ntl_pipeline(&cfg).unwrap();
    assert!(out.reused_stages.is_empty());
    assert_eq!(first, tabular_outputs(&b));
}

#[test]
fn locked_run_directory_is_refused() {
    let (dir, _fx, mut cfg) = ntl_fixture(1);
    let run = dir.path().join("run");
    fs::create_dir_all(&run).unwrap();
    fs::write(run.join(LOCK_FILE), "123").unwrap();
    cfg.out_dir = Some(run.clone());
    let err = run_ntl_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Locked(_)));
    assert_eq!(err.exit_code(), 2);
    assert!(run.join(LOCK_FILE).exists(), "another run's lock must not be removed");
}

#[test]
fn no_plausible_candidate_still_writes_diagnostics() {
    let (dir, _fx, mut cfg) = ntl_fixture(7);
    cfg.candidate_override = Some(vec![44, 50]);
    cfg.out_dir = Some(dir.path().join("run"));
    match run_ntl_pipeline(&cfg) {
        Err(e @ PipelineError::NoPlausibleThreshold { .. }) => {
            assert_eq!(e.exit_code(), 4);
            if let PipelineError::NoPlausibleThreshold { candidates } = e {
                assert_eq!(candidates.iter().map(|c| c.threshold).collect::<Vec<_>>(), vec![44, 50]);
            }
        }
        other => panic!("unexpected {other:?}"),
    }
    let csv = fs::read_to_string(dir.path().join("run/candidates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("run").join(MANIFEST_FILE).exists());
    assert!(!dir.path().join("run").join(SUMMARY_FILE).exists());
}

#[test]
fn config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    };
    let cases = [
        r#"{"grids": [], "boundary": "b.geojson"}"#,
        r#"{"grids": [{"satellite": "F1", "year": 2000, "path": "g.asc"}], "boundary": "b.geojson", "head_limit": 0}"#,
        r#"{"grids": [{"satellite": "F1", "year": 2000, "path": "g.asc"}], "boundary": "b.geojson", "colour": "red"}"#,
        r#"{"grids": [{"satellite": "F1", "year": 2000, "path": "g.asc"}], "boundary": "b.geojson", "n_bootstrap": 5}"#,
        r#"{"grids": [{"satellite": "F1", "year": 2000, "path": "g.asc"}], "boundary": "b.geojson", "evaluation_year": 1999}"#,
        "not json",
    ];
    for (i, text) in cases.iter().enumerate() {
        let err = load_config::<NtlRunConfig>(&write(&format!("c{i}.json"), text)).unwrap_err();
        assert_eq!(err.exit_code(), 2, "case {i}: {err}");
    }
    let err = load_config::<StreetRunConfig>(&write("s.json", r#"{"segments": "x.csv", "snap_tol": -1}"#)).unwrap_err();
    assert_eq!(err.exit_code(), 2);

    // Paths resolve against the config's directory; a missing input is a data error.
    let cfg: NtlRunConfig =
        load_config(&write("ok.json", r#"{"grids": [{"satellite": "F1", "year": 2000, "path": "g.asc"}], "boundary": "b.geojson"}"#)).unwrap();
    assert_eq!(cfg.grids[0].path, dir.path().join("g.asc"));
    assert_eq!(run_ntl_pipeline(&cfg).unwrap_err().exit_code(), 3);
}

#[test]
fn streets_select_the_planted_level() {
    let (dir, fx, mut cfg) = street_fixture(7);
    cfg.out_dir = Some(dir.path().join("run"));
    cfg.region_area_km2 = Some(2000.0);
    let out = run_street_pipeline(&cfg).unwrap();
    assert_eq!(out.chosen_level, fx.planted["level"].as_u64().unwrap() as usize);
    assert_eq!(out.n_segments as u64, fx.planted["segments"].as_u64().unwrap());
    let eligible: Vec<usize> = out.levels.iter().filter(|l| l.n_clusters >= cfg.min_clusters).map(|l| l.level).collect();
    assert_eq!(eligible, vec![out.chosen_level]);

    let s = &out.summary;
    assert_eq!(s.street_segments, Some(out.n_segments));
    assert_eq!(s.street_nodes, Some(out.n_nodes));
    assert_eq!(s.street_polygons, out.n_faces);
    let total: f64 = out.clusters.iter().map(|c| c.area_km2).sum();
    assert!((s.street_total_area_km2.unwrap() - total).abs() < 1e-9);
    assert!((s.street_total_area_pct.unwrap() - 100.0 * total / 2000.0).abs() < 1e-9);
    let core = fx.planted["core"]["area_km2"].as_f64().unwrap();
    assert!((s.largest_cluster.as_ref().unwrap().area_km2 - core).abs() < 1e-6 * core);
}

#[test]
fn street_level_override_and_determinism() {
    let (dir, _fx, mut cfg) = street_fixture(2);
    cfg.level_override = Some(1);
    cfg.out_dir = Some(dir.path().join("a"));
    let out = run_street_pipeline(&cfg).unwrap();
    assert_eq!(out.chosen_level, 1);
    assert!(out.clusters.iter().all(|c| c.area_km2 > out.hierarchy.levels[1].mean));
    cfg.out_dir = Some(dir.path().join("b"));
    run_street_pipeline(&cfg).unwrap();
    assert_eq!(tabular_outputs(&dir.path().join("a")), tabular_outputs(&dir.path().join("b")));

    cfg.resume = true;
    let again = run_street_pipeline(&cfg).unwrap();
    assert_eq!(again.reused_stages, vec!["faces".to_string()]);
    assert_eq!(tabular_outputs(&dir.path().join("a")), tabular_outputs(&dir.path().join("b")));

    cfg.level_override = Some(99);
    assert_eq!(run_street_pipeline(&cfg).unwrap_err().exit_code(), 2);
}

#[test]
fn street_dual_mode_runs() {
    let (_dir, _fx, mut cfg) = street_fixture(2);
    cfg.dual_mode = true;
    cfg.level_override = Some(0);
    let out = run_street_pipeline(&cfg).unwrap();
    assert!(out.n_faces.is_none());
    assert!(!out.all_clusters.is_empty());
}

fn natcity(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_natcity")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let (dir, fx, _) = ntl_fixture(7);
    let cfg = fx.primary.to_str().unwrap();
    let run = dir.path().join("run");
    let ok = natcity(&["ntl", "run", "--config", cfg, "--out-dir", run.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(run.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["ntl_cluster_counts"]["2012"], 60);

    let forced = natcity(&["ntl", "run", "--config", cfg, "--threshold", "34", "--connectivity", "four"]);
    assert_eq!(forced.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&forced.stdout).contains("DN > 34"));

    assert_eq!(natcity(&["ntl", "run", "--config", cfg, "--threshold", "64"]).status.code(), Some(2));
    assert_eq!(natcity(&["ntl", "run", "--config", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(natcity(&["ntl", "run"]).status.code(), Some(2));

    fs::remove_file(dir.path().join("F152002.asc")).unwrap();
    assert_eq!(natcity(&["ntl", "run", "--config", cfg]).status.code(), Some(3));

    let (_sdir, sfx, _) = street_fixture(7);
    let scfg = sfx.primary.to_str().unwrap();
    // Demanding more clusters than any level yields leaves no eligible level.
    let strict = sfx.primary.with_file_name("strict.json");
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&sfx.primary).unwrap()).unwrap();
    v["min_clusters"] = 100_000.into();
    fs::write(&strict, v.to_string()).unwrap();
    assert_eq!(natcity(&["streets", "run", "--config", strict.to_str().unwrap()]).status.code(), Some(4));
    let lvl = natcity(&["streets", "run", "--config", scfg, "--level", "1", "--seed", "3"]);
    assert_eq!(lvl.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&lvl.stdout).starts_with("chosen level: 1"));
}
