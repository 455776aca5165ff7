//! Intercalibration of a nighttime-light time series.
//!
//! Each satellite-year is mapped onto the scale of a reference satellite-year
//! with a quadratic `DN' = c0 + c1·DN + c2·DN²` fitted by least squares on
//! co-located pixel pairs.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rastergrid::{DnGrid, GridError, MAX_DN};

/// `(satellite id, year)`.
pub type SeriesKey = (String, i32);

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("no grids supplied")]
    EmptyInput,
    #[error("quadratic fit is rank deficient: {0}")]
    DegenerateDesign(String),
    #[error("grids {0:?} and {1:?} differ in shape")]
    ShapeMismatch(SeriesKey, SeriesKey),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub satellite_id: String,
    pub year: i32,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub r_squared: f64,
    pub n_samples: usize,
}

impl CalibrationModel {
    pub fn identity(satellite_id: &str, year: i32, n_samples: usize) -> Self {
        CalibrationModel { satellite_id: satellite_id.to_string(), year, c0: 0.0, c1: 1.0, c2: 0.0, r_squared: 1.0, n_samples }
    }

    pub fn labelled(mut self, satellite_id: &str, year: i32) -> Self {
        self.satellite_id = satellite_id.to_string();
        self.year = year;
        self
    }

    pub fn eval(&self, dn: f64) -> f64 {
        self.c0 + self.c1 * dn + self.c2 * dn * dn
    }
}

/// Sum of all valid digital numbers.
pub fn sum_of_lights(grid: &DnGrid) -> u64 {
    grid.cells().iter().flatten().map(|&v| v as u64).sum()
}

/// The satellite-year with the largest sum of lights. Ties go to the later
/// year, then to the lexicographically greater satellite id.
pub fn select_reference(grids: &BTreeMap<SeriesKey, DnGrid>) -> Result<SeriesKey, CalibError> {
    grids.iter().map(|(k, g)| (sum_of_lights(g), k.1, k.0.clone())).max().map(|(_, year, sat)| (sat, year)).ok_or(CalibError::EmptyInput)
}

/// Ordinary least squares for `y = c0 + c1·x + c2·x²` via Householder QR.
pub fn fit_calibration(pairs: &[(f64, f64)]) -> Result<CalibrationModel, CalibError> {
    let n = pairs.len();
    let mut xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(CalibError::DegenerateDesign(format!("{} pairs with {} distinct x values; need 3", n, xs.len())));
    }

    // Column-major design matrix and right-hand side, reduced in place.
    let mut a: [Vec<f64>; 3] = [vec![1.0; n], pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.0 * p.0).collect()];
    let mut b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let scale = a.iter().map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs()))).fold(0.0f64, f64::max);

    let mut r = [[0.0f64; 3]; 3];
    for k in 0..3 {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale {
            return Err(CalibError::DegenerateDesign(format!("column {k} is dependent")));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |col: &mut [f64]| {
            let dot: f64 = v.iter().zip(col.iter()).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= f * vi;
            }
        };
        for col in a.iter_mut().skip(k) {
            reflect(&mut col[k..]);
        }
        reflect(&mut b[k..]);
        for (j, col) in a.iter().enumerate().skip(k) {
            r[k][j] = col[k];
        }
    }

    let mut c = [0.0f64; 3];
    for k in (0..3).rev() {
        let s: f64 = (k + 1..3).map(|j| r[k][j] * c[j]).sum();
        c[k] = (b[k] - s) / r[k][k];
    }

    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let ss_tot: f64 = pairs.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = pairs.iter().map(|&(x, y)| (y - c[0] - c[1] * x - c[2] * x * x).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else if ss_res <= f64::EPSILON * n as f64 {
        1.0
    } else {
        0.0
    };

    Ok(CalibrationModel { satellite_id: String::new(), year: 0, c0: c[0], c1: c[1], c2: c[2], r_squared, n_samples: n })
}

/// Maps every lit cell through the model, rounding to the nearest integer and
/// clamping into `clamp`. Zero and nodata cells are left untouched.
pub fn apply_calibration(grid: &DnGrid, model: &CalibrationModel, clamp: RangeInclusive<u8>) -> DnGrid {
    let (lo, hi) = (*clamp.start() as f64, (*clamp.end()).min(MAX_DN) as f64);
    let cells = grid
        .cells()
        .iter()
        .map(|c| match *c {
            Some(0) => Some(0),
            Some(dn) => Some(model.eval(dn as f64).round().clamp(lo, hi) as u8),
            None => None,
        })
        .collect();
    grid.with_cells(cells).expect("calibrated cells stay within 0..=63")
}

/// Chooses the `(raw, reference)` pixel pairs a calibration is fitted on.
pub trait PairSampler {
    fn sample(&self, reference: &DnGrid, target: &DnGrid) -> Vec<(f64, f64)>;
}

/// Every co-located cell pair where both values are lit.
#[derive(Debug, Clone, Copy, Default)]
pub struct WholeAreaSampler;

impl PairSampler for WholeAreaSampler {
    fn sample(&self, reference: &DnGrid, target: &DnGrid) -> Vec<(f64, f64)> {
        reference
            .cells()
            .iter()
            .zip(target.cells())
            .filter_map(|(r, t)| match (r, t) {
                (Some(r), Some(t)) if *r > 0 && *t > 0 => Some((*t as f64, *r as f64)),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CalibratedSeries {
    pub reference: SeriesKey,
    pub models: BTreeMap<SeriesKey, CalibrationModel>,
    pub grids: BTreeMap<SeriesKey, DnGrid>,
}

/// Calibrates every grid against the max-sum reference. The reference itself
/// gets the identity model.
pub fn calibrate_series<S: PairSampler + Sync>(grids: &BTreeMap<SeriesKey, DnGrid>, sampler: &S) -> Result<CalibratedSeries, CalibError> {
    use rayon::prelude::*;

    let reference = select_reference(grids)?;
    let ref_grid = &grids[&reference];
    for (k, g) in grids {
        if g.width() != ref_grid.width() || g.height() != ref_grid.height() {
            return Err(CalibError::ShapeMismatch(reference.clone(), k.clone()));
        }
    }
    let fitted: Vec<(SeriesKey, CalibrationModel, DnGrid)> = grids
        .par_iter()
        .map(|(key, grid)| {
            if *key == reference {
                let n = WholeAreaSampler.sample(ref_grid, grid).len();
                return Ok((key.clone(), CalibrationModel::identity(&key.0, key.1, n), grid.clone()));
            }
            let pairs = sampler.sample(ref_grid, grid);
            let model = fit_calibration(&pairs)?.labelled(&key.0, key.1);
            let calibrated = apply_calibration(grid, &model, 0..=MAX_DN);
            Ok((key.clone(), model, calibrated))
        })
        .collect::<Result<_, CalibError>>()?;

    let mut models = BTreeMap::new();
    let mut out = BTreeMap::new();
    for (k, m, g) in fitted {
        models.insert(k.clone(), m);
        out.insert(k, g);
    }
    Ok(CalibratedSeries { reference, models, grids: out })
}

/// CSV audit trail: `satellite,year,c0,c1,c2,r2,n`.
pub fn write_models_csv<'a, W: Write>(models: impl IntoIterator<Item = &'a CalibrationModel>, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["satellite", "year", "c0", "c1", "c2", "r2", "n"])?;
    for m in models {
        w.write_record([
            m.satellite_id.clone(),
            m.year.to_string(),
            m.c0.to_string(),
            m.c1.to_string(),
            m.c2.to_string(),
            m.r_squared.to_string(),
            m.n_samples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
