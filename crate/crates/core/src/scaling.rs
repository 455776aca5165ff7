//! Power-law fitting and plausibility testing for cluster-size samples.
//!
//! The estimator is the continuous maximum-likelihood exponent with the lower
//! cut-off chosen to minimise the Kolmogorov–Smirnov distance. Plausibility
//! uses a semi-parametric bootstrap: below the cut-off the data are resampled,
//! above it values are drawn from the fitted law, and every replicate is
//! refitted from scratch. A p-value above 0.1 counts as plausible.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest sample accepted by [`fit_power_law`].
pub const MIN_SAMPLE: usize = 10;
/// Smallest replicate count accepted by [`goodness_of_fit`].
pub const MIN_BOOTSTRAP: usize = 100;
/// p-values above this make the power law plausible.
pub const PLAUSIBILITY_LEVEL: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("need at least {MIN_SAMPLE} values, got {0}")]
    TooFewValues(usize),
    #[error("all values are equal")]
    DegenerateSample,
    #[error("value {0} is not a positive finite number")]
    NonPositiveValue(f64),
    #[error("bootstrap needs at least {MIN_BOOTSTRAP} replicates, got {0}")]
    InvalidBootstrapCount(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub x_min: f64,
    pub alpha: f64,
    pub ks_distance: f64,
    /// Sample points at or above `x_min`.
    pub n_tail: usize,
}

impl PowerLawFit {
    /// Fitted CDF of the tail.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < self.x_min {
            0.0
        } else {
            1.0 - (x / self.x_min).powf(1.0 - self.alpha)
        }
    }

    /// Inverse-CDF draw from the fitted tail for `u` in [0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        self.x_min * (1.0 - u).powf(-1.0 / (self.alpha - 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub p_value: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub plausible: bool,
}

fn sorted_sample(sizes: &[f64]) -> Result<Vec<f64>, ScalingError> {
    if let Some(&bad) = sizes.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(ScalingError::NonPositiveValue(bad));
    }
    if sizes.len() < MIN_SAMPLE {
        return Err(ScalingError::TooFewValues(sizes.len()));
    }
    let mut xs = sizes.to_vec();
    xs.sort_by(f64::total_cmp);
    if xs[0] == xs[xs.len() - 1] {
        return Err(ScalingError::DegenerateSample);
    }
    Ok(xs)
}

/// Continuous MLE exponent for the values at or above `x_min`, or `None` when
/// fewer than two values qualify or they are all equal to `x_min`.
pub fn mle_alpha(sizes: &[f64], x_min: f64) -> Option<f64> {
    let (m, s) = sizes.iter().filter(|&&x| x >= x_min).fold((0usize, 0.0f64), |(m, s), &x| (m + 1, s + (x / x_min).ln()));
    (m >= 2 && s > 0.0).then(|| 1.0 + m as f64 / s)
}

/// Fits a continuous power law, trying every distinct sample value as `x_min`.
/// Ties in KS distance go to the smaller `x_min`.
pub fn fit_power_law(sizes: &[f64]) -> Result<PowerLawFit, ScalingError> {
    let xs = sorted_sample(sizes)?;
    Ok(fit_sorted(&xs).expect("a non-degenerate sample has a non-constant tail"))
}

/// Fits the exponent with the lower cut-off held at `x_min` instead of
/// searching for it. Used when the sample is known to start at `x_min`.
pub fn fit_power_law_at(sizes: &[f64], x_min: f64) -> Result<PowerLawFit, ScalingError> {
    let xs = sorted_sample(sizes)?;
    fit_sorted_at(&xs, x_min).ok_or(ScalingError::DegenerateSample)
}

fn fit_sorted_at(xs: &[f64], x_min: f64) -> Option<PowerLawFit> {
    let i = xs.partition_point(|&x| x < x_min);
    let tail = &xs[i..];
    let alpha = mle_alpha(tail, x_min)?;
    let logs: Vec<f64> = tail.iter().map(|x| x.ln()).collect();
    let d = ks_tail_from(tail, &logs, x_min.ln(), alpha, f64::INFINITY)?;
    Some(PowerLawFit { x_min, alpha, ks_distance: d, n_tail: tail.len() })
}

fn fit_sorted(xs: &[f64]) -> Option<PowerLawFit> {
    let n = xs.len();
    let logs: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    // suffix[i] = Σ_{j ≥ i} ln x_j
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + logs[i];
    }

    let mut best: Option<PowerLawFit> = None;
    let mut i = 0;
    while i < n {
        let m = n - i;
        if m < 2 {
            break;
        }
        let log_xmin = logs[i];
        let sum_log_ratio = suffix[i] - m as f64 * log_xmin;
        if sum_log_ratio <= 0.0 {
            break; // constant tail: every later candidate is constant too
        }
        let alpha = 1.0 + m as f64 / sum_log_ratio;
        let bound = best.map_or(f64::INFINITY, |b| b.ks_distance);
        if let Some(d) = ks_tail(&xs[i..], &logs[i..], alpha, bound) {
            if d < bound {
                best = Some(PowerLawFit { x_min: xs[i], alpha, ks_distance: d, n_tail: m });
            }
        }
        // next distinct value
        let v = xs[i];
        while i < n && xs[i] == v {
            i += 1;
        }
    }
    best
}

/// KS distance between the empirical tail and the fitted law. Returns `None`
/// as soon as the running maximum reaches `bound`.
fn ks_tail(tail: &[f64], logs: &[f64], alpha: f64, bound: f64) -> Option<f64> {
    ks_tail_from(tail, logs, logs[0], alpha, bound)
}

fn ks_tail_from(tail: &[f64], logs: &[f64], log_xmin: f64, alpha: f64, bound: f64) -> Option<f64> {
    let m = tail.len() as f64;
    let k = alpha - 1.0;
    let mut d = 0.0f64;
    let mut j = 0;
    while j < tail.len() {
        let v = tail[j];
        let mut end = j + 1;
        while end < tail.len() && tail[end] == v {
            end += 1;
        }
        let model = 1.0 - (-k * (logs[j] - log_xmin)).exp();
        let below = j as f64 / m;
        let above = end as f64 / m;
        d = d.max((model - below).abs()).max((above - model).abs());
        if d >= bound {
            return None;
        }
        j = end;
    }
    Some(d)
}

/// Semi-parametric bootstrap p-value for `fit` on `sizes`.
///
/// Replicate `r` draws from the ChaCha8 stream `r` of `seed`, so results do
/// not depend on thread scheduling and adding replicates leaves earlier ones
/// unchanged. Each replicate is refitted with [`fit_power_law`].
pub fn goodness_of_fit(fit: &PowerLawFit, sizes: &[f64], n_bootstrap: usize, seed: u64) -> Result<GofResult, ScalingError> {
    bootstrap(fit, sizes, n_bootstrap, seed, false)
}

/// Like [`goodness_of_fit`] for a fit from [`fit_power_law_at`]: replicates
/// are refitted with the cut-off held at `fit.x_min`.
pub fn goodness_of_fit_fixed_xmin(fit: &PowerLawFit, sizes: &[f64], n_bootstrap: usize, seed: u64) -> Result<GofResult, ScalingError> {
    bootstrap(fit, sizes, n_bootstrap, seed, true)
}

fn bootstrap(fit: &PowerLawFit, sizes: &[f64], n_bootstrap: usize, seed: u64, fixed_xmin: bool) -> Result<GofResult, ScalingError> {
    if n_bootstrap < MIN_BOOTSTRAP {
        return Err(ScalingError::InvalidBootstrapCount(n_bootstrap));
    }
    let xs = sorted_sample(sizes)?;
    let n = xs.len();
    let body: Vec<f64> = xs.iter().copied().filter(|&x| x < fit.x_min).collect();
    let tail_share = fit.n_tail as f64 / n as f64;

    let exceed: usize = (0..n_bootstrap)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut sample: Vec<f64> = (0..n)
                .map(|_| {
                    if body.is_empty() || rng.gen::<f64>() < tail_share {
                        fit.quantile(rng.gen::<f64>())
                    } else {
                        body[rng.gen_range(0..body.len())]
                    }
                })
                .collect();
            sample.sort_by(f64::total_cmp);
            let refit = if sample[0] == sample[n - 1] {
                None
            } else if fixed_xmin {
                fit_sorted_at(&sample, fit.x_min)
            } else {
                fit_sorted(&sample)
            };
            // A replicate that cannot be fitted counts as a poor fit.
            let d = refit.map_or(1.0, |f| f.ks_distance);
            usize::from(d >= fit.ks_distance)
        })
        .sum();

    let p_value = exceed as f64 / n_bootstrap as f64;
    Ok(GofResult { p_value, n_bootstrap, seed, plausible: p_value > PLAUSIBILITY_LEVEL })
}

/// Sizes in descending order with 1-based ranks. Equal sizes keep their input
/// order.
pub fn rank_size(sizes: &[f64]) -> Vec<(usize, f64)> {
    let mut v = sizes.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.into_iter().enumerate().map(|(i, s)| (i + 1, s)).collect()
}

pub fn write_rank_size_csv<W: Write>(ranks: &[(usize, f64)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "size"])?;
    for (r, s) in ranks {
        w.write_record([r.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// JSON-serialisable fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub x_min: f64,
    pub alpha: f64,
    pub ks: f64,
    pub n_tail: usize,
    pub p_value: Option<f64>,
    pub n_bootstrap: Option<usize>,
    pub seed: Option<u64>,
}

impl FitReport {
    pub fn new(fit: &PowerLawFit, gof: Option<&GofResult>) -> Self {
        FitReport {
            x_min: fit.x_min,
            alpha: fit.alpha,
            ks: fit.ks_distance,
            n_tail: fit.n_tail,
            p_value: gof.map(|g| g.p_value),
            n_bootstrap: gof.map(|g| g.n_bootstrap),
            seed: gof.map(|g| g.seed),
        }
    }
}

/// Log-log rank-size scatter as a standalone SVG document.
pub fn rank_size_svg(series: &[(&str, &[(usize, f64)])]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 60.0;
    const COLOURS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

    let pts = series.iter().flat_map(|(_, s)| s.iter()).filter(|(_, v)| *v > 0.0);
    let (mut x_hi, mut y_lo, mut y_hi) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(r, v) in pts {
        x_hi = x_hi.max((r as f64).log10());
        y_lo = y_lo.min(v.log10());
        y_hi = y_hi.max(v.log10());
    }
    if !y_lo.is_finite() {
        y_lo = 0.0;
        y_hi = 1.0;
    }
    let (y_lo, y_hi) = (y_lo.floor(), y_hi.ceil().max(y_lo.floor() + 1.0));
    let x_hi = x_hi.ceil().max(1.0);
    let sx = |lr: f64| PAD + lr / x_hi * (W - 2.0 * PAD);
    let sy = |lv: f64| H - PAD - (lv - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <g stroke=\"black\" fill=\"none\"><rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\"/></g>\n",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for d in 0..=(x_hi as i32) {
        svg += &format!("<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">1e{d}</text>\n", sx(d as f64), H - PAD + 16.0);
    }
    for d in (y_lo as i32)..=(y_hi as i32) {
        svg += &format!("<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">1e{d}</text>\n", PAD - 6.0, sy(d as f64) + 4.0);
    }
    svg += &format!("<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">rank</text>\n", W / 2.0, H - 20.0);
    svg += &format!(
        "<text x=\"16\" y=\"{:.1}\" font-size=\"12\" transform=\"rotate(-90 16 {:.1})\" text-anchor=\"middle\">size</text>\n",
        H / 2.0,
        H / 2.0
    );
    for (k, (name, s)) in series.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        svg += &format!("<g fill=\"{colour}\">\n");
        for &(r, v) in s.iter().filter(|(_, v)| *v > 0.0) {
            svg += &format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\"/>\n", sx((r as f64).log10()), sy(v.log10()));
        }
        svg += &format!("<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{name}</text>\n</g>\n", W - PAD - 120.0, PAD + 18.0 * (k as f64 + 1.0));
    }
    svg += "</svg>\n";
    svg
}
