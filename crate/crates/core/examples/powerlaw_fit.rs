//! Fits a power law to a Pareto and an exponential sample and tests both
//! with the bootstrap goodness-of-fit.
//!
//! ```text
//! cargo run --release --example powerlaw_fit -- [seed]
//! ```

use natcity::scaling::{fit_power_law, fit_power_law_at, goodness_of_fit, goodness_of_fit_fixed_xmin, rank_size, rank_size_svg};
use natcity_testkit::{exponential_sampler, pareto_sampler};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);

    let pareto = pareto_sampler(2.5, 1.0, 2000, seed);
    let fit = fit_power_law(&pareto)?;
    let gof = goodness_of_fit(&fit, &pareto, 250, seed)?;
    println!(
        "pareto:      alpha {:.3}, x_min {:.3}, KS {:.4}, p {:.3}, plausible {}",
        fit.alpha, fit.x_min, fit.ks_distance, gof.p_value, gof.plausible
    );

    // The exponential is judged over its whole support, from where it starts.
    let expo = exponential_sampler(1.0, 1.0, 2000, seed);
    let efit = fit_power_law_at(&expo, 1.0)?;
    let egof = goodness_of_fit_fixed_xmin(&efit, &expo, 250, seed)?;
    println!(
        "exponential: alpha {:.3}, x_min {:.3}, KS {:.4}, p {:.3}, plausible {}",
        efit.alpha, efit.x_min, efit.ks_distance, egof.p_value, egof.plausible
    );

    let svg = rank_size_svg(&[("pareto", &rank_size(&pareto)), ("exponential", &rank_size(&expo))]);
    std::fs::write("powerlaw_rank_size.svg", svg)?;
    println!("wrote powerlaw_rank_size.svg");
    Ok(())
}
