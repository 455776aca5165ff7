//! Head/tail breaks on a brightness histogram, printed as a classification table.
//!
//! ```text
//! cargo run --example headtail_table1
//! ```

use natcity::headtail::{head_tail_breaks, ht_index, TieRule};
use natcity_testkit::table1_histogram;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let values: Vec<f64> = table1_histogram()?.into_iter().map(f64::from).collect();
    let h = head_tail_breaks(&values, 0.5, TieRule::Head)?;
    h.write_csv(std::io::stdout().lock())?;
    println!("\nstop: {:?}, levels with head <= 50%: {}, ht-index: {}", h.stop_reason, h.valid_depth(), ht_index(&h));
    Ok(())
}
