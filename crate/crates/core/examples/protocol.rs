//! Runs every method on a synthetic catalog and prints mean AILS.
//!
//! cargo run --release --example protocol -- [seed]

use stylesearch_core::engine::Method;
use stylesearch_core::experiment::{prepare, Setup};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let t = std::time::Instant::now();
    let run = prepare(&Setup::seeded(500, 8, 120, seed))?;
    eprintln!("trained in {:.1}s", t.elapsed().as_secs_f64());
    for m in Method::ALL {
        let r = run.evaluate(m, 4);
        println!(
            "{:<10} mean AILS {:.4}  diversity {:.2}  skipped {}",
            m.name(),
            r.mean_ails.unwrap_or(f64::NAN),
            r.category_diversity,
            r.skipped
        );
    }
    Ok(())
}
