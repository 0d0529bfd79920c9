//! Finite-difference verification of every analytic gradient.
//!
//! cargo run --example gradient_check

use nes_core::gradcheck::run_all;
use nes_core::model::{ModelShape, Variant};

fn main() -> nes_core::Result<()> {
    let shape = ModelShape {
        n_ctx: 3,
        d: 5,
        m_dim: 4,
        k: 6,
        factors: 7,
        l: 5,
        n_classes: 4,
    };
    for v in Variant::ALL {
        let results = run_all(v, &shape, 0, 5)?;
        let worst = results.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).expect("checks ran");
        let failed = results.iter().filter(|r| !r.passed).count();
        println!("{v}: {} checks, {failed} failed, worst {} at {:.2e}", results.len(), worst.name, worst.rel_error);
    }
    Ok(())
}
