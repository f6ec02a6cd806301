//! Checks the analytic gradient of the joint loss against central
//! differences through the full pooling chain.
//!
//!     cargo run --release --example gradcheck -- [samples]

use orient_det::losses::HyperParams;
use orient_det::model::{GRAD_CHECK_FLOOR, GRAD_CHECK_STEP};
use orient_det::pipeline::{run_grad_check, GradCheckSetup};

fn main() -> orient_det::Result<()> {
    let samples = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    for seed in 0..3 {
        let setup = GradCheckSetup {
            samples,
            seed,
            ..Default::default()
        };
        let r = run_grad_check(&setup, &HyperParams::default())?;
        println!(
            "seed {seed}: {} parameters, max relative error {:.2e}, max absolute error {:.2e}",
            r.checked, r.max_rel_error, r.max_abs_error
        );
    }
    println!("step {GRAD_CHECK_STEP:e}, relative-error floor {GRAD_CHECK_FLOOR:e}");
    Ok(())
}
