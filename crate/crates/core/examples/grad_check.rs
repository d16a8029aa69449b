//! Finite-difference checks of every differentiable operation.

use depthnet::cli::grad_check_suite;

fn main() -> depthnet::Result<()> {
    let entries = grad_check_suite(2, 0, 1e-5)?;
    for e in &entries {
        println!(
            "{:<20} {} instances  max rel error {:.2e}",
            e.name, e.instances, e.report.max_rel_error
        );
    }
    let worst = entries.iter().map(|e| e.report.max_rel_error).fold(0.0, f64::max);
    println!("worst {worst:.2e} (tolerance 1e-4)");
    Ok(())
}
