//! Central-difference checks of every training loss in double precision.

use mindqa::harness::{grad_check_suite, GRAD_TOLERANCE};

fn main() -> anyhow::Result<()> {
    for e in grad_check_suite(0)? {
        println!(
            "{:<14} {:>5} coords  max rel err {:.2e}  {}",
            e.name,
            e.coords,
            e.max_rel_error,
            if e.passed { "ok" } else { "FAIL" }
        );
    }
    println!("tolerance {GRAD_TOLERANCE:.0e}");
    Ok(())
}
