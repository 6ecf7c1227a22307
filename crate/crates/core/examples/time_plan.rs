//! Prints the resampling time plan: blocks of `jump_len` steps, each
//! descended `n_resample` times with a jump back up between passes.
//!
//! ```text
//! cargo run --example time_plan -- 20 5 3
//! ```

use callipaint::repaint::{build_time_plan, PlanAction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let (steps, jump_len, n_resample) = match args[..] {
        [t, j, r] => (t, j, r),
        _ => (20, 5, 3),
    };
    let plan = build_time_plan(steps, jump_len, n_resample)?;
    let mut line = String::new();
    for action in &plan.actions {
        match action {
            PlanAction::Denoise { t } => line.push_str(&format!("{t} ")),
            PlanAction::JumpForward { from, to } => line.push_str(&format!("| {from}↑{to} | ")),
        }
    }
    println!("T={steps} j={jump_len} r={n_resample}\n{line}");
    println!("{} denoising steps, {} jumps", plan.denoise_count(), plan.jump_count());
    Ok(())
}
