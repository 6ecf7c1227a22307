//! The linear β schedule, its cumulative products, and the closed-form
//! forward process x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε.

use callipaint::diffusion::{q_sample, ScheduleId};
use callipaint::rng::SeedStream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schedule = ScheduleId::DEFAULT.build()?;
    println!("{}", ScheduleId::DEFAULT);
    println!("{:>5} {:>10} {:>10} {:>12}", "t", "beta", "alpha_bar", "posterior var");
    for t in [1, 2, 10, 50, 100, 150, 200] {
        println!(
            "{t:>5} {:>10.5} {:>10.5} {:>12.6}",
            schedule.beta(t),
            schedule.alpha_bar(t),
            schedule.posterior_variance(t)
        );
    }

    // Empirical moments of q(x_t | x₀) for a single pixel of ink.
    let x0 = [-1.0f32];
    let n = 50_000;
    let stream = SeedStream::new(0);
    println!(
        "\n{:>5} {:>10} {:>10} {:>10} {:>10}",
        "t", "mean", "expected", "var", "expected"
    );
    for t in [1, 20, 100, 200] {
        let eps = stream.normal_vec("eps", t as u64, n);
        let xs: Vec<f64> = eps
            .iter()
            .map(|&e| f64::from(q_sample(&x0, t, &[e], &schedule).unwrap()[0]))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let ab = schedule.alpha_bar(t);
        println!("{t:>5} {mean:>10.4} {:>10.4} {var:>10.4} {:>10.4}", -ab.sqrt(), 1.0 - ab);
    }
    Ok(())
}
