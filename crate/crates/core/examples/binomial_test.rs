//! Exact two-sided binomial p-values against chance 1/k.

use callipaint::eval::binomial_p_value;

fn main() {
    println!("{:>4} {:>8} {:>3} {:>12}", "n", "correct", "k", "p");
    for (n, correct, k) in [
        (20, 20, 4),
        (20, 5, 4),
        (20, 10, 4),
        (50, 3, 4),
        (100, 24, 4),
        (100, 6, 4),
        (12, 9, 2),
    ] {
        println!("{n:>4} {correct:>8} {k:>3} {:>12.4e}", binomial_p_value(n, correct, k));
    }
}
