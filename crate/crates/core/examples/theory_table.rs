//! Expected nodes explored and leaf relaxations under a randomized pruning
//! policy: recurrences, closed form and simulation side by side.

use lorm::harness::{render_theory, OutputFormat};
use lorm::theory::{half_limit_a, half_printed_a, leaf_bound, recurrence_cd, theory_grid, PruneModelParams};

fn main() -> lorm::Result<()> {
    let rows = theory_grid(&[0.1, 0.2, 1.0 / 3.0, 0.4, 0.5], &[0.0, 0.2, 1.0], 12, 20_000, 1)?;
    print!("{}", render_theory(&rows, OutputFormat::Table));

    println!("\nleaf relaxations c(L+1) against 1 + eps1 * L:");
    for l in [5, 10, 20, 30] {
        let p = PruneModelParams::new(0.5, 0.0, l + 1)?;
        let (c, _) = recurrence_cd(&p);
        println!("  L={l:>2}: c={:.3} bound={:.3} linear={:.3}", c[l], leaf_bound(0.5, l + 1), 1.0 + 0.5 * l as f64);
    }
    println!("\neps1 = 1/2, eps2 = 0: recurrence limit vs printed quadratic");
    for n in [2, 3, 5, 10] {
        println!("  n={n:>2}: {:.2} vs {:.2}", half_limit_a(n), half_printed_a(n));
    }
    Ok(())
}
