//! Imitation training of the pruning classifier on small instances, then
//! deployment on a held-out batch next to exact branch-and-bound.

use lorm::harness::{eval_exact, eval_lorm, oracles, render_summary, source_split, summarize, train_policy};
use lorm::harness::{ExperimentConfig, OutputFormat};

fn main() -> lorm::Result<()> {
    let mut cfg = ExperimentConfig::from_toml("[instances]\nrrhs = 6\nusers = 4\n[split]\ntrain = 30\ntest = 20\n")?;
    cfg.dagger.rounds = 3;
    let seed = 5;
    let (train, test) = source_split(&cfg, seed)?;
    let res = train_policy(&train, &cfg, seed)?;
    for (r, g) in res.validation_gaps.iter().enumerate() {
        println!("round {}: {} samples, validation gap {:.2}%", r + 1, res.dataset_sizes[r], 100.0 * g.max(0.0));
    }
    println!("deploying the round {} policy\n", res.best_round);

    let oracle = oracles(&test)?;
    let mut records = eval_exact(&test, &oracle, "test")?;
    records.extend(eval_lorm(&res.best, &test, &oracle, &cfg.lorm, "lorm", "test")?);
    print!("{}", render_summary(&summarize(&records), OutputFormat::Table));
    Ok(())
}
