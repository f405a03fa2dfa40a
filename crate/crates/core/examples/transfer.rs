//! Adapting a policy trained with four users to eight users from unlabeled
//! instances only, by imitating its own best finds.

use lorm::harness::{render_summary, source_split, summarize, train_policy, transfer_study};
use lorm::harness::{ExperimentConfig, OutputFormat};

fn main() -> lorm::Result<()> {
    let text = "[instances]\nusers = 4\n[split]\ntrain = 30\ntest = 0\n\
                [transfer]\nunlabeled = 8\ntest = 15\nscratch_train = 0\n[transfer.si]\nrounds = 4\n";
    let cfg = ExperimentConfig::from_toml(text)?;
    let seed = 17;
    let (train, _) = source_split(&cfg, seed)?;
    let source = train_policy(&train, &cfg, seed)?.best;

    let study = transfer_study(&source, &cfg, seed, None)?;
    for (log, score) in study.si.log.iter().zip(&study.si.scores) {
        let solves: usize = log.infos.iter().map(|i| i.leaf_solves).sum();
        println!(
            "round {}: threshold {:.3}, leaf solves {solves}, gap to self-labels {:.2}%",
            log.round + 1,
            log.threshold,
            100.0 * score
        );
    }
    println!();
    print!("{}", render_summary(&summarize(&study.records), OutputFormat::Table));
    Ok(())
}
