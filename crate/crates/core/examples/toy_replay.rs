//! Exact branch-and-bound on the two-variable integer program
//! `max 5.5 x1 + 2.1 x2` with its scripted relaxations, printing every node.

use lorm::bnb::{solve_exact, BnbConfig, NodeSelection, PruneReason, VarSelection};
use lorm::toy::ToyProgram;

fn main() -> lorm::Result<()> {
    let cfg = BnbConfig {
        node_selection: NodeSelection::BestFirst,
        var_selection: VarSelection::LowestIndex,
        ..Default::default()
    };
    let out = solve_exact(&ToyProgram::replay(), &cfg)?;
    println!("{:>4} {:>6} {:>5} {:>12} {:>10}  decision", "id", "parent", "depth", "bounds", "z");
    for r in &out.trace {
        let z = r.z.map_or("-".to_string(), |z| format!("{z:.4}"));
        let parent = r.parent.map_or("-".to_string(), |p| p.to_string());
        println!("{:>4} {:>6} {:>5} {:>12} {:>10}  {}", r.id, parent, r.depth, r.bounds, z, r.decision);
    }
    println!(
        "solution x = {:?}, objective {} (maximized value {})",
        out.incumbent.assignment,
        out.incumbent.objective,
        -out.incumbent.objective
    );
    for reason in [PruneReason::Bound, PruneReason::Infeasibility, PruneReason::Integrality] {
        println!("{reason:?} prunes: {}", out.stats.prune_count(reason));
    }
    Ok(())
}
