//! Certified branch-and-bound on random Cloud-RAN instances, checked against
//! full enumeration and audited against the original constraints.

use lorm::bnb::{solve_exact, BnbConfig};
use lorm::cran::{exhaustive_oracle, generate_feasible, CranConfig};
use lorm::problem::MinlpDefinition;
use lorm::table::LeafTable;

fn main() -> lorm::Result<()> {
    let cfg = CranConfig::new(6, 4);
    let instances = generate_feasible(&cfg, 7, 5)?;
    println!("{:>3} {:>10} {:>10} {:>8} {:>6}  active RRHs", "#", "exact W", "oracle W", "relax", "nodes");
    for (i, inst) in instances.iter().enumerate() {
        let out = solve_exact(inst, &BnbConfig::default())?;
        let oracle = exhaustive_oracle(inst, &LeafTable::new())?;
        let sol = inst.leaf_evaluate(&out.incumbent.assignment)?;
        let audit = inst.audit(&out.incumbent.assignment, &sol)?;
        assert!(audit.passes(1e-5), "{audit:?}");
        println!(
            "{i:>3} {:>10.4} {:>10.4} {:>8} {:>6}  {:?}",
            out.incumbent.objective, oracle.objective, out.stats.relaxations_solved, out.stats.nodes_explored,
            out.incumbent.assignment
        );
    }
    Ok(())
}
