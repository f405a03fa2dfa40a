//! Leaf relaxations are memoized per instance. A second run over the same
//! instance with a warm table solves only the root, and the table survives a
//! save/load round trip.

use lorm::cran::{generate_feasible, CranConfig};
use lorm::lorm::{lorm_solve, LormConfig};
use lorm::policy::PrunePolicy;
use lorm::table::LeafTable;

fn main() -> lorm::Result<()> {
    let inst = generate_feasible(&CranConfig::new(6, 4), 3, 1)?.remove(0);
    let cfg = LormConfig::default();
    // Keeps every node, so each run visits all 64 leaves.
    let policy = PrunePolicy::constant(cfg.features.len(), &cfg.features.schema_id(), -20.0, 0.5)?;

    let table = LeafTable::new();
    let cold = lorm_solve(&inst, &policy, &cfg, &table)?;
    println!("cold: {} relaxations, table holds {}", cold.stats.relaxations_solved, table.len());
    let warm = lorm_solve(&inst, &policy, &cfg, &table)?;
    println!("warm: {} relaxations, {} hits", warm.stats.relaxations_solved, table.hits());

    let mut buf = Vec::new();
    table.save(&mut buf)?;
    let loaded = LeafTable::load(buf.as_slice())?;
    let again = lorm_solve(&inst, &policy, &cfg, &loaded)?;
    println!("reloaded: {} relaxations, same objective {}", again.stats.relaxations_solved, again.incumbent.objective == cold.incumbent.objective);
    Ok(())
}
