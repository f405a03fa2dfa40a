//! GSBF and RMINLP heuristics against the enumerated optimum.

use lorm::cran::{exhaustive_oracle, generate_feasible, gsbf, rminlp, CranConfig, GsbfConfig};
use lorm::table::LeafTable;

fn main() -> lorm::Result<()> {
    let instances = generate_feasible(&CranConfig::new(6, 6), 11, 10)?;
    let (mut g_gap, mut r_gap) = (0.0, 0.0);
    println!("{:>3} {:>9} {:>9} {:>5} {:>9} {:>5}", "#", "oracle", "gsbf", "socp", "rminlp", "socp");
    for (i, inst) in instances.iter().enumerate() {
        let o = exhaustive_oracle(inst, &LeafTable::new())?;
        let g = gsbf(inst, &LeafTable::new(), &GsbfConfig::default())?;
        let r = rminlp(inst, &LeafTable::new())?;
        g_gap += (g.objective - o.objective) / o.objective;
        r_gap += (r.objective - o.objective) / o.objective;
        println!(
            "{i:>3} {:>9.4} {:>9.4} {:>5} {:>9.4} {:>5}",
            o.objective, g.objective, g.conic_solves, r.objective, r.conic_solves
        );
    }
    let n = instances.len() as f64;
    println!("mean gap: gsbf {:.2}%, rminlp {:.2}%", 100.0 * g_gap / n, 100.0 * r_gap / n);
    Ok(())
}
