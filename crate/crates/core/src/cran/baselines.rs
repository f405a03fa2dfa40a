//! Heuristic baselines and the brute-force oracle.

use serde::{Deserialize, Serialize};

use super::CranInstance;
use crate::error::{Error, Result};
use crate::problem::{MinlpDefinition, VarBounds};
use crate::relaxation::RelaxedSolution;
use crate::table::{LeafTable, Lookup};

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicResult {
    pub assignment: Vec<i64>,
    pub solution: RelaxedSolution,
    pub objective: f64,
    /// Conic solves actually run (table hits excluded).
    pub conic_solves: usize,
}

struct Budget<'a> {
    inst: &'a CranInstance,
    table: &'a LeafTable,
    solves: usize,
}

impl<'a> Budget<'a> {
    fn relax(&mut self, b: &VarBounds) -> Result<RelaxedSolution> {
        self.solves += 1;
        self.inst.solve_relaxation(b)
    }

    fn leaf(&mut self, a: &[i64]) -> Result<RelaxedSolution> {
        let (sol, how) = self.table.lookup_or_solve(self.inst, a)?;
        if how == Lookup::Solved {
            self.solves += 1;
        }
        Ok(sol)
    }

    fn finish(self, assignment: Vec<i64>, solution: RelaxedSolution) -> Result<HeuristicResult> {
        if !solution.is_optimal() {
            return Err(Error::InfeasibleInstance);
        }
        Ok(HeuristicResult {
            objective: solution.objective,
            assignment,
            solution,
            conic_solves: self.solves,
        })
    }
}

fn root(b: &mut Budget) -> Result<RelaxedSolution> {
    let sol = b.relax(&b.inst.root_bounds())?;
    if !sol.is_optimal() {
        return Err(Error::InfeasibleInstance);
    }
    Ok(sol)
}

/// Relaxation-guided deflation: repeatedly switch off the active RRH with
/// the smallest relaxed `a_l` until the relaxation becomes infeasible.
pub fn rminlp(inst: &CranInstance, table: &LeafTable) -> Result<HeuristicResult> {
    let l = inst.rrhs();
    let mut b = Budget { inst, table, solves: 0 };
    let mut sol = root(&mut b)?;
    let mut bounds = inst.root_bounds();
    loop {
        let values = inst.integer_values(&sol);
        let Some(j) = (0..l)
            .filter(|&j| bounds.upper(j) == 1)
            .min_by(|&x, &y| values[x].total_cmp(&values[y]))
        else {
            break;
        };
        let trial = bounds.fix(j, 0)?;
        let next = b.relax(&trial)?;
        if !next.is_optimal() {
            break;
        }
        bounds = trial;
        sol = next;
    }
    let assignment: Vec<i64> = (0..l).map(|j| bounds.upper(j)).collect();
    let leaf = b.leaf(&assignment)?;
    let out = b.finish(assignment, leaf)?;
    assert!(out.conic_solves <= 3 * l, "rminlp exceeded its solve budget");
    Ok(out)
}

/// Ordering rule for switching RRHs off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GsbfPriority {
    /// `sqrt(kappa_l eta_l / Pc_l) * ||w_l||` with `kappa_l = sum_k ||h_kl||^2`.
    ChannelGain,
    /// `sqrt(Pc_l / (eta_l P_l)) * ||w_l||`.
    FronthaulWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GsbfConfig {
    pub priority: GsbfPriority,
}

impl Default for GsbfConfig {
    fn default() -> Self {
        Self {
            priority: GsbfPriority::ChannelGain,
        }
    }
}

/// RRH priorities from a solution's group beamformer norms; lower is
/// switched off first.
pub fn gsbf_priorities(inst: &CranInstance, x: &[f64], rule: GsbfPriority) -> Vec<f64> {
    let w = inst.beamformers(x);
    let tx = inst.transmit_power(&w);
    let na = inst.antennas();
    (0..inst.rrhs())
        .map(|l| {
            let group = tx[l].sqrt();
            let pc = inst.fronthaul_power[l];
            let eta = inst.efficiency[l];
            match rule {
                GsbfPriority::ChannelGain => {
                    let kappa: f64 = inst
                        .channels
                        .iter()
                        .map(|h| h[l * na..(l + 1) * na].iter().map(|c| c.norm_sqr()).sum::<f64>())
                        .sum();
                    if pc > 0.0 {
                        (kappa * eta / pc).sqrt() * group
                    } else {
                        f64::INFINITY
                    }
                }
                GsbfPriority::FronthaulWeighted => (pc / (eta * inst.max_power[l])).sqrt() * group,
            }
        })
        .collect()
}

/// Group-sparse ordering followed by a binary search on how many of the
/// lowest-priority RRHs can be switched off.
pub fn gsbf(inst: &CranInstance, table: &LeafTable, cfg: &GsbfConfig) -> Result<HeuristicResult> {
    let l = inst.rrhs();
    let mut b = Budget { inst, table, solves: 0 };
    let all_on = vec![1i64; l];
    // With one or two RRHs the all-on leaf stands in for the relaxation so
    // that the search stays within L solves.
    let first = if l <= 2 {
        let s = b.leaf(&all_on)?;
        if !s.is_optimal() {
            return Err(Error::InfeasibleInstance);
        }
        s
    } else {
        root(&mut b)?
    };
    let prio = gsbf_priorities(inst, &first.x, cfg.priority);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&x, &y| prio[x].total_cmp(&prio[y]).then(x.cmp(&y)));
    let pattern = |m: usize| {
        let mut a = all_on.clone();
        for &j in &order[..m] {
            a[j] = 0;
        }
        a
    };
    let (mut lo, mut hi) = (0usize, l - 1);
    let mut best: Option<(Vec<i64>, RelaxedSolution)> = None;
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        let a = pattern(mid);
        let s = b.leaf(&a)?;
        if s.is_optimal() {
            lo = mid;
            best = Some((a, s));
        } else {
            hi = mid - 1;
        }
    }
    let (a, s) = match best {
        Some(found) => found,
        None => (all_on.clone(), b.leaf(&all_on)?),
    };
    let out = b.finish(a, s)?;
    assert!(out.conic_solves <= l, "gsbf exceeded its solve budget");
    Ok(out)
}

/// Global minimum over every on/off pattern.
pub fn exhaustive_oracle(inst: &CranInstance, table: &LeafTable) -> Result<HeuristicResult> {
    let l = inst.rrhs();
    if l > 12 {
        return Err(Error::Precondition(format!("exhaustive oracle limited to 12 RRHs, got {l}")));
    }
    let mut b = Budget { inst, table, solves: 0 };
    let mut best: Option<(Vec<i64>, RelaxedSolution)> = None;
    for mask in 0u32..(1 << l) {
        let a: Vec<i64> = (0..l).map(|j| ((mask >> j) & 1) as i64).collect();
        let s = b.leaf(&a)?;
        if s.is_optimal() && best.as_ref().is_none_or(|(_, bs)| s.objective < bs.objective) {
            best = Some((a, s));
        }
    }
    let (a, s) = best.ok_or(Error::InfeasibleInstance)?;
    b.finish(a, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cran::{generate_feasible, CranConfig};

    fn batch(l: usize, k: usize, n: usize, seed: u64) -> Vec<CranInstance> {
        generate_feasible(&CranConfig::new(l, k), seed, n).unwrap()
    }

    #[test]
    fn oracle_dominates_baselines() {
        for inst in batch(5, 3, 4, 21) {
            let t = LeafTable::new();
            let o = exhaustive_oracle(&inst, &t).unwrap();
            let r = rminlp(&inst, &t).unwrap();
            let g = gsbf(&inst, &t, &GsbfConfig::default()).unwrap();
            assert!(o.objective <= r.objective + 1e-9);
            assert!(o.objective <= g.objective + 1e-9);
            assert!(inst.audit(&o.assignment, &o.solution).unwrap().passes(1e-5));
        }
    }

    #[test]
    fn budgets_hold_with_a_cold_table() {
        for inst in batch(6, 4, 3, 4) {
            let r = rminlp(&inst, &LeafTable::new()).unwrap();
            assert!(r.conic_solves <= 18);
            let g = gsbf(&inst, &LeafTable::new(), &GsbfConfig::default()).unwrap();
            assert!(g.conic_solves <= 6);
        }
    }

    #[test]
    fn single_rrh() {
        let inst = batch(1, 1, 1, 2).remove(0);
        let t = LeafTable::new();
        let o = exhaustive_oracle(&inst, &t).unwrap();
        assert_eq!(o.assignment, vec![1]);
        assert!(o.conic_solves <= 2);
        let g = gsbf(&inst, &LeafTable::new(), &GsbfConfig::default()).unwrap();
        assert_eq!(g.assignment, vec![1]);
        assert_eq!(g.conic_solves, 1);
    }

    #[test]
    fn ordering_ignores_uniform_fronthaul_scaling() {
        let inst = batch(5, 3, 1, 8).remove(0);
        let sol = inst.solve_relaxation(&inst.root_bounds()).unwrap();
        for rule in [GsbfPriority::ChannelGain, GsbfPriority::FronthaulWeighted] {
            let mut scaled = inst.clone();
            for p in &mut scaled.fronthaul_power {
                *p *= 3.5;
            }
            let argsort = |v: Vec<f64>| {
                let mut o: Vec<usize> = (0..v.len()).collect();
                o.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
                o
            };
            assert_eq!(
                argsort(gsbf_priorities(&inst, &sol.x, rule)),
                argsort(gsbf_priorities(&scaled, &sol.x, rule))
            );
        }
    }
}
