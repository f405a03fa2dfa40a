//! Learned branch-and-bound: the root relaxation is solved once, every
//! other node is kept or dropped by the pruning classifier, and only
//! complete assignments are solved, through a [`LeafTable`]. A round that
//! finds no feasible leaf is repeated with a higher threshold.

use serde::{Deserialize, Serialize};

use crate::bnb::{
    select_node, solve_exact, BnbConfig, ChildOrder, Incumbent, NodeList, NodeSelection, PruneReason, SearchNode,
    SearchStats, TraceRecord,
};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureConfig, FeatureMode, FeatureVector, RootRelaxation, TreeState};
use crate::policy::{check_threshold, decide, Decision, PrunePolicy};
use crate::problem::{MinlpDefinition, VarBounds};
use crate::table::{LeafTable, Lookup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EscalationSchedule {
    /// Threshold of round 0.
    pub base: f64,
    pub ratio: f64,
    pub max_rounds: usize,
    /// Run exact branch-and-bound when every round fails.
    pub fallback: bool,
}

impl Default for EscalationSchedule {
    fn default() -> Self {
        Self {
            base: 0.5,
            ratio: 0.8,
            max_rounds: 10,
            fallback: true,
        }
    }
}

impl EscalationSchedule {
    /// One round at `threshold`, no fallback.
    pub fn single(threshold: f64) -> Self {
        Self {
            base: threshold,
            max_rounds: 1,
            fallback: false,
            ..Self::default()
        }
    }

    /// `1 - (1 - base) * ratio^k`.
    pub fn threshold(&self, k: usize) -> f64 {
        1.0 - (1.0 - self.base) * self.ratio.powi(k as i32)
    }

    pub fn validate(&self) -> Result<()> {
        check_threshold(self.base)?;
        if !(self.ratio > 0.0 && self.ratio < 1.0) || self.max_rounds == 0 {
            return Err(Error::Config("escalation needs ratio in (0, 1) and at least one round".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LormConfig {
    pub features: FeatureConfig,
    pub schedule: EscalationSchedule,
    pub child_order: ChildOrder,
    pub exact: BnbConfig,
}

impl Default for LormConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            schedule: EscalationSchedule::default(),
            child_order: ChildOrder::RightFirst,
            exact: BnbConfig::default(),
        }
    }
}

/// A classified node.
#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    pub round: usize,
    pub id: usize,
    pub bounds: VarBounds,
    pub features: FeatureVector,
    pub prune_probability: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone)]
pub struct LormOutcome {
    /// `objective = +inf` if nothing feasible was found.
    pub incumbent: Incumbent,
    pub stats: SearchStats,
    pub trace: Vec<TraceRecord>,
    pub visits: Vec<Visit>,
    pub root: RootRelaxation,
    pub thresholds: Vec<f64>,
}

impl LormOutcome {
    pub fn found(&self) -> bool {
        self.incumbent.is_found()
    }

    /// Bounds keys of the non-root nodes classified in `round`.
    pub fn explored(&self, round: usize) -> std::collections::BTreeSet<String> {
        self.visits
            .iter()
            .filter(|v| v.round == round)
            .map(|v| v.bounds.key())
            .collect()
    }
}

/// Stored result for `assignment`, solving it on a miss.
pub fn table_lookup_or_solve(
    table: &LeafTable,
    assignment: &[i64],
    instance: &dyn MinlpDefinition,
) -> Result<(crate::relaxation::RelaxedSolution, Lookup)> {
    table.lookup_or_solve(instance, assignment)
}

fn check_schema(policy: &PrunePolicy, cfg: &FeatureConfig) -> Result<()> {
    if policy.schema() != cfg.schema_id() || policy.model.input_dim() != cfg.len() {
        return Err(Error::SchemaMismatch {
            expected: format!("{} ({} inputs)", cfg.schema_id(), cfg.len()),
            found: format!("{} ({} inputs)", policy.schema(), policy.model.input_dim()),
        });
    }
    Ok(())
}

/// Split on the lowest free variable.
fn children(node: &SearchNode, next_id: &mut usize) -> Result<(SearchNode, SearchNode)> {
    let j = node
        .bounds
        .first_free()
        .ok_or_else(|| Error::Branch("complete node".into()))?;
    let pivot = node.bounds.lower(j) as f64 + 0.5;
    let out = node.split(j, pivot, (*next_id, *next_id + 1), node.parent_objective)?;
    *next_id += 2;
    Ok(out)
}

struct Round<'a> {
    instance: &'a dyn MinlpDefinition,
    policy: &'a PrunePolicy,
    cfg: &'a LormConfig,
    table: &'a LeafTable,
    root: &'a RootRelaxation,
}

impl Round<'_> {
    fn run(
        &self,
        round: usize,
        threshold: f64,
        stats: &mut SearchStats,
        trace: &mut Vec<TraceRecord>,
        visits: &mut Vec<Visit>,
        inc: &mut Incumbent,
    ) -> Result<()> {
        let mut tree = TreeState::default();
        let mut list = NodeList::new();
        let mut next_id = 1;
        let mut root = SearchNode::root(self.instance.root_bounds());
        root.relaxation = Some(self.root.solution.clone());
        list.push(root);
        while !list.is_empty() {
            let mut node = select_node(&mut list, NodeSelection::DepthFirst)?;
            stats.nodes_explored += 1;
            if !node.is_root() {
                if self.cfg.features.mode == FeatureMode::Full && !node.bounds.is_complete() {
                    node.relaxation = Some(self.instance.solve_relaxation(&node.bounds)?);
                    stats.relaxations_solved += 1;
                }
                let f = match extract_features(&node, &tree, self.root, self.instance, &self.cfg.features) {
                    Ok(f) => f,
                    // A node whose own relaxation failed carries no full-mode
                    // features; its subtree is infeasible or unreliable.
                    Err(Error::Precondition(_)) if node.relaxation.is_some() => {
                        stats.prune_events.push((node.id, PruneReason::Infeasibility));
                        trace.push(TraceRecord::new(&node, None, "prune-by-infeasibility", round));
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let p = self.policy.prune_probability(&f)?;
                let decision = decide(p, threshold);
                visits.push(Visit {
                    round,
                    id: node.id,
                    bounds: node.bounds.clone(),
                    features: f,
                    prune_probability: p,
                    decision,
                });
                if decision == Decision::Prune {
                    stats.prune_events.push((node.id, PruneReason::Policy));
                    trace.push(TraceRecord::new(&node, None, "prune-by-policy", round));
                    continue;
                }
            }
            if let Some(a) = node.bounds.assignment() {
                let (sol, how) = self.table.lookup_or_solve(self.instance, &a)?;
                match how {
                    Lookup::Hit => stats.table_hits += 1,
                    Lookup::Solved => stats.relaxations_solved += 1,
                }
                let label = if sol.is_optimal() && inc.offer(sol.objective, a, sol.x.clone()) {
                    stats.incumbent_updates.push((node.id, sol.objective));
                    tree.incumbent = Some(sol.objective);
                    tree.incumbents_found += 1;
                    "leaf-incumbent"
                } else if sol.is_optimal() {
                    "leaf"
                } else {
                    "leaf-infeasible"
                };
                trace.push(TraceRecord::new(&node, Some(sol.objective), label, round));
                continue;
            }
            trace.push(TraceRecord::new(&node, node.relaxation.as_ref().map(|s| s.objective), "preserve", round));
            let (l, r) = children(&node, &mut next_id)?;
            list.push_children(l, r, self.cfg.child_order);
        }
        Ok(())
    }
}

/// Learned search with threshold escalation and an exact fallback.
pub fn lorm_solve(
    instance: &dyn MinlpDefinition,
    policy: &PrunePolicy,
    cfg: &LormConfig,
    table: &LeafTable,
) -> Result<LormOutcome> {
    check_schema(policy, &cfg.features)?;
    cfg.schedule.validate()?;
    let root_sol = instance.solve_relaxation(&instance.root_bounds())?;
    if root_sol.is_infeasible() {
        return Err(Error::InfeasibleInstance);
    }
    let root = RootRelaxation::new(instance, root_sol)?;
    let mut stats = SearchStats {
        relaxations_solved: 1,
        ..Default::default()
    };
    let mut trace = Vec::new();
    let mut visits = Vec::new();
    let mut inc = Incumbent::default();
    let mut thresholds = Vec::new();
    let runner = Round {
        instance,
        policy,
        cfg,
        table,
        root: &root,
    };
    for k in 0..cfg.schedule.max_rounds {
        let t = cfg.schedule.threshold(k);
        thresholds.push(t);
        stats.rounds = k + 1;
        runner.run(k, t, &mut stats, &mut trace, &mut visits, &mut inc)?;
        if inc.is_found() {
            break;
        }
    }
    if !inc.is_found() && cfg.schedule.fallback {
        let exact = solve_exact(instance, &cfg.exact)?;
        stats.absorb(&exact.stats);
        stats.fell_back = true;
        inc = exact.incumbent;
    }
    Ok(LormOutcome {
        incumbent: inc,
        stats,
        trace,
        visits,
        root,
        thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cran::{exhaustive_oracle, generate_feasible, CranConfig, CranInstance};

    fn instances(n: usize) -> Vec<CranInstance> {
        generate_feasible(&CranConfig::new(4, 3), 77, n).unwrap()
    }

    fn constant(bias: f64) -> PrunePolicy {
        let cfg = FeatureConfig::default();
        PrunePolicy::constant(cfg.len(), &cfg.schema_id(), bias, 0.5).unwrap()
    }

    #[test]
    fn schedule_values() {
        let s = EscalationSchedule::default();
        let want = [0.5, 0.6, 0.68, 0.744];
        for (k, w) in want.iter().enumerate() {
            assert!((s.threshold(k) - w).abs() < 1e-12);
        }
        for k in 0..20 {
            assert!(s.threshold(k + 1) > s.threshold(k) && s.threshold(k) < 1.0);
        }
    }

    #[test]
    fn preserve_all_matches_oracle() {
        for inst in instances(3) {
            let t = LeafTable::new();
            let out = lorm_solve(&inst, &constant(-30.0), &LormConfig::default(), &t).unwrap();
            let o = exhaustive_oracle(&inst, &LeafTable::new()).unwrap();
            assert!((out.incumbent.objective - o.objective).abs() <= 1e-9 * o.objective.abs());
            assert_eq!(out.stats.rounds, 1);
            assert_eq!(out.stats.relaxations_solved, 1 + 16);
            assert_eq!(t.solves(), 16);

            // Warm replay: only the root relaxation is solved.
            let again = lorm_solve(&inst, &constant(-30.0), &LormConfig::default(), &t).unwrap();
            assert_eq!(again.stats.relaxations_solved, 1);
            assert_eq!(t.solves(), 16);
            assert_eq!(again.incumbent, out.incumbent);
        }
    }

    #[test]
    fn prune_all_escalates_then_falls_back() {
        let inst = &instances(1)[0];
        let out = lorm_solve(inst, &constant(30.0), &LormConfig::default(), &LeafTable::new()).unwrap();
        assert_eq!(out.stats.rounds, 10);
        assert!(out.stats.fell_back);
        assert!(out.found());
        assert!((out.thresholds[1] - 0.6).abs() < 1e-12 && (out.thresholds[2] - 0.68).abs() < 1e-12);

        let cfg = LormConfig {
            schedule: EscalationSchedule::single(0.5),
            ..Default::default()
        };
        let out = lorm_solve(inst, &constant(30.0), &cfg, &LeafTable::new()).unwrap();
        assert!(!out.found());
        assert_eq!(out.visits.len(), 2);
        assert_eq!(out.stats.relaxations_solved, 1);
    }

    #[test]
    fn schema_mismatch_is_refused() {
        let inst = &instances(1)[0];
        let p = PrunePolicy::constant(3, "other", 0.0, 0.5).unwrap();
        assert!(matches!(
            lorm_solve(inst, &p, &LormConfig::default(), &LeafTable::new()),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn rounds_grow_the_explored_set() {
        let inst = &instances(1)[0];
        let cfg = FeatureConfig::default();
        let policy = PrunePolicy::new(
            crate::policy::MlpModel::standard(cfg.len(), cfg.schema_id(), 5).unwrap(),
            0.5,
        )
        .unwrap();
        let s = EscalationSchedule::default();
        let mut prev: Option<std::collections::BTreeSet<String>> = None;
        let t = LeafTable::new();
        for k in 0..6 {
            let c = LormConfig {
                schedule: EscalationSchedule::single(s.threshold(k)),
                ..Default::default()
            };
            let out = lorm_solve(inst, &policy, &c, &t).unwrap();
            let set = out.explored(0);
            if let Some(p) = &prev {
                assert!(p.is_subset(&set));
            }
            prev = Some(set);
        }
    }
}
