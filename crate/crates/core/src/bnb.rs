//! Exact branch-and-bound with exchangeable node selection, variable
//! selection, and the three standard pruning rules.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{branch_partition, MinlpDefinition, VarBounds};
use crate::relaxation::{RelaxedSolution, SolveStatus};

pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// `a[j] <= floor(pivot)`
    Left,
    /// `a[j] >= ceil(pivot)`
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub var: usize,
    pub direction: Direction,
    pub pivot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: usize,
    pub parent: Option<usize>,
    /// Root depth is 1.
    pub depth: usize,
    pub bounds: VarBounds,
    pub branch: Option<Branch>,
    /// Parent's relaxation objective; `-inf` at the root.
    pub parent_objective: f64,
    pub relaxation: Option<RelaxedSolution>,
}

impl SearchNode {
    pub fn root(bounds: VarBounds) -> Self {
        Self {
            id: 0,
            parent: None,
            depth: 1,
            bounds,
            branch: None,
            parent_objective: f64::NEG_INFINITY,
            relaxation: None,
        }
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }

    pub fn child(&self, id: usize, bounds: VarBounds, branch: Branch, parent_objective: f64) -> Self {
        Self {
            id,
            parent: Some(self.id),
            depth: self.depth + 1,
            bounds,
            branch: Some(branch),
            parent_objective,
            relaxation: None,
        }
    }

    /// Both children of this node on `var`, split at `pivot`.
    pub fn split(
        &self,
        var: usize,
        pivot: f64,
        ids: (usize, usize),
        parent_objective: f64,
    ) -> Result<(SearchNode, SearchNode)> {
        let (l, r) = branch_partition(&self.bounds, var, pivot)?;
        let mk = |direction| Branch { var, direction, pivot };
        Ok((
            self.child(ids.0, l, mk(Direction::Left), parent_objective),
            self.child(ids.1, r, mk(Direction::Right), parent_objective),
        ))
    }

    /// Value the creating branch pinned its variable towards: the new upper
    /// bound for a left child, the new lower bound for a right child.
    /// For binary variables this is the fixed 0/1 value.
    pub fn branch_value(&self) -> Option<f64> {
        self.branch.map(|b| match b.direction {
            Direction::Left => self.bounds.upper(b.var) as f64,
            Direction::Right => self.bounds.lower(b.var) as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    /// `+inf` until an integral solution is found.
    pub objective: f64,
    pub assignment: Vec<i64>,
    pub solution: Vec<f64>,
}

impl Default for Incumbent {
    fn default() -> Self {
        Self {
            objective: f64::INFINITY,
            assignment: Vec::new(),
            solution: Vec::new(),
        }
    }
}

impl Incumbent {
    pub fn is_found(&self) -> bool {
        self.objective.is_finite()
    }

    /// Replace if strictly better. Returns whether it changed.
    pub fn offer(&mut self, objective: f64, assignment: Vec<i64>, solution: Vec<f64>) -> bool {
        if objective < self.objective {
            *self = Self {
                objective,
                assignment,
                solution,
            };
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneReason {
    Bound,
    Infeasibility,
    Integrality,
    /// Learned policy decision.
    Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneDecision {
    Prune(PruneReason),
    Preserve,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub nodes_explored: usize,
    /// Conic solves requested by the search (root, internal, and leaf).
    pub relaxations_solved: usize,
    pub table_hits: usize,
    pub numerical_failures: Vec<usize>,
    pub incumbent_updates: Vec<(usize, f64)>,
    pub prune_events: Vec<(usize, PruneReason)>,
    /// Escalation rounds run by the learned search (1 if the first succeeds).
    pub rounds: usize,
    pub fell_back: bool,
}

impl SearchStats {
    pub fn prune_count(&self, reason: PruneReason) -> usize {
        self.prune_events.iter().filter(|(_, r)| *r == reason).count()
    }

    pub fn absorb(&mut self, other: &SearchStats) {
        self.nodes_explored += other.nodes_explored;
        self.relaxations_solved += other.relaxations_solved;
        self.table_hits += other.table_hits;
        self.numerical_failures.extend(&other.numerical_failures);
        self.incumbent_updates.extend(&other.incumbent_updates);
        self.prune_events.extend(&other.prune_events);
    }
}

/// One line of the tree log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub branch_var: Option<usize>,
    pub branch_dir: Option<Direction>,
    pub bounds: String,
    /// Relaxation objective if one was solved at this node.
    pub z: Option<f64>,
    pub decision: String,
    #[serde(default)]
    pub round: usize,
}

impl TraceRecord {
    pub fn new(node: &SearchNode, z: Option<f64>, decision: impl Into<String>, round: usize) -> Self {
        Self {
            id: node.id,
            parent: node.parent,
            depth: node.depth,
            branch_var: node.branch.map(|b| b.var),
            branch_dir: node.branch.map(|b| b.direction),
            bounds: node.bounds.key(),
            z: z.filter(|v| v.is_finite()),
            decision: decision.into(),
            round,
        }
    }
}

/// Write one JSON object per line.
pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace(text: &str) -> Result<Vec<TraceRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeSelection {
    DepthFirst,
    BestFirst,
}

/// Which child of a depth-first expansion is explored first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChildOrder {
    RightFirst,
    LeftFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarSelection {
    MostFractional,
    LowestIndex,
}

/// The unexplored list.
#[derive(Debug, Default)]
pub struct NodeList {
    entries: Vec<(u64, SearchNode)>,
    seq: u64,
}

impl NodeList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, node: SearchNode) {
        self.entries.push((self.seq, node));
        self.seq += 1;
    }

    /// Push both children so that `order` decides which one a depth-first
    /// pop returns first.
    pub fn push_children(&mut self, left: SearchNode, right: SearchNode, order: ChildOrder) {
        match order {
            ChildOrder::RightFirst => {
                self.push(left);
                self.push(right);
            }
            ChildOrder::LeftFirst => {
                self.push(right);
                self.push(left);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Depth-first pops the most recently pushed node; best-first pops the node
/// with the smallest parent relaxation objective, ties by insertion order.
pub fn select_node(list: &mut NodeList, policy: NodeSelection) -> Result<SearchNode> {
    if list.entries.is_empty() {
        return Err(Error::Precondition("select_node on an empty list".into()));
    }
    let idx = match policy {
        NodeSelection::DepthFirst => list.entries.len() - 1,
        NodeSelection::BestFirst => {
            let mut best = 0;
            for (i, (seq, node)) in list.entries.iter().enumerate() {
                let (bseq, bnode) = &list.entries[best];
                let better = node.parent_objective < bnode.parent_objective
                    || (node.parent_objective == bnode.parent_objective && seq < bseq);
                if better {
                    best = i;
                }
            }
            best
        }
    };
    Ok(list.entries.remove(idx).1)
}

fn fractionality(v: f64) -> f64 {
    (v - v.floor()).min(v.ceil() - v)
}

/// Pick a branching variable among values further than the integrality
/// tolerance from an integer. Ties go to the lowest index.
pub fn select_fractional_variable(values: &[f64], policy: VarSelection) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in values.iter().enumerate() {
        let f = fractionality(v);
        if f <= INTEGRALITY_TOL {
            continue;
        }
        match policy {
            VarSelection::LowestIndex => return Ok(j),
            VarSelection::MostFractional => {
                if best.is_none_or(|(_, bf)| f > bf) {
                    best = Some((j, f));
                }
            }
        }
    }
    best.map(|(j, _)| j)
        .ok_or_else(|| Error::Precondition("no fractional variable to branch on".into()))
}

pub fn is_integral(values: &[f64]) -> bool {
    values.iter().all(|&v| fractionality(v) <= INTEGRALITY_TOL)
}

/// The standard rules, checked in the order infeasibility, bound,
/// integrality. An integral node updates `inc` before it is pruned.
pub fn standard_prune_decision(
    node: &SearchNode,
    sol: &RelaxedSolution,
    integer_values: &[f64],
    inc: &mut Incumbent,
) -> PruneDecision {
    match sol.status {
        SolveStatus::Infeasible => return PruneDecision::Prune(PruneReason::Infeasibility),
        SolveStatus::NumericalFailure => return PruneDecision::Preserve,
        SolveStatus::Optimal => {}
    }
    if sol.objective >= inc.objective {
        return PruneDecision::Prune(PruneReason::Bound);
    }
    if is_integral(integer_values) {
        let assignment: Vec<i64> = integer_values.iter().map(|v| v.round() as i64).collect();
        debug_assert!(node.bounds.contains(&assignment));
        inc.offer(sol.objective, assignment, sol.x.clone());
        return PruneDecision::Prune(PruneReason::Integrality);
    }
    PruneDecision::Preserve
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BnbConfig {
    pub node_selection: NodeSelection,
    pub child_order: ChildOrder,
    pub var_selection: VarSelection,
    /// Stop after this many nodes; the result is then not certified.
    pub max_nodes: Option<usize>,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            node_selection: NodeSelection::BestFirst,
            child_order: ChildOrder::RightFirst,
            var_selection: VarSelection::MostFractional,
            max_nodes: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnbOutcome {
    pub incumbent: Incumbent,
    pub stats: SearchStats,
    pub trace: Vec<TraceRecord>,
    pub root: RelaxedSolution,
}

fn decision_label(d: PruneDecision) -> &'static str {
    match d {
        PruneDecision::Preserve => "preserve",
        PruneDecision::Prune(PruneReason::Bound) => "prune-by-bound",
        PruneDecision::Prune(PruneReason::Infeasibility) => "prune-by-infeasibility",
        PruneDecision::Prune(PruneReason::Integrality) => "prune-by-integrality",
        PruneDecision::Prune(PruneReason::Policy) => "prune-by-policy",
    }
}

/// Certified branch-and-bound over `instance`.
pub fn solve_exact(instance: &dyn MinlpDefinition, cfg: &BnbConfig) -> Result<BnbOutcome> {
    let mut list = NodeList::new();
    let mut stats = SearchStats::default();
    let mut trace = Vec::new();
    let mut inc = Incumbent::default();
    let mut next_id = 1;
    let mut root_sol = None;

    list.push(SearchNode::root(instance.root_bounds()));
    while !list.is_empty() {
        if cfg.max_nodes.is_some_and(|m| stats.nodes_explored >= m) {
            break;
        }
        let node = select_node(&mut list, cfg.node_selection)?;
        stats.nodes_explored += 1;
        let sol = instance.solve_relaxation(&node.bounds)?;
        stats.relaxations_solved += 1;
        if node.is_root() {
            if sol.is_infeasible() {
                return Err(Error::InfeasibleInstance);
            }
            root_sol = Some(sol.clone());
        }
        let values = if sol.is_optimal() {
            instance.integer_values(&sol)
        } else {
            Vec::new()
        };

        let failed = sol.status == SolveStatus::NumericalFailure;
        if failed {
            stats.numerical_failures.push(node.id);
        }
        let decision = standard_prune_decision(&node, &sol, &values, &mut inc);
        if let PruneDecision::Prune(reason) = decision {
            stats.prune_events.push((node.id, reason));
            if reason == PruneReason::Integrality && inc.assignment_matches(&values) {
                stats.incumbent_updates.push((node.id, inc.objective));
            }
        }
        let label = if failed { "preserve-numerical-failure" } else { decision_label(decision) };
        trace.push(TraceRecord::new(&node, Some(sol.objective), label, 0));

        if decision != PruneDecision::Preserve {
            continue;
        }
        // A failed solve gives no pivot; split the lowest free variable at
        // its lower bound and keep the parent's bound for the children.
        let (var, pivot, bound) = if failed {
            match node.bounds.first_free() {
                Some(j) => (j, node.bounds.lower(j) as f64 + 0.5, node.parent_objective),
                None => continue,
            }
        } else {
            let j = select_fractional_variable(&values, cfg.var_selection)?;
            let lo = node.bounds.lower(j) as f64;
            let hi = node.bounds.upper(j) as f64;
            (j, values[j].clamp(lo, hi), sol.objective)
        };
        let (left, right) = node.split(var, pivot, (next_id, next_id + 1), bound)?;
        next_id += 2;
        list.push_children(left, right, cfg.child_order);
    }

    if !inc.is_found() {
        return Err(Error::InfeasibleInstance);
    }
    Ok(BnbOutcome {
        incumbent: inc,
        stats,
        trace,
        root: root_sol.expect("root is always explored first"),
    })
}

impl Incumbent {
    fn assignment_matches(&self, values: &[f64]) -> bool {
        self.assignment.len() == values.len()
            && self
                .assignment
                .iter()
                .zip(values)
                .all(|(&a, &v)| (a as f64 - v).abs() <= INTEGRALITY_TOL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{toy_root, ToyProgram, TOY_UPPER};

    fn node_with_parent_obj(id: usize, z: f64) -> SearchNode {
        let mut n = SearchNode::root(VarBounds::binary(2));
        n.id = id;
        n.parent = Some(0);
        n.parent_objective = z;
        n
    }

    #[test]
    fn prune_rules() {
        let node = SearchNode::root(toy_root());
        let mut inc = Incumbent::default();
        inc.offer(-11.8, vec![1, 3], vec![1.0, 3.0]);
        let sol = RelaxedSolution::optimal(vec![2.125, 0.0], -11.6875);
        assert_eq!(
            standard_prune_decision(&node, &sol, &sol.x, &mut inc),
            PruneDecision::Prune(PruneReason::Bound)
        );

        let sol = RelaxedSolution::infeasible();
        assert_eq!(
            standard_prune_decision(&node, &sol, &[], &mut inc),
            PruneDecision::Prune(PruneReason::Infeasibility)
        );

        let mut fresh = Incumbent::default();
        let sol = RelaxedSolution::optimal(vec![1.0, 3.0], -11.8);
        assert_eq!(
            standard_prune_decision(&node, &sol, &sol.x, &mut fresh),
            PruneDecision::Prune(PruneReason::Integrality)
        );
        assert_eq!(fresh.objective, -11.8);
        assert_eq!(fresh.assignment, vec![1, 3]);

        let sol = RelaxedSolution::optimal(vec![1.3, 3.3], -14.08);
        assert_eq!(
            standard_prune_decision(&node, &sol, &sol.x, &mut fresh),
            PruneDecision::Preserve
        );
    }

    #[test]
    fn node_selection() {
        let mut list = NodeList::new();
        assert!(select_node(&mut list, NodeSelection::DepthFirst).is_err());

        list.push(node_with_parent_obj(1, 0.0));
        assert_eq!(select_node(&mut list, NodeSelection::BestFirst).unwrap().id, 1);

        let root = SearchNode::root(VarBounds::binary(2));
        let (l, r) = root.split(0, 0.5, (1, 2), 0.0).unwrap();
        list.push_children(l, r, ChildOrder::RightFirst);
        let first = select_node(&mut list, NodeSelection::DepthFirst).unwrap();
        assert_eq!(first.branch.unwrap().direction, Direction::Right);

        let mut list = NodeList::new();
        list.push(node_with_parent_obj(1, 5.0));
        list.push(node_with_parent_obj(2, 3.0));
        list.push(node_with_parent_obj(3, 3.0));
        assert_eq!(select_node(&mut list, NodeSelection::BestFirst).unwrap().id, 2);
        assert_eq!(select_node(&mut list, NodeSelection::BestFirst).unwrap().id, 3);
    }

    #[test]
    fn variable_selection() {
        assert_eq!(select_fractional_variable(&[0.5, 0.9], VarSelection::MostFractional).unwrap(), 0);
        assert_eq!(select_fractional_variable(&[0.9, 0.9], VarSelection::MostFractional).unwrap(), 0);
        assert_eq!(select_fractional_variable(&[1.3, 3.3], VarSelection::LowestIndex).unwrap(), 0);
        assert_eq!(select_fractional_variable(&[1.0, 0.6], VarSelection::LowestIndex).unwrap(), 1);
        assert!(select_fractional_variable(&[1.0, 3.0 + 1e-7], VarSelection::MostFractional).is_err());
    }

    #[test]
    fn toy_tree_replay() {
        for cfg in [
            BnbConfig {
                node_selection: NodeSelection::BestFirst,
                var_selection: VarSelection::LowestIndex,
                ..Default::default()
            },
            BnbConfig {
                node_selection: NodeSelection::DepthFirst,
                child_order: ChildOrder::LeftFirst,
                var_selection: VarSelection::LowestIndex,
                ..Default::default()
            },
        ] {
            let out = solve_exact(&ToyProgram::replay(), &cfg).unwrap();
            assert_eq!(out.incumbent.assignment, vec![1, 3]);
            assert_eq!(out.incumbent.objective, -11.8);
            assert_eq!(out.stats.prune_count(PruneReason::Bound), 1);
            assert_eq!(out.stats.prune_count(PruneReason::Infeasibility), 1);
            assert_eq!(out.stats.prune_count(PruneReason::Integrality), 1);
            assert_eq!(out.stats.nodes_explored, 5);
            assert_eq!(out.trace.len(), 5);
            let bound_node = out.stats.prune_events.iter().find(|e| e.1 == PruneReason::Bound).unwrap().0;
            let rec = out.trace.iter().find(|r| r.id == bound_node).unwrap();
            assert_eq!(rec.z, Some(-11.6875));
        }
    }

    #[test]
    fn toy_solved_lp_matches() {
        let cfg = BnbConfig {
            var_selection: VarSelection::LowestIndex,
            ..Default::default()
        };
        let out = solve_exact(&ToyProgram::solve(), &cfg).unwrap();
        assert_eq!(out.incumbent.assignment, vec![1, 3]);
        assert!((out.incumbent.objective + 11.8).abs() < 1e-6);
        assert!(out.root.objective <= out.incumbent.objective);
        let _ = TOY_UPPER;
    }

    #[test]
    fn trace_round_trips_as_json_lines() {
        let out = solve_exact(&ToyProgram::replay(), &BnbConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_trace(&out.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), out.trace.len());
        assert_eq!(read_trace(&text).unwrap(), out.trace);
    }
}
