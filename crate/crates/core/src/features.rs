//! Classifier inputs for a search node.
//!
//! Layout, in order:
//! - branching group: value the creating branch fixed, root relaxation value
//!   of the same variable;
//! - problem group: `problem_slots` values from the instance;
//! - tree group (optional): depth / n, incumbent / root objective (0 before
//!   any incumbent), number of incumbents found;
//! - node group (full mode): node objective / root objective, parent's
//!   relaxed value of the branching variable, root relaxed value.

use serde::{Deserialize, Serialize};

use crate::bnb::SearchNode;
use crate::error::{Error, Result};
use crate::problem::MinlpDefinition;
use crate::relaxation::RelaxedSolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Needs no relaxation except the root's.
    RootOnly,
    /// Adds features from the node's own relaxation.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub mode: FeatureMode,
    pub branching: bool,
    pub tree: bool,
    pub problem_slots: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            mode: FeatureMode::RootOnly,
            branching: true,
            tree: false,
            problem_slots: 1,
        }
    }
}

impl FeatureConfig {
    pub fn len(&self) -> usize {
        2 * self.branching as usize
            + self.problem_slots
            + 3 * self.tree as usize
            + 3 * (self.mode == FeatureMode::Full) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Identifier stored with models so they refuse other layouts.
    pub fn schema_id(&self) -> String {
        let mode = match self.mode {
            FeatureMode::RootOnly => "root-only",
            FeatureMode::Full => "full",
        };
        format!(
            "features/v1/{mode}/b{}/t{}/p{}",
            self.branching as u8, self.tree as u8, self.problem_slots
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema: String,
}

/// Search-wide state visible to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TreeState {
    pub incumbent: Option<f64>,
    pub incumbents_found: usize,
}

/// The root relaxation, solved once per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RootRelaxation {
    pub objective: f64,
    pub integer_values: Vec<f64>,
    pub solution: RelaxedSolution,
}

impl RootRelaxation {
    pub fn new(instance: &dyn MinlpDefinition, solution: RelaxedSolution) -> Result<Self> {
        if !solution.is_optimal() {
            return Err(Error::Precondition("root relaxation is not optimal".into()));
        }
        if solution.objective == 0.0 {
            return Err(Error::Degenerate("root relaxation objective is zero".into()));
        }
        Ok(Self {
            objective: solution.objective,
            integer_values: instance.integer_values(&solution),
            solution,
        })
    }

    pub fn solve(instance: &dyn MinlpDefinition) -> Result<Self> {
        let sol = instance.solve_relaxation(&instance.root_bounds())?;
        if sol.is_infeasible() {
            return Err(Error::InfeasibleInstance);
        }
        Self::new(instance, sol)
    }
}

pub fn normalize_objective(z: f64, z_root: f64) -> Result<f64> {
    if z_root == 0.0 {
        return Err(Error::Degenerate("cannot normalize by a zero root objective".into()));
    }
    Ok(z / z_root)
}

pub fn extract_features(
    node: &SearchNode,
    tree: &TreeState,
    root: &RootRelaxation,
    instance: &dyn MinlpDefinition,
    cfg: &FeatureConfig,
) -> Result<FeatureVector> {
    let branch = node
        .branch
        .ok_or_else(|| Error::Precondition("the root node has no features".into()))?;
    let j = branch.var;
    let mut f = Vec::with_capacity(cfg.len());
    if cfg.branching {
        f.push(node.branch_value().expect("non-root"));
        f.push(root.integer_values[j]);
    }
    if cfg.problem_slots > 0 {
        let p = instance.problem_feature(j);
        if p.len() != cfg.problem_slots {
            return Err(Error::SchemaMismatch {
                expected: format!("{} problem features", cfg.problem_slots),
                found: format!("{} problem features", p.len()),
            });
        }
        f.extend(p);
    }
    if cfg.tree {
        f.push(node.depth as f64 / instance.integer_count().max(1) as f64);
        f.push(match tree.incumbent {
            Some(c) => normalize_objective(c, root.objective)?,
            None => 0.0,
        });
        f.push(tree.incumbents_found as f64);
    }
    if cfg.mode == FeatureMode::Full {
        let z = match &node.relaxation {
            Some(s) if s.is_optimal() => s.objective,
            Some(_) => return Err(Error::Precondition("node relaxation is not optimal".into())),
            None => return Err(Error::Precondition("full features need the node relaxation".into())),
        };
        f.push(normalize_objective(z, root.objective)?);
        f.push(branch.pivot);
        f.push(root.integer_values[j]);
    }
    if let Some(bad) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!("feature {bad} is not finite")));
    }
    Ok(FeatureVector {
        values: f,
        schema: cfg.schema_id(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cran::{generate_instance, CranConfig};
    use crate::problem::VarBounds;
    use crate::toy::ToyProgram;

    fn child_fixing(n: usize, j: usize, v: i64) -> SearchNode {
        let root = SearchNode::root(VarBounds::binary(n));
        let mut node = root;
        for i in 0..j {
            let b = node.bounds.fix(i, 1).unwrap();
            node = node.child(i + 1, b, crate::bnb::Branch { var: i, direction: crate::bnb::Direction::Right, pivot: 0.5 }, 0.0);
        }
        let (l, r) = node.split(j, 0.5, (10, 11), 0.0).unwrap();
        if v == 0 { l } else { r }
    }

    #[test]
    fn cran_root_only_layout() {
        let mut inst = generate_instance(&CranConfig::new(3, 2), 1).unwrap();
        inst.fronthaul_power = vec![6.0, 7.0, 8.0];
        let root = RootRelaxation {
            objective: 10.0,
            integer_values: vec![0.2, 0.4, 0.63],
            solution: RelaxedSolution::optimal(vec![], 10.0),
        };
        let node = child_fixing(3, 2, 1);
        let f = extract_features(&node, &TreeState::default(), &root, &inst, &FeatureConfig::default()).unwrap();
        assert_eq!(f.values.len(), 3);
        assert_eq!(f.values[0], 1.0);
        assert_eq!(f.values[1], 0.63);
        assert!((f.values[2] - 8.0 * 3.0 / 21.0).abs() < 1e-12);
        assert!((f.values[2] - 1.142857142857).abs() < 1e-9);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_objective(-14.08, -14.08).unwrap(), 1.0);
        assert_eq!(normalize_objective(4.0, 2.0).unwrap(), 2.0);
        assert!((normalize_objective(-11.8, -14.08).unwrap() - 0.8381).abs() < 1e-4);
        assert!(normalize_objective(1.0, 0.0).is_err());
    }

    #[test]
    fn tree_group_and_full_mode() {
        let toy = ToyProgram::replay();
        let root = RootRelaxation::solve(&toy).unwrap();
        let cfg = FeatureConfig { tree: true, problem_slots: 0, ..Default::default() };
        let (mut left, _) = SearchNode::root(toy.root_bounds()).split(0, 1.3, (1, 2), -14.08).unwrap();
        let f = extract_features(&left, &TreeState::default(), &root, &toy, &cfg).unwrap();
        assert_eq!(f.values, vec![1.0, 1.3, 1.0, 0.0, 0.0]);
        let ts = TreeState { incumbent: Some(-11.8), incumbents_found: 1 };
        let f = extract_features(&left, &ts, &root, &toy, &cfg).unwrap();
        assert!((f.values[3] - 0.8381).abs() < 1e-4);
        assert_eq!(f.values[4], 1.0);

        let full = FeatureConfig { mode: FeatureMode::Full, ..cfg };
        assert!(extract_features(&left, &ts, &root, &toy, &full).is_err());
        left.relaxation = Some(RelaxedSolution::optimal(vec![1.0, 3.0], -11.8));
        let f = extract_features(&left, &ts, &root, &toy, &full).unwrap();
        assert_eq!(f.values.len(), full.len());
        assert_eq!(&f.values[5..], &[-11.8 / -14.08, 1.3, 1.3]);
        assert_ne!(full.schema_id(), cfg.schema_id());

        let r = SearchNode::root(toy.root_bounds());
        assert!(extract_features(&r, &ts, &root, &toy, &cfg).is_err());
    }

    #[test]
    fn zero_root_objective_is_rejected() {
        let toy = ToyProgram::replay();
        assert!(RootRelaxation::new(&toy, RelaxedSolution::optimal(vec![0.0, 0.0], 0.0)).is_err());
    }
}
