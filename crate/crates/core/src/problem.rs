//! Integer variable boxes, branching, and the problem-family contract every
//! search routine in this crate is written against.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relaxation::{solve_conic_with, ConicProgram, RelaxedSolution, SolverSettings};

/// Per-variable integer box `lb[j] <= a[j] <= ub[j]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarBounds {
    lower: Vec<i64>,
    upper: Vec<i64>,
}

impl VarBounds {
    pub fn new(lower: Vec<i64>, upper: Vec<i64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidBounds(format!(
                "{} lower bounds but {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(j) = (0..lower.len()).find(|&j| lower[j] > upper[j]) {
            return Err(Error::InvalidBounds(format!(
                "variable {j}: lower {} exceeds upper {}",
                lower[j], upper[j]
            )));
        }
        Ok(Self { lower, upper })
    }

    /// All variables free in `{0, 1}`.
    pub fn binary(n: usize) -> Self {
        Self {
            lower: vec![0; n],
            upper: vec![1; n],
        }
    }

    /// The complete box pinning every variable to `assignment`.
    pub fn fixed(assignment: &[i64]) -> Self {
        Self {
            lower: assignment.to_vec(),
            upper: assignment.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self, j: usize) -> i64 {
        self.lower[j]
    }

    pub fn upper(&self, j: usize) -> i64 {
        self.upper[j]
    }

    pub fn lowers(&self) -> &[i64] {
        &self.lower
    }

    pub fn uppers(&self) -> &[i64] {
        &self.upper
    }

    pub fn is_fixed(&self, j: usize) -> bool {
        self.lower[j] == self.upper[j]
    }

    pub fn is_complete(&self) -> bool {
        self.lower == self.upper
    }

    pub fn is_binary(&self) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .all(|(&l, &u)| 0 <= l && u <= 1)
    }

    /// Lowest-index variable that is not yet fixed.
    pub fn first_free(&self) -> Option<usize> {
        (0..self.len()).find(|&j| !self.is_fixed(j))
    }

    pub fn free_count(&self) -> usize {
        (0..self.len()).filter(|&j| !self.is_fixed(j)).count()
    }

    pub fn contains(&self, assignment: &[i64]) -> bool {
        assignment.len() == self.len()
            && assignment
                .iter()
                .enumerate()
                .all(|(j, &v)| self.lower[j] <= v && v <= self.upper[j])
    }

    /// Is every integer point of `self` also a point of `outer`?
    pub fn is_within(&self, outer: &VarBounds) -> bool {
        self.len() == outer.len()
            && (0..self.len())
                .all(|j| outer.lower[j] <= self.lower[j] && self.upper[j] <= outer.upper[j])
    }

    pub fn assignment(&self) -> Option<Vec<i64>> {
        self.is_complete().then(|| self.lower.clone())
    }

    /// Copy with variable `j` pinned to `value`.
    pub fn fix(&self, j: usize, value: i64) -> Result<Self> {
        if value < self.lower[j] || value > self.upper[j] {
            return Err(Error::InvalidBounds(format!(
                "cannot fix variable {j} to {value} outside [{}, {}]",
                self.lower[j], self.upper[j]
            )));
        }
        let mut out = self.clone();
        out.lower[j] = value;
        out.upper[j] = value;
        Ok(out)
    }

    /// Number of integer points in the box, saturating.
    pub fn lattice_size(&self) -> u128 {
        self.lower
            .iter()
            .zip(&self.upper)
            .fold(1u128, |acc, (&l, &u)| acc.saturating_mul((u - l + 1) as u128))
    }

    /// Compact key: `0`, `1` for fixed binary values, `*` for free binary
    /// variables, `[lb..ub]` otherwise.
    pub fn key(&self) -> String {
        let mut s = String::with_capacity(self.len());
        for j in 0..self.len() {
            let (l, u) = (self.lower[j], self.upper[j]);
            match (l, u) {
                (0, 0) => s.push('0'),
                (1, 1) => s.push('1'),
                (0, 1) => s.push('*'),
                _ if l == u => s.push_str(&format!("[{l}]")),
                _ => s.push_str(&format!("[{l}..{u}]")),
            }
        }
        s
    }
}

impl fmt::Display for VarBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// Split variable `j` of `bounds` at a fractional `pivot`:
/// the left box gets `ub[j] = floor(pivot)`, the right box `lb[j] = ceil(pivot)`.
pub fn branch_partition(bounds: &VarBounds, j: usize, pivot: f64) -> Result<(VarBounds, VarBounds)> {
    if j >= bounds.len() {
        return Err(Error::Branch(format!("variable {j} out of range")));
    }
    if bounds.is_fixed(j) {
        return Err(Error::Branch(format!("variable {j} is already fixed")));
    }
    if !pivot.is_finite() {
        return Err(Error::Branch(format!("non-finite pivot {pivot}")));
    }
    let (lb, ub) = (bounds.lower[j] as f64, bounds.upper[j] as f64);
    if pivot < lb || pivot > ub {
        return Err(Error::Branch(format!(
            "pivot {pivot} outside [{lb}, {ub}] for variable {j}"
        )));
    }
    if pivot.fract() == 0.0 {
        return Err(Error::Branch(format!("integral pivot {pivot} for variable {j}")));
    }
    let mut left = bounds.clone();
    let mut right = bounds.clone();
    left.upper[j] = pivot.floor() as i64;
    right.lower[j] = pivot.ceil() as i64;
    Ok((left, right))
}

/// A node's subproblem: the owning instance plus the node's integer box.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeProblem {
    pub instance_id: String,
    pub bounds: VarBounds,
}

impl NodeProblem {
    pub fn root(instance: &dyn MinlpDefinition) -> Self {
        Self {
            instance_id: instance.instance_id(),
            bounds: instance.root_bounds(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.bounds.is_complete()
    }

    pub fn branch(&self, j: usize, pivot: f64) -> Result<(NodeProblem, NodeProblem)> {
        let (l, r) = branch_partition(&self.bounds, j, pivot)?;
        Ok((
            NodeProblem {
                instance_id: self.instance_id.clone(),
                bounds: l,
            },
            NodeProblem {
                instance_id: self.instance_id.clone(),
                bounds: r,
            },
        ))
    }
}

/// `true` iff every variable is fixed.
pub fn is_complete(node: &NodeProblem) -> bool {
    node.is_complete()
}

/// A mixed-integer conic problem family.
///
/// The integer variables occupy the first `integer_count()` columns of every
/// relaxation program. Implementations are stateless with respect to
/// `relax` / `leaf_evaluate`, so one instance may be shared across threads.
pub trait MinlpDefinition: Sync {
    fn integer_count(&self) -> usize;

    /// Identifier used to key lookup tables and result records.
    fn instance_id(&self) -> String;

    fn root_bounds(&self) -> VarBounds {
        VarBounds::binary(self.integer_count())
    }

    /// The continuous relaxation over `bounds`.
    fn relax(&self, bounds: &VarBounds) -> Result<ConicProgram>;

    fn solver_settings(&self) -> SolverSettings {
        SolverSettings::default()
    }

    fn solve_relaxation(&self, bounds: &VarBounds) -> Result<RelaxedSolution> {
        let program = self.relax(bounds)?;
        Ok(solve_conic_with(&program, &self.solver_settings()))
    }

    /// Solve the continuous problem left once every integer is fixed.
    fn leaf_evaluate(&self, assignment: &[i64]) -> Result<RelaxedSolution> {
        if assignment.len() != self.integer_count() {
            return Err(Error::Precondition(format!(
                "assignment has {} entries, instance has {} integer variables",
                assignment.len(),
                self.integer_count()
            )));
        }
        self.solve_relaxation(&VarBounds::fixed(assignment))
    }

    /// Integer-variable values of a relaxation solution.
    fn integer_values(&self, sol: &RelaxedSolution) -> Vec<f64> {
        sol.x.iter().take(self.integer_count()).copied().collect()
    }

    fn problem_feature_len(&self) -> usize {
        0
    }

    /// Normalized problem data describing integer variable `var`.
    fn problem_feature(&self, _var: usize) -> Vec<f64> {
        Vec::new()
    }
}
