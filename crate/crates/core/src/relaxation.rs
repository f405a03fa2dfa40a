//! Continuous conic subproblems and the solver contract.
//!
//! A [`ConicProgram`] minimizes a linear objective over second-order cones,
//! rotated second-order cones and per-variable boxes. Variables whose box is
//! a single point are substituted out before the backend sees the program,
//! so cones that collapse to constants are checked directly. This matters
//! for nodes that switch a resource off: `||w|| <= 0` has no interior and
//! interior-point methods handle it poorly.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `sum(coef * x[idx]) + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(idx: usize, coef: f64) -> Self {
        Self {
            terms: vec![(idx, coef)],
            constant: 0.0,
        }
    }

    pub fn with_term(mut self, idx: usize, coef: f64) -> Self {
        self.terms.push((idx, coef));
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|&(i, _)| i).max()
    }
}

/// `|| (rows[0](x), ..., rows[m-1](x)) ||_2 <= bound(x)`.
///
/// With no rows this is the linear inequality `bound(x) >= 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SocConstraint {
    pub rows: Vec<AffineExpr>,
    pub bound: AffineExpr,
}

/// `|| rows(x) ||_2^2 <= left(x) * right(x)` with `left, right >= 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RotatedConeConstraint {
    pub rows: Vec<AffineExpr>,
    pub left: AffineExpr,
    pub right: AffineExpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub cones: Vec<SocConstraint>,
    pub rotated: Vec<RotatedConeConstraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConicProgram {
    /// An unconstrained program with free variables and a zero objective.
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            objective: vec![0.0; n_vars],
            objective_constant: 0.0,
            cones: Vec::new(),
            rotated: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n_vars],
            upper: vec![f64::INFINITY; n_vars],
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective
            .iter()
            .zip(x)
            .map(|(c, v)| c * v)
            .sum::<f64>()
            + self.objective_constant
    }

    /// Reject dimensionally inconsistent programs.
    pub fn check(&self) -> Result<()> {
        let n = self.n_vars;
        if self.objective.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Precondition(
                "objective and bound vectors must have n_vars entries".into(),
            ));
        }
        if self.objective.iter().any(|c| !c.is_finite()) || !self.objective_constant.is_finite() {
            return Err(Error::Precondition("objective must be finite".into()));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] || self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(Error::Precondition(format!("bad box on variable {j}")));
            }
        }
        let exprs = self
            .cones
            .iter()
            .flat_map(|c| c.rows.iter().chain(std::iter::once(&c.bound)))
            .chain(self.rotated.iter().flat_map(|c| {
                c.rows
                    .iter()
                    .chain(std::iter::once(&c.left))
                    .chain(std::iter::once(&c.right))
            }));
        for e in exprs {
            if e.max_index().is_some_and(|i| i >= n) {
                return Err(Error::Precondition("affine term references a missing variable".into()));
            }
            if !e.constant.is_finite() || e.terms.iter().any(|(_, c)| !c.is_finite()) {
                return Err(Error::Precondition("non-finite affine coefficient".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// Result of a relaxation solve. `x` is empty unless the status is optimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawSolution", into = "RawSolution")]
pub struct RelaxedSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// `+inf` when infeasible, `NaN` on numerical failure.
    pub objective: f64,
}

/// Wire form; the objective is null unless the status is optimal.
#[derive(Serialize, Deserialize)]
struct RawSolution {
    status: SolveStatus,
    x: Vec<f64>,
    objective: Option<f64>,
}

impl From<RelaxedSolution> for RawSolution {
    fn from(s: RelaxedSolution) -> Self {
        Self {
            status: s.status,
            objective: s.objective.is_finite().then_some(s.objective),
            x: s.x,
        }
    }
}

impl From<RawSolution> for RelaxedSolution {
    fn from(r: RawSolution) -> Self {
        match (r.status, r.objective) {
            (SolveStatus::Optimal, Some(z)) => Self::optimal(r.x, z),
            (SolveStatus::Infeasible, _) => Self::infeasible(),
            _ => Self::failure(),
        }
    }
}

impl RelaxedSolution {
    pub fn infeasible() -> Self {
        Self {
            status: SolveStatus::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
        }
    }

    pub fn failure() -> Self {
        Self {
            status: SolveStatus::NumericalFailure,
            x: Vec::new(),
            objective: f64::NAN,
        }
    }

    pub fn optimal(x: Vec<f64>, objective: f64) -> Self {
        Self {
            status: SolveStatus::Optimal,
            x,
            objective,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn is_infeasible(&self) -> bool {
        self.status == SolveStatus::Infeasible
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: u32,
    /// Multiplier applied to both tolerances on the single retry.
    pub retry_factor: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            max_iter: 200,
            retry_factor: 10.0,
        }
    }
}

/// Solve with default tolerances.
pub fn solve_conic(prog: &ConicProgram) -> RelaxedSolution {
    solve_conic_with(prog, &SolverSettings::default())
}

/// Solve `prog`. Never panics on solver trouble: a solve that cannot meet its
/// tolerances is retried once with looser ones and then reported as
/// [`SolveStatus::NumericalFailure`].
pub fn solve_conic_with(prog: &ConicProgram, settings: &SolverSettings) -> RelaxedSolution {
    if prog.check().is_err() {
        return RelaxedSolution::failure();
    }
    let reduced = match Reduced::build(prog) {
        Ok(r) => r,
        Err(Infeasible) => return RelaxedSolution::infeasible(),
    };
    if reduced.n_free == 0 {
        let x = reduced.expand(&[]);
        return RelaxedSolution::optimal(x.clone(), prog.objective_value(&x));
    }
    match reduced.solve(settings, 1.0) {
        Attempt::Done(sol) => sol,
        Attempt::Retry => match reduced.solve(settings, settings.retry_factor) {
            Attempt::Done(sol) => sol,
            Attempt::Retry => RelaxedSolution::failure(),
        },
    }
}

struct Infeasible;

enum Attempt {
    Done(RelaxedSolution),
    Retry,
}

/// Program with fixed variables substituted, in backend form
/// `min q'x  s.t.  b - A x in K`.
struct Reduced<'a> {
    prog: &'a ConicProgram,
    free_of: Vec<Option<usize>>,
    n_free: usize,
    q: Vec<f64>,
    rows_i: Vec<usize>,
    rows_j: Vec<usize>,
    rows_v: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

const CONST_TOL: f64 = 1e-12;

impl<'a> Reduced<'a> {
    fn build(prog: &'a ConicProgram) -> std::result::Result<Self, Infeasible> {
        let mut free_of = vec![None; prog.n_vars];
        let mut n_free = 0;
        for (j, slot) in free_of.iter_mut().enumerate() {
            if prog.lower[j] != prog.upper[j] {
                *slot = Some(n_free);
                n_free += 1;
            }
        }
        let mut r = Reduced {
            prog,
            free_of,
            n_free,
            q: vec![0.0; n_free],
            rows_i: Vec::new(),
            rows_j: Vec::new(),
            rows_v: Vec::new(),
            b: Vec::new(),
            cones: Vec::new(),
        };
        for (j, &c) in prog.objective.iter().enumerate() {
            if let Some(k) = r.free_of[j] {
                r.q[k] = c;
            }
        }

        // Linear inequalities first, as one nonnegative block.
        let mut linear: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for j in 0..prog.n_vars {
            let Some(k) = r.free_of[j] else { continue };
            if prog.lower[j].is_finite() {
                linear.push((vec![(k, 1.0)], -prog.lower[j]));
            }
            if prog.upper[j].is_finite() {
                linear.push((vec![(k, -1.0)], prog.upper[j]));
            }
        }
        let mut socs: Vec<Vec<(Vec<(usize, f64)>, f64)>> = Vec::new();
        for cone in &prog.cones {
            let bound = r.substitute(&cone.bound);
            let rows: Vec<_> = cone.rows.iter().map(|e| r.substitute(e)).collect();
            r.push_cone(bound, rows, &mut linear, &mut socs)?;
        }
        for cone in &prog.rotated {
            // ||v||^2 <= u w  <=>  ||(2v, u - w)|| <= u + w
            let u = r.substitute(&cone.left);
            let w = r.substitute(&cone.right);
            let mut rows: Vec<_> = cone
                .rows
                .iter()
                .map(|e| {
                    let (t, c) = r.substitute(e);
                    (t.into_iter().map(|(k, v)| (k, 2.0 * v)).collect(), 2.0 * c)
                })
                .collect();
            rows.push(combine(&u, &w, -1.0));
            let bound = combine(&u, &w, 1.0);
            r.push_cone(bound, rows, &mut linear, &mut socs)?;
        }

        let mut row = 0;
        if !linear.is_empty() {
            for (terms, c) in &linear {
                r.push_row(row, terms, *c);
                row += 1;
            }
            r.cones.push(SupportedConeT::NonnegativeConeT(linear.len()));
        }
        for cone in &socs {
            for (terms, c) in cone {
                r.push_row(row, terms, *c);
                row += 1;
            }
            r.cones.push(SupportedConeT::SecondOrderConeT(cone.len()));
        }
        Ok(r)
    }

    /// Map onto free variables, folding fixed ones into the constant.
    fn substitute(&self, e: &AffineExpr) -> (Vec<(usize, f64)>, f64) {
        let mut c = e.constant;
        let mut terms = Vec::with_capacity(e.terms.len());
        for &(j, v) in &e.terms {
            match self.free_of[j] {
                Some(k) => terms.push((k, v)),
                None => c += v * self.prog.lower[j],
            }
        }
        (terms, c)
    }

    fn push_cone(
        &self,
        bound: (Vec<(usize, f64)>, f64),
        rows: Vec<(Vec<(usize, f64)>, f64)>,
        linear: &mut Vec<(Vec<(usize, f64)>, f64)>,
        socs: &mut Vec<Vec<(Vec<(usize, f64)>, f64)>>,
    ) -> std::result::Result<(), Infeasible> {
        let all_const = bound.0.is_empty() && rows.iter().all(|(t, _)| t.is_empty());
        if all_const {
            let norm = rows.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
            let scale = 1.0 + norm.abs().max(bound.1.abs());
            return if norm <= bound.1 + CONST_TOL * scale {
                Ok(())
            } else {
                Err(Infeasible)
            };
        }
        if rows.is_empty() {
            linear.push(bound);
        } else {
            let mut cone = Vec::with_capacity(rows.len() + 1);
            cone.push(bound);
            cone.extend(rows);
            socs.push(cone);
        }
        Ok(())
    }

    /// Row of `s = b - A x` equal to `terms . x + c`.
    fn push_row(&mut self, row: usize, terms: &[(usize, f64)], c: f64) {
        for &(k, v) in terms {
            self.rows_i.push(row);
            self.rows_j.push(k);
            self.rows_v.push(-v);
        }
        self.b.push(c);
    }

    fn expand(&self, xr: &[f64]) -> Vec<f64> {
        (0..self.prog.n_vars)
            .map(|j| match self.free_of[j] {
                Some(k) => xr[k],
                None => self.prog.lower[j],
            })
            .collect()
    }

    fn solve(&self, settings: &SolverSettings, loosen: f64) -> Attempt {
        let m = self.b.len();
        let n = self.n_free;
        let p = CscMatrix::<f64>::zeros((n, n));
        let a = CscMatrix::new_from_triplets(
            m,
            n,
            self.rows_i.clone(),
            self.rows_j.clone(),
            self.rows_v.clone(),
        );
        let tol_feas = settings.tol_feas * loosen;
        let tol_gap = settings.tol_gap * loosen;
        let backend = DefaultSettingsBuilder::<f64>::default()
            .verbose(false)
            .max_iter(settings.max_iter)
            .tol_feas(tol_feas)
            .tol_gap_abs(tol_gap)
            .tol_gap_rel(tol_gap)
            .build();
        let Ok(backend) = backend else {
            return Attempt::Retry;
        };
        let Ok(mut solver) = DefaultSolver::new(&p, &self.q, &a, &self.b, &self.cones, backend) else {
            return Attempt::Retry;
        };
        solver.solve();
        let sol = &solver.solution;
        let last_try = loosen > 1.0;
        match sol.status {
            SolverStatus::Solved => self.finish(&sol.x),
            SolverStatus::AlmostSolved if last_try => self.finish(&sol.x),
            SolverStatus::PrimalInfeasible => Attempt::Done(RelaxedSolution::infeasible()),
            SolverStatus::AlmostPrimalInfeasible if last_try => {
                Attempt::Done(RelaxedSolution::infeasible())
            }
            _ => Attempt::Retry,
        }
    }

    fn finish(&self, xr: &[f64]) -> Attempt {
        if xr.iter().any(|v| !v.is_finite()) {
            return Attempt::Retry;
        }
        let x = self.expand(xr);
        let obj = self.prog.objective_value(&x);
        Attempt::Done(RelaxedSolution::optimal(x, obj))
    }
}

fn combine(
    a: &(Vec<(usize, f64)>, f64),
    b: &(Vec<(usize, f64)>, f64),
    sign: f64,
) -> (Vec<(usize, f64)>, f64) {
    let mut terms = a.0.clone();
    terms.extend(b.0.iter().map(|&(k, v)| (k, sign * v)));
    (terms, a.1 + sign * b.1)
}

/// Constraint and box violations of a claimed optimum, by direct substitution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Largest `||rows|| - bound` (or rotated analogue), relative to `1 + |bound|`.
    pub cone_violation: f64,
    /// Largest distance outside a variable's box.
    pub bound_violation: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.cone_violation.max(self.bound_violation)
    }
}

pub fn validate_solution(prog: &ConicProgram, sol: &RelaxedSolution) -> Result<ResidualReport> {
    if !sol.is_optimal() {
        return Err(Error::Precondition(
            "validate_solution needs an optimal solution".into(),
        ));
    }
    if sol.x.len() != prog.n_vars {
        return Err(Error::Precondition("solution dimension mismatch".into()));
    }
    let x = &sol.x;
    let mut cone_violation: f64 = 0.0;
    for c in &prog.cones {
        let norm = c.rows.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
        let t = c.bound.eval(x);
        cone_violation = cone_violation.max((norm - t) / (1.0 + t.abs()));
    }
    for c in &prog.rotated {
        let sq = c.rows.iter().map(|e| e.eval(x).powi(2)).sum::<f64>();
        let (u, w) = (c.left.eval(x), c.right.eval(x));
        cone_violation = cone_violation
            .max((sq - u * w) / (1.0 + (u * w).abs()))
            .max(-u)
            .max(-w);
    }
    let bound_violation = (0..prog.n_vars)
        .map(|j| (prog.lower[j] - x[j]).max(x[j] - prog.upper[j]))
        .fold(0.0f64, f64::max);
    Ok(ResidualReport {
        cone_violation: cone_violation.max(0.0),
        bound_violation: bound_violation.max(0.0),
    })
}
