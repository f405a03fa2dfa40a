//! The classic two-variable integer program used to illustrate
//! branch-and-bound:
//!
//! ```text
//! maximize 5.5 x1 + 2.1 x2
//! s.t.     -x1 + x2 <= 2
//!          8 x1 + 2 x2 <= 17
//!          x1, x2 >= 0 integer
//! ```
//!
//! The engine minimizes, so objectives are negated. [`toy_oracle`] replays
//! the relaxation values of the textbook tree verbatim; [`ToyProgram`] can run
//! either from that replay table or from the real LP.

use crate::error::{Error, Result};
use crate::problem::{MinlpDefinition, VarBounds};
use crate::relaxation::{AffineExpr, ConicProgram, RelaxedSolution, SocConstraint};

/// Upper box for both variables at the root; loose enough not to bind.
pub const TOY_UPPER: i64 = 10;

pub fn toy_root() -> VarBounds {
    VarBounds::new(vec![0, 0], vec![TOY_UPPER, TOY_UPPER]).expect("static bounds")
}

/// Replay table for the nodes the textbook tree visits.
///
/// The `x1 >= 2` node is not printed in the caption; its relaxation
/// `(2, 0.5)` with value `12.05` comes from the LP above.
pub fn toy_oracle(bounds: &VarBounds) -> Result<RelaxedSolution> {
    let u = TOY_UPPER;
    let key = (bounds.lowers(), bounds.uppers());
    let table: [(&[i64], &[i64], Option<([f64; 2], f64)>); 5] = [
        (&[0, 0], &[u, u], Some(([1.3, 3.3], -14.08))),
        (&[0, 0], &[1, u], Some(([1.0, 3.0], -11.8))),
        (&[2, 0], &[u, u], Some(([2.0, 0.5], -12.05))),
        (&[2, 0], &[u, 0], Some(([2.125, 0.0], -11.6875))),
        (&[2, 1], &[u, u], None),
    ];
    for (lo, hi, val) in table {
        if key.0 == lo && key.1 == hi {
            return Ok(match val {
                Some((x, z)) => RelaxedSolution::optimal(x.to_vec(), z),
                None => RelaxedSolution::infeasible(),
            });
        }
    }
    Err(Error::UnknownNode(bounds.key()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyMode {
    /// Relaxations come from [`toy_oracle`].
    Replay,
    /// Relaxations are solved as LPs.
    Solve,
}

#[derive(Debug, Clone, Copy)]
pub struct ToyProgram {
    pub mode: ToyMode,
}

impl ToyProgram {
    pub fn replay() -> Self {
        Self { mode: ToyMode::Replay }
    }

    pub fn solve() -> Self {
        Self { mode: ToyMode::Solve }
    }
}

impl MinlpDefinition for ToyProgram {
    fn integer_count(&self) -> usize {
        2
    }

    fn instance_id(&self) -> String {
        "toy-program".to_string()
    }

    fn root_bounds(&self) -> VarBounds {
        toy_root()
    }

    fn relax(&self, bounds: &VarBounds) -> Result<ConicProgram> {
        let mut p = ConicProgram::new(2);
        p.objective = vec![-5.5, -2.1];
        for j in 0..2 {
            p.lower[j] = bounds.lower(j) as f64;
            p.upper[j] = bounds.upper(j) as f64;
        }
        // 2 + x1 - x2 >= 0
        p.cones.push(SocConstraint {
            rows: vec![],
            bound: AffineExpr::constant(2.0).with_term(0, 1.0).with_term(1, -1.0),
        });
        // 17 - 8 x1 - 2 x2 >= 0
        p.cones.push(SocConstraint {
            rows: vec![],
            bound: AffineExpr::constant(17.0).with_term(0, -8.0).with_term(1, -2.0),
        });
        Ok(p)
    }

    fn solve_relaxation(&self, bounds: &VarBounds) -> Result<RelaxedSolution> {
        match self.mode {
            ToyMode::Replay => toy_oracle(bounds),
            ToyMode::Solve => {
                let p = self.relax(bounds)?;
                Ok(crate::relaxation::solve_conic_with(&p, &self.solver_settings()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relaxation::SolveStatus;

    fn b(lo: [i64; 2], hi: [i64; 2]) -> VarBounds {
        VarBounds::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    #[test]
    fn replay_values() {
        let root = toy_oracle(&toy_root()).unwrap();
        assert_eq!(root.x, vec![1.3, 3.3]);
        assert_eq!(root.objective, -14.08);

        let left = toy_oracle(&b([0, 0], [1, TOY_UPPER])).unwrap();
        assert_eq!(left.x, vec![1.0, 3.0]);
        assert_eq!(left.objective, -11.8);

        let rl = toy_oracle(&b([2, 0], [TOY_UPPER, 0])).unwrap();
        assert_eq!(rl.objective, -11.6875);

        let rr = toy_oracle(&b([2, 1], [TOY_UPPER, TOY_UPPER])).unwrap();
        assert_eq!(rr.status, SolveStatus::Infeasible);

        assert!(toy_oracle(&b([0, 0], [0, 0])).is_err());
    }

    #[test]
    fn lp_agrees_with_replay_on_every_scripted_node() {
        let u = TOY_UPPER;
        let nodes = [
            toy_root(),
            b([0, 0], [1, u]),
            b([2, 0], [u, u]),
            b([2, 0], [u, 0]),
            b([2, 1], [u, u]),
        ];
        let lp = ToyProgram::solve();
        for n in &nodes {
            let want = toy_oracle(n).unwrap();
            let got = lp.solve_relaxation(n).unwrap();
            assert_eq!(want.status, got.status, "node {n}");
            if want.is_optimal() {
                assert!((want.objective - got.objective).abs() < 1e-6, "node {n}");
                for j in 0..2 {
                    assert!((want.x[j] - got.x[j]).abs() < 1e-5, "node {n}");
                }
            }
        }
    }
}
