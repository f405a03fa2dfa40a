//! Expected search effort of a randomized pruning policy on a full binary
//! tree with one optimal root-to-leaf path.
//!
//! A policy expands a non-optimal node with probability `eps1` and prunes an
//! optimal node with probability `eps2`. Over a tree of `n` layers:
//! - `a(n)`, `b(n)`: expected explored nodes below an optimal / non-optimal
//!   subtree root;
//! - `c(n)`, `d(n)`: expected explored leaves (leaf relaxations) likewise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Closed forms are replaced by the recurrence this close to a pole.
pub const SINGULAR_RADIUS: f64 = 1e-3;

/// Largest tree the simulator accepts.
pub const MAX_SIM_LAYERS: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneModelParams {
    pub eps1: f64,
    pub eps2: f64,
    /// Tree layers; `n = L + 1` for `L` binary variables.
    pub n: usize,
}

impl PruneModelParams {
    pub fn new(eps1: f64, eps2: f64, n: usize) -> Result<Self> {
        let p = Self { eps1, eps2, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps1", self.eps1), ("eps2", self.eps2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is not a probability")));
            }
        }
        if self.n == 0 {
            return Err(Error::Config("the tree needs at least one layer".into()));
        }
        Ok(())
    }
}

/// `(a, b)` with `a[m-1] = a(m)`.
pub fn recurrence_ab(p: &PruneModelParams) -> (Vec<f64>, Vec<f64>) {
    let (e1, e2) = (p.eps1, p.eps2);
    let mut a = vec![1.0];
    let mut b = vec![1.0];
    for m in 1..p.n {
        b.push(2.0 * e1 * b[m - 1] + 1.0);
        a.push((1.0 - e2) * a[m - 1] + e1 * b[m - 1] + 1.0);
    }
    (a, b)
}

/// `(c, d)` with `c[m-1] = c(m)`.
pub fn recurrence_cd(p: &PruneModelParams) -> (Vec<f64>, Vec<f64>) {
    let (e1, e2) = (p.eps1, p.eps2);
    let mut c = vec![1.0];
    let mut d = vec![1.0];
    for m in 1..p.n {
        d.push(2.0 * e1 * d[m - 1]);
        c.push((1.0 - e2) * c[m - 1] + e1 * d[m - 1]);
    }
    (c, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub value: f64,
    /// True when the point sat near a pole and the recurrence was used.
    pub fallback: bool,
}

pub fn sigma1(eps1: f64, eps2: f64) -> f64 {
    (1.0 - eps1) / (eps2 * (1.0 - 2.0 * eps1))
}

pub fn sigma2(eps1: f64, eps2: f64) -> f64 {
    2.0 * eps1 * eps1 / ((1.0 - 2.0 * eps1 - eps2) * (1.0 - 2.0 * eps1))
}

/// Closed-form `a(n)`, falling back to the recurrence near its poles.
pub fn closed_form_a(p: &PruneModelParams) -> ClosedForm {
    let (e1, e2) = (p.eps1, p.eps2);
    let n = p.n as f64;
    let q = 1.0 - 2.0 * e1;
    let near_half = q.abs() < 2.0 * SINGULAR_RADIUS;
    let value = if e2 == 0.0 && !near_half {
        let r = e1 / q;
        n + r * (n - 1.0 - 2.0 * e1 / q) + e1 * (2.0 * e1).powf(n) / (q * q)
    } else if near_half || e2 < SINGULAR_RADIUS || (q - e2).abs() < SINGULAR_RADIUS {
        let (a, _) = recurrence_ab(p);
        return ClosedForm {
            value: a[p.n - 1],
            fallback: true,
        };
    } else {
        let (s1, s2) = (sigma1(e1, e2), sigma2(e1, e2));
        (1.0 - e2).powf(n - 1.0) * (1.0 - s2 - s1) + s2 * (2.0 * e1).powf(n - 1.0) + s1
    };
    ClosedForm { value, fallback: false }
}

/// `a(n)` at `eps1 = 1/2, eps2 = 0`, the limit of the `eps2 = 0` closed form.
pub fn half_limit_a(n: usize) -> f64 {
    let n = n as f64;
    n + n * (n - 1.0) / 4.0
}

/// The quadratic printed alongside the analysis for the same point. It
/// disagrees with the recurrence from `n = 3`; reported, never asserted.
pub fn half_printed_a(n: usize) -> f64 {
    let n = n as f64;
    0.5 * (n - 1.0) * (n - 1.0) + n
}

/// Upper bound on `c(n)`: `1 + eps1 (1 - (2 eps1)^(n-1)) / (1 - 2 eps1)`.
pub fn leaf_bound(eps1: f64, n: usize) -> f64 {
    let q = 1.0 - 2.0 * eps1;
    if n <= 1 {
        return 1.0;
    }
    if q.abs() < SINGULAR_RADIUS {
        // geometric sum, exact at the pole and stable beside it
        let r = 2.0 * eps1;
        return 1.0 + eps1 * (0..n - 1).map(|k| r.powi(k as i32)).sum::<f64>();
    }
    1.0 + eps1 * (1.0 - (2.0 * eps1).powi(n as i32 - 1)) / q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub trials: usize,
    pub explored_mean: f64,
    pub explored_se: f64,
    pub leaves_mean: f64,
    pub leaves_se: f64,
}

fn simulate(layers: usize, optimal: bool, p: &PruneModelParams, rng: &mut ChaCha8Rng) -> (u64, u64) {
    if layers == 1 {
        return (1, 1);
    }
    let mut explored = 1;
    let mut leaves = 0;
    for child in 0..2 {
        let on_path = optimal && child == 0;
        let keep = if on_path { 1.0 - p.eps2 } else { p.eps1 };
        if rng.gen::<f64>() < keep {
            let (e, l) = simulate(layers - 1, on_path, p, rng);
            explored += e;
            leaves += l;
        }
    }
    (explored, leaves)
}

fn mean_se(sum: u128, sq: u128, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum as f64 / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sq as f64) - nf * mean * mean).max(0.0) / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Sample the pruning model: the root is always explored and each child of
/// an explored node is explored independently, with probability `1 - eps2`
/// on the optimal path and `eps1` elsewhere.
pub fn monte_carlo(p: &PruneModelParams, trials: usize, seed: u64) -> Result<MonteCarlo> {
    p.validate()?;
    if trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    if p.n > MAX_SIM_LAYERS {
        return Err(Error::Config(format!(
            "simulation limited to {MAX_SIM_LAYERS} layers, got {}",
            p.n
        )));
    }
    let base = derive_seed(seed, "monte-carlo");
    // integer sums keep the reduction order-independent
    let (se, sqe, sl, sql) = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(base);
            rng.set_stream(t);
            let (e, l) = simulate(p.n, true, p, &mut rng);
            let (e, l) = (e as u128, l as u128);
            (e, e * e, l, l * l)
        })
        .reduce(|| (0, 0, 0, 0), |x, y| (x.0 + y.0, x.1 + y.1, x.2 + y.2, x.3 + y.3));
    let (explored_mean, explored_se) = mean_se(se, sqe, trials);
    let (leaves_mean, leaves_se) = mean_se(sl, sql, trials);
    Ok(MonteCarlo {
        trials,
        explored_mean,
        explored_se,
        leaves_mean,
        leaves_se,
    })
}

/// One line of the analytic-vs-simulated table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub eps1: f64,
    pub eps2: f64,
    pub n: usize,
    pub a_recurrence: f64,
    pub a_closed: f64,
    pub closed_fallback: bool,
    pub a_simulated: f64,
    pub a_se: f64,
    pub c_recurrence: f64,
    pub c_bound: f64,
    pub c_simulated: f64,
    pub c_se: f64,
}

impl TheoryRow {
    /// Largest deviation of the simulation from either recurrence, in SEs.
    pub fn max_z(&self) -> f64 {
        let z = |sim: f64, exact: f64, se: f64| {
            if se > 0.0 {
                (sim - exact).abs() / se
            } else if (sim - exact).abs() < 1e-9 {
                0.0
            } else {
                f64::INFINITY
            }
        };
        z(self.a_simulated, self.a_recurrence, self.a_se).max(z(self.c_simulated, self.c_recurrence, self.c_se))
    }
}

pub fn theory_row(p: &PruneModelParams, trials: usize, seed: u64) -> Result<TheoryRow> {
    let (a, _) = recurrence_ab(p);
    let (c, _) = recurrence_cd(p);
    let cf = closed_form_a(p);
    let mc = monte_carlo(p, trials, seed)?;
    Ok(TheoryRow {
        eps1: p.eps1,
        eps2: p.eps2,
        n: p.n,
        a_recurrence: a[p.n - 1],
        a_closed: cf.value,
        closed_fallback: cf.fallback,
        a_simulated: mc.explored_mean,
        a_se: mc.explored_se,
        c_recurrence: c[p.n - 1],
        c_bound: leaf_bound(p.eps1, p.n),
        c_simulated: mc.leaves_mean,
        c_se: mc.leaves_se,
    })
}

/// Rows for every `(eps1, eps2)` pair, each simulated on its own sub-seed.
pub fn theory_grid(eps1: &[f64], eps2: &[f64], n: usize, trials: usize, seed: u64) -> Result<Vec<TheoryRow>> {
    let mut rows = Vec::new();
    for &e1 in eps1 {
        for &e2 in eps2 {
            let p = PruneModelParams::new(e1, e2, n)?;
            rows.push(theory_row(&p, trials, derive_seed(seed, &format!("grid/{e1}/{e2}")))?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn p(e1: f64, e2: f64, n: usize) -> PruneModelParams {
        PruneModelParams::new(e1, e2, n).unwrap()
    }

    #[test]
    fn small_cases() {
        let (a, _) = recurrence_ab(&p(1.0 / 3.0, 0.0, 3));
        assert!((a[2] - 35.0 / 9.0).abs() < 1e-12);
        let (a, _) = recurrence_ab(&p(0.0, 0.0, 7));
        assert_eq!(a, (1..=7).map(|m| m as f64).collect::<Vec<_>>());
        let (_, b) = recurrence_ab(&p(0.5, 0.3, 6));
        assert_eq!(b, (1..=6).map(|m| m as f64).collect::<Vec<_>>());
        let (_, d) = recurrence_cd(&p(0.5, 0.3, 6));
        assert!(d.iter().all(|&v| v == 1.0));
        let (c, _) = recurrence_cd(&p(0.4, 0.0, 2));
        assert!((c[1] - 1.4).abs() < 1e-12);
        assert!((leaf_bound(0.4, 2) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn third_closed_form() {
        for n in 1..12 {
            let cf = closed_form_a(&p(1.0 / 3.0, 0.0, n));
            assert!(!cf.fallback);
            let want = 2.0 * n as f64 - 3.0 + 3.0 * (2.0f64 / 3.0).powi(n as i32);
            assert!((cf.value - want).abs() < 1e-9, "n={n}");
        }
        assert!((closed_form_a(&p(1.0 / 3.0, 0.0, 4)).value - 5.592592592).abs() < 1e-8);
    }

    #[test]
    fn closed_form_matches_recurrence() {
        let cf = closed_form_a(&p(0.2, 0.3, 5));
        let (a, _) = recurrence_ab(&p(0.2, 0.3, 5));
        assert!(!cf.fallback);
        assert!((cf.value - a[4]).abs() < 1e-9);
    }

    #[test]
    fn poles_fall_back() {
        for (e1, e2) in [(0.5, 0.2), (0.45, 0.1), (0.3, 0.0005), (0.4996, 0.0)] {
            let cf = closed_form_a(&p(e1, e2, 9));
            assert!(cf.fallback, "({e1}, {e2})");
            assert_eq!(cf.value, recurrence_ab(&p(e1, e2, 9)).0[8]);
        }
    }

    #[test]
    fn half_point() {
        for n in 1..30 {
            let (a, _) = recurrence_ab(&p(0.5, 0.0, n));
            assert!((a[n - 1] - half_limit_a(n)).abs() < 1e-9);
        }
        assert_eq!(half_limit_a(3), 4.5);
        assert_eq!(half_printed_a(3), 5.0);
        assert_eq!(half_limit_a(2), half_printed_a(2));
    }

    #[test]
    fn growth_orders() {
        let ratio = |n: usize| recurrence_ab(&p(0.5, 0.0, n)).0[n - 1] / (n * n) as f64;
        assert!((ratio(50) / ratio(200) - 1.0).abs() < 0.05);
        let lin = |n: usize| recurrence_ab(&p(0.3, 0.0, n)).0[n - 1] / n as f64;
        assert!((lin(100) / lin(400) - 1.0).abs() < 0.05);
    }

    #[test]
    fn leaf_budget_within_three() {
        for e1 in [0.0, 0.1, 0.2, 0.3, 1.0 / 3.0] {
            for e2 in [0.0, 0.5, 1.0] {
                let (c, _) = recurrence_cd(&p(e1, e2, 31));
                assert!(c[30] <= 3.0 + 1e-12);
            }
        }
    }

    #[test]
    fn bound_tight_only_without_misses() {
        for e1 in [0.1, 0.25, 0.4, 0.5] {
            for n in 2..15 {
                let (c0, _) = recurrence_cd(&p(e1, 0.0, n));
                assert!((c0[n - 1] - leaf_bound(e1, n)).abs() < 1e-9);
                let (c1, _) = recurrence_cd(&p(e1, 0.25, n));
                assert!(c1[n - 1] < leaf_bound(e1, n));
            }
        }
    }

    #[test]
    fn simulation_extremes() {
        let mc = monte_carlo(&p(0.0, 0.0, 9), 200, 1).unwrap();
        assert_eq!((mc.explored_mean, mc.explored_se), (9.0, 0.0));
        let mc = monte_carlo(&p(1.0, 0.0, 8), 50, 1).unwrap();
        assert_eq!(mc.explored_mean, 255.0);
        assert_eq!(mc.leaves_mean, 128.0);
        assert!(monte_carlo(&p(0.1, 0.1, 27), 1, 1).is_err());
        assert!(monte_carlo(&p(0.1, 0.1, 5), 0, 1).is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let q = p(0.3, 0.2, 10);
        assert_eq!(monte_carlo(&q, 3000, 5).unwrap(), monte_carlo(&q, 3000, 5).unwrap());
        assert_ne!(monte_carlo(&q, 3000, 5).unwrap(), monte_carlo(&q, 3000, 6).unwrap());
    }

    #[test]
    fn simulation_agrees_on_grid() {
        let rows = theory_grid(&[0.0, 0.2, 0.4, 0.5], &[0.0, 0.5, 1.0], 8, 20_000, 3).unwrap();
        for r in rows {
            assert!(r.max_z() <= 4.0, "{r:?}");
        }
    }

    #[test]
    fn invalid_params() {
        assert!(PruneModelParams::new(1.2, 0.0, 3).is_err());
        assert!(PruneModelParams::new(0.2, -0.1, 3).is_err());
        assert!(PruneModelParams::new(0.2, 0.1, 0).is_err());
    }

    proptest! {
        #[test]
        fn counts_are_nonnegative_and_bounded(e1 in 0.0f64..=1.0, e2 in 0.0f64..=1.0, n in 1usize..25) {
            let q = PruneModelParams::new(e1, e2, n).unwrap();
            let (a, b) = recurrence_ab(&q);
            let (c, d) = recurrence_cd(&q);
            for m in 0..n {
                prop_assert!(a[m] >= 0.0 && b[m] >= 0.0 && c[m] >= 0.0 && d[m] >= 0.0);
                prop_assert!(a[m] <= (1u64 << (m + 1)) as f64);
            }
        }

        #[test]
        fn b_and_d_ignore_eps2(e1 in 0.0f64..=1.0, e2 in 0.0f64..=1.0, n in 1usize..20) {
            let q = PruneModelParams::new(e1, e2, n).unwrap();
            let r = PruneModelParams::new(e1, 0.0, n).unwrap();
            prop_assert!(recurrence_ab(&q).1 == recurrence_ab(&r).1);
            prop_assert!(recurrence_cd(&q).1 == recurrence_cd(&r).1);
        }

        #[test]
        fn leaf_bound_is_linear(e1 in 0.0f64..=0.5, e2 in 0.0f64..=1.0, l in 1usize..=30) {
            let q = PruneModelParams::new(e1, e2, l + 1).unwrap();
            let (c, _) = recurrence_cd(&q);
            prop_assert!(c[l] <= leaf_bound(e1, l + 1) + 1e-9);
            prop_assert!(c[l] <= 1.0 + e1 * l as f64 + 1e-9);
        }

        #[test]
        fn monotone_in_eps(e1 in 0.0f64..0.49, e2 in 0.01f64..=1.0, n in 2usize..15) {
            let base = recurrence_ab(&PruneModelParams::new(e1, e2, n).unwrap()).0[n - 1];
            let more = recurrence_ab(&PruneModelParams::new(e1 + 0.01, e2, n).unwrap()).0[n - 1];
            let fewer = recurrence_ab(&PruneModelParams::new(e1, e2 - 0.01, n).unwrap()).0[n - 1];
            prop_assert!(more >= base && fewer >= base);
        }
    }
}
