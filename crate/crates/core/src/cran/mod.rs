//! Network power minimization in a cloud radio access network.
//!
//! `L` remote radio heads (RRHs) with `N_l` antennas each serve `K`
//! single-antenna users by coordinated beamforming. Switching RRH `l` off
//! saves its fronthaul power `P^c_l`; the binary variable `a_l` is 1 when the
//! RRH is on. Per node the relaxation is a second-order cone program in
//! `(a, s, w)`:
//!
//! ```text
//! min  sum_l a_l Pc_l + sum_l s_l / eta_l
//! s.t. || (h_k^H w_i)_{i != k}, sigma_k || <= Re(h_k^H w_k) / sqrt(gamma_k)
//!      || (w_lk)_k ||   <= sqrt(P_l) a_l
//!      || (w_lk)_k ||^2 <= s_l
//!      lb_l <= a_l <= ub_l
//! ```

mod baselines;

pub use baselines::{exhaustive_oracle, gsbf, rminlp, GsbfConfig, GsbfPriority, HeuristicResult};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{MinlpDefinition, VarBounds};
use crate::relaxation::{AffineExpr, ConicProgram, RelaxedSolution, RotatedConeConstraint, SocConstraint};
use crate::rng::{derive_seed, sha256_hex};

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FronthaulRule {
    /// A random permutation of `(5 + l)` W, `l = 1..=L`.
    Permutation,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fading {
    Rayleigh,
    /// Every small-scale coefficient is 1.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CranConfig {
    pub rrhs: usize,
    pub users: usize,
    pub antennas: usize,
    pub max_power_w: f64,
    pub fronthaul: FronthaulRule,
    pub efficiency: f64,
    pub sinr_db: f64,
    pub noise_dbm: f64,
    pub half_width_m: f64,
    pub min_distance_m: f64,
    /// `L(d) = intercept + slope * log10(d / 1 km)` in dB.
    pub path_loss_intercept_db: f64,
    pub path_loss_slope: f64,
    pub shadowing_db: f64,
    pub antenna_gain_dbi: f64,
    pub fading: Fading,
}

impl Default for CranConfig {
    fn default() -> Self {
        Self {
            rrhs: 6,
            users: 6,
            antennas: 2,
            max_power_w: 1.0,
            fronthaul: FronthaulRule::Permutation,
            efficiency: 0.25,
            sinr_db: 4.0,
            noise_dbm: -102.0,
            half_width_m: 1000.0,
            min_distance_m: 10.0,
            path_loss_intercept_db: 148.1,
            path_loss_slope: 37.6,
            shadowing_db: 8.0,
            antenna_gain_dbi: 9.0,
            fading: Fading::Rayleigh,
        }
    }
}

impl CranConfig {
    pub fn new(rrhs: usize, users: usize) -> Self {
        Self {
            rrhs,
            users,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.rrhs == 0 || self.users == 0 || self.antennas == 0 {
            return bad("rrhs, users and antennas must be positive");
        }
        if !(self.max_power_w > 0.0) || !(self.efficiency > 0.0) {
            return bad("powers and efficiency must be positive");
        }
        if !self.sinr_db.is_finite() || !self.noise_dbm.is_finite() {
            return bad("sinr and noise must be finite");
        }
        if !(self.half_width_m > 0.0) || !(self.min_distance_m > 0.0) {
            return bad("deployment sizes must be positive");
        }
        if self.min_distance_m >= self.half_width_m {
            return bad("minimum distance must be below the half-width");
        }
        if let FronthaulRule::Fixed(v) = &self.fronthaul {
            if v.len() != self.rrhs || v.iter().any(|p| !(*p >= 0.0)) {
                return bad("fixed fronthaul powers need one non-negative value per RRH");
            }
        }
        Ok(())
    }

    /// Path loss in dB at distance `d_m` meters.
    pub fn path_loss_db(&self, d_m: f64) -> f64 {
        self.path_loss_intercept_db + self.path_loss_slope * (d_m / 1000.0).log10()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CranInstance {
    pub version: u32,
    pub seed: u64,
    pub config: CranConfig,
    pub rrh_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    /// `channels[k]` is `h_k` over all `N = L * N_l` antennas, RRH-major.
    pub channels: Vec<Vec<Complex64>>,
    pub max_power: Vec<f64>,
    pub fronthaul_power: Vec<f64>,
    pub efficiency: Vec<f64>,
    /// Linear scale.
    pub sinr: Vec<f64>,
    /// Noise power in watts.
    pub noise: Vec<f64>,
    #[serde(default)]
    pub digest: String,
}

fn uniform_point(rng: &mut ChaCha8Rng, half: f64) -> [f64; 2] {
    [rng.gen_range(-half..half), rng.gen_range(-half..half)]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Draw an instance. Deterministic given `(cfg, seed)`.
pub fn generate_instance(cfg: &CranConfig, seed: u64) -> Result<CranInstance> {
    cfg.validate()?;
    let mut rng = crate::rng::stream(seed, "cran-instance");
    let half = cfg.half_width_m;
    let rrhs: Vec<_> = (0..cfg.rrhs).map(|_| uniform_point(&mut rng, half)).collect();
    let mut users = Vec::with_capacity(cfg.users);
    while users.len() < cfg.users {
        let p = uniform_point(&mut rng, half);
        if rrhs.iter().all(|&r| dist(p, r) >= cfg.min_distance_m) {
            users.push(p);
        }
    }
    let fronthaul = match &cfg.fronthaul {
        FronthaulRule::Fixed(v) => v.clone(),
        FronthaulRule::Permutation => {
            let mut v: Vec<f64> = (1..=cfg.rrhs).map(|l| 5.0 + l as f64).collect();
            for i in (1..v.len()).rev() {
                let j = rng.gen_range(0..=i);
                v.swap(i, j);
            }
            v
        }
    };
    from_positions(cfg, seed, rrhs, users, fronthaul, &mut rng)
}

/// Build channels for given positions, drawing shadowing and fading from `rng`.
pub fn from_positions(
    cfg: &CranConfig,
    seed: u64,
    rrh_positions: Vec<[f64; 2]>,
    user_positions: Vec<[f64; 2]>,
    fronthaul_power: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<CranInstance> {
    cfg.validate()?;
    if rrh_positions.len() != cfg.rrhs || user_positions.len() != cfg.users {
        return Err(Error::Config("position counts disagree with the config".into()));
    }
    let shadow = Normal::new(0.0, cfg.shadowing_db).map_err(|e| Error::Config(e.to_string()))?;
    let fade = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("static");
    let gain = db_to_linear(cfg.antenna_gain_dbi);
    let mut channels = Vec::with_capacity(cfg.users);
    for &u in &user_positions {
        let mut h = Vec::with_capacity(cfg.rrhs * cfg.antennas);
        for &r in &rrh_positions {
            let d = dist(u, r).max(cfg.min_distance_m);
            let pl = 10f64.powf(-cfg.path_loss_db(d) / 20.0);
            let s = db_to_linear(shadow.sample(rng));
            let scale = pl * (gain * s).sqrt();
            for _ in 0..cfg.antennas {
                let g = match cfg.fading {
                    Fading::Rayleigh => Complex64::new(fade.sample(rng), fade.sample(rng)),
                    Fading::None => Complex64::new(1.0, 0.0),
                };
                h.push(g * scale);
            }
        }
        channels.push(h);
    }
    let noise_w = db_to_linear(cfg.noise_dbm) * 1e-3;
    let mut inst = CranInstance {
        version: INSTANCE_FORMAT_VERSION,
        seed,
        config: cfg.clone(),
        rrh_positions,
        user_positions,
        channels,
        max_power: vec![cfg.max_power_w; cfg.rrhs],
        fronthaul_power,
        efficiency: vec![cfg.efficiency; cfg.rrhs],
        sinr: vec![db_to_linear(cfg.sinr_db); cfg.users],
        noise: vec![noise_w; cfg.users],
        digest: String::new(),
    };
    inst.seal();
    inst.check()?;
    Ok(inst)
}

/// Draw instances until `count` of them are feasible with every RRH on.
/// Instance `i` of the returned batch uses the `i`-th accepted sub-seed.
pub fn generate_feasible(cfg: &CranConfig, seed: u64, count: usize) -> Result<Vec<CranInstance>> {
    let mut out = Vec::with_capacity(count);
    let mut attempt = 0u64;
    let limit = 200 * count as u64 + 200;
    while out.len() < count {
        if attempt >= limit {
            return Err(Error::InfeasibleInstance);
        }
        let s = derive_seed(seed, &format!("instance-gen/{attempt}"));
        attempt += 1;
        let inst = generate_instance(cfg, s)?;
        if inst.all_on_feasible()? {
            out.push(inst);
        }
    }
    Ok(out)
}

impl CranInstance {
    pub fn rrhs(&self) -> usize {
        self.max_power.len()
    }

    pub fn users(&self) -> usize {
        self.sinr.len()
    }

    pub fn antennas(&self) -> usize {
        self.config.antennas
    }

    pub fn total_antennas(&self) -> usize {
        self.rrhs() * self.antennas()
    }

    fn content_digest(&self) -> String {
        let mut c = self.clone();
        c.digest = String::new();
        sha256_hex(&serde_json::to_vec(&c).expect("instance serializes"))
    }

    /// Recompute the digest field.
    pub fn seal(&mut self) {
        self.digest = self.content_digest();
    }

    pub fn check(&self) -> Result<()> {
        let (l, k, n) = (self.rrhs(), self.users(), self.total_antennas());
        let ok = self.channels.len() == k
            && self.channels.iter().all(|h| h.len() == n && h.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
            && self.fronthaul_power.len() == l
            && self.efficiency.len() == l
            && self.noise.len() == k
            && self.rrh_positions.len() == l
            && self.user_positions.len() == k
            && self.max_power.iter().all(|p| *p > 0.0)
            && self.efficiency.iter().all(|p| *p > 0.0)
            && self.noise.iter().all(|p| *p > 0.0)
            && self.sinr.iter().all(|g| *g > 0.0)
            && self.fronthaul_power.iter().all(|p| *p >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Format("inconsistent Cloud-RAN instance".into()))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parse and verify version and digest.
    pub fn from_json(text: &str) -> Result<Self> {
        let inst: CranInstance = serde_json::from_str(text)?;
        if inst.version != INSTANCE_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported instance version {}", inst.version)));
        }
        inst.check()?;
        if inst.digest != inst.content_digest() {
            return Err(Error::Format("instance digest does not match its contents".into()));
        }
        Ok(inst)
    }

    pub fn all_on_feasible(&self) -> Result<bool> {
        Ok(self.leaf_evaluate(&vec![1; self.rrhs()])?.is_optimal())
    }

    // Column layout: a (L), s (L), then w as (user, antenna, re/im).
    fn a_col(&self, l: usize) -> usize {
        l
    }

    fn s_col(&self, l: usize) -> usize {
        self.rrhs() + l
    }

    fn w_col(&self, k: usize, n: usize, imag: bool) -> usize {
        2 * self.rrhs() + 2 * (k * self.total_antennas() + n) + imag as usize
    }

    pub fn variable_count(&self) -> usize {
        2 * self.rrhs() + 2 * self.users() * self.total_antennas()
    }

    /// `(Re, Im)` of `(h_k / sigma_k)^H w_i` as affine expressions.
    fn inner(&self, k: usize, i: usize) -> (AffineExpr, AffineExpr) {
        let sigma = self.noise[k].sqrt();
        let mut re = AffineExpr::constant(0.0);
        let mut im = AffineExpr::constant(0.0);
        for (n, h) in self.channels[k].iter().enumerate() {
            let (hr, hi) = (h.re / sigma, h.im / sigma);
            let (wr, wi) = (self.w_col(i, n, false), self.w_col(i, n, true));
            // conj(h) w = (hr wr + hi wi) + j (hr wi - hi wr)
            re.terms.push((wr, hr));
            re.terms.push((wi, hi));
            im.terms.push((wi, hr));
            im.terms.push((wr, -hi));
        }
        (re, im)
    }

    fn rrh_rows(&self, l: usize) -> Vec<AffineExpr> {
        let na = self.antennas();
        let mut rows = Vec::with_capacity(2 * self.users() * na);
        for k in 0..self.users() {
            for n in l * na..(l + 1) * na {
                rows.push(AffineExpr::var(self.w_col(k, n, false), 1.0));
                rows.push(AffineExpr::var(self.w_col(k, n, true), 1.0));
            }
        }
        rows
    }

    /// The node relaxation over `bounds`.
    pub fn build_node_relaxation(&self, bounds: &VarBounds) -> Result<ConicProgram> {
        let (nl, nk) = (self.rrhs(), self.users());
        if bounds.len() != nl || !bounds.is_binary() {
            return Err(Error::InvalidBounds(format!(
                "expected {nl} binary bounds, got {bounds}"
            )));
        }
        let mut p = ConicProgram::new(self.variable_count());
        for l in 0..nl {
            let a = self.a_col(l);
            p.objective[a] = self.fronthaul_power[l];
            p.lower[a] = bounds.lower(l) as f64;
            p.upper[a] = bounds.upper(l) as f64;
            let s = self.s_col(l);
            p.objective[s] = 1.0 / self.efficiency[l];
            p.lower[s] = 0.0;
            if bounds.upper(l) == 0 {
                p.upper[s] = 0.0;
                let na = self.antennas();
                for k in 0..nk {
                    for n in l * na..(l + 1) * na {
                        for imag in [false, true] {
                            let c = self.w_col(k, n, imag);
                            p.lower[c] = 0.0;
                            p.upper[c] = 0.0;
                        }
                    }
                }
            }
        }
        for k in 0..nk {
            let mut rows = Vec::with_capacity(2 * nk - 1);
            for i in (0..nk).filter(|&i| i != k) {
                let (re, im) = self.inner(k, i);
                rows.push(re);
                rows.push(im);
            }
            rows.push(AffineExpr::constant(1.0));
            let (mut re, _) = self.inner(k, k);
            let scale = 1.0 / self.sinr[k].sqrt();
            for t in &mut re.terms {
                t.1 *= scale;
            }
            p.cones.push(SocConstraint { rows, bound: re });
        }
        for l in 0..nl {
            let rows = self.rrh_rows(l);
            p.cones.push(SocConstraint {
                rows: rows.clone(),
                bound: AffineExpr::var(self.a_col(l), self.max_power[l].sqrt()),
            });
            p.rotated.push(RotatedConeConstraint {
                rows,
                left: AffineExpr::var(self.s_col(l), 1.0),
                right: AffineExpr::constant(1.0),
            });
        }
        Ok(p)
    }

    /// Beamformers `w[k][n]` read from a relaxation solution.
    pub fn beamformers(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        (0..self.users())
            .map(|k| {
                (0..self.total_antennas())
                    .map(|n| Complex64::new(x[self.w_col(k, n, false)], x[self.w_col(k, n, true)]))
                    .collect()
            })
            .collect()
    }

    /// `sum_k || w_lk ||^2` for each RRH.
    pub fn transmit_power(&self, w: &[Vec<Complex64>]) -> Vec<f64> {
        let na = self.antennas();
        (0..self.rrhs())
            .map(|l| {
                w.iter()
                    .map(|wk| wk[l * na..(l + 1) * na].iter().map(|c| c.norm_sqr()).sum::<f64>())
                    .sum()
            })
            .collect()
    }

    /// Achieved SINR per user with the original channels and noise.
    pub fn achieved_sinr(&self, w: &[Vec<Complex64>]) -> Vec<f64> {
        (0..self.users())
            .map(|k| {
                let h = &self.channels[k];
                let gain = |i: usize| -> f64 {
                    h.iter().zip(&w[i]).map(|(a, b)| a.conj() * b).sum::<Complex64>().norm_sqr()
                };
                let interference: f64 = (0..self.users()).filter(|&i| i != k).map(gain).sum();
                gain(k) / (interference + self.noise[k])
            })
            .collect()
    }

    /// Check a claimed leaf solution against the original constraints.
    pub fn audit(&self, assignment: &[i64], sol: &RelaxedSolution) -> Result<Audit> {
        if !sol.is_optimal() {
            return Err(Error::Precondition("audit needs an optimal solution".into()));
        }
        let w = self.beamformers(&sol.x);
        let sinr = self.achieved_sinr(&w);
        let tx = self.transmit_power(&w);
        let sinr_shortfall = sinr
            .iter()
            .zip(&self.sinr)
            .map(|(got, want)| ((want - got) / want).max(0.0))
            .fold(0.0, f64::max);
        let power_excess = tx
            .iter()
            .zip(&self.max_power)
            .zip(assignment)
            .map(|((t, p), &a)| (t.sqrt() - p.sqrt() * a as f64).max(0.0) / p.sqrt())
            .fold(0.0, f64::max);
        let power = network_power(self, assignment, &w);
        let objective_gap = (power - sol.objective).abs() / sol.objective.abs().max(1e-12);
        Ok(Audit {
            sinr_shortfall,
            power_excess,
            objective_gap,
        })
    }
}

/// Relative constraint and objective errors of a leaf solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Audit {
    pub sinr_shortfall: f64,
    /// Amplitude excess relative to `sqrt(P_l)`.
    pub power_excess: f64,
    pub objective_gap: f64,
}

impl Audit {
    pub fn passes(&self, tol: f64) -> bool {
        self.sinr_shortfall <= tol && self.power_excess <= tol && self.objective_gap <= tol
    }
}

/// Fronthaul power of the active RRHs plus amplifier-scaled transmit power.
pub fn network_power(inst: &CranInstance, assignment: &[i64], w: &[Vec<Complex64>]) -> f64 {
    let fronthaul: f64 = assignment
        .iter()
        .zip(&inst.fronthaul_power)
        .filter(|(a, _)| **a == 1)
        .map(|(_, p)| p)
        .sum();
    let tx: f64 = inst
        .transmit_power(w)
        .iter()
        .zip(&inst.efficiency)
        .map(|(t, e)| t / e)
        .sum();
    fronthaul + tx
}

impl MinlpDefinition for CranInstance {
    fn integer_count(&self) -> usize {
        self.rrhs()
    }

    fn instance_id(&self) -> String {
        self.digest.clone()
    }

    fn relax(&self, bounds: &VarBounds) -> Result<ConicProgram> {
        self.build_node_relaxation(bounds)
    }

    fn problem_feature_len(&self) -> usize {
        1
    }

    fn problem_feature(&self, var: usize) -> Vec<f64> {
        let total: f64 = self.fronthaul_power.iter().sum();
        if total > 0.0 {
            vec![self.fronthaul_power[var] * self.rrhs() as f64 / total]
        } else {
            vec![1.0]
        }
    }
}
