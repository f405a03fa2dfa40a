//! Transfer to a new task from unlabeled instances: explore with a raised
//! threshold, label nodes by the best solution found so far, fine-tune.

use std::collections::HashSet;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imitation::{label_node, relative_gap, AggregatedDataset, LabeledSample};
use crate::lorm::{lorm_solve, EscalationSchedule, LormConfig};
use crate::policy::{check_threshold, train, Label, PrunePolicy, TrainConfig};
use crate::problem::MinlpDefinition;
use crate::rng::{derive_seed, sha256_hex};
use crate::table::LeafTable;

/// Per-instance self-label state.
#[derive(Debug, Default)]
pub struct SiState {
    pub instance: String,
    /// Best objective found in any round, `+inf` until one is found.
    pub best: f64,
    /// Assignment achieving `best`; its root-to-leaf chain is the preserve set.
    pub assignment: Option<Vec<i64>>,
    pub table: LeafTable,
}

impl SiState {
    pub fn new(instance: impl Into<String>) -> Self {
        Self {
            instance: instance.into(),
            best: f64::INFINITY,
            assignment: None,
            table: LeafTable::new(),
        }
    }

    pub fn digest(&self) -> String {
        let a = self
            .assignment
            .as_ref()
            .map(|a| a.iter().map(i64::to_string).collect::<Vec<_>>().join(","))
            .unwrap_or_default();
        sha256_hex(format!("{}|{:?}|{a}", self.instance, self.best).as_bytes())
    }
}

/// How the exploration threshold reacts to a round without improvement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// `t <- t / 2`.
    Halve,
    /// `t <- 1 - (1 - t) / 2`, halving the preserve margin.
    HalveMargin,
}

impl ThresholdRule {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Self::Halve => t / 2.0,
            Self::HalveMargin => 1.0 - (1.0 - t) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiConfig {
    pub rounds: usize,
    pub explore_threshold: f64,
    pub rule: ThresholdRule,
    /// Fine-tuning runs at `train.lr * lr_multiplier`.
    pub lr_multiplier: f64,
    /// Source-task training settings.
    pub train: TrainConfig,
    pub o2: [f64; 2],
    /// Relative change of the self-label sum below which a round counts as
    /// no improvement.
    pub same_tolerance: f64,
    pub lorm: LormConfig,
}

impl Default for SiConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            explore_threshold: 0.9,
            rule: ThresholdRule::Halve,
            lr_multiplier: 0.1,
            train: TrainConfig::default(),
            o2: [1.0, 2.0],
            same_tolerance: 1e-6,
            lorm: LormConfig::default(),
        }
    }
}

impl SiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("self-imitation needs at least one round".into()));
        }
        if !(self.explore_threshold > 0.5 && self.explore_threshold < 1.0) {
            return Err(Error::Config(format!(
                "exploration threshold {} outside (0.5, 1)",
                self.explore_threshold
            )));
        }
        if !(self.lr_multiplier > 0.0) {
            return Err(Error::Config("learning-rate multiplier must be positive".into()));
        }
        self.lorm.schedule.validate()
    }
}

/// What one collection pass did on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectInfo {
    /// Objective this pass found, if any.
    pub found: Option<f64>,
    pub improved: bool,
    pub leaf_solves: usize,
    pub table_hits: usize,
}

/// Explore one instance at `threshold` (escalating from it if nothing is
/// found) and label every visited node against the best chain so far.
pub fn collect_si<I: MinlpDefinition>(
    policy: &PrunePolicy,
    instance: &I,
    state: &mut SiState,
    threshold: f64,
    lorm: &LormConfig,
    round: usize,
) -> Result<(Vec<LabeledSample>, CollectInfo)> {
    check_threshold(threshold)?;
    let cfg = LormConfig {
        schedule: EscalationSchedule {
            base: threshold,
            fallback: false,
            ..lorm.schedule
        },
        ..*lorm
    };
    let out = lorm_solve(instance, policy, &cfg, &state.table)?;
    let found = out.found().then_some(out.incumbent.objective);
    let improved = matches!(found, Some(c) if c < state.best);
    if improved {
        state.best = out.incumbent.objective;
        state.assignment = Some(out.incumbent.assignment.clone());
    }
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for v in out.visits {
        let key = v.bounds.key();
        if !seen.insert(key.clone()) {
            continue;
        }
        let label = match &state.assignment {
            Some(a) => label_node(&v.bounds, a),
            None => Label::Prune,
        };
        samples.push(LabeledSample {
            features: v.features,
            label,
            instance: state.instance.clone(),
            node: key,
            round,
        });
    }
    let info = CollectInfo {
        found,
        improved,
        // root-only features: every relaxation after the root is a leaf
        leaf_solves: out.stats.relaxations_solved - 1,
        table_hits: out.stats.table_hits,
    };
    Ok((samples, info))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiRoundLog {
    pub round: usize,
    pub threshold: f64,
    pub infos: Vec<CollectInfo>,
    /// Sum of `best` over instances with a solution, and their count.
    pub label_sum: f64,
    pub labeled: usize,
    pub dataset_size: usize,
    pub final_loss: f64,
    /// Per-instance objective of the fine-tuned policy at deployment settings.
    pub deployed: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct SiResult {
    pub best: PrunePolicy,
    /// 1-based round of `best`.
    pub best_round: usize,
    pub policies: Vec<PrunePolicy>,
    /// Mean gap of each round policy to the final self-labels.
    pub scores: Vec<f64>,
    pub log: Vec<SiRoundLog>,
    pub dataset: AggregatedDataset,
}

/// Resumable session state, written after every round.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    round: usize,
    threshold: f64,
    seed: u64,
    states: Vec<StateRecord>,
    policy: String,
    policies: Vec<String>,
    log: Vec<SiRoundLog>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateRecord {
    instance: String,
    best: Option<f64>,
    assignment: Option<Vec<i64>>,
    digest: String,
}

const CHECKPOINT_VERSION: u32 = 1;

fn label_totals(states: &[SiState]) -> (f64, usize) {
    states
        .iter()
        .filter(|s| s.best.is_finite())
        .fold((0.0, 0), |(s, n), st| (s + st.best, n + 1))
}

fn write_checkpoint(dir: &Path, ck: &Checkpoint, states: &[SiState], dataset: &AggregatedDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("checkpoint.json"), serde_json::to_string_pretty(ck)?)?;
    dataset.write_csv(fs::File::create(dir.join("dataset.csv"))?)?;
    let mut tables = Vec::new();
    for s in states {
        s.table.save(&mut tables)?;
    }
    fs::write(dir.join("tables.jsonl"), tables)?;
    Ok(())
}

fn read_checkpoint(dir: &Path, states: &mut [SiState], seed: u64) -> Result<Option<(Checkpoint, AggregatedDataset)>> {
    let path = dir.join("checkpoint.json");
    if !path.exists() {
        return Ok(None);
    }
    let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {} unsupported", ck.version)));
    }
    if ck.seed != seed || ck.states.len() != states.len() {
        return Err(Error::Config("checkpoint belongs to a different session".into()));
    }
    let tables = LeafTable::load(BufReader::new(fs::File::open(dir.join("tables.jsonl"))?))?;
    for (s, r) in states.iter_mut().zip(&ck.states) {
        if s.instance != r.instance {
            return Err(Error::Config("checkpoint instances differ from the inputs".into()));
        }
        s.best = r.best.unwrap_or(f64::INFINITY);
        s.assignment = r.assignment.clone();
        if s.digest() != r.digest {
            return Err(Error::Format(format!("state digest mismatch for {}", r.instance)));
        }
        s.table.merge(&tables);
    }
    let dataset = AggregatedDataset::read_csv(fs::File::open(dir.join("dataset.csv"))?)?;
    Ok(Some((ck, dataset)))
}

/// Fine-tune `source` on self-labeled data from `instances`.
///
/// Each round collects on every instance with the current policy at the
/// exploration threshold, fine-tunes on everything collected so far, and
/// scores the new policy at deployment settings against the self-labels.
/// With `checkpoint`, progress is saved after each round and a saved
/// session is resumed.
pub fn si_transfer<I: MinlpDefinition>(
    source: &PrunePolicy,
    instances: &[I],
    cfg: &SiConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<SiResult> {
    cfg.validate()?;
    let fc = &cfg.lorm.features;
    if source.schema() != fc.schema_id() || source.model.input_dim() != fc.len() {
        return Err(Error::SchemaMismatch {
            expected: fc.schema_id(),
            found: source.schema().to_string(),
        });
    }
    if instances.is_empty() {
        return Err(Error::Precondition("transfer needs at least one instance".into()));
    }
    let mut states: Vec<SiState> = instances.iter().map(|i| SiState::new(i.instance_id())).collect();
    let mut dataset = AggregatedDataset::default();
    let mut policy = source.clone();
    let mut policies = Vec::new();
    let mut log: Vec<SiRoundLog> = Vec::new();
    let mut threshold = cfg.explore_threshold;
    let mut start = 0;
    if let Some(dir) = checkpoint {
        if let Some((ck, ds)) = read_checkpoint(dir, &mut states, seed)? {
            start = ck.round;
            threshold = ck.threshold;
            policy = PrunePolicy::from_json(&ck.policy, Some(&fc.schema_id()), Some(fc.len()))?;
            policies = ck
                .policies
                .iter()
                .map(|p| PrunePolicy::from_json(p, Some(&fc.schema_id()), Some(fc.len())))
                .collect::<Result<_>>()?;
            log = ck.log;
            dataset = ds;
        }
    }
    let tune = TrainConfig {
        lr: cfg.train.lr * cfg.lr_multiplier,
        ..cfg.train
    };
    let deploy = LormConfig {
        schedule: EscalationSchedule {
            fallback: false,
            ..cfg.lorm.schedule
        },
        ..cfg.lorm
    };
    for round in start..cfg.rounds {
        let before = label_totals(&states);
        let explorer = policy.with_threshold(threshold)?;
        let per: Vec<(Vec<LabeledSample>, CollectInfo)> = states
            .par_iter_mut()
            .zip(instances)
            .map(|(st, inst)| collect_si(&explorer, inst, st, threshold, &cfg.lorm, round))
            .collect::<Result<_>>()?;
        let mut infos = Vec::with_capacity(per.len());
        for (s, info) in per {
            dataset.extend(s);
            infos.push(info);
        }
        let w = dataset.class_weights(cfg.o2)?;
        let (m, report) = train(
            &policy.model,
            &dataset.training_pairs(),
            &w,
            &tune,
            derive_seed(seed, &format!("si-shuffle/{round}")),
        )?;
        policy = PrunePolicy::new(m, cfg.lorm.schedule.base)?;
        let deployed: Vec<Option<f64>> = states
            .par_iter()
            .zip(instances)
            .map(|(st, inst)| {
                let out = lorm_solve(inst, &policy, &deploy, &st.table)?;
                Ok(out.found().then_some(out.incumbent.objective))
            })
            .collect::<Result<_>>()?;
        let after = label_totals(&states);
        let improved = after.1 > before.1
            || (after.1 == before.1 && after.0 < before.0 - cfg.same_tolerance * before.0.abs());
        let used = threshold;
        threshold = if improved {
            cfg.explore_threshold
        } else {
            cfg.rule.apply(threshold)
        };
        log.push(SiRoundLog {
            round,
            threshold: used,
            infos,
            label_sum: after.0,
            labeled: after.1,
            dataset_size: dataset.len(),
            final_loss: report.final_loss().unwrap_or(f64::NAN),
            deployed,
        });
        policies.push(policy.clone());
        if let Some(dir) = checkpoint {
            let ck = Checkpoint {
                version: CHECKPOINT_VERSION,
                round: round + 1,
                threshold,
                seed,
                states: states
                    .iter()
                    .map(|s| StateRecord {
                        instance: s.instance.clone(),
                        best: s.best.is_finite().then_some(s.best),
                        assignment: s.assignment.clone(),
                        digest: s.digest(),
                    })
                    .collect(),
                policy: policy.to_json()?,
                policies: policies.iter().map(PrunePolicy::to_json).collect::<Result<_>>()?,
                log: log.clone(),
            };
            write_checkpoint(dir, &ck, &states, &dataset)?;
        }
    }
    let scores: Vec<f64> = log
        .iter()
        .map(|l| {
            let gaps: Vec<f64> = l
                .deployed
                .iter()
                .zip(&states)
                .filter(|(_, s)| s.best.is_finite())
                .map(|(d, s)| relative_gap(*d, s.best))
                .collect();
            gaps.iter().sum::<f64>() / gaps.len().max(1) as f64
        })
        .collect();
    let best_idx = scores
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &g)| if g < acc.1 { (i, g) } else { acc })
        .0;
    Ok(SiResult {
        best: policies[best_idx].clone(),
        best_round: best_idx + 1,
        policies,
        scores,
        log,
        dataset,
    })
}
