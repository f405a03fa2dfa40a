//! DAgger training of the pruning policy from optimal-node labels.

use std::collections::HashSet;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnb::{solve_exact, BnbConfig, SearchNode};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector, TreeState};
use crate::lorm::{lorm_solve, EscalationSchedule, LormConfig};
use crate::policy::{train, ClassWeights, Decision, Label, MlpModel, PrunePolicy, TrainConfig};
use crate::problem::{MinlpDefinition, VarBounds};
use crate::rng::derive_seed;
use crate::table::LeafTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub label: Label,
    pub instance: String,
    /// Bounds key of the node.
    pub node: String,
    pub round: usize,
}

/// Append-only training set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregatedDataset {
    pub samples: Vec<LabeledSample>,
}

impl AggregatedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn extend(&mut self, more: impl IntoIterator<Item = LabeledSample>) {
        self.samples.extend(more);
    }

    pub fn preserve_count(&self) -> usize {
        self.samples.iter().filter(|s| s.label == Label::Preserve).count()
    }

    pub fn class_weights(&self, o2: [f64; 2]) -> Result<ClassWeights> {
        ClassWeights::from_counts(self.preserve_count(), self.len(), o2)
    }

    pub fn training_pairs(&self) -> Vec<(&[f64], Label)> {
        self.samples.iter().map(|s| (s.features.values.as_slice(), s.label)).collect()
    }

    /// Columns: schema, instance, node, round, label, f0, f1, ...
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.samples.first().map_or(0, |s| s.features.values.len());
        let mut header = vec!["schema".to_string(), "instance".into(), "node".into(), "round".into(), "label".into()];
        header.extend((0..d).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for s in &self.samples {
            if s.features.values.len() != d {
                return Err(Error::Format("samples of mixed feature length".into()));
            }
            let mut rec = vec![
                s.features.schema.clone(),
                s.instance.clone(),
                s.node.clone(),
                s.round.to_string(),
                match s.label {
                    Label::Prune => "prune".into(),
                    Label::Preserve => "preserve".into(),
                },
            ];
            rec.extend(s.features.values.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() < 5 {
                return Err(Error::Format("dataset row has too few columns".into()));
            }
            let label = match &rec[4] {
                "prune" => Label::Prune,
                "preserve" => Label::Preserve,
                other => return Err(Error::Format(format!("unknown label {other:?}"))),
            };
            let values = rec
                .iter()
                .skip(5)
                .map(|v| v.parse::<f64>().map_err(|e| Error::Format(format!("feature {v:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            samples.push(LabeledSample {
                features: FeatureVector {
                    values,
                    schema: rec[0].to_string(),
                },
                instance: rec[1].to_string(),
                node: rec[2].to_string(),
                round: rec[3].parse().map_err(|e| Error::Format(format!("round: {e}")))?,
                label,
            });
        }
        Ok(Self { samples })
    }
}

/// The target solution of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceLabel {
    pub assignment: Vec<i64>,
    pub objective: f64,
}

pub fn label_node(bounds: &VarBounds, target: &[i64]) -> Label {
    if bounds.contains(target) {
        Label::Preserve
    } else {
        Label::Prune
    }
}

/// Preserve exactly the nodes whose box contains `target`.
pub fn label_tree(nodes: &[VarBounds], target: &[i64], root: &VarBounds) -> Result<Vec<Label>> {
    if !root.contains(target) {
        return Err(Error::Precondition("target assignment lies outside the root box".into()));
    }
    Ok(nodes.iter().map(|b| label_node(b, target)).collect())
}

/// Non-root nodes from the root to `target`, splitting the lowest free
/// variable at `lb + 0.5` as the learned search does.
pub fn target_chain(root: &VarBounds, target: &[i64]) -> Result<Vec<SearchNode>> {
    if !root.contains(target) {
        return Err(Error::Precondition("target assignment lies outside the root box".into()));
    }
    let mut node = SearchNode::root(root.clone());
    let mut chain = Vec::new();
    let mut id = 1;
    while let Some(j) = node.bounds.first_free() {
        let (l, r) = node.split(j, node.bounds.lower(j) as f64 + 0.5, (id, id + 1), node.parent_objective)?;
        id += 2;
        node = if l.bounds.contains(target) { l } else { r };
        chain.push(node.clone());
    }
    Ok(chain)
}

/// Labels from certified branch-and-bound.
pub fn exact_labels<I: MinlpDefinition>(instances: &[I], cfg: &BnbConfig) -> Result<Vec<InstanceLabel>> {
    instances
        .par_iter()
        .map(|inst| {
            let out = solve_exact(inst, cfg)?;
            Ok(InstanceLabel {
                assignment: out.incumbent.assignment,
                objective: out.incumbent.objective,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaggerConfig {
    pub rounds: usize,
    pub train: TrainConfig,
    /// Share of instances held out for policy selection.
    pub validation_fraction: f64,
    pub o2: [f64; 2],
    /// When set, only round policies whose validation relaxations stay
    /// within this fraction of exact branch-and-bound's compete on gap.
    pub relaxation_budget: Option<f64>,
    pub lorm: LormConfig,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            train: TrainConfig::default(),
            validation_fraction: 0.2,
            o2: [1.0, 2.0],
            relaxation_budget: Some(0.25),
            lorm: LormConfig::default(),
        }
    }
}

/// Samples one instance contributes in one round: every node the policy
/// classified plus the force-walked target chain, one sample per node.
pub fn collect_instance<I: MinlpDefinition>(
    policy: &PrunePolicy,
    inst: &I,
    target: &[i64],
    lorm: &LormConfig,
    table: &LeafTable,
    round: usize,
) -> Result<Vec<LabeledSample>> {
    let cfg = LormConfig {
        schedule: EscalationSchedule::single(policy.threshold),
        ..*lorm
    };
    let out = lorm_solve(inst, policy, &cfg, table)?;
    let id = inst.instance_id();
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for v in out.visits {
        let key = v.bounds.key();
        if seen.insert(key.clone()) {
            samples.push(LabeledSample {
                label: label_node(&v.bounds, target),
                features: v.features,
                instance: id.clone(),
                node: key,
                round,
            });
        }
    }
    for node in target_chain(&inst.root_bounds(), target)? {
        let key = node.bounds.key();
        if seen.insert(key.clone()) {
            let f = extract_features(&node, &TreeState::default(), &out.root, inst, &lorm.features)?;
            samples.push(LabeledSample {
                features: f,
                label: Label::Preserve,
                instance: id.clone(),
                node: key,
                round,
            });
        }
    }
    Ok(samples)
}

/// Run the current policy on every instance and append the labeled nodes.
pub fn dagger_round<I: MinlpDefinition>(
    policy: &PrunePolicy,
    instances: &[I],
    labels: &[InstanceLabel],
    dataset: &mut AggregatedDataset,
    lorm: &LormConfig,
    table: &LeafTable,
    round: usize,
) -> Result<usize> {
    if instances.len() != labels.len() {
        return Err(Error::Precondition("one label per instance required".into()));
    }
    let per: Vec<Vec<LabeledSample>> = instances
        .par_iter()
        .zip(labels)
        .map(|(inst, lab)| collect_instance(policy, inst, &lab.assignment, lorm, table, round))
        .collect::<Result<_>>()?;
    let added = per.iter().map(Vec::len).sum();
    for s in per {
        dataset.extend(s);
    }
    Ok(added)
}

/// Relative gap to a reference objective; a missing solution counts as 1.
pub fn relative_gap(found: Option<f64>, reference: f64) -> f64 {
    match found {
        Some(v) if v.is_finite() => (v - reference) / reference.abs().max(1e-12),
        _ => 1.0,
    }
}

/// Mean gap of `policy` with escalation but without the exact fallback.
pub fn validation_gap<I: MinlpDefinition>(
    policy: &PrunePolicy,
    instances: &[I],
    labels: &[InstanceLabel],
    lorm: &LormConfig,
    table: &LeafTable,
) -> Result<f64> {
    let runs = validation_runs(policy, instances, labels, lorm, table)?;
    Ok(runs.iter().map(|r| r.gap).sum::<f64>() / runs.len().max(1) as f64)
}

/// One validation instance under escalation without fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRun {
    pub gap: f64,
    /// Root plus distinct preserved leaves, as with a cold table.
    pub relaxations: usize,
    pub found: bool,
}

pub fn validation_runs<I: MinlpDefinition>(
    policy: &PrunePolicy,
    instances: &[I],
    labels: &[InstanceLabel],
    lorm: &LormConfig,
    table: &LeafTable,
) -> Result<Vec<ValidationRun>> {
    let cfg = LormConfig {
        schedule: EscalationSchedule {
            fallback: false,
            ..lorm.schedule
        },
        ..*lorm
    };
    instances
        .par_iter()
        .zip(labels)
        .map(|(inst, lab)| {
            let out = lorm_solve(inst, policy, &cfg, table)?;
            let leaves: HashSet<String> = out
                .visits
                .iter()
                .filter(|v| v.bounds.is_complete() && v.decision == Decision::Preserve)
                .map(|v| v.bounds.key())
                .collect();
            Ok(ValidationRun {
                gap: relative_gap(out.found().then_some(out.incumbent.objective), lab.objective),
                relaxations: 1 + leaves.len(),
                found: out.found(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DaggerResult {
    pub best: PrunePolicy,
    pub best_round: usize,
    /// `policies[i]` is the policy after round `i + 1`.
    pub policies: Vec<PrunePolicy>,
    pub validation_gaps: Vec<f64>,
    /// Validation relaxations relative to exact branch-and-bound; empty
    /// without a relaxation budget.
    pub validation_ratios: Vec<f64>,
    pub dataset_sizes: Vec<usize>,
    pub class_weights: Vec<ClassWeights>,
    pub final_losses: Vec<f64>,
    pub dataset: AggregatedDataset,
    pub warnings: Vec<String>,
}

/// `cfg.rounds` rounds of collection and retraining, starting from a
/// randomly initialized policy. The last `validation_fraction` of the
/// instances are held out to pick the returned policy.
pub fn dagger_train<I: MinlpDefinition>(
    instances: &[I],
    labels: &[InstanceLabel],
    cfg: &DaggerConfig,
    table: &LeafTable,
    seed: u64,
) -> Result<DaggerResult> {
    if cfg.rounds == 0 {
        return Err(Error::Config("DAgger needs at least one round".into()));
    }
    if instances.is_empty() || instances.len() != labels.len() {
        return Err(Error::Precondition("need instances with one label each".into()));
    }
    let n_valid = ((instances.len() as f64) * cfg.validation_fraction).round() as usize;
    let n_valid = n_valid.min(instances.len() - 1);
    let split = instances.len() - n_valid;
    let (train_i, valid_i) = instances.split_at(split);
    let (train_l, valid_l) = labels.split_at(split);
    let fc = cfg.lorm.features;
    let model = MlpModel::standard(fc.len(), fc.schema_id(), derive_seed(seed, "init"))?;
    let mut policy = PrunePolicy::new(model, cfg.lorm.schedule.base)?;
    let exact_relax: Vec<usize> = match cfg.relaxation_budget {
        Some(_) => valid_i
            .par_iter()
            .map(|i| Ok(solve_exact(i, &BnbConfig::default())?.stats.relaxations_solved))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let mut res = DaggerResult {
        best: policy.clone(),
        best_round: 0,
        policies: Vec::new(),
        validation_gaps: Vec::new(),
        validation_ratios: Vec::new(),
        dataset_sizes: Vec::new(),
        class_weights: Vec::new(),
        final_losses: Vec::new(),
        dataset: AggregatedDataset::default(),
        warnings: Vec::new(),
    };
    for round in 0..cfg.rounds {
        dagger_round(&policy, train_i, train_l, &mut res.dataset, &cfg.lorm, table, round)?;
        let w = res.dataset.class_weights(cfg.o2)?;
        let (m, report) = train(
            &policy.model,
            &res.dataset.training_pairs(),
            &w,
            &cfg.train,
            derive_seed(seed, &format!("shuffle/{round}")),
        )?;
        policy = PrunePolicy::new(m, policy.threshold)?;
        res.dataset_sizes.push(res.dataset.len());
        res.class_weights.push(w);
        res.final_losses.push(report.final_loss().unwrap_or(f64::NAN));
        if !valid_i.is_empty() {
            let runs = validation_runs(&policy, valid_i, valid_l, &cfg.lorm, table)?;
            res.validation_gaps
                .push(runs.iter().map(|r| r.gap).sum::<f64>() / runs.len() as f64);
            if cfg.relaxation_budget.is_some() {
                // a failed run would fall back to exact search at deployment
                let spent: usize = runs
                    .iter()
                    .zip(&exact_relax)
                    .map(|(r, e)| r.relaxations + if r.found { 0 } else { *e })
                    .sum();
                let base: usize = exact_relax.iter().sum();
                res.validation_ratios.push(spent as f64 / base.max(1) as f64);
            }
        }
        res.policies.push(policy.clone());
    }
    if res.validation_gaps.is_empty() {
        res.warnings
            .push("no validation instances; returning the last-round policy".into());
        res.best_round = cfg.rounds;
        res.best = policy;
    } else {
        let i = select_round(&res.validation_gaps, &res.validation_ratios, cfg.relaxation_budget);
        res.best_round = i + 1;
        res.best = res.policies[i].clone();
    }
    Ok(res)
}

/// Lowest gap among rounds within the budget; when no round fits, the
/// cheapest round. Ties go to the earlier round.
fn select_round(gaps: &[f64], ratios: &[f64], budget: Option<f64>) -> usize {
    let argmin = |it: &mut dyn Iterator<Item = (usize, f64)>| {
        it.fold((usize::MAX, f64::INFINITY), |acc, (i, v)| if v < acc.1 || acc.0 == usize::MAX { (i, v) } else { acc })
            .0
    };
    if let Some(b) = budget {
        let within: Vec<usize> = (0..gaps.len()).filter(|&i| ratios[i] <= b).collect();
        if within.is_empty() {
            return argmin(&mut ratios.iter().copied().enumerate());
        }
        return argmin(&mut within.iter().map(|&i| (i, gaps[i])));
    }
    argmin(&mut gaps.iter().copied().enumerate())
}
