//! Experiment pipelines behind the command-line tool.
//!
//! Every task is a pure function of the configuration and the seed. All
//! randomness comes from named sub-streams of that seed: `source` and
//! `target` instance batches, `init`/`shuffle` inside training,
//! `monte-carlo` in the theory task.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, LabelSource, SplitConfig, TheoryConfig, TransferConfig, DEFAULT_SEED};
pub use report::{
    read_records, render_summary, render_theory, summarize, write_records, OutputFormat, ResultRecord, SummaryRow,
};

use crate::bnb::{solve_exact, BnbConfig};
use crate::cran::{exhaustive_oracle, generate_feasible, generate_instance, gsbf, rminlp, CranConfig, CranInstance, GsbfConfig};
use crate::error::{Error, Result};
use crate::imitation::{dagger_train, exact_labels, DaggerConfig, DaggerResult, InstanceLabel};
use crate::lorm::{lorm_solve, LormConfig};
use crate::policy::{model_digest, PrunePolicy};
use crate::problem::MinlpDefinition;
use crate::rng::derive_seed;
use crate::self_imitation::{si_transfer, SiResult};
use crate::table::LeafTable;
use crate::theory::{theory_grid, TheoryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Generate,
    SolveExact,
    Train,
    SolveLorm,
    Transfer,
    Baseline,
    Theory,
    Bench,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Self::Generate => "generate",
            Self::SolveExact => "solve-exact",
            Self::Train => "train",
            Self::SolveLorm => "solve-lorm",
            Self::Transfer => "transfer",
            Self::Baseline => "baseline",
            Self::Theory => "theory",
            Self::Bench => "bench",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub task: Task,
    pub config: Option<PathBuf>,
    /// Overrides the config file's seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

/// A titled table ready for rendering.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub records: Vec<ResultRecord>,
    pub summary: Vec<SummaryRow>,
    pub theory: Vec<TheoryRow>,
    pub notes: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Report {
    pub fn render(&self, format: OutputFormat) -> String {
        let mut s = String::new();
        if format == OutputFormat::Table {
            for n in &self.notes {
                s.push_str(n);
                s.push('\n');
            }
        }
        if !self.summary.is_empty() {
            s.push_str(&render_summary(&self.summary, format));
        }
        if !self.theory.is_empty() {
            s.push_str(&render_theory(&self.theory, format));
        }
        s
    }
}

/// `count` instances from the named sub-stream of `seed`.
pub fn make_instances(cfg: &CranConfig, seed: u64, name: &str, count: usize, feasible_only: bool) -> Result<Vec<CranInstance>> {
    let s = derive_seed(seed, name);
    if feasible_only {
        generate_feasible(cfg, s, count)
    } else {
        (0..count)
            .map(|i| generate_instance(cfg, derive_seed(s, &format!("instance-gen/{i}"))))
            .collect()
    }
}

/// Source-task train and test instances.
pub fn source_split(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<CranInstance>, Vec<CranInstance>)> {
    let mut all = make_instances(
        &cfg.instances,
        seed,
        "source",
        cfg.split.train + cfg.split.test,
        cfg.split.feasible_only,
    )?;
    let test = all.split_off(cfg.split.train);
    Ok((all, test))
}

/// Reference optimum: full enumeration up to 12 RRHs, else branch-and-bound.
pub fn oracle_objective(inst: &CranInstance) -> Result<f64> {
    if inst.rrhs() <= 12 {
        Ok(exhaustive_oracle(inst, &LeafTable::new())?.objective)
    } else {
        Ok(solve_exact(inst, &BnbConfig::default())?.incumbent.objective)
    }
}

pub fn oracles(instances: &[CranInstance]) -> Result<Vec<f64>> {
    instances.par_iter().map(oracle_objective).collect()
}

pub fn labels(instances: &[CranInstance], source: LabelSource, gsbf_cfg: &GsbfConfig) -> Result<Vec<InstanceLabel>> {
    match source {
        LabelSource::Exact => exact_labels(instances, &BnbConfig::default()),
        LabelSource::Gsbf => instances
            .par_iter()
            .map(|i| {
                let h = gsbf(i, &LeafTable::new(), gsbf_cfg)?;
                Ok(InstanceLabel {
                    assignment: h.assignment,
                    objective: h.objective,
                })
            })
            .collect(),
    }
}

fn label(prefix: &str, i: usize) -> String {
    format!("{prefix}-{i:03}")
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64() * 1e3))
}

pub fn eval_exact(instances: &[CranInstance], oracle: &[f64], prefix: &str) -> Result<Vec<ResultRecord>> {
    instances
        .par_iter()
        .zip(oracle)
        .enumerate()
        .map(|(i, (inst, &o))| {
            let (out, ms) = timed(|| solve_exact(inst, &BnbConfig::default()))?;
            let obj = Some(out.incumbent.objective);
            Ok(ResultRecord {
                instance: label(prefix, i),
                instance_digest: inst.instance_id(),
                method: "exact".into(),
                model_digest: String::new(),
                feasible: true,
                objective: obj,
                oracle: o,
                gap: ResultRecord::gap_of(obj, o),
                relaxations: out.stats.relaxations_solved,
                rounds: 0,
                fell_back: false,
                wall_ms: ms,
            })
        })
        .collect()
}

/// Deployment runs, each with a cold leaf table.
pub fn eval_lorm(
    policy: &PrunePolicy,
    instances: &[CranInstance],
    oracle: &[f64],
    lorm: &LormConfig,
    method: &str,
    prefix: &str,
) -> Result<Vec<ResultRecord>> {
    let digest = model_digest(&policy.model);
    instances
        .par_iter()
        .zip(oracle)
        .enumerate()
        .map(|(i, (inst, &o))| {
            let (out, ms) = timed(|| lorm_solve(inst, policy, lorm, &LeafTable::new()))?;
            let obj = out.found().then_some(out.incumbent.objective);
            Ok(ResultRecord {
                instance: label(prefix, i),
                instance_digest: inst.instance_id(),
                method: method.into(),
                model_digest: digest.clone(),
                feasible: obj.is_some(),
                objective: obj,
                oracle: o,
                gap: ResultRecord::gap_of(obj, o),
                relaxations: out.stats.relaxations_solved,
                rounds: out.stats.rounds,
                fell_back: out.stats.fell_back,
                wall_ms: ms,
            })
        })
        .collect()
}

pub fn eval_baselines(instances: &[CranInstance], oracle: &[f64], gsbf_cfg: &GsbfConfig, prefix: &str) -> Result<Vec<ResultRecord>> {
    let rows: Vec<[ResultRecord; 2]> = instances
        .par_iter()
        .zip(oracle)
        .enumerate()
        .map(|(i, (inst, &o))| {
            let rec = |method: &str, h: crate::cran::HeuristicResult, ms: f64| {
                let obj = Some(h.objective);
                ResultRecord {
                    instance: label(prefix, i),
                    instance_digest: inst.instance_id(),
                    method: method.into(),
                    model_digest: String::new(),
                    feasible: true,
                    objective: obj,
                    oracle: o,
                    gap: ResultRecord::gap_of(obj, o),
                    relaxations: h.conic_solves,
                    rounds: 0,
                    fell_back: false,
                    wall_ms: ms,
                }
            };
            let (g, gms) = timed(|| gsbf(inst, &LeafTable::new(), gsbf_cfg))?;
            let (r, rms) = timed(|| rminlp(inst, &LeafTable::new()))?;
            Ok([rec("gsbf", g, gms), rec("rminlp", r, rms)])
        })
        .collect::<Result<_>>()?;
    let (mut g, mut r) = (Vec::new(), Vec::new());
    for [a, b] in rows {
        g.push(a);
        r.push(b);
    }
    g.extend(r);
    Ok(g)
}

/// DAgger on labeled source instances.
pub fn train_policy(train: &[CranInstance], cfg: &ExperimentConfig, seed: u64) -> Result<DaggerResult> {
    let labs = labels(train, cfg.label_source, &cfg.gsbf)?;
    dagger_train(train, &labs, &cfg.dagger, &LeafTable::new(), seed)
}

#[derive(Debug, Clone)]
pub struct TransferStudy {
    pub records: Vec<ResultRecord>,
    pub si: SiResult,
    pub scratch: Option<PrunePolicy>,
}

/// Adapt `source` to the target task from unlabeled instances and compare
/// it with the untouched source policy and, optionally, a policy trained
/// from scratch on labeled target instances.
pub fn transfer_study(
    source: &PrunePolicy,
    cfg: &ExperimentConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<TransferStudy> {
    let t = &cfg.transfer;
    let mut all = make_instances(
        &t.target,
        seed,
        "target",
        t.unlabeled + t.test + t.scratch_train,
        cfg.split.feasible_only,
    )?;
    let scratch_train = all.split_off(t.unlabeled + t.test);
    let test = all.split_off(t.unlabeled);
    let unlabeled = all;
    let oracle = oracles(&test)?;
    let si = si_transfer(source, &unlabeled, &t.si, derive_seed(seed, "transfer"), checkpoint)?;
    let mut records = eval_exact(&test, &oracle, "target")?;
    records.extend(eval_lorm(source, &test, &oracle, &cfg.lorm, "lorm-source", "target")?);
    records.extend(eval_lorm(&si.best, &test, &oracle, &cfg.lorm, "lorm-tl", "target")?);
    let scratch = if t.scratch_train > 0 {
        let labs = labels(&scratch_train, cfg.label_source, &cfg.gsbf)?;
        let dc = DaggerConfig {
            lorm: cfg.lorm,
            ..cfg.dagger
        };
        let res = dagger_train(&scratch_train, &labs, &dc, &LeafTable::new(), derive_seed(seed, "scratch"))?;
        records.extend(eval_lorm(&res.best, &test, &oracle, &cfg.lorm, "lorm-scratch", "target")?);
        Some(res.best)
    } else {
        None
    };
    Ok(TransferStudy { records, si, scratch })
}

fn write_jsonl(path: &Path, instances: &[CranInstance]) -> Result<()> {
    let mut s = String::new();
    for i in instances {
        s.push_str(&serde_json::to_string(i)?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_instances(path: &Path) -> Result<Vec<CranInstance>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(CranInstance::from_json)
        .collect()
}

fn load_policy(path: &Path, cfg: &ExperimentConfig) -> Result<PrunePolicy> {
    if !path.exists() {
        return Err(Error::MissingArtifact(format!(
            "{} not found; run `train` with the same --out first",
            path.display()
        )));
    }
    let fc = &cfg.lorm.features;
    PrunePolicy::from_json(&fs::read_to_string(path)?, Some(&fc.schema_id()), Some(fc.len()))
}

fn write_policy(path: &Path, p: &PrunePolicy) -> Result<()> {
    fs::write(path, p.to_json()?)?;
    Ok(())
}

fn write_train_log(path: &Path, res: &DaggerResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["round", "dataset_size", "o1_prune", "o1_preserve", "final_loss", "validation_gap"])?;
    for i in 0..res.policies.len() {
        let cw = &res.class_weights[i];
        w.write_record([
            (i + 1).to_string(),
            res.dataset_sizes[i].to_string(),
            format!("{:?}", cw.o1[0]),
            format!("{:?}", cw.o1[1]),
            format!("{:?}", res.final_losses[i]),
            res.validation_gaps.get(i).map_or(String::new(), |g| format!("{g:?}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    out: &'a Path,
    report: Report,
}

impl Ctx<'_> {
    fn file(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.out.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        self.report.files.push(p.clone());
        Ok(p)
    }

    fn finish_records(&mut self, name: &str, records: Vec<ResultRecord>) -> Result<()> {
        write_records(&records, fs::File::create(self.file(&format!("results/{name}.csv"))?)?)?;
        let summary = summarize(&records);
        fs::write(
            self.file(&format!("results/{name}-summary.csv"))?,
            render_summary(&summary, OutputFormat::Csv),
        )?;
        self.report.records = records;
        self.report.summary = summary;
        Ok(())
    }

    fn train(&mut self, train: &[CranInstance]) -> Result<PrunePolicy> {
        let res = train_policy(train, self.cfg, self.seed)?;
        write_policy(&self.file("model.json")?, &res.best)?;
        res.dataset.write_csv(fs::File::create(self.file("dataset.csv")?)?)?;
        write_train_log(&self.file("train_log.csv")?, &res)?;
        self.report.notes.push(format!(
            "trained {} rounds on {} instances; selected round {}; validation gaps {:?}",
            res.policies.len(),
            train.len(),
            res.best_round,
            res.validation_gaps.iter().map(|g| format!("{:.4}", g)).collect::<Vec<_>>()
        ));
        self.report.notes.extend(res.warnings.iter().cloned());
        Ok(res.best)
    }

    fn run(&mut self, task: Task) -> Result<()> {
        let cfg = self.cfg;
        match task {
            Task::Generate => {
                let (train, test) = source_split(cfg, self.seed)?;
                write_jsonl(&self.file("instances/train.jsonl")?, &train)?;
                write_jsonl(&self.file("instances/test.jsonl")?, &test)?;
                self.report.notes.push(format!(
                    "generated {} train and {} test instances (L={}, K={})",
                    train.len(),
                    test.len(),
                    cfg.instances.rrhs,
                    cfg.instances.users
                ));
            }
            Task::SolveExact => {
                let (_, test) = source_split(cfg, self.seed)?;
                let o = oracles(&test)?;
                let recs = eval_exact(&test, &o, "test")?;
                self.finish_records("solve-exact", recs)?;
            }
            Task::Train => {
                let (train, _) = source_split(cfg, self.seed)?;
                self.train(&train)?;
            }
            Task::SolveLorm => {
                let policy = load_policy(&self.out.join("model.json"), cfg)?;
                let (_, test) = source_split(cfg, self.seed)?;
                let o = oracles(&test)?;
                let mut recs = eval_exact(&test, &o, "test")?;
                recs.extend(eval_lorm(&policy, &test, &o, &cfg.lorm, "lorm", "test")?);
                self.finish_records("solve-lorm", recs)?;
            }
            Task::Baseline => {
                let (_, test) = source_split(cfg, self.seed)?;
                let o = oracles(&test)?;
                let mut recs = eval_exact(&test, &o, "test")?;
                recs.extend(eval_baselines(&test, &o, &cfg.gsbf, "test")?);
                self.finish_records("baseline", recs)?;
            }
            Task::Bench => {
                let (train, test) = source_split(cfg, self.seed)?;
                let policy = self.train(&train)?;
                let o = oracles(&test)?;
                let mut recs = eval_exact(&test, &o, "test")?;
                recs.extend(eval_lorm(&policy, &test, &o, &cfg.lorm, "lorm", "test")?);
                recs.extend(eval_baselines(&test, &o, &cfg.gsbf, "test")?);
                self.finish_records("bench", recs)?;
            }
            Task::Transfer => {
                let source = load_policy(&self.out.join("model.json"), cfg)?;
                let ck = self.out.join("transfer/checkpoint");
                let study = transfer_study(&source, cfg, self.seed, Some(&ck))?;
                write_policy(&self.file("transfer/model.json")?, &study.si.best)?;
                if let Some(p) = &study.scratch {
                    write_policy(&self.file("transfer/scratch.json")?, p)?;
                }
                self.report.notes.push(format!(
                    "self-imitation: {} rounds, selected round {}, thresholds {:?}",
                    study.si.log.len(),
                    study.si.best_round,
                    study.si.log.iter().map(|l| l.threshold).collect::<Vec<_>>()
                ));
                self.finish_records("transfer", study.records)?;
            }
            Task::Theory => {
                let t = &cfg.theory;
                let rows = theory_grid(&t.eps1, &t.eps2, t.layers, t.trials, self.seed)?;
                fs::write(self.file("results/theory.csv")?, render_theory(&rows, OutputFormat::Csv))?;
                self.report.theory = rows;
            }
        }
        Ok(())
    }
}

/// Run one task and write its artifacts under `spec.out`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Report> {
    let cfg = match &spec.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    run_with_config(spec, &cfg)
}

pub fn run_with_config(spec: &ExperimentSpec, cfg: &ExperimentConfig) -> Result<Report> {
    let mut cfg = cfg.clone();
    cfg.sync();
    cfg.validate()?;
    let seed = spec.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    fs::create_dir_all(&spec.out)?;
    let mut resolved = cfg.clone();
    resolved.seed = Some(seed);
    fs::write(spec.out.join("config.toml"), resolved.to_toml()?)?;
    let mut ctx = Ctx {
        cfg: &cfg,
        seed,
        out: &spec.out,
        report: Report::default(),
    };
    pool.install(|| ctx.run(spec.task))?;
    Ok(ctx.report)
}
