//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.

use std::collections::BTreeSet;
use std::time::Instant;

use lorm::bnb::{solve_exact, BnbConfig, NodeSelection, PruneReason, VarSelection};
use lorm::cran::{exhaustive_oracle, generate_feasible, CranConfig, CranInstance};
use lorm::harness::{
    eval_baselines, eval_exact, eval_lorm, oracles, render_summary, source_split, summarize, train_policy,
    transfer_study, ExperimentConfig, OutputFormat, ResultRecord, SummaryRow, TransferStudy, DEFAULT_SEED,
};
use lorm::imitation::DaggerResult;
use lorm::lorm::{lorm_solve, EscalationSchedule, LormConfig};
use lorm::problem::MinlpDefinition;
use lorm::policy::{gradient_check, ClassWeights, Label, MlpModel, PrunePolicy};
use lorm::self_imitation::{collect_si, SiState};
use lorm::table::LeafTable;
use lorm::theory::{closed_form_a, leaf_bound, monte_carlo, recurrence_ab, recurrence_cd, PruneModelParams};
use lorm::toy::ToyProgram;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, what: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn toy_replay() -> Outcome {
    let cfg = BnbConfig {
        node_selection: NodeSelection::BestFirst,
        var_selection: VarSelection::LowestIndex,
        ..Default::default()
    };
    let out = solve_exact(&ToyProgram::replay(), &cfg).map_err(err)?;
    check(out.incumbent.assignment == vec![1, 3], format!("solution {:?}", out.incumbent.assignment))?;
    check((out.incumbent.objective + 11.8).abs() < 1e-9, format!("objective {}", out.incumbent.objective))?;
    for reason in [PruneReason::Bound, PruneReason::Infeasibility, PruneReason::Integrality] {
        let n = out.stats.prune_count(reason);
        check(n == 1, format!("{reason:?} prunes: {n}"))?;
    }
    let (node, _) = out.stats.prune_events.iter().find(|e| e.1 == PruneReason::Bound).unwrap();
    let z = out.trace.iter().find(|r| r.id == *node).and_then(|r| r.z);
    check(matches!(z, Some(v) if (v + 11.6875).abs() < 1e-9), format!("bound prune at {z:?}"))?;
    Ok("x = (1, 3), objective -11.8, one prune of each kind, bound prune at -11.6875".into())
}

fn engine_optimality() -> Outcome {
    let insts = generate_feasible(&CranConfig::new(6, 4), 101, 20).map_err(err)?;
    let mut worst: f64 = 0.0;
    for inst in &insts {
        let e = solve_exact(inst, &BnbConfig::default()).map_err(err)?;
        let o = exhaustive_oracle(inst, &LeafTable::new()).map_err(err)?;
        let rel = (e.incumbent.objective - o.objective).abs() / o.objective.abs();
        worst = worst.max(rel);
        check(rel <= 1e-5, format!("{}: exact {} vs oracle {}", inst.instance_id(), e.incumbent.objective, o.objective))?;
    }
    Ok(format!("20 instances, worst relative difference {worst:.2e}"))
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for t in 0..100u64 {
        let d = rng.gen_range(2..8);
        let model = MlpModel::standard(d, "grad", t).map_err(err)?;
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = if rng.gen::<bool>() { Label::Preserve } else { Label::Prune };
        let w = ClassWeights::from_counts(rng.gen_range(1..20), 20, [1.0, rng.gen_range(0.5..3.0)]).map_err(err)?;
        let e = gradient_check(&model, &x, y, &w, 1e-5);
        worst = worst.max(e);
    }
    check(worst <= 1e-4, format!("worst relative error {worst:.2e}"))?;
    Ok(format!("100 triples, worst relative error {worst:.2e}"))
}

fn theory() -> Outcome {
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    for e1 in [0.1f64, 0.2, 1.0 / 3.0, 0.45] {
        for e2 in [0.0, 0.1, 0.5] {
            let singular = ((1.0 - 2.0 * e1) - e2).abs() < 1e-3;
            for n in 1..=20 {
                let p = PruneModelParams::new(e1, e2, n).map_err(err)?;
                let c = closed_form_a(&p);
                check(c.fallback == singular, format!("fallback flag {} at ({e1}, {e2}, {n})", c.fallback))?;
                if singular {
                    continue;
                }
                let a = recurrence_ab(&p).0[n - 1];
                let rel = (c.value - a).abs() / a.abs().max(1.0);
                worst = worst.max(rel);
                compared += 1;
                check(rel <= 1e-8, format!("closed {} vs recurrence {a} at ({e1}, {e2}, {n})", c.value))?;
            }
        }
    }

    let p = PruneModelParams::new(0.4, 0.2, 12).map_err(err)?;
    let mc = monte_carlo(&p, 100_000, DEFAULT_SEED).map_err(err)?;
    let a = recurrence_ab(&p).0[11];
    let c = recurrence_cd(&p).0[11];
    let za = (mc.explored_mean - a).abs() / mc.explored_se;
    let zc = (mc.leaves_mean - c).abs() / mc.leaves_se;
    check(za <= 3.0 && zc <= 3.0, format!("simulation off by {za:.2} and {zc:.2} SE"))?;

    for i in 0..=50 {
        let e1 = 0.5 * i as f64 / 50.0;
        for j in 0..=10 {
            let e2 = j as f64 / 10.0;
            let (cs, _) = recurrence_cd(&PruneModelParams::new(e1, e2, 31).map_err(err)?);
            for l in 0..=30 {
                let lin = 1.0 + e1 * l as f64;
                check(
                    cs[l] <= lin + 1e-12 && cs[l] <= leaf_bound(e1, l + 1) + 1e-12,
                    format!("c({}) = {} above 1 + eps1 L at ({e1}, {e2})", l + 1, cs[l]),
                )?;
            }
        }
    }
    Ok(format!(
        "{compared} closed-form points (worst {worst:.1e}); simulation within {:.2}/{:.2} SE; leaf bound holds",
        za, zc
    ))
}

struct SourceRun {
    cfg: ExperimentConfig,
    test: Vec<CranInstance>,
    dagger: DaggerResult,
    records: Vec<ResultRecord>,
    summary: Vec<SummaryRow>,
}

fn source_run() -> lorm::Result<SourceRun> {
    let cfg = ExperimentConfig::default();
    let (train, test) = source_split(&cfg, DEFAULT_SEED)?;
    let dagger = train_policy(&train, &cfg, DEFAULT_SEED)?;
    let oracle = oracles(&test)?;
    let mut records = eval_exact(&test, &oracle, "test")?;
    records.extend(eval_lorm(&dagger.best, &test, &oracle, &cfg.lorm, "lorm", "test")?);
    records.extend(eval_baselines(&test, &oracle, &cfg.gsbf, "test")?);
    let summary = summarize(&records);
    Ok(SourceRun {
        cfg,
        test,
        dagger,
        records,
        summary,
    })
}

fn row<'a>(s: &'a [SummaryRow], method: &str) -> &'a SummaryRow {
    s.iter().find(|r| r.method == method).expect("method in summary")
}

fn lorm_end_to_end(run: &SourceRun) -> Outcome {
    let l = row(&run.summary, "lorm");
    let detail = format!(
        "feasible {:.0}%, gap {:.2}%, median rounds {}, fallback {:.0}% (round {} policy)",
        100.0 * l.feasible_rate,
        100.0 * l.mean_gap,
        l.median_rounds,
        100.0 * l.fallback_rate,
        run.dagger.best_round
    );
    check(l.feasible_rate == 1.0 && l.mean_gap <= 0.05 && l.median_rounds < 3, detail.clone())?;
    Ok(detail)
}

fn relaxation_economy(run: &SourceRun) -> Outcome {
    let total = |m: &str| -> usize { run.records.iter().filter(|r| r.method == m).map(|r| r.relaxations).sum() };
    let (l, e) = (total("lorm"), total("exact"));
    let detail = format!("{l} relaxations vs {e} for exact ({:.1}%)", 100.0 * l as f64 / e as f64);
    check(l as f64 <= 0.25 * e as f64, detail.clone())?;
    Ok(detail)
}

fn baseline_ordering(run: &SourceRun) -> Outcome {
    let l = row(&run.summary, "lorm").mean_gap;
    let g = row(&run.summary, "gsbf").mean_gap;
    let r = row(&run.summary, "rminlp").mean_gap;
    let rrhs = run.cfg.instances.rrhs;
    for rec in &run.records {
        let cap = match rec.method.as_str() {
            "gsbf" => rrhs,
            "rminlp" => 3 * rrhs,
            _ => continue,
        };
        check(rec.relaxations <= cap, format!("{} used {} solves on {}", rec.method, rec.relaxations, rec.instance))?;
    }
    let detail = format!("gaps: lorm {:.2}%, gsbf {:.2}%, rminlp {:.2}%", 100.0 * l, 100.0 * g, 100.0 * r);
    check(l <= g + 0.01 && l <= r + 0.01, detail.clone())?;
    Ok(detail + "; budgets respected")
}

fn explored(inst: &CranInstance, p: &PrunePolicy, lorm: &LormConfig, t: f64) -> lorm::Result<BTreeSet<String>> {
    let cfg = LormConfig {
        schedule: EscalationSchedule::single(t),
        ..*lorm
    };
    Ok(lorm_solve(inst, p, &cfg, &LeafTable::new())?.explored(0))
}

fn monotonicity(run: &SourceRun, transfer: Option<&TransferStudy>) -> Outcome {
    let mut policies: Vec<PrunePolicy> = run.dagger.policies.clone();
    if let Some(t) = transfer {
        policies.extend(t.si.policies.iter().cloned());
    }
    policies.truncate(10);
    check(policies.len() == 10, format!("only {} trained policies", policies.len()))?;
    let sched = run.cfg.lorm.schedule;
    let mut pairs = 0;
    for p in &policies {
        for inst in run.test.iter().take(10) {
            let sets: Vec<BTreeSet<String>> = (0..sched.max_rounds)
                .map(|k| explored(inst, p, &run.cfg.lorm, sched.threshold(k)))
                .collect::<lorm::Result<_>>()
                .map_err(err)?;
            for i in 0..sets.len() {
                for j in i + 1..sets.len() {
                    check(sets[i].is_subset(&sets[j]), format!("threshold {i} set not inside threshold {j} set"))?;
                    pairs += 1;
                }
            }
        }
    }
    Ok(format!("{pairs} threshold pairs over 10 policies x 10 instances"))
}

fn transfer_run(source_seed: u64) -> lorm::Result<TransferStudy> {
    let mut cfg = ExperimentConfig::default();
    cfg.instances = CranConfig::new(6, 4);
    cfg.split.test = 0;
    let (train, _) = source_split(&cfg, source_seed)?;
    let source = train_policy(&train, &cfg, source_seed)?;
    transfer_study(&source.best, &cfg, source_seed, None)
}

fn transfer(t: &TransferStudy) -> Outcome {
    let s = summarize(&t.records);
    let pre = row(&s, "lorm-source").mean_gap;
    let post = row(&s, "lorm-tl").mean_gap;
    let scratch = row(&s, "lorm-scratch").mean_gap;
    let detail = format!(
        "gaps: before {:.2}%, after {:.2}%, from scratch {:.2}% (round {} policy)",
        100.0 * pre,
        100.0 * post,
        100.0 * scratch,
        t.si.best_round
    );
    check(post < pre && post <= scratch + 0.03, detail.clone())?;
    Ok(detail)
}

fn lookup_table(run: &SourceRun, t: Option<&TransferStudy>) -> Outcome {
    let preserve_all = PrunePolicy::constant(run.cfg.lorm.features.len(), &run.cfg.lorm.features.schema_id(), -30.0, 0.5)
        .map_err(err)?;
    let mut replays = 0;
    for (inst, p) in run.test.iter().take(5).flat_map(|i| [(i, &preserve_all), (i, &run.dagger.best)]) {
        let table = LeafTable::new();
        let cold = lorm_solve(inst, p, &run.cfg.lorm, &table).map_err(err)?;
        let before = table.solves();
        let warm = lorm_solve(inst, p, &run.cfg.lorm, &table).map_err(err)?;
        check(table.solves() == before, format!("warm replay solved {} new leaves", table.solves() - before))?;
        check(
            warm.stats.relaxations_solved == 1 && warm.incumbent == cold.incumbent,
            format!("warm replay solved {} relaxations", warm.stats.relaxations_solved),
        )?;
        replays += 1;
    }

    // Same policy and threshold twice: every assignment repeats.
    let lorm = run.cfg.lorm;
    for inst in run.test.iter().take(5) {
        let mut state = SiState::new(inst.instance_id());
        let (_, first) = collect_si(&run.dagger.best, inst, &mut state, 0.9, &lorm, 0).map_err(err)?;
        let (_, second) = collect_si(&run.dagger.best, inst, &mut state, 0.9, &lorm, 1).map_err(err)?;
        check(
            first.leaf_solves > 0 && second.leaf_solves < first.leaf_solves,
            format!("self-imitation leaf solves {} then {}", first.leaf_solves, second.leaf_solves),
        )?;
    }
    let mut detail = format!("{replays} warm replays with zero leaf solves; repeated rounds solve nothing new");
    if let Some(t) = t {
        let per_round: Vec<usize> = t.si.log.iter().map(|l| l.infos.iter().map(|i| i.leaf_solves).sum()).collect();
        detail += &format!("; transfer leaf solves per round {per_round:?}");
    }
    Ok(detail)
}

fn report(n: usize, name: &str, started: Instant, outcome: &Outcome) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => println!("PASS {n:>2} {name} ({secs:.1}s): {d}"),
        Err(d) => println!("FAIL {n:>2} {name} ({secs:.1}s): {d}"),
    }
    outcome.is_ok()
}

fn main() {
    let mut ok = true;
    let t = Instant::now();
    ok &= report(1, "toy replay", t, &toy_replay());
    let t = Instant::now();
    ok &= report(2, "engine optimality", t, &engine_optimality());
    let t = Instant::now();
    ok &= report(3, "gradient check", t, &gradients());
    let t = Instant::now();
    ok &= report(4, "theory consistency", t, &theory());

    let t = Instant::now();
    let run = source_run();
    let run = match run {
        Ok(r) => r,
        Err(e) => {
            for (n, name) in [(5, "lorm end-to-end"), (6, "relaxation economy"), (7, "baseline ordering"), (8, "threshold monotonicity"), (10, "lookup table")] {
                report(n, name, t, &Err(format!("source run failed: {e}")));
            }
            std::process::exit(1);
        }
    };
    print!("{}", render_summary(&run.summary, OutputFormat::Table));
    ok &= report(5, "lorm end-to-end", t, &lorm_end_to_end(&run));
    let t = Instant::now();
    ok &= report(6, "relaxation economy", t, &relaxation_economy(&run));
    let t = Instant::now();
    ok &= report(7, "baseline ordering", t, &baseline_ordering(&run));

    let t = Instant::now();
    let study = transfer_run(DEFAULT_SEED);
    let study_ref = study.as_ref().ok();
    let outcome = match &study {
        Ok(s) => {
            print!("{}", render_summary(&summarize(&s.records), OutputFormat::Table));
            transfer(s)
        }
        Err(e) => Err(format!("transfer run failed: {e}")),
    };
    ok &= report(9, "transfer", t, &outcome);
    let t = Instant::now();
    ok &= report(8, "threshold monotonicity", t, &monotonicity(&run, study_ref));
    let t = Instant::now();
    ok &= report(10, "lookup table", t, &lookup_table(&run, study_ref));

    if !ok {
        std::process::exit(1);
    }
}
