//! One line per acceptance criterion. Exits non-zero if any fails.

mod support;

use std::fs;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resnas::config::{EvaluatorConfig, RunConfig};
use resnas::evaluation::{BatchEvaluator, FitnessVector, JobEvaluator, LocalEvaluator, SurrogateEvaluator};
use resnas::fixtures;
use resnas::genome::{count_params, random_genome, validate, FfnGene, Genome, SearchSpaceConfig};
use resnas::moead::{
    chebyshev, ep_update, run_search, ArchiveEntry, EpArchive, IdealPoint, MemoryRecorder, NullRecorder, SearchOutcome,
    WeightVector,
};
use resnas::orchestrator::{Controller, ControllerOptions, RunLog};
use resnas::variation::{crossover, mutate, pm, sbx_unclamped, VariationConfig};
use support::{jobs, surrogate, Stub};

const FIXTURE_TOL: f64 = 0.005;
const RESNET18_REF: f64 = 11.22e6;
const RESNET50_REF: f64 = 23.71e6;
const CHEB_TOL: f64 = 1e-12;
const SBX_MEAN_TOL: f64 = 1e-9;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < budget, || format!("took {t:?}, budget {budget:?}"))?;
    Ok(t)
}

fn parameter_fixtures() -> Check {
    let start = Instant::now();
    let r18 = count_params(&fixtures::resnet18(100));
    let r50 = count_params(&fixtures::resnet50(100));
    let e18 = (r18 as f64 - RESNET18_REF).abs() / RESNET18_REF;
    let e50 = (r50 as f64 - RESNET50_REF).abs() / RESNET50_REF;
    ensure(e18 <= FIXTURE_TOL, || format!("resnet18 {r18} off by {:.3}%", e18 * 100.0))?;
    ensure(e50 <= FIXTURE_TOL, || format!("resnet50 {r50} off by {:.3}%", e50 * 100.0))?;
    let t = within(start, Duration::from_secs(1))?;
    Ok(format!("resnet18 {r18} ({:.3}%), resnet50 {r50} ({:.3}%), {t:?}", e18 * 100.0, e50 * 100.0))
}

fn archive_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut total = 0;
    for seq in 0..1000 {
        let len = rng.random_range(1..=64);
        // Half the sequences use a coarse grid so ties and duplicates occur.
        let coarse = seq % 2 == 0;
        let pts: Vec<FitnessVector> = (0..len)
            .map(|_| {
                if coarse {
                    FitnessVector::new(rng.random_range(0..8) as f64 / 8.0, rng.random_range(0..8) as f64 / 8.0)
                } else {
                    FitnessVector::new(rng.random(), rng.random())
                }
            })
            .collect();
        let mut a = EpArchive::default();
        for (i, f) in pts.iter().enumerate() {
            let g = Genome { blocks: vec![], ffn: vec![FfnGene { out_neurons: 1000.0 + i as f64 }] };
            ep_update(&mut a, ArchiveEntry::new(g, *f, 0, 0));
        }
        let mut got: Vec<usize> = a.entries.iter().map(|e| e.genome.ffn[0].out_neurons as usize - 1000).collect();
        got.sort_unstable();
        let want: Vec<usize> = (0..len)
            .filter(|&i| {
                let p = &pts[i];
                !pts.iter().any(|q| q.f1 <= p.f1 && q.f2 <= p.f2 && (q.f1 < p.f1 || q.f2 < p.f2))
            })
            .collect();
        ensure(got == want, || format!("sequence {seq}: archive {got:?}, oracle {want:?}"))?;
        total += len;
    }
    let t = within(start, Duration::from_secs(10))?;
    Ok(format!("1000 sequences, {total} insertions, {t:?}"))
}

fn chebyshev_examples() -> Check {
    let cases = [
        ((0.4, 0.2), (0.5, 0.5), (0.0, 0.0), 0.2),
        ((0.3, 0.1), (1.0, 0.0), (0.1, 0.05), 0.2),
        ((0.2, 0.3), (0.25, 0.75), (0.1, 0.1), 0.15),
    ];
    let mut worst: f64 = 0.0;
    for (f, l, z, want) in cases {
        let got = chebyshev(&FitnessVector::new(f.0, f.1), &WeightVector(vec![l.0, l.1]), &IdealPoint([z.0, z.1]));
        let err = (got - want).abs();
        ensure(err <= CHEB_TOL, || format!("f={f:?} lambda={l:?} z={z:?}: got {got}, want {want}"))?;
        worst = worst.max(err);
    }
    Ok(format!("3 cases, max error {worst:e}"))
}

fn operator_closure() -> Check {
    let start = Instant::now();
    let cfg = SearchSpaceConfig::cifar100();
    let vcfg = VariationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pool: Vec<Genome> = (0..64).map(|_| random_genome(&cfg, &mut rng)).collect();
    for n in 0..10_000 {
        let a = rng.random_range(0..pool.len());
        let b = rng.random_range(0..pool.len());
        let (c1, c2) = crossover(&pool[a], &pool[b], &vcfg, &cfg, &mut rng);
        let child = mutate(if rng.random_bool(0.5) { &c1 } else { &c2 }, &vcfg, &cfg, &mut rng);
        for g in [&c1, &c2, &child] {
            let v = validate(g, &cfg);
            ensure(v.is_empty(), || format!("application {n}: {}", v[0]))?;
        }
        pool[a] = child;
    }
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (x, y) = (rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let (c1, c2) = sbx_unclamped(x, y, 20.0, rng.random());
        worst = worst.max(((c1 + c2) / 2.0 - (x + y) / 2.0).abs());
    }
    ensure(worst <= SBX_MEAN_TOL, || format!("SBX mean drift {worst:e}"))?;
    for _ in 0..10_000 {
        let lo = rng.random_range(-10.0..10.0);
        let hi = lo + rng.random_range(0.001..20.0);
        let x = rng.random_range(lo..=hi);
        let m = pm(x, lo, hi, 20.0, &mut rng);
        ensure((lo..=hi).contains(&m), || format!("PM {x} in [{lo}, {hi}] gave {m}"))?;
    }
    let t = within(start, Duration::from_secs(30))?;
    Ok(format!("10000 applications clean, SBX mean drift {worst:e}, PM in bounds, {t:?}"))
}

fn surrogate_evaluator(cfg: &RunConfig) -> LocalEvaluator<SurrogateEvaluator> {
    let EvaluatorConfig::Surrogate(s) = &cfg.evaluator else { panic!("surrogate config expected") };
    LocalEvaluator::new(SurrogateEvaluator::new(cfg.search_space.clone(), s.clone()), cfg.execution)
}

fn behavior_config(k: f64) -> RunConfig {
    RunConfig { population: 20, neighbors: Some(4), generations: 15, k, seed: 7, ..RunConfig::mnist_surrogate() }
}

fn surrogate_search() -> Check {
    let start = Instant::now();
    let cfg = behavior_config(0.2);
    let EvaluatorConfig::Surrogate(s) = &cfg.evaluator else { unreachable!() };
    let reference = [1.1, 1.1 * cfg.k * s.max_loss()];
    let mut rec = MemoryRecorder::default();
    let out = run_search(&cfg, &mut surrogate_evaluator(&cfg), &mut rec, None).map_err(|e| e.to_string())?;
    let hv: Vec<f64> = rec.snapshots.iter().map(|s| s.archive.hypervolume(reference)).collect();
    for w in hv.windows(2) {
        ensure(w[1] >= w[0], || format!("hypervolume fell: {hv:?}"))?;
    }
    let initial = rec.snapshots[0].best_error();
    let final_best = out.state.archive.fitnesses().map(|f| f.f1).fold(f64::INFINITY, f64::min);
    ensure(final_best <= initial, || format!("final best f1 {final_best} > initial {initial}"))?;

    let cfg0 = behavior_config(0.0);
    let out0 = run_search(&cfg0, &mut surrogate_evaluator(&cfg0), &mut NullRecorder, None).map_err(|e| e.to_string())?;
    let sizes = out0.state.archive.len();
    ensure(sizes == 1, || {
        let f: Vec<_> = out0.state.archive.fitnesses().map(|f| (f.f1, f.f2)).collect();
        format!("k=0 archive has {sizes} entries: {f:?}")
    })?;
    let t = within(start, Duration::from_secs(10))?;
    Ok(format!(
        "HV {:.4} -> {:.4} non-decreasing, best f1 {initial:.4} -> {final_best:.4}, k=0 |EP|=1 at seed {}, {t:?}",
        hv[0],
        hv[hv.len() - 1],
        cfg0.seed
    ))
}

fn export(out: &SearchOutcome) -> Vec<u8> {
    serde_json::to_vec(&(&out.state.archive, &out.finals)).expect("archive serializes")
}

fn logged_run(cfg: &RunConfig, path: &Path) -> Result<SearchOutcome, String> {
    let mut log = RunLog::create(path, cfg).map_err(|e| e.to_string())?;
    run_search(cfg, &mut surrogate_evaluator(cfg), &mut log, None).map_err(|e| e.to_string())
}

fn determinism_and_resume() -> Check {
    let start = Instant::now();
    let cfg = behavior_config(0.2);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p1 = dir.path().join("a.jsonl");
    let p2 = dir.path().join("b.jsonl");
    let a = logged_run(&cfg, &p1)?;
    let b = logged_run(&cfg, &p2)?;
    ensure(export(&a) == export(&b), || "EP exports differ between identical runs".into())?;
    let full_log = fs::read(&p1).map_err(|e| e.to_string())?;
    ensure(full_log == fs::read(&p2).map_err(|e| e.to_string())?, || "run logs differ".into())?;

    let text = String::from_utf8(full_log.clone()).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let snapshots: Vec<usize> =
        lines.iter().enumerate().filter(|(_, l)| l.starts_with(r#"{"kind":"snapshot""#)).map(|(i, _)| i).collect();
    ensure(snapshots.len() == cfg.generations + 1, || format!("{} snapshots", snapshots.len()))?;
    for (g, &at) in snapshots.iter().enumerate() {
        // Killed after generation g: some records of the next generation and
        // half a line made it to disk.
        let keep = (at + 1 + 3).min(lines.len() - 1);
        let mut cut: String = lines[..keep].concat();
        let torn = lines[keep];
        cut.push_str(&torn[..torn.len() / 2]);
        let p = dir.path().join(format!("kill{g}.jsonl"));
        fs::write(&p, cut).map_err(|e| e.to_string())?;
        let (mut log, replay) = RunLog::resume(&p).map_err(|e| e.to_string())?;
        let state = replay.last_state().cloned();
        ensure(state.as_ref().map(|s| s.generation) == Some(g), || format!("resume point {g} lost"))?;
        let r = run_search(&cfg, &mut surrogate_evaluator(&cfg), &mut log, state).map_err(|e| e.to_string())?;
        ensure(export(&r) == export(&a), || format!("resume after generation {g} diverged"))?;
        let resumed_log = fs::read(&p).map_err(|e| e.to_string())?;
        ensure(resumed_log == full_log, || format!("resumed log after generation {g} differs"))?;
    }
    let t = within(start, Duration::from_secs(30))?;
    Ok(format!("identical exports, {} resume points reproduce the full run, {t:?}", snapshots.len()))
}

fn fault_injection() -> Check {
    let start = Instant::now();
    let opts = ControllerOptions { job_timeout: Duration::from_secs(20), max_attempts: 3, connect_timeout: Duration::from_secs(10) };
    let mut c = Controller::bind("127.0.0.1:0", opts).map_err(|e| e.to_string())?;
    let addr = c.local_addr();
    let mut handles = Vec::new();
    for _ in 0..2 {
        handles.push(thread::spawn(move || {
            let mut s = Stub::connect(addr, 1);
            let mut answered = Vec::new();
            while let Some(j) = s.next_job() {
                thread::sleep(Duration::from_millis(5));
                s.answer(&j);
                answered.push(j.job_id);
            }
            answered
        }));
    }
    handles.push(thread::spawn(move || {
        let mut s = Stub::connect(addr, 1);
        let mut answered = Vec::new();
        for _ in 0..2 {
            if let Some(j) = s.next_job() {
                s.answer(&j);
                answered.push(j.job_id);
            }
        }
        // Third job arrives and the worker dies holding it.
        let _ = s.next_job();
        drop(s);
        answered
    }));
    c.wait_for_workers(3, Duration::from_secs(10)).map_err(|e| e.to_string())?;
    let js = jobs(20, 99);
    let out = c.evaluate_batch(&js).map_err(|e| e.to_string())?;
    let stats = c.stats().clone();
    c.shutdown();
    let mut answered: Vec<u64> = Vec::new();
    for h in handles {
        answered.extend(h.join().map_err(|_| "stub panicked".to_string())?);
    }
    ensure(out.len() == 20, || format!("{} outcomes", out.len()))?;
    let ev = surrogate();
    for (j, o) in js.iter().zip(&out) {
        ensure(*o == ev.evaluate(j).map_err(|e| e.to_string())?, || format!("job {} wrong outcome", j.job_id))?;
    }
    answered.sort_unstable();
    ensure(answered == (0..20).collect::<Vec<_>>(), || format!("answers per job: {answered:?}"))?;
    ensure(stats.workers_lost == 1 && stats.reissues == 1 && stats.ignored_results == 0, || format!("{stats:?}"))?;
    let t = start.elapsed();
    Ok(format!("20/20 resolved once, 1 worker lost, 1 reissue, {} assignments, {t:?}", stats.assignments))
}

fn main() {
    let checks: [Criterion; 7] = [
        ("parameter-count fixtures", parameter_fixtures),
        ("archive oracle", archive_oracle),
        ("chebyshev examples", chebyshev_examples),
        ("operator closure fuzz", operator_closure),
        ("surrogate search behavior", surrogate_search),
        ("determinism and resume", determinism_and_resume),
        ("orchestrator fault injection", fault_injection),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("[PASS] {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("[FAIL] {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("[FAIL] {name}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
