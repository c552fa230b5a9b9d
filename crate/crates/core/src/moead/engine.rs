use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_neighborhoods, chebyshev, ep_update, gen_weight_vectors, update_ideal, ArchiveEntry, EpArchive, IdealPoint,
    MoeadError, WeightVector,
};
use crate::config::RunConfig;
use crate::evaluation::{BatchEvaluator, EvalJob, EvalOutcome, FitnessVector, ScheduleMode, TrainingParams};
use crate::genome::{self, random_genome, Genome};
use crate::parallel;
use crate::variation::{crossover, mutate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subproblem {
    pub index: usize,
    pub lambda: WeightVector,
    pub neighbors: Vec<usize>,
    pub incumbent: Genome,
    pub fitness: FitnessVector,
    pub params: u64,
}

/// Everything needed to continue a run after the generation recorded in
/// `generation` completed. Randomness is derived from `seed`, so no
/// generator state is carried.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub generation: usize,
    pub seed: u64,
    pub subproblems: Vec<Subproblem>,
    pub ideal: IdealPoint,
    pub archive: EpArchive,
    pub next_job_id: u64,
}

impl SearchState {
    pub fn best_error(&self) -> f64 {
        self.subproblems.iter().map(|s| s.fitness.f1).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Offspring,
    Retrain,
}

/// One evaluated job, in the form it is logged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub generation: usize,
    pub index: usize,
    pub phase: Phase,
    pub job_id: u64,
    pub seed: u64,
    pub genome: Genome,
    #[serde(flatten)]
    pub outcome: EvalOutcome,
    pub k: f64,
    pub fitness: FitnessVector,
}

/// An archive member after full retraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalEntry {
    pub fingerprint: String,
    pub genome: Genome,
    pub params: u64,
    pub search_fitness: FitnessVector,
    pub errors: Vec<f64>,
    pub mean_error: f64,
    pub std_error: f64,
    pub fitness: FitnessVector,
}

/// Receives the run as it happens. Errors abort the search.
pub trait RunRecorder {
    fn evaluation(&mut self, record: &EvalRecord) -> std::io::Result<()>;
    fn generation(&mut self, state: &SearchState) -> std::io::Result<()>;
    fn complete(&mut self, finals: &[FinalEntry]) -> std::io::Result<()>;
}

pub struct NullRecorder;

impl RunRecorder for NullRecorder {
    fn evaluation(&mut self, _: &EvalRecord) -> std::io::Result<()> {
        Ok(())
    }
    fn generation(&mut self, _: &SearchState) -> std::io::Result<()> {
        Ok(())
    }
    fn complete(&mut self, _: &[FinalEntry]) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Default)]
pub struct MemoryRecorder {
    pub evaluations: Vec<EvalRecord>,
    pub snapshots: Vec<SearchState>,
    pub finals: Option<Vec<FinalEntry>>,
}

impl RunRecorder for MemoryRecorder {
    fn evaluation(&mut self, record: &EvalRecord) -> std::io::Result<()> {
        self.evaluations.push(record.clone());
        Ok(())
    }
    fn generation(&mut self, state: &SearchState) -> std::io::Result<()> {
        self.snapshots.push(state.clone());
        Ok(())
    }
    fn complete(&mut self, finals: &[FinalEntry]) -> std::io::Result<()> {
        self.finals = Some(finals.to_vec());
        Ok(())
    }
}

impl<R: RunRecorder + ?Sized> RunRecorder for &mut R {
    fn evaluation(&mut self, record: &EvalRecord) -> std::io::Result<()> {
        (**self).evaluation(record)
    }
    fn generation(&mut self, state: &SearchState) -> std::io::Result<()> {
        (**self).generation(state)
    }
    fn complete(&mut self, finals: &[FinalEntry]) -> std::io::Result<()> {
        (**self).complete(finals)
    }
}

pub struct SearchOutcome {
    pub state: SearchState,
    pub finals: Vec<FinalEntry>,
}

/// Independent generator for one (generation, subproblem) slot. Generation 0
/// draws the initial population.
pub fn stream_rng(seed: u64, generation: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | index as u64);
    rng
}

/// Seed handed to the evaluator for a job (splitmix64 of seed and id).
pub fn job_seed(seed: u64, job_id: u64) -> u64 {
    let mut z = seed ^ job_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn make_job(cfg: &RunConfig, next_id: &mut u64, genome: Genome, epochs: u32, schedule: ScheduleMode) -> Result<EvalJob, MoeadError> {
    let spec = genome::decode(&genome, &cfg.search_space)?;
    let job_id = *next_id;
    *next_id += 1;
    Ok(EvalJob {
        job_id,
        genome,
        spec,
        epochs,
        training: TrainingParams { schedule, ..cfg.training.clone() },
        dataset: cfg.dataset.clone(),
        seed: job_seed(cfg.seed, job_id),
    })
}

fn run_batch<E: BatchEvaluator + ?Sized>(evaluator: &mut E, jobs: &[EvalJob]) -> Result<Vec<EvalOutcome>, MoeadError> {
    let outcomes = evaluator.evaluate_batch(jobs)?;
    if outcomes.len() != jobs.len() {
        return Err(MoeadError::BatchSize { expected: jobs.len(), got: outcomes.len() });
    }
    Ok(outcomes)
}

fn params_of(outcome: &EvalOutcome, genome: &Genome, cfg: &RunConfig) -> u64 {
    if outcome.params > 0 {
        return outcome.params;
    }
    genome::decode(genome, &cfg.search_space).map(|s| genome::count_params(&s)).unwrap_or(0)
}

/// Draws and evaluates the initial population; the ideal point starts at the
/// component-wise best of it. The archive starts empty.
pub fn initialize<E, R>(cfg: &RunConfig, evaluator: &mut E, recorder: &mut R) -> Result<SearchState, MoeadError>
where
    E: BatchEvaluator + ?Sized,
    R: RunRecorder + ?Sized,
{
    cfg.validate().map_err(|e| MoeadError::InvalidConfig(e.to_string()))?;
    let n = cfg.population;
    let weights = gen_weight_vectors(n, 2)?;
    let hoods = build_neighborhoods(&weights, cfg.neighborhood_size())?;
    let genomes = parallel::map_indexed(n, cfg.execution, |i| {
        random_genome(&cfg.search_space, &mut stream_rng(cfg.seed, 0, i))
    });
    let mut next_job_id = 0;
    let jobs = genomes
        .into_iter()
        .map(|g| make_job(cfg, &mut next_job_id, g, cfg.nep_train, cfg.training.schedule))
        .collect::<Result<Vec<_>, _>>()?;
    let outcomes = run_batch(evaluator, &jobs)?;

    let mut subproblems = Vec::with_capacity(n);
    for (i, ((job, outcome), (lambda, neighbors))) in
        jobs.into_iter().zip(outcomes).zip(weights.into_iter().zip(hoods)).enumerate()
    {
        let fitness = outcome.fitness(cfg.k);
        let params = params_of(&outcome, &job.genome, cfg);
        recorder.evaluation(&EvalRecord {
            generation: 0,
            index: i,
            phase: Phase::Init,
            job_id: job.job_id,
            seed: job.seed,
            genome: job.genome.clone(),
            outcome,
            k: cfg.k,
            fitness,
        })?;
        subproblems.push(Subproblem { index: i, lambda, neighbors, incumbent: job.genome, fitness, params });
    }
    let ideal = IdealPoint::from_best(subproblems.iter().map(|s| &s.fitness));
    let state = SearchState { generation: 0, seed: cfg.seed, subproblems, ideal, archive: EpArchive::default(), next_job_id };
    recorder.generation(&state)?;
    Ok(state)
}

fn breed(state: &SearchState, cfg: &RunConfig, i: usize, rng: &mut ChaCha8Rng) -> Genome {
    let sp = &state.subproblems[i];
    let space = &cfg.search_space;
    if sp.neighbors.len() < 2 {
        return mutate(&sp.incumbent, &cfg.variation, space, rng);
    }
    let t = sp.neighbors.len();
    let a = rng.random_range(0..t);
    let mut b = rng.random_range(0..t - 1);
    if b >= a {
        b += 1;
    }
    let pa = &state.subproblems[sp.neighbors[a]].incumbent;
    let pb = &state.subproblems[sp.neighbors[b]].incumbent;
    let (c1, c2) = crossover(pa, pb, &cfg.variation, space, rng);
    let child = if rng.random_bool(0.5) { c1 } else { c2 };
    mutate(&child, &cfg.variation, space, rng)
}

/// One generation: every subproblem breeds from the population as it stood
/// at the start, the offspring are evaluated as a single batch, and results
/// are applied in index order (ideal point and archive first, then
/// neighborhood replacement).
pub fn evolve_generation<E, R>(
    state: &mut SearchState,
    cfg: &RunConfig,
    evaluator: &mut E,
    recorder: &mut R,
) -> Result<(), MoeadError>
where
    E: BatchEvaluator + ?Sized,
    R: RunRecorder + ?Sized,
{
    if state.subproblems.len() != cfg.population {
        return Err(MoeadError::InvalidConfig(format!(
            "state has {} subproblems, config expects {}",
            state.subproblems.len(),
            cfg.population
        )));
    }
    let generation = state.generation + 1;
    let frozen = &*state;
    let offspring = parallel::map_indexed(cfg.population, cfg.execution, |i| {
        breed(frozen, cfg, i, &mut stream_rng(cfg.seed, generation, i))
    });
    let mut next_job_id = state.next_job_id;
    let jobs = offspring
        .into_iter()
        .map(|g| make_job(cfg, &mut next_job_id, g, cfg.nep_train, cfg.training.schedule))
        .collect::<Result<Vec<_>, _>>()?;
    let outcomes = run_batch(evaluator, &jobs)?;
    state.next_job_id = next_job_id;

    let mut children = Vec::with_capacity(jobs.len());
    for (i, (job, outcome)) in jobs.into_iter().zip(outcomes).enumerate() {
        let fitness = outcome.fitness(cfg.k);
        let params = params_of(&outcome, &job.genome, cfg);
        recorder.evaluation(&EvalRecord {
            generation,
            index: i,
            phase: Phase::Offspring,
            job_id: job.job_id,
            seed: job.seed,
            genome: job.genome.clone(),
            outcome,
            k: cfg.k,
            fitness,
        })?;
        state.ideal = update_ideal(&state.ideal, &fitness, cfg.z_mode);
        ep_update(&mut state.archive, ArchiveEntry::new(job.genome.clone(), fitness, generation, params));
        children.push((job.genome, fitness, params));
    }
    for (i, (genome, fitness, params)) in children.into_iter().enumerate() {
        let hood = state.subproblems[i].neighbors.clone();
        for j in hood {
            let sj = &state.subproblems[j];
            if chebyshev(&fitness, &sj.lambda, &state.ideal) <= chebyshev(&sj.fitness, &sj.lambda, &state.ideal) {
                let sj = &mut state.subproblems[j];
                sj.incumbent = genome.clone();
                sj.fitness = fitness;
                sj.params = params;
            }
        }
    }
    state.generation = generation;
    recorder.generation(state)?;
    Ok(())
}

/// Retrains every archive member for the full epoch budget with the
/// plateau-halving schedule, `final_repeats` times each.
pub fn retrain_archive<E, R>(
    state: &SearchState,
    cfg: &RunConfig,
    evaluator: &mut E,
    recorder: &mut R,
) -> Result<Vec<FinalEntry>, MoeadError>
where
    E: BatchEvaluator + ?Sized,
    R: RunRecorder + ?Sized,
{
    let mut next_job_id = state.next_job_id;
    let mut jobs = Vec::new();
    for entry in &state.archive.entries {
        for _ in 0..cfg.final_repeats {
            jobs.push(make_job(cfg, &mut next_job_id, entry.genome.clone(), cfg.nep_full, ScheduleMode::PlateauHalving)?);
        }
    }
    let outcomes = run_batch(evaluator, &jobs)?;
    let repeats = cfg.final_repeats as usize;
    let mut finals = Vec::with_capacity(state.archive.len());
    let mut results = jobs.into_iter().zip(outcomes);
    for (idx, entry) in state.archive.entries.iter().enumerate() {
        let mut fits = Vec::with_capacity(repeats);
        for (job, outcome) in results.by_ref().take(repeats) {
            let fitness = outcome.fitness(cfg.k);
            recorder.evaluation(&EvalRecord {
                generation: state.generation,
                index: idx,
                phase: Phase::Retrain,
                job_id: job.job_id,
                seed: job.seed,
                genome: job.genome,
                outcome,
                k: cfg.k,
                fitness,
            })?;
            fits.push(fitness);
        }
        let r = fits.len() as f64;
        let errors: Vec<f64> = fits.iter().map(|f| f.f1).collect();
        let mean_error = errors.iter().sum::<f64>() / r;
        let std_error = if fits.len() > 1 {
            let var = errors.iter().map(|e| (e - mean_error).powi(2)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        } else {
            0.0
        };
        let mean_f2 = fits.iter().map(|f| f.f2).sum::<f64>() / r;
        finals.push(FinalEntry {
            fingerprint: entry.fingerprint.clone(),
            genome: entry.genome.clone(),
            params: entry.params,
            search_fitness: entry.fitness,
            errors,
            mean_error,
            std_error,
            fitness: FitnessVector::new(mean_error, mean_f2),
        });
    }
    recorder.complete(&finals)?;
    Ok(finals)
}

/// Runs (or continues, when `resume` holds a snapshot) the search to
/// `cfg.generations`, then retrains the archive.
pub fn run_search<E, R>(
    cfg: &RunConfig,
    evaluator: &mut E,
    recorder: &mut R,
    resume: Option<SearchState>,
) -> Result<SearchOutcome, MoeadError>
where
    E: BatchEvaluator + ?Sized,
    R: RunRecorder + ?Sized,
{
    let mut state = match resume {
        Some(s) => {
            if s.seed != cfg.seed {
                return Err(MoeadError::InvalidConfig(format!("snapshot seed {} differs from config seed {}", s.seed, cfg.seed)));
            }
            s
        }
        None => initialize(cfg, evaluator, recorder)?,
    };
    while state.generation < cfg.generations {
        evolve_generation(&mut state, cfg, evaluator, recorder)?;
        log::info!(
            "generation {}/{}: archive {} best error {:.4}",
            state.generation,
            cfg.generations,
            state.archive.len(),
            state.best_error()
        );
    }
    let finals = retrain_archive(&state, cfg, evaluator, recorder)?;
    Ok(SearchOutcome { state, finals })
}
