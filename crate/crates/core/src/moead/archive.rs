use serde::{Deserialize, Serialize};

use crate::evaluation::FitnessVector;
use crate::genome::Genome;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub genome: Genome,
    pub fitness: FitnessVector,
    pub generation: usize,
    pub params: u64,
    pub fingerprint: String,
}

impl ArchiveEntry {
    pub fn new(genome: Genome, fitness: FitnessVector, generation: usize, params: u64) -> Self {
        let fingerprint = genome.fingerprint();
        Self { genome, fitness, generation, params, fingerprint }
    }
}

/// External population: mutually non-dominated entries, unique by genome
/// fingerprint, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpArchive {
    pub entries: Vec<ArchiveEntry>,
}

impl EpArchive {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fitnesses(&self) -> impl Iterator<Item = &FitnessVector> {
        self.entries.iter().map(|e| &e.fitness)
    }

    pub fn hypervolume(&self, reference: [f64; 2]) -> f64 {
        hypervolume_2d(self.fitnesses(), reference)
    }
}

/// Drops every entry the candidate dominates, then inserts it unless a
/// survivor dominates it. Returns whether the candidate was inserted. A
/// candidate whose fingerprint is already present is ignored.
pub fn ep_update(archive: &mut EpArchive, candidate: ArchiveEntry) -> bool {
    if archive.entries.iter().any(|e| e.fingerprint == candidate.fingerprint) {
        return false;
    }
    let f = candidate.fitness;
    archive.entries.retain(|e| !f.dominates(&e.fitness));
    if archive.entries.iter().any(|e| e.fitness.dominates(&f)) {
        return false;
    }
    archive.entries.push(candidate);
    true
}

/// Area dominated by `points` and bounded by `reference` (minimization).
/// Points not strictly better than the reference in both components
/// contribute nothing.
pub fn hypervolume_2d<'a>(points: impl IntoIterator<Item = &'a FitnessVector>, reference: [f64; 2]) -> f64 {
    let mut pts: Vec<[f64; 2]> = points
        .into_iter()
        .map(FitnessVector::as_array)
        .filter(|p| p[0] < reference[0] && p[1] < reference[1])
        .collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut hv = 0.0;
    let mut ceiling = reference[1];
    for p in pts {
        if p[1] < ceiling {
            hv += (reference[0] - p[0]) * (ceiling - p[1]);
            ceiling = p[1];
        }
    }
    hv
}
