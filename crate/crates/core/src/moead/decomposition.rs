use serde::{Deserialize, Serialize};

use super::MoeadError;
use crate::evaluation::FitnessVector;

/// Non-negative weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn is_normalized(&self) -> bool {
        self.0.iter().all(|&w| w >= 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }

    fn distance(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Evenly spaced two-objective lattice `(i/(n-1), 1 - i/(n-1))`; a single
/// vector is `(0.5, 0.5)`.
pub fn gen_weight_vectors(n: usize, objectives: usize) -> Result<Vec<WeightVector>, MoeadError> {
    if objectives != 2 {
        return Err(MoeadError::UnsupportedObjectiveCount(objectives));
    }
    if n == 0 {
        return Err(MoeadError::InvalidConfig("population must be at least 1".into()));
    }
    if n == 1 {
        return Ok(vec![WeightVector(vec![0.5, 0.5])]);
    }
    Ok((0..n)
        .map(|i| {
            let a = i as f64 / (n - 1) as f64;
            WeightVector(vec![a, 1.0 - a])
        })
        .collect())
}

/// The `t` nearest weight vectors of each vector (itself included), nearest
/// first, ties broken by lower index.
pub fn build_neighborhoods(vectors: &[WeightVector], t: usize) -> Result<Vec<Vec<usize>>, MoeadError> {
    if t == 0 || t > vectors.len() {
        return Err(MoeadError::InvalidConfig(format!(
            "neighborhood size {t} outside [1, {}]",
            vectors.len()
        )));
    }
    Ok(vectors
        .iter()
        .map(|v| {
            let mut order: Vec<(f64, usize)> = vectors.iter().enumerate().map(|(j, w)| (v.distance(w), j)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            order.into_iter().take(t).map(|(_, j)| j).collect()
        })
        .collect())
}

/// `max_i lambda_i * |f_i - z_i|`.
pub fn chebyshev(f: &FitnessVector, lambda: &WeightVector, z: &IdealPoint) -> f64 {
    f.as_array()
        .iter()
        .zip(lambda.components())
        .zip(&z.0)
        .map(|((fi, li), zi)| li * (fi - zi).abs())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// How the reference point follows evaluated fitness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZMode {
    /// Component-wise minimum seen so far.
    #[default]
    Min,
    /// Raise `z_j` whenever an offspring exceeds it.
    #[serde(rename = "paper-literal", alias = "max")]
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdealPoint(pub [f64; 2]);

impl IdealPoint {
    /// Component-wise best of a set of fitness vectors.
    pub fn from_best<'a>(fs: impl IntoIterator<Item = &'a FitnessVector>) -> Self {
        let mut z = [f64::INFINITY; 2];
        for f in fs {
            for (zj, fj) in z.iter_mut().zip(f.as_array()) {
                *zj = zj.min(fj);
            }
        }
        Self(z)
    }
}

pub fn update_ideal(z: &IdealPoint, f: &FitnessVector, mode: ZMode) -> IdealPoint {
    let mut out = z.0;
    for (zj, fj) in out.iter_mut().zip(f.as_array()) {
        *zj = match mode {
            ZMode::Min => zj.min(fj),
            ZMode::Max => zj.max(fj),
        };
    }
    IdealPoint(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice() {
        let w = gen_weight_vectors(3, 2).unwrap();
        assert_eq!(w, vec![WeightVector(vec![0.0, 1.0]), WeightVector(vec![0.5, 0.5]), WeightVector(vec![1.0, 0.0])]);
        assert_eq!(gen_weight_vectors(2, 2).unwrap(), vec![WeightVector(vec![0.0, 1.0]), WeightVector(vec![1.0, 0.0])]);
        assert_eq!(gen_weight_vectors(1, 2).unwrap(), vec![WeightVector(vec![0.5, 0.5])]);
        assert_eq!(gen_weight_vectors(4, 3), Err(MoeadError::UnsupportedObjectiveCount(3)));
        assert!(gen_weight_vectors(50, 2).unwrap().iter().all(WeightVector::is_normalized));
    }

    #[test]
    fn neighborhoods() {
        let w = gen_weight_vectors(3, 2).unwrap();
        assert_eq!(build_neighborhoods(&w, 2).unwrap(), vec![vec![0, 1], vec![1, 0], vec![2, 1]]);
        assert_eq!(build_neighborhoods(&w, 1).unwrap(), vec![vec![0], vec![1], vec![2]]);
        let all = build_neighborhoods(&w, 3).unwrap();
        for b in all {
            let mut s = b.clone();
            s.sort();
            assert_eq!(s, vec![0, 1, 2]);
        }
        assert!(build_neighborhoods(&w, 4).is_err());
        assert!(build_neighborhoods(&w, 0).is_err());
    }

    #[test]
    fn chebyshev_examples() {
        let c = |f: (f64, f64), l: (f64, f64), z: (f64, f64)| {
            chebyshev(&FitnessVector::new(f.0, f.1), &WeightVector(vec![l.0, l.1]), &IdealPoint([z.0, z.1]))
        };
        assert!((c((0.4, 0.2), (0.5, 0.5), (0.0, 0.0)) - 0.2).abs() <= 1e-12);
        assert!((c((0.3, 0.1), (1.0, 0.0), (0.1, 0.05)) - 0.2).abs() <= 1e-12);
        assert!((c((0.2, 0.3), (0.25, 0.75), (0.1, 0.1)) - 0.15).abs() <= 1e-12);
    }

    #[test]
    fn ideal_modes() {
        let z = IdealPoint([0.3, 0.5]);
        let f = FitnessVector::new(0.2, 0.6);
        assert_eq!(update_ideal(&z, &f, ZMode::Min), IdealPoint([0.2, 0.5]));
        assert_eq!(update_ideal(&z, &f, ZMode::Max), IdealPoint([0.3, 0.6]));
        let same = FitnessVector::new(0.3, 0.5);
        assert_eq!(update_ideal(&z, &same, ZMode::Min), z);
        assert_eq!(update_ideal(&z, &same, ZMode::Max), z);
    }
}
