//! Search-space bounds for every encoded quantity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GenomeError;

/// Real-coded fields are kept strictly below `max + 1` so that their floor
/// never leaves the integer range.
const UPPER_MARGIN: f64 = 1e-9;

/// Inclusive integer range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: u32,
    pub max: u32,
}

impl IntRange {
    pub const fn new(min: u32, max: u32) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: usize) -> bool {
        v >= self.min as usize && v <= self.max as usize
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(self.min..=self.max) as usize
    }
}

impl std::fmt::Display for IntRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.min, self.max)
    }
}

/// Channel count, height and width of an activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// How the final feature map is turned into a vector before the FFN layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    #[default]
    Flatten,
    GlobalAvgPool,
}

/// The admissible values of one real-coded field.
///
/// A `Range` field may take any real in `[min, max + 1)`; a `Set` field is
/// always snapped onto one of its members.
#[derive(Clone, Copy, Debug)]
pub enum FieldDomain<'a> {
    Range(IntRange),
    Set(&'a [u32]),
}

impl FieldDomain<'_> {
    /// Real-valued bounds used by SBX and PM.
    pub fn real_bounds(&self) -> (f64, f64) {
        match self {
            FieldDomain::Range(r) => (r.min as f64, r.max as f64 + 1.0 - UPPER_MARGIN),
            FieldDomain::Set(s) => {
                let lo = s.iter().copied().min().unwrap_or(1) as f64;
                let hi = s.iter().copied().max().unwrap_or(1) as f64;
                (lo, hi)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            FieldDomain::Range(_) => {
                let (lo, hi) = self.real_bounds();
                rng.random_range(lo..hi)
            }
            FieldDomain::Set(s) => s[rng.random_range(0..s.len())] as f64,
        }
    }

    /// Clamps into the real bounds and, for sets, snaps to the nearest
    /// member (ties go to the smaller member).
    pub fn normalize(&self, x: f64) -> f64 {
        let (lo, hi) = self.real_bounds();
        let x = if x.is_nan() { lo } else { x.clamp(lo, hi) };
        match self {
            FieldDomain::Range(_) => x,
            FieldDomain::Set(s) => {
                let mut best = s[0];
                for &m in s.iter() {
                    let (d, db) = ((m as f64 - x).abs(), (best as f64 - x).abs());
                    if d < db || (d == db && m < best) {
                        best = m;
                    }
                }
                best as f64
            }
        }
    }

    /// True iff `floor(x)` is an admissible integer.
    pub fn admits(&self, x: f64) -> bool {
        if !x.is_finite() || x < 1.0 {
            return false;
        }
        let v = x.floor() as u64;
        match self {
            FieldDomain::Range(r) => v >= r.min as u64 && v <= r.max as u64,
            FieldDomain::Set(s) => s.iter().any(|&m| m as u64 == v),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            FieldDomain::Range(r) => r.to_string(),
            FieldDomain::Set(s) => {
                let items: Vec<String> = s.iter().map(|m| m.to_string()).collect();
                format!("{{{}}}", items.join(", "))
            }
        }
    }
}

/// Bounds of the architecture search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpaceConfig {
    pub input: Shape,
    pub num_classes: usize,
    pub blocks: IntRange,
    pub convs_per_block: IntRange,
    /// Pool layers over the whole individual.
    pub pools: IntRange,
    pub ffn_layers: IntRange,
    pub conv_filter: IntRange,
    pub conv_channels: IntRange,
    pub conv_stride: Vec<u32>,
    pub pool_filter: Vec<u32>,
    pub pool_stride: Vec<u32>,
    pub ffn_neurons: IntRange,
    pub stem_enabled: bool,
    pub skip_enabled: bool,
    #[serde(default)]
    pub head_mode: HeadMode,
}

impl SearchSpaceConfig {
    /// One-chain network for 28x28 grayscale digits: a single block without
    /// shortcut and no stem.
    pub fn mnist() -> Self {
        Self {
            input: Shape::new(1, 28, 28),
            num_classes: 10,
            blocks: IntRange::new(1, 1),
            convs_per_block: IntRange::new(1, 4),
            pools: IntRange::new(1, 3),
            ffn_layers: IntRange::new(1, 4),
            conv_filter: IntRange::new(2, 20),
            conv_channels: IntRange::new(3, 50),
            conv_stride: vec![1, 2],
            pool_filter: vec![2, 4],
            pool_stride: vec![2, 4],
            ffn_neurons: IntRange::new(1000, 2000),
            stem_enabled: false,
            skip_enabled: false,
            head_mode: HeadMode::Flatten,
        }
    }

    pub fn fashion_mnist() -> Self {
        Self {
            input: Shape::new(1, 28, 28),
            num_classes: 10,
            blocks: IntRange::new(1, 10),
            convs_per_block: IntRange::new(1, 3),
            pools: IntRange::new(1, 3),
            ffn_layers: IntRange::new(1, 2),
            conv_filter: IntRange::new(1, 5),
            conv_channels: IntRange::new(3, 128),
            conv_stride: vec![1, 2],
            pool_filter: vec![2, 4],
            pool_stride: vec![2, 4],
            ffn_neurons: IntRange::new(1000, 2000),
            stem_enabled: true,
            skip_enabled: true,
            head_mode: HeadMode::Flatten,
        }
    }

    pub fn cifar100() -> Self {
        Self {
            input: Shape::new(3, 32, 32),
            num_classes: 100,
            ..Self::fashion_mnist()
        }
    }

    pub fn validate(&self) -> Result<(), GenomeError> {
        let bad = |msg: String| Err(GenomeError::InvalidConfig(msg));
        if self.input.c == 0 || self.input.h == 0 || self.input.w == 0 {
            return bad(format!("input shape {} has a zero dimension", self.input));
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        let ranges = [
            ("blocks", self.blocks, 1),
            ("convs_per_block", self.convs_per_block, 1),
            ("pools", self.pools, 0),
            ("ffn_layers", self.ffn_layers, 0),
            ("conv_filter", self.conv_filter, 1),
            ("conv_channels", self.conv_channels, 1),
            ("ffn_neurons", self.ffn_neurons, 1),
        ];
        for (name, r, floor) in ranges {
            if r.min > r.max {
                return bad(format!("{name} range {r} is empty"));
            }
            if r.min < floor {
                return bad(format!("{name} range {r} must start at {floor} or above"));
            }
        }
        let sets = [
            ("conv_stride", &self.conv_stride),
            ("pool_filter", &self.pool_filter),
            ("pool_stride", &self.pool_stride),
        ];
        for (name, s) in sets {
            if s.is_empty() {
                return bad(format!("{name} set is empty"));
            }
            if s.contains(&0) {
                return bad(format!("{name} set contains 0"));
            }
        }
        Ok(())
    }

    /// Largest number of encoded units (conv + pool + FFN) any individual
    /// can carry.
    pub fn max_units(&self) -> usize {
        (self.blocks.max * self.convs_per_block.max + self.pools.max + self.ffn_layers.max) as usize
    }

    /// Bounds on the total conv count of an individual.
    pub fn conv_total(&self) -> IntRange {
        IntRange::new(
            self.blocks.min * self.convs_per_block.min,
            self.blocks.max * self.convs_per_block.max,
        )
    }

    /// Domains of `ConvGene` fields, ordered as `ConvGene::fields`.
    pub fn conv_domains(&self) -> [FieldDomain<'_>; 5] {
        [
            FieldDomain::Range(self.conv_filter),
            FieldDomain::Range(self.conv_filter),
            FieldDomain::Set(&self.conv_stride),
            FieldDomain::Set(&self.conv_stride),
            FieldDomain::Range(self.conv_channels),
        ]
    }

    /// Domains of the real fields of `PoolGene`, ordered as `PoolGene::fields`.
    pub fn pool_domains(&self) -> [FieldDomain<'_>; 4] {
        [
            FieldDomain::Set(&self.pool_filter),
            FieldDomain::Set(&self.pool_filter),
            FieldDomain::Set(&self.pool_stride),
            FieldDomain::Set(&self.pool_stride),
        ]
    }

    pub fn ffn_domain(&self) -> FieldDomain<'_> {
        FieldDomain::Range(self.ffn_neurons)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presets_are_valid() {
        for cfg in [
            SearchSpaceConfig::mnist(),
            SearchSpaceConfig::fashion_mnist(),
            SearchSpaceConfig::cifar100(),
        ] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn empty_range_rejected() {
        let mut cfg = SearchSpaceConfig::mnist();
        cfg.conv_channels = IntRange::new(60, 50);
        assert!(cfg.validate().is_err());
        let mut cfg = SearchSpaceConfig::mnist();
        cfg.input.h = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn range_domain_floors_inside() {
        let d = FieldDomain::Range(IntRange::new(3, 128));
        let (lo, hi) = d.real_bounds();
        assert_eq!(lo, 3.0);
        assert_eq!(hi.floor(), 128.0);
        assert!(d.admits(hi));
        assert!(!d.admits(129.0));
        assert!(!d.admits(2.999));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(d.admits(d.sample(&mut rng)));
        }
    }

    #[test]
    fn set_domain_snaps_to_nearest() {
        let s = [2, 4];
        let d = FieldDomain::Set(&s);
        assert_eq!(d.normalize(2.9), 2.0);
        assert_eq!(d.normalize(3.0), 2.0);
        assert_eq!(d.normalize(3.1), 4.0);
        assert_eq!(d.normalize(100.0), 4.0);
        assert!(!d.admits(3.0));
        assert!(d.admits(4.0));
    }
}
