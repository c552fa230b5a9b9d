//! Variable-length ResNet genome: encoding, random initialization, decoding
//! into a concrete architecture, validation and parameter counting.
//!
//! An individual is a sequence of ResNet blocks followed by FFN layers. Each
//! block is an ordered run of conv and pool units. All per-layer
//! hyperparameters are stored as reals and floored when the genome is
//! decoded, which lets SBX and PM operate on them directly.

mod arch;
mod params;
mod space;
mod validate;

pub use arch::{
    conv_output, decode, head_features, pool_output, propagate_shapes, same_padding, ArchBlock,
    ArchitectureSpec, ConvLayer, DownsampleLayer, Layer, LinearLayer, Padding, PoolLayer, ShapeOp,
};
pub use params::{count_params, layer_params};
pub use space::{FieldDomain, HeadMode, IntRange, SearchSpaceConfig, Shape};
pub use validate::{validate, Violation};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum GenomeError {
    #[error("shape error at {location}: {detail}")]
    Shape { location: String, detail: String },
    #[error("invalid search space: {0}")]
    InvalidConfig(String),
    #[error("malformed architecture spec: {0}")]
    MalformedSpec(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvGene {
    pub filter_w: f64,
    pub filter_h: f64,
    pub stride_w: f64,
    pub stride_h: f64,
    pub out_channels: f64,
}

impl ConvGene {
    pub fn random<R: Rng + ?Sized>(cfg: &SearchSpaceConfig, rng: &mut R) -> Self {
        let d = cfg.conv_domains();
        Self {
            filter_w: d[0].sample(rng),
            filter_h: d[1].sample(rng),
            stride_w: d[2].sample(rng),
            stride_h: d[3].sample(rng),
            out_channels: d[4].sample(rng),
        }
    }

    /// Real fields in the order of `SearchSpaceConfig::conv_domains`.
    pub fn fields(&self) -> [f64; 5] {
        [self.filter_w, self.filter_h, self.stride_w, self.stride_h, self.out_channels]
    }

    pub fn fields_mut(&mut self) -> [&mut f64; 5] {
        [
            &mut self.filter_w,
            &mut self.filter_h,
            &mut self.stride_w,
            &mut self.stride_h,
            &mut self.out_channels,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolType {
    Max,
    Avg,
}

impl PoolType {
    pub fn flipped(self) -> Self {
        match self {
            PoolType::Max => PoolType::Avg,
            PoolType::Avg => PoolType::Max,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolGene {
    pub filter_w: f64,
    pub filter_h: f64,
    pub stride_w: f64,
    pub stride_h: f64,
    pub pool_type: PoolType,
}

impl PoolGene {
    pub fn random<R: Rng + ?Sized>(cfg: &SearchSpaceConfig, rng: &mut R) -> Self {
        let d = cfg.pool_domains();
        Self {
            filter_w: d[0].sample(rng),
            filter_h: d[1].sample(rng),
            stride_w: d[2].sample(rng),
            stride_h: d[3].sample(rng),
            pool_type: if rng.random_bool(0.5) { PoolType::Max } else { PoolType::Avg },
        }
    }

    pub fn fields(&self) -> [f64; 4] {
        [self.filter_w, self.filter_h, self.stride_w, self.stride_h]
    }

    pub fn fields_mut(&mut self) -> [&mut f64; 4] {
        [&mut self.filter_w, &mut self.filter_h, &mut self.stride_w, &mut self.stride_h]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "ffn")]
pub struct FfnGene {
    pub out_neurons: f64,
}

impl FfnGene {
    pub fn random<R: Rng + ?Sized>(cfg: &SearchSpaceConfig, rng: &mut R) -> Self {
        Self { out_neurons: cfg.ffn_domain().sample(rng) }
    }
}

/// One conv or pool unit inside a ResNet block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Unit {
    Conv(ConvGene),
    Pool(PoolGene),
}

impl Unit {
    pub fn is_conv(&self) -> bool {
        matches!(self, Unit::Conv(_))
    }

    pub fn is_pool(&self) -> bool {
        matches!(self, Unit::Pool(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResNetBlockGene {
    pub units: Vec<Unit>,
}

impl ResNetBlockGene {
    pub fn conv_count(&self) -> usize {
        self.units.iter().filter(|u| u.is_conv()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub blocks: Vec<ResNetBlockGene>,
    pub ffn: Vec<FfnGene>,
}

impl Genome {
    pub fn conv_count(&self) -> usize {
        self.blocks.iter().map(ResNetBlockGene::conv_count).sum()
    }

    pub fn pool_count(&self) -> usize {
        self.blocks.iter().flat_map(|b| &b.units).filter(|u| u.is_pool()).count()
    }

    /// Conv + pool + FFN layers.
    pub fn unit_count(&self) -> usize {
        self.blocks.iter().map(|b| b.units.len()).sum::<usize>() + self.ffn.len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.units.len()).collect()
    }

    /// All conv/pool units of every block, in order.
    pub fn units(&self) -> impl Iterator<Item = &Unit> {
        self.blocks.iter().flat_map(|b| b.units.iter())
    }

    pub fn units_mut(&mut self) -> impl Iterator<Item = &mut Unit> {
        self.blocks.iter_mut().flat_map(|b| b.units.iter_mut())
    }

    /// Content hash of the decoded (floored) encoding, hex-encoded.
    ///
    /// Two genomes that differ only below integer resolution map to the same
    /// architecture and share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let put = |h: &mut Sha256, v: f64| h.update((v.floor() as i64).to_le_bytes());
        for block in &self.blocks {
            h.update(b"B");
            for unit in &block.units {
                match unit {
                    Unit::Conv(c) => {
                        h.update(b"c");
                        c.fields().into_iter().for_each(|v| put(&mut h, v));
                    }
                    Unit::Pool(p) => {
                        h.update(match p.pool_type {
                            PoolType::Max => b"m",
                            PoolType::Avg => b"a",
                        });
                        p.fields().into_iter().for_each(|v| put(&mut h, v));
                    }
                }
            }
        }
        for f in &self.ffn {
            h.update(b"f");
            put(&mut h, f.out_neurons);
        }
        hex::encode(&h.finalize()[..16])
    }
}

/// Draws a genome uniformly from the search space.
///
/// Block count, convs per block, the total pool count and the FFN count are
/// drawn first; each pool is then inserted at a uniform position of a
/// uniformly chosen block.
pub fn random_genome<R: Rng + ?Sized>(cfg: &SearchSpaceConfig, rng: &mut R) -> Genome {
    let n_blocks = cfg.blocks.sample(rng);
    let mut blocks: Vec<ResNetBlockGene> = (0..n_blocks)
        .map(|_| {
            let convs = cfg.convs_per_block.sample(rng);
            ResNetBlockGene {
                units: (0..convs).map(|_| Unit::Conv(ConvGene::random(cfg, rng))).collect(),
            }
        })
        .collect();
    let n_pools = cfg.pools.sample(rng);
    for _ in 0..n_pools {
        let b = rng.random_range(0..blocks.len());
        let pos = rng.random_range(0..=blocks[b].units.len());
        blocks[b].units.insert(pos, Unit::Pool(PoolGene::random(cfg, rng)));
    }
    let n_ffn = cfg.ffn_layers.sample(rng);
    let ffn = (0..n_ffn).map(|_| FfnGene::random(cfg, rng)).collect();
    Genome { blocks, ffn }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mnist_genome_has_one_block() {
        let cfg = SearchSpaceConfig::mnist();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let g = random_genome(&cfg, &mut rng);
            assert_eq!(g.blocks.len(), 1);
            let convs = g.blocks[0].conv_count();
            assert!((1..=4).contains(&convs));
        }
    }

    #[test]
    fn same_seed_same_genome() {
        let cfg = SearchSpaceConfig::cifar100();
        let a = random_genome(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let b = random_genome(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn cifar_draws_stay_in_range() {
        let cfg = SearchSpaceConfig::cifar100();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let g = random_genome(&cfg, &mut rng);
            assert!((1..=10).contains(&g.blocks.len()));
            for u in g.units() {
                if let Unit::Conv(c) = u {
                    let ch = c.out_channels.floor() as u32;
                    assert!((3..=128).contains(&ch), "channels {ch}");
                }
            }
        }
    }

    #[test]
    fn fingerprint_ignores_sub_integer_noise() {
        let cfg = SearchSpaceConfig::cifar100();
        let g = random_genome(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let mut h = g.clone();
        h.ffn[0].out_neurons = h.ffn[0].out_neurons.floor() + 0.5;
        assert_eq!(g.fingerprint(), h.fingerprint());
        h.ffn[0].out_neurons += 1.0;
        assert_ne!(g.fingerprint(), h.fingerprint());
    }

    #[test]
    fn json_uses_kind_tags() {
        let g = Genome {
            blocks: vec![ResNetBlockGene {
                units: vec![Unit::Conv(ConvGene {
                    filter_w: 3.0,
                    filter_h: 3.0,
                    stride_w: 1.0,
                    stride_h: 1.0,
                    out_channels: 16.0,
                })],
            }],
            ffn: vec![FfnGene { out_neurons: 1000.0 }],
        };
        let v = serde_json::to_value(&g).unwrap();
        assert_eq!(v["blocks"][0]["units"][0]["kind"], "conv");
        assert_eq!(v["ffn"][0]["kind"], "ffn");
        let back: Genome = serde_json::from_value(v).unwrap();
        assert_eq!(back, g);
    }
}
