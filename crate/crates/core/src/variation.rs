//! Genetic operators for variable-length genomes.
//!
//! Crossover splices the conv units of every block into one list (likewise
//! pools and FFN layers), pairs the two parents positionally up to the
//! shorter list, and runs SBX on each gated pair. Units without a partner
//! stay where they are, so block structure is untouched.
//!
//! Mutation adds, removes or perturbs one layer per type. The flattened unit
//! list is then cut back into blocks of the original sizes; surplus units
//! become a new trailing block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::genome::{
    validate, ConvGene, FfnGene, FieldDomain, Genome, PoolGene, ResNetBlockGene, SearchSpaceConfig, Unit,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VariationError {
    #[error("cannot assemble blocks from an empty unit list")]
    EmptyUnits,
    #[error("invalid variation config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariationConfig {
    pub crossover_prob: f64,
    /// Probability of each mutation kind, per layer type.
    pub mutation_prob: f64,
    pub eta_c: f64,
    pub eta_m: f64,
}

impl Default for VariationConfig {
    fn default() -> Self {
        Self { crossover_prob: 0.9, mutation_prob: 0.2, eta_c: 20.0, eta_m: 20.0 }
    }
}

impl VariationConfig {
    pub fn validate(&self) -> Result<(), VariationError> {
        for (name, p) in [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(VariationError::InvalidConfig(format!("{name} = {p} is not a probability")));
            }
        }
        for (name, eta) in [("eta_c", self.eta_c), ("eta_m", self.eta_m)] {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(VariationError::InvalidConfig(format!("{name} = {eta} must be positive")));
            }
        }
        Ok(())
    }
}

/// SBX spread factor for a uniform draw `u` in `[0, 1)`.
pub fn sbx_beta(u: f64, eta: f64) -> f64 {
    let e = 1.0 / (eta + 1.0);
    if u < 0.5 {
        (2.0 * u).powf(e)
    } else {
        (1.0 / (2.0 * (1.0 - u))).powf(e)
    }
}

/// SBX children before clamping, smaller first.
pub fn sbx_unclamped(a: f64, b: f64, eta: f64, u: f64) -> (f64, f64) {
    let beta = sbx_beta(u, eta);
    let spread = beta * (b - a).abs();
    (0.5 * ((a + b) - spread), 0.5 * ((a + b) + spread))
}

/// SBX with an explicit draw, children clamped to `[lo, hi]`.
pub fn sbx_with_u(a: f64, b: f64, lo: f64, hi: f64, eta: f64, u: f64) -> (f64, f64) {
    let (c1, c2) = sbx_unclamped(a, b, eta, u);
    (c1.clamp(lo, hi), c2.clamp(lo, hi))
}

pub fn sbx<R: Rng + ?Sized>(a: f64, b: f64, lo: f64, hi: f64, eta: f64, rng: &mut R) -> (f64, f64) {
    let u: f64 = rng.random();
    sbx_with_u(a, b, lo, hi, eta, u)
}

/// Bounded polynomial mutation with an explicit draw.
pub fn pm_with_u(x: f64, lo: f64, hi: f64, eta: f64, u: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return x.clamp(lo, hi);
    }
    let pow = 1.0 / (eta + 1.0);
    let delta_q = if u < 0.5 {
        let xy = 1.0 - (x - lo) / span;
        let val = 2.0 * u + (1.0 - 2.0 * u) * xy.powf(eta + 1.0);
        val.powf(pow) - 1.0
    } else {
        let xy = 1.0 - (hi - x) / span;
        let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy.powf(eta + 1.0);
        1.0 - val.powf(pow)
    };
    (x + delta_q * span).clamp(lo, hi)
}

pub fn pm<R: Rng + ?Sized>(x: f64, lo: f64, hi: f64, eta: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    pm_with_u(x, lo, hi, eta, u)
}

/// SBX on one field pair, keeping each child on its parent's side and
/// normalizing into the field's domain.
fn cross_field<R: Rng + ?Sized>(a: &mut f64, b: &mut f64, d: &FieldDomain<'_>, eta: f64, rng: &mut R) {
    let (lo, hi) = d.real_bounds();
    let (c1, c2) = sbx(*a, *b, lo, hi, eta, rng);
    let (ca, cb) = if *a <= *b { (c1, c2) } else { (c2, c1) };
    *a = d.normalize(ca);
    *b = d.normalize(cb);
}

fn mutate_field<R: Rng + ?Sized>(x: &mut f64, d: &FieldDomain<'_>, eta: f64, rng: &mut R) {
    let (lo, hi) = d.real_bounds();
    *x = d.normalize(pm(x.clamp(lo, hi), lo, hi, eta, rng));
}

fn convs_mut(g: &mut Genome) -> Vec<&mut ConvGene> {
    g.units_mut()
        .filter_map(|u| match u {
            Unit::Conv(c) => Some(c),
            Unit::Pool(_) => None,
        })
        .collect()
}

fn pools_mut(g: &mut Genome) -> Vec<&mut PoolGene> {
    g.units_mut()
        .filter_map(|u| match u {
            Unit::Pool(p) => Some(p),
            Unit::Conv(_) => None,
        })
        .collect()
}

/// Splice-and-pair crossover. Both children keep their parent's layout.
pub fn crossover<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    vcfg: &VariationConfig,
    cfg: &SearchSpaceConfig,
    rng: &mut R,
) -> (Genome, Genome) {
    let (mut ca, mut cb) = (a.clone(), b.clone());
    let p = vcfg.crossover_prob;
    let eta = vcfg.eta_c;

    let conv_d = cfg.conv_domains();
    for (x, y) in convs_mut(&mut ca).into_iter().zip(convs_mut(&mut cb)) {
        if rng.random_bool(p) {
            for ((fx, fy), d) in x.fields_mut().into_iter().zip(y.fields_mut()).zip(&conv_d) {
                cross_field(fx, fy, d, eta, rng);
            }
        }
    }

    let pool_d = cfg.pool_domains();
    for (x, y) in pools_mut(&mut ca).into_iter().zip(pools_mut(&mut cb)) {
        if rng.random_bool(p) {
            for ((fx, fy), d) in x.fields_mut().into_iter().zip(y.fields_mut()).zip(&pool_d) {
                cross_field(fx, fy, d, eta, rng);
            }
            if rng.random_bool(0.5) {
                std::mem::swap(&mut x.pool_type, &mut y.pool_type);
            }
        }
    }

    let ffn_d = cfg.ffn_domain();
    for (x, y) in ca.ffn.iter_mut().zip(cb.ffn.iter_mut()) {
        if rng.random_bool(p) {
            cross_field(&mut x.out_neurons, &mut y.out_neurons, &ffn_d, eta, rng);
        }
    }
    (ca, cb)
}

/// Cuts a unit list into blocks following `original_sizes`; surplus units
/// form one extra trailing block, a shortfall shrinks or drops trailing
/// blocks.
pub fn reassemble_blocks(units: Vec<Unit>, original_sizes: &[usize]) -> Result<Vec<ResNetBlockGene>, VariationError> {
    if units.is_empty() {
        return Err(VariationError::EmptyUnits);
    }
    let mut it = units.into_iter();
    let mut blocks = Vec::with_capacity(original_sizes.len() + 1);
    for &size in original_sizes.iter().filter(|&&s| s > 0) {
        let chunk: Vec<Unit> = it.by_ref().take(size).collect();
        if chunk.is_empty() {
            break;
        }
        blocks.push(ResNetBlockGene { units: chunk });
    }
    let rest: Vec<Unit> = it.collect();
    if !rest.is_empty() {
        blocks.push(ResNetBlockGene { units: rest });
    }
    Ok(blocks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LayerType {
    Conv,
    Pool,
    Ffn,
}

const LAYER_TYPES: [LayerType; 3] = [LayerType::Conv, LayerType::Pool, LayerType::Ffn];

struct Draft<'a> {
    units: Vec<Unit>,
    ffn: Vec<FfnGene>,
    sizes: Vec<usize>,
    cfg: &'a SearchSpaceConfig,
}

impl Draft<'_> {
    fn assemble(&self, units: Vec<Unit>) -> Option<Genome> {
        let blocks = reassemble_blocks(units, &self.sizes).ok()?;
        Some(Genome { blocks, ffn: self.ffn.clone() })
    }

    /// Accepts a structural edit of the unit list only if the reassembled
    /// genome is still valid.
    fn try_units(&mut self, units: Vec<Unit>) -> bool {
        match self.assemble(units.clone()) {
            Some(g) if validate(&g, self.cfg).is_empty() => {
                self.units = units;
                true
            }
            _ => false,
        }
    }

    fn positions(&self, pred: fn(&Unit) -> bool) -> Vec<usize> {
        self.units.iter().enumerate().filter(|(_, u)| pred(u)).map(|(i, _)| i).collect()
    }
}

/// Add, remove and parameter mutations, each gated per layer type with
/// `mutation_prob`. Structural edits that would leave the search space
/// (a block without a conv, too many blocks) are skipped.
pub fn mutate<R: Rng + ?Sized>(g: &Genome, vcfg: &VariationConfig, cfg: &SearchSpaceConfig, rng: &mut R) -> Genome {
    let mut d = Draft { units: g.units().copied().collect(), ffn: g.ffn.clone(), sizes: g.block_sizes(), cfg };
    let p = vcfg.mutation_prob;
    let eta = vcfg.eta_m;

    for ty in LAYER_TYPES {
        if !rng.random_bool(p) {
            continue;
        }
        match ty {
            LayerType::Conv => {
                if d.positions(Unit::is_conv).len() < cfg.conv_total().max as usize {
                    let mut units = d.units.clone();
                    units.push(Unit::Conv(ConvGene::random(cfg, rng)));
                    d.try_units(units);
                }
            }
            LayerType::Pool => {
                if d.positions(Unit::is_pool).len() < cfg.pools.max as usize {
                    let mut units = d.units.clone();
                    units.push(Unit::Pool(PoolGene::random(cfg, rng)));
                    d.try_units(units);
                }
            }
            LayerType::Ffn => {
                if d.ffn.len() < cfg.ffn_layers.max as usize {
                    d.ffn.push(FfnGene::random(cfg, rng));
                }
            }
        }
    }

    for ty in LAYER_TYPES {
        if !rng.random_bool(p) {
            continue;
        }
        match ty {
            LayerType::Conv | LayerType::Pool => {
                let (pos, min) = if ty == LayerType::Conv {
                    (d.positions(Unit::is_conv), cfg.conv_total().min)
                } else {
                    (d.positions(Unit::is_pool), cfg.pools.min)
                };
                if pos.len() > min as usize {
                    let victim = pos[rng.random_range(0..pos.len())];
                    let mut units = d.units.clone();
                    units.remove(victim);
                    d.try_units(units);
                }
            }
            LayerType::Ffn => {
                if d.ffn.len() > cfg.ffn_layers.min as usize {
                    let victim = rng.random_range(0..d.ffn.len());
                    d.ffn.remove(victim);
                }
            }
        }
    }

    for ty in LAYER_TYPES {
        if !rng.random_bool(p) {
            continue;
        }
        match ty {
            LayerType::Conv => {
                let pos = d.positions(Unit::is_conv);
                if pos.is_empty() {
                    continue;
                }
                let at = pos[rng.random_range(0..pos.len())];
                if let Unit::Conv(c) = &mut d.units[at] {
                    for (f, dom) in c.fields_mut().into_iter().zip(&cfg.conv_domains()) {
                        mutate_field(f, dom, eta, rng);
                    }
                }
            }
            LayerType::Pool => {
                let pos = d.positions(Unit::is_pool);
                if pos.is_empty() {
                    continue;
                }
                let at = pos[rng.random_range(0..pos.len())];
                if let Unit::Pool(pg) = &mut d.units[at] {
                    for (f, dom) in pg.fields_mut().into_iter().zip(&cfg.pool_domains()) {
                        mutate_field(f, dom, eta, rng);
                    }
                    if rng.random_bool(0.5) {
                        pg.pool_type = pg.pool_type.flipped();
                    }
                }
            }
            LayerType::Ffn => {
                if d.ffn.is_empty() {
                    continue;
                }
                let at = rng.random_range(0..d.ffn.len());
                mutate_field(&mut d.ffn[at].out_neurons, &cfg.ffn_domain(), eta, rng);
            }
        }
    }

    let units = std::mem::take(&mut d.units);
    d.assemble(units).unwrap_or_else(|| g.clone())
}
