use serde::Serialize;

use super::{FieldDomain, Genome, IntRange, SearchSpaceConfig, Unit};

/// One broken bound: which field, what it holds, what it must satisfy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub value: String,
    pub bound: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} = {} violates {}", self.field, self.value, self.bound)
    }
}

/// Lists every violated genome or gene invariant; empty means valid.
pub fn validate(g: &Genome, cfg: &SearchSpaceConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let count = |field: &str, n: usize, r: IntRange, out: &mut Vec<Violation>| {
        if !r.contains(n) {
            out.push(Violation { field: field.into(), value: n.to_string(), bound: r.to_string() });
        }
    };
    count("blocks.len", g.blocks.len(), cfg.blocks, &mut out);
    count("pools.total", g.pool_count(), cfg.pools, &mut out);
    count("ffn.len", g.ffn.len(), cfg.ffn_layers, &mut out);

    let field = |name: String, v: f64, d: &FieldDomain<'_>, out: &mut Vec<Violation>| {
        if !d.admits(v) {
            out.push(Violation { field: name, value: format!("{v}"), bound: format!("floor in {}", d.describe()) });
        }
    };
    const CONV: [&str; 5] = ["filter_w", "filter_h", "stride_w", "stride_h", "out_channels"];
    const POOL: [&str; 4] = ["filter_w", "filter_h", "stride_w", "stride_h"];
    let conv_d = cfg.conv_domains();
    let pool_d = cfg.pool_domains();
    for (bi, block) in g.blocks.iter().enumerate() {
        if block.units.is_empty() {
            out.push(Violation {
                field: format!("blocks[{bi}].units.len"),
                value: "0".into(),
                bound: ">= 1".into(),
            });
        }
        count(&format!("blocks[{bi}].convs"), block.conv_count(), cfg.convs_per_block, &mut out);
        for (ui, unit) in block.units.iter().enumerate() {
            match unit {
                Unit::Conv(c) => {
                    for ((name, v), d) in CONV.iter().zip(c.fields()).zip(&conv_d) {
                        field(format!("blocks[{bi}].units[{ui}].{name}"), v, d, &mut out);
                    }
                }
                Unit::Pool(p) => {
                    for ((name, v), d) in POOL.iter().zip(p.fields()).zip(&pool_d) {
                        field(format!("blocks[{bi}].units[{ui}].{name}"), v, d, &mut out);
                    }
                }
            }
        }
    }
    let ffn_d = cfg.ffn_domain();
    for (i, f) in g.ffn.iter().enumerate() {
        field(format!("ffn[{i}].out_neurons"), f.out_neurons, &ffn_d, &mut out);
    }
    out
}
