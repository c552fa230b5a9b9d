//! Exact trainable-parameter counting.
//!
//! Conv layers have no bias and are each followed by a BatchNorm with an
//! affine scale and shift (`2 * out_channels`). Running statistics are
//! buffers, not parameters. Linear layers carry a bias.

use super::{ArchitectureSpec, Layer};

pub fn layer_params(layer: &Layer) -> u64 {
    match layer {
        Layer::Stem(c) | Layer::Conv(c) => {
            let out = c.out_channels as u64;
            (c.kernel_w * c.kernel_h * c.in_channels) as u64 * out + 2 * out
        }
        Layer::Pool(_) => 0,
        Layer::Downsample(d) => {
            let out = d.out_channels as u64;
            d.in_channels as u64 * out + 2 * out
        }
        Layer::Ffn(l) | Layer::Classifier(l) => {
            let out = l.out_features as u64;
            l.in_features as u64 * out + out
        }
    }
}

pub fn count_params(spec: &ArchitectureSpec) -> u64 {
    spec.layers().map(layer_params).sum()
}
