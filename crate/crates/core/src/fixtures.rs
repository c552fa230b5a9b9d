//! Hand-built reference architectures (CIFAR-style 3x3 stem, no stem
//! max-pool) used to pin down the parameter counter.

use crate::genome::{
    count_params, ArchBlock, ArchitectureSpec, ConvLayer, DownsampleLayer, HeadMode, Layer, LinearLayer, Shape,
};

fn block(input: Shape, convs: &[(usize, usize, usize)]) -> ArchBlock {
    let mut shape = input;
    let mut layers = Vec::with_capacity(convs.len());
    for &(out, k, s) in convs {
        let c = ConvLayer::new(shape, out, (k, k), (s, s));
        shape = c.output;
        layers.push(Layer::Conv(c));
    }
    let downsample = (input != shape).then_some(
        Layer::Downsample(DownsampleLayer { in_channels: input.c, out_channels: shape.c, input, output: shape }),
    );
    ArchBlock { layers, skip: true, downsample, input, output: shape }
}

fn assemble(input: Shape, num_classes: usize, stem_out: Shape, blocks: Vec<ArchBlock>) -> ArchitectureSpec {
    let stem = ConvLayer::new(input, 64, (3, 3), (1, 1));
    debug_assert_eq!(stem.output, stem_out);
    let feature_shape = blocks.last().map_or(stem_out, |b| b.output);
    ArchitectureSpec {
        input,
        num_classes,
        head_mode: HeadMode::GlobalAvgPool,
        stem: Some(Layer::Stem(stem)),
        blocks,
        feature_shape,
        ffn: Vec::new(),
        classifier: Layer::Classifier(LinearLayer {
            in_features: feature_shape.c,
            out_features: num_classes,
            relu: false,
        }),
    }
}

/// Basic-block ResNet-18 on 3x32x32 inputs.
pub fn resnet18(num_classes: usize) -> ArchitectureSpec {
    let input = Shape::new(3, 32, 32);
    let mut shape = Shape::new(64, 32, 32);
    let mut blocks = Vec::new();
    for (stage, width) in [64, 128, 256, 512].into_iter().enumerate() {
        for i in 0..2 {
            let stride = if stage > 0 && i == 0 { 2 } else { 1 };
            let b = block(shape, &[(width, 3, stride), (width, 3, 1)]);
            shape = b.output;
            blocks.push(b);
        }
    }
    assemble(input, num_classes, Shape::new(64, 32, 32), blocks)
}

/// Bottleneck ResNet-50 on 3x32x32 inputs.
pub fn resnet50(num_classes: usize) -> ArchitectureSpec {
    let input = Shape::new(3, 32, 32);
    let mut shape = Shape::new(64, 32, 32);
    let mut blocks = Vec::new();
    for (stage, (width, depth)) in [(64, 3), (128, 4), (256, 6), (512, 3)].into_iter().enumerate() {
        for i in 0..depth {
            let stride = if stage > 0 && i == 0 { 2 } else { 1 };
            let b = block(shape, &[(width, 1, 1), (width, 3, stride), (width * 4, 1, 1)]);
            shape = b.output;
            blocks.push(b);
        }
    }
    assemble(input, num_classes, Shape::new(64, 32, 32), blocks)
}

/// Looks up a fixture by name (`resnet18`, `resnet50`).
pub fn by_name(name: &str, num_classes: usize) -> Option<ArchitectureSpec> {
    match name {
        "resnet18" => Some(resnet18(num_classes)),
        "resnet50" => Some(resnet50(num_classes)),
        _ => None,
    }
}

/// Relative deviation of the fixture's count from `reference`.
pub fn relative_error(spec: &ArchitectureSpec, reference: f64) -> f64 {
    (count_params(spec) as f64 - reference).abs() / reference
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_consistent() {
        resnet18(100).check().unwrap();
        resnet50(100).check().unwrap();
    }

    #[test]
    fn exact_counts() {
        // torchvision counts with the 7x7 stem swapped for 3x3 and a 100-way head
        assert_eq!(count_params(&resnet18(100)), 11_220_132);
        assert_eq!(count_params(&resnet50(100)), 23_705_252);
    }
}
