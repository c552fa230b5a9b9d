//! Concrete architectures and the genome decoder.
//!
//! Convolution and pooling use SAME-style padding: each spatial dimension
//! becomes `ceil(in / stride)`, with the padding split as evenly as possible
//! and the odd pixel going after. The rule is total for any kernel size, so
//! decoding a validated genome never fails.

use serde::{Deserialize, Serialize};

use super::{Genome, GenomeError, HeadMode, PoolType, SearchSpaceConfig, Shape, Unit};

pub const STEM_CHANNELS: usize = 64;
pub const STEM_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub padding: Padding,
    pub input: Shape,
    pub output: Shape,
}

impl ConvLayer {
    pub fn new(input: Shape, out_channels: usize, kernel: (usize, usize), stride: (usize, usize)) -> Self {
        let (kernel_h, kernel_w) = kernel;
        let (stride_h, stride_w) = stride;
        let output = conv_output(input, out_channels, stride_h, stride_w);
        let (top, bottom) = same_padding(input.h, kernel_h, stride_h);
        let (left, right) = same_padding(input.w, kernel_w, stride_w);
        Self {
            in_channels: input.c,
            out_channels,
            kernel_h,
            kernel_w,
            stride_h,
            stride_w,
            padding: Padding { top, bottom, left, right },
            input,
            output,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolLayer {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pool_type: PoolType,
    pub padding: Padding,
    pub input: Shape,
    pub output: Shape,
}

impl PoolLayer {
    pub fn new(input: Shape, kernel: (usize, usize), stride: (usize, usize), pool_type: PoolType) -> Self {
        let (kernel_h, kernel_w) = kernel;
        let (stride_h, stride_w) = stride;
        let (top, bottom) = same_padding(input.h, kernel_h, stride_h);
        let (left, right) = same_padding(input.w, kernel_w, stride_w);
        Self {
            kernel_h,
            kernel_w,
            stride_h,
            stride_w,
            pool_type,
            padding: Padding { top, bottom, left, right },
            input,
            output: pool_output(input, stride_h, stride_w),
        }
    }
}

/// Shortcut projection: 1x1 conv (stride 1) + BN, then adaptive average
/// pooling to exactly `output.h x output.w`. No ReLU.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownsampleLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: Shape,
    pub output: Shape,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub in_features: usize,
    pub out_features: usize,
    /// ReLU after this layer.
    pub relu: bool,
}

/// One concrete layer. Conv and stem layers carry BN + ReLU.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    Stem(ConvLayer),
    Conv(ConvLayer),
    Pool(PoolLayer),
    Downsample(DownsampleLayer),
    Ffn(LinearLayer),
    Classifier(LinearLayer),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Stem(_) => "stem",
            Layer::Conv(_) => "conv",
            Layer::Pool(_) => "pool",
            Layer::Downsample(_) => "downsample",
            Layer::Ffn(_) => "ffn",
            Layer::Classifier(_) => "classifier",
        }
    }

    /// Output shape; linear layers report `(features, 1, 1)`.
    pub fn output(&self) -> Shape {
        match self {
            Layer::Stem(c) | Layer::Conv(c) => c.output,
            Layer::Pool(p) => p.output,
            Layer::Downsample(d) => d.output,
            Layer::Ffn(l) | Layer::Classifier(l) => Shape::new(l.out_features, 1, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchBlock {
    pub layers: Vec<Layer>,
    pub skip: bool,
    pub downsample: Option<Layer>,
    pub input: Shape,
    pub output: Shape,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input: Shape,
    pub num_classes: usize,
    pub head_mode: HeadMode,
    pub stem: Option<Layer>,
    pub blocks: Vec<ArchBlock>,
    /// Shape of the feature map entering the head.
    pub feature_shape: Shape,
    pub ffn: Vec<Layer>,
    pub classifier: Layer,
}

impl ArchitectureSpec {
    /// Every layer, skip-path projections included, in forward order.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.stem
            .iter()
            .chain(self.blocks.iter().flat_map(|b| b.layers.iter().chain(b.downsample.iter())))
            .chain(self.ffn.iter())
            .chain(std::iter::once(&self.classifier))
    }

    /// `(label, output shape)` for each layer in forward order.
    pub fn shape_trace(&self) -> Vec<(String, Shape)> {
        let mut trace = vec![("input".to_string(), self.input)];
        if let Some(stem) = &self.stem {
            trace.push(("stem".into(), stem.output()));
        }
        for (bi, block) in self.blocks.iter().enumerate() {
            for (li, layer) in block.layers.iter().enumerate() {
                trace.push((format!("block{bi}.{}{li}", layer.kind()), layer.output()));
            }
            if let Some(ds) = &block.downsample {
                trace.push((format!("block{bi}.downsample"), ds.output()));
            }
        }
        for (i, l) in self.ffn.iter().enumerate() {
            trace.push((format!("ffn{i}"), l.output()));
        }
        trace.push(("classifier".into(), self.classifier.output()));
        trace
    }

    /// Structural consistency check for specs loaded from outside the
    /// decoder (hand-built fixtures, JSON files).
    pub fn check(&self) -> Result<(), GenomeError> {
        let bad = |msg: String| Err(GenomeError::MalformedSpec(msg));
        let mut shape = self.input;
        if let Some(stem) = &self.stem {
            match stem {
                Layer::Stem(c) => check_conv(c, shape, "stem")?,
                other => return bad(format!("stem slot holds a {} layer", other.kind())),
            }
            shape = stem.output();
        }
        for (bi, block) in self.blocks.iter().enumerate() {
            if block.input != shape {
                return bad(format!("block{bi} input {} != previous output {shape}", block.input));
            }
            if block.layers.is_empty() {
                return bad(format!("block{bi} has no layers"));
            }
            for (li, layer) in block.layers.iter().enumerate() {
                let at = format!("block{bi}.layer{li}");
                match layer {
                    Layer::Conv(c) => check_conv(c, shape, &at)?,
                    Layer::Pool(p) => {
                        if p.stride_h == 0 || p.stride_w == 0 || p.kernel_h == 0 || p.kernel_w == 0 {
                            return bad(format!("{at}: zero-sized pool parameter"));
                        }
                        if p.input != shape || p.output != pool_output(shape, p.stride_h, p.stride_w) {
                            return bad(format!("{at}: pool shapes disagree with the SAME rule"));
                        }
                    }
                    other => return bad(format!("{at}: {} layer inside a block", other.kind())),
                }
                shape = layer.output();
            }
            if block.output != shape {
                return bad(format!("block{bi} output {} != last layer output {shape}", block.output));
            }
            let needs = block.skip && block.input != block.output;
            match (&block.downsample, needs) {
                (None, false) => {}
                (Some(Layer::Downsample(d)), true) => {
                    if d.input != block.input || d.output != block.output {
                        return bad(format!("block{bi} downsample shapes do not bridge the block"));
                    }
                    if d.in_channels != d.input.c || d.out_channels != d.output.c {
                        return bad(format!("block{bi} downsample channels mismatch"));
                    }
                }
                (Some(_), true) => return bad(format!("block{bi} skip path is not a downsample layer")),
                (Some(_), false) => return bad(format!("block{bi} has a downsample it does not need")),
                (None, true) => return bad(format!("block{bi} shape changes but has no downsample")),
            }
        }
        if self.feature_shape != shape {
            return bad(format!("feature_shape {} != last block output {shape}", self.feature_shape));
        }
        let mut features = head_features(shape, self.head_mode);
        for (i, l) in self.ffn.iter().enumerate() {
            match l {
                Layer::Ffn(lin) if lin.in_features == features && lin.out_features >= 1 => {
                    features = lin.out_features;
                }
                _ => return bad(format!("ffn{i} is not a linear layer taking {features} features")),
            }
        }
        match &self.classifier {
            Layer::Classifier(lin)
                if lin.in_features == features && lin.out_features == self.num_classes && !lin.relu => {}
            _ => return bad(format!("classifier must map {features} features to {} classes", self.num_classes)),
        }
        Ok(())
    }
}

fn check_conv(c: &ConvLayer, input: Shape, at: &str) -> Result<(), GenomeError> {
    if c.out_channels == 0 || c.kernel_h == 0 || c.kernel_w == 0 || c.stride_h == 0 || c.stride_w == 0 {
        return Err(GenomeError::MalformedSpec(format!("{at}: zero-sized conv parameter")));
    }
    let expect = ConvLayer::new(input, c.out_channels, (c.kernel_h, c.kernel_w), (c.stride_h, c.stride_w));
    if *c != expect {
        return Err(GenomeError::MalformedSpec(format!(
            "{at}: declared conv {}->{} disagrees with the SAME rule (expected output {})",
            c.input, c.output, expect.output
        )));
    }
    Ok(())
}

/// `ceil(input / stride)`.
fn same_dim(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

/// Padding `(before, after)` that realizes `ceil(input / stride)` outputs.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = same_dim(input, stride);
    let total = ((out.saturating_sub(1)) * stride + kernel).saturating_sub(input);
    (total / 2, total - total / 2)
}

pub fn conv_output(input: Shape, out_channels: usize, stride_h: usize, stride_w: usize) -> Shape {
    Shape::new(out_channels, same_dim(input.h, stride_h), same_dim(input.w, stride_w))
}

pub fn pool_output(input: Shape, stride_h: usize, stride_w: usize) -> Shape {
    Shape::new(input.c, same_dim(input.h, stride_h), same_dim(input.w, stride_w))
}

/// Input width of the first FFN (or classifier) layer.
pub fn head_features(shape: Shape, mode: HeadMode) -> usize {
    match mode {
        HeadMode::Flatten => shape.numel(),
        HeadMode::GlobalAvgPool => shape.c,
    }
}

/// Shape-relevant description of a conv or pool layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeOp {
    Conv { out_channels: usize, stride_h: usize, stride_w: usize },
    Pool { stride_h: usize, stride_w: usize },
}

/// Output shape after each op, starting from `input`.
pub fn propagate_shapes(ops: &[ShapeOp], input: Shape) -> Result<Vec<Shape>, GenomeError> {
    if input.c == 0 || input.h == 0 || input.w == 0 {
        return Err(GenomeError::Shape { location: "input".into(), detail: format!("non-positive shape {input}") });
    }
    let zero = |i: usize| GenomeError::Shape {
        location: format!("op{i}"),
        detail: "stride and channel count must be at least 1".into(),
    };
    let mut shape = input;
    let mut out = Vec::with_capacity(ops.len());
    for (i, op) in ops.iter().enumerate() {
        shape = match *op {
            ShapeOp::Conv { out_channels, stride_h, stride_w } => {
                if out_channels == 0 || stride_h == 0 || stride_w == 0 {
                    return Err(zero(i));
                }
                conv_output(shape, out_channels, stride_h, stride_w)
            }
            ShapeOp::Pool { stride_h, stride_w } => {
                if stride_h == 0 || stride_w == 0 {
                    return Err(zero(i));
                }
                pool_output(shape, stride_h, stride_w)
            }
        };
        out.push(shape);
    }
    Ok(out)
}

fn floor_field(v: f64, location: impl FnOnce() -> String) -> Result<usize, GenomeError> {
    if !v.is_finite() || v < 1.0 {
        return Err(GenomeError::Shape { location: location(), detail: format!("field value {v} floors below 1") });
    }
    Ok(v.floor() as usize)
}

/// Decodes a genome into a concrete architecture for `cfg`.
pub fn decode(g: &Genome, cfg: &SearchSpaceConfig) -> Result<ArchitectureSpec, GenomeError> {
    let mut shape = cfg.input;
    if shape.c == 0 || shape.h == 0 || shape.w == 0 {
        return Err(GenomeError::Shape { location: "input".into(), detail: format!("non-positive shape {shape}") });
    }
    let stem = if cfg.stem_enabled {
        let layer = ConvLayer::new(shape, STEM_CHANNELS, (STEM_KERNEL, STEM_KERNEL), (1, 1));
        shape = layer.output;
        Some(Layer::Stem(layer))
    } else {
        None
    };

    let mut blocks = Vec::with_capacity(g.blocks.len());
    for (bi, block) in g.blocks.iter().enumerate() {
        let input = shape;
        let mut layers = Vec::with_capacity(block.units.len());
        for (ui, unit) in block.units.iter().enumerate() {
            let at = |name: &str| format!("blocks[{bi}].units[{ui}].{name}");
            let layer = match unit {
                Unit::Conv(c) => {
                    let kw = floor_field(c.filter_w, || at("filter_w"))?;
                    let kh = floor_field(c.filter_h, || at("filter_h"))?;
                    let sw = floor_field(c.stride_w, || at("stride_w"))?;
                    let sh = floor_field(c.stride_h, || at("stride_h"))?;
                    let ch = floor_field(c.out_channels, || at("out_channels"))?;
                    Layer::Conv(ConvLayer::new(shape, ch, (kh, kw), (sh, sw)))
                }
                Unit::Pool(p) => {
                    let kw = floor_field(p.filter_w, || at("filter_w"))?;
                    let kh = floor_field(p.filter_h, || at("filter_h"))?;
                    let sw = floor_field(p.stride_w, || at("stride_w"))?;
                    let sh = floor_field(p.stride_h, || at("stride_h"))?;
                    Layer::Pool(PoolLayer::new(shape, (kh, kw), (sh, sw), p.pool_type))
                }
            };
            shape = layer.output();
            layers.push(layer);
        }
        let downsample = (cfg.skip_enabled && input != shape).then_some(
            Layer::Downsample(DownsampleLayer { in_channels: input.c, out_channels: shape.c, input, output: shape }),
        );
        blocks.push(ArchBlock { layers, skip: cfg.skip_enabled, downsample, input, output: shape });
    }

    let mut features = head_features(shape, cfg.head_mode);
    let mut ffn = Vec::with_capacity(g.ffn.len());
    for (i, f) in g.ffn.iter().enumerate() {
        let out = floor_field(f.out_neurons, || format!("ffn[{i}].out_neurons"))?;
        ffn.push(Layer::Ffn(LinearLayer { in_features: features, out_features: out, relu: true }));
        features = out;
    }
    let classifier = Layer::Classifier(LinearLayer { in_features: features, out_features: cfg.num_classes, relu: false });
    Ok(ArchitectureSpec {
        input: cfg.input,
        num_classes: cfg.num_classes,
        head_mode: cfg.head_mode,
        stem,
        blocks,
        feature_shape: shape,
        ffn,
        classifier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{ConvGene, FfnGene, PoolGene, ResNetBlockGene};

    fn conv(k: f64, s: f64, ch: f64) -> Unit {
        Unit::Conv(ConvGene { filter_w: k, filter_h: k, stride_w: s, stride_h: s, out_channels: ch })
    }

    #[test]
    fn same_rule_dims() {
        let s = Shape::new(3, 32, 32);
        assert_eq!(conv_output(s, 8, 2, 2), Shape::new(8, 16, 16));
        assert_eq!(pool_output(Shape::new(1, 28, 28), 4, 4), Shape::new(1, 7, 7));
        let l = ConvLayer::new(Shape::new(1, 28, 28), 4, (20, 20), (1, 1));
        assert_eq!(l.output, Shape::new(4, 28, 28));
        assert_eq!(l.padding.top + l.padding.bottom, 19);
        assert_eq!((l.padding.top, l.padding.bottom), (9, 10));
    }

    #[test]
    fn propagate_matches_layer_constructors() {
        let ops = [
            ShapeOp::Conv { out_channels: 16, stride_h: 2, stride_w: 1 },
            ShapeOp::Pool { stride_h: 4, stride_w: 4 },
        ];
        let trace = propagate_shapes(&ops, Shape::new(3, 33, 32)).unwrap();
        assert_eq!(trace, vec![Shape::new(16, 17, 32), Shape::new(16, 5, 8)]);
        assert!(propagate_shapes(&ops, Shape::new(0, 1, 1)).is_err());
    }

    #[test]
    fn one_chain_block_has_no_downsample() {
        let cfg = SearchSpaceConfig::mnist();
        let g = Genome {
            blocks: vec![ResNetBlockGene { units: vec![conv(5.7, 2.2, 32.9)] }],
            ffn: vec![FfnGene { out_neurons: 1500.3 }],
        };
        let spec = decode(&g, &cfg).unwrap();
        assert!(spec.stem.is_none());
        assert!(!spec.blocks[0].skip);
        assert!(spec.blocks[0].downsample.is_none());
        assert_eq!(spec.feature_shape, Shape::new(32, 14, 14));
        spec.check().unwrap();
    }

    #[test]
    fn identity_skip_when_shapes_match() {
        let cfg = SearchSpaceConfig::cifar100();
        let g = Genome {
            blocks: vec![ResNetBlockGene { units: vec![conv(3.0, 1.0, 64.0), conv(3.0, 1.0, 64.0)] }],
            ffn: vec![FfnGene { out_neurons: 1000.0 }],
        };
        let spec = decode(&g, &cfg).unwrap();
        assert!(spec.blocks[0].skip);
        assert!(spec.blocks[0].downsample.is_none());
        assert_eq!(spec.blocks[0].input, spec.blocks[0].output);
    }

    #[test]
    fn shape_change_inserts_downsample() {
        let mut cfg = SearchSpaceConfig::cifar100();
        cfg.conv_channels.max = 128;
        let g = Genome {
            blocks: vec![ResNetBlockGene { units: vec![conv(3.0, 2.0, 128.0)] }],
            ffn: vec![FfnGene { out_neurons: 1000.0 }],
        };
        let spec = decode(&g, &cfg).unwrap();
        let b = &spec.blocks[0];
        assert_eq!(b.input, Shape::new(64, 32, 32));
        assert_eq!(b.output, Shape::new(128, 16, 16));
        match b.downsample.as_ref().unwrap() {
            Layer::Downsample(d) => {
                assert_eq!((d.in_channels, d.out_channels), (64, 128));
                assert_eq!((d.output.h, d.output.w), (16, 16));
            }
            other => panic!("unexpected {other:?}"),
        }
        spec.check().unwrap();
    }

    #[test]
    fn head_uses_flatten_or_gap() {
        let mut cfg = SearchSpaceConfig::cifar100();
        let g = Genome {
            blocks: vec![ResNetBlockGene {
                units: vec![
                    conv(3.0, 1.0, 10.0),
                    Unit::Pool(PoolGene {
                        filter_w: 2.0,
                        filter_h: 2.0,
                        stride_w: 4.0,
                        stride_h: 4.0,
                        pool_type: PoolType::Max,
                    }),
                ],
            }],
            ffn: vec![FfnGene { out_neurons: 1000.0 }],
        };
        let spec = decode(&g, &cfg).unwrap();
        assert_eq!(spec.ffn[0], Layer::Ffn(LinearLayer { in_features: 10 * 8 * 8, out_features: 1000, relu: true }));
        assert_eq!(
            spec.classifier,
            Layer::Classifier(LinearLayer { in_features: 1000, out_features: 100, relu: false })
        );
        cfg.head_mode = HeadMode::GlobalAvgPool;
        let spec = decode(&g, &cfg).unwrap();
        assert_eq!(spec.ffn[0], Layer::Ffn(LinearLayer { in_features: 10, out_features: 1000, relu: true }));
    }

    #[test]
    fn decode_rejects_sub_unit_fields() {
        let cfg = SearchSpaceConfig::mnist();
        let g = Genome {
            blocks: vec![ResNetBlockGene { units: vec![conv(3.0, 1.0, 0.5)] }],
            ffn: vec![],
        };
        assert!(matches!(decode(&g, &cfg), Err(GenomeError::Shape { .. })));
    }

    #[test]
    fn check_rejects_tampered_trace() {
        let cfg = SearchSpaceConfig::cifar100();
        let g = Genome {
            blocks: vec![ResNetBlockGene { units: vec![conv(3.0, 2.0, 16.0)] }],
            ffn: vec![FfnGene { out_neurons: 1000.0 }],
        };
        let mut spec = decode(&g, &cfg).unwrap();
        if let Layer::Conv(c) = &mut spec.blocks[0].layers[0] {
            c.output.h = 15;
        }
        assert!(spec.check().is_err());
    }
}
