//! Feature extractors. Both produce five maps at strides 2, 4, 8, 16, 32.

use mstnet_tensor::{ops, Float, Var};

use crate::config::Backbone as BackboneKind;
use crate::nn::{BatchNorm, Cbr, Conv2d, Ctx};
use crate::params::ParamBuilder;

pub const RESNET50_CHANNELS: [usize; 5] = [64, 256, 512, 1024, 2048];
pub const TINY_CHANNELS: [usize; 5] = [8, 16, 32, 64, 128];

#[derive(Clone, Debug)]
struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    conv3: Conv2d,
    bn3: BatchNorm,
    downsample: Option<(Conv2d, BatchNorm)>,
}

impl Bottleneck {
    fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cin: usize, width: usize, stride: usize) -> Self {
        let cout = width * 4;
        let downsample = (stride != 1 || cin != cout).then(|| {
            let mut d = pb.sub("downsample");
            (Conv2d::new(&mut d.sub("0"), cin, cout, 1, stride, 1, false), BatchNorm::new(&mut d.sub("1"), cout))
        });
        Bottleneck {
            conv1: Conv2d::new(&mut pb.sub("conv1"), cin, width, 1, 1, 1, false),
            bn1: BatchNorm::new(&mut pb.sub("bn1"), width),
            conv2: Conv2d::new(&mut pb.sub("conv2"), width, width, 3, stride, 1, false),
            bn2: BatchNorm::new(&mut pb.sub("bn2"), width),
            conv3: Conv2d::new(&mut pb.sub("conv3"), width, cout, 1, 1, 1, false),
            bn3: BatchNorm::new(&mut pb.sub("bn3"), cout),
            downsample,
        }
    }

    fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let h = ops::relu(&self.bn1.forward(ctx, &self.conv1.forward(ctx, x)));
        let h = ops::relu(&self.bn2.forward(ctx, &self.conv2.forward(ctx, &h)));
        let h = self.bn3.forward(ctx, &self.conv3.forward(ctx, &h));
        let skip = match &self.downsample {
            Some((c, b)) => b.forward(ctx, &c.forward(ctx, x)),
            None => x.clone(),
        };
        ops::relu(&ops::add(&h, &skip))
    }
}

/// ResNet-50 without the classifier. Parameter names follow the torchvision
/// layout (`conv1`, `bn1`, `layer{1..4}.{i}.conv{1..3}`, `...downsample.{0,1}`).
#[derive(Clone, Debug)]
pub struct ResNet50 {
    conv1: Conv2d,
    bn1: BatchNorm,
    layers: Vec<Vec<Bottleneck>>,
}

impl ResNet50 {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>) -> Self {
        let conv1 = Conv2d::new(&mut pb.sub("conv1"), 3, 64, 7, 2, 1, false);
        let bn1 = BatchNorm::new(&mut pb.sub("bn1"), 64);
        let mut cin = 64;
        let mut layers = Vec::new();
        for (li, (&blocks, &width)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
            let mut lp = pb.sub(&format!("layer{}", li + 1));
            let stride = if li == 0 { 1 } else { 2 };
            let layer: Vec<Bottleneck> = (0..blocks)
                .map(|b| {
                    let blk = Bottleneck::new(&mut lp.sub(&b.to_string()), cin, width, if b == 0 { stride } else { 1 });
                    cin = width * 4;
                    blk
                })
                .collect();
            layers.push(layer);
        }
        ResNet50 { conv1, bn1, layers }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> [Var<T>; 5] {
        let stem = ops::relu(&self.bn1.forward(ctx, &self.conv1.forward(ctx, x)));
        let mut h = ops::max_pool2d(&stem, 3, 2, 1);
        let mut feats = vec![stem];
        for layer in &self.layers {
            for blk in layer {
                h = blk.forward(ctx, &h);
            }
            feats.push(h.clone());
        }
        feats.try_into().expect("five levels")
    }
}

/// Five stages of (3×3 stride-2 CBR, 3×3 stride-1 CBR).
#[derive(Clone, Debug)]
pub struct TinyBackbone {
    stages: Vec<[Cbr; 2]>,
}

impl TinyBackbone {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>) -> Self {
        let mut cin = 3;
        let stages = TINY_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut sp = pb.sub(&format!("stage{}", i + 1));
                let s = [Cbr::new(&mut sp.sub("0"), cin, c, 3, 2, 1), Cbr::same(&mut sp.sub("1"), c, c, 3)];
                cin = c;
                s
            })
            .collect();
        TinyBackbone { stages }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> [Var<T>; 5] {
        let mut h = x.clone();
        let feats: Vec<Var<T>> = self
            .stages
            .iter()
            .map(|[a, b]| {
                h = b.forward(ctx, &a.forward(ctx, &h));
                h.clone()
            })
            .collect();
        feats.try_into().expect("five levels")
    }
}

#[derive(Clone, Debug)]
pub enum Backbone {
    ResNet50(ResNet50),
    Tiny(TinyBackbone),
}

impl Backbone {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, kind: BackboneKind) -> Self {
        match kind {
            BackboneKind::ResNet50 => Backbone::ResNet50(ResNet50::new(pb)),
            BackboneKind::Tiny => Backbone::Tiny(TinyBackbone::new(pb)),
        }
    }

    pub fn channels(&self) -> [usize; 5] {
        match self {
            Backbone::ResNet50(_) => RESNET50_CHANNELS,
            Backbone::Tiny(_) => TINY_CHANNELS,
        }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> [Var<T>; 5] {
        match self {
            Backbone::ResNet50(b) => b.forward(ctx, x),
            Backbone::Tiny(b) => b.forward(ctx, x),
        }
    }
}
