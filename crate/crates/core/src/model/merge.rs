//! Scale merging: resampling auxiliary-scale features onto the main grid
//! and fusing them with per-pixel attention or plain addition.

use std::collections::BTreeMap;

use mstnet_tensor::{ops, Float, Tensor, Var};

use crate::config::{MergeStrategy, ModelConfig, Scale};
use crate::nn::{Cbr, Conv2d, Ctx, StackedCbr};
use crate::params::ParamBuilder;
use crate::{Error, Result};

/// Brings a feature map from `source` scale to the main-scale size
/// `(h, w)`. 1.5× maps are reduced by the mean of adaptive max and average
/// pooling, 0.5× maps are upsampled bilinearly.
pub fn resample_to_main<T: Float>(f: &Var<T>, source: Scale, h: usize, w: usize) -> Result<Var<T>> {
    let s = f.shape();
    match source {
        Scale::Main => Ok(f.clone()),
        Scale::OneAndHalf => {
            if h > s.h || w > s.w {
                return Err(Error::Contract(format!("cannot pool a {}x{} map up to {h}x{w}", s.h, s.w)));
            }
            let mx = ops::adaptive_max_pool(f, h, w);
            let av = ops::adaptive_avg_pool(f, h, w);
            Ok(ops::scale(&ops::add(&mx, &av), 0.5))
        }
        Scale::Half => Ok(ops::resize_bilinear(f, h, w)),
    }
}

/// Output of one merge: the fused map and, for attention merging, the
/// three weight maps in scale order (0.5, 1.0, 1.5).
pub struct Merged<T: Float> {
    pub fused: Var<T>,
    pub attention: Option<Var<T>>,
    /// Aligned branch features fed to the weighting, keyed by scale.
    pub branches: BTreeMap<Scale, Var<T>>,
}

/// Scale integration unit for one level.
#[derive(Clone, Debug)]
pub struct Siu {
    pub main: Cbr,
    pub half_pre: Cbr,
    pub half_post: Cbr,
    pub large_pre: Cbr,
    pub large_post: Cbr,
    pub psi: StackedCbr,
    pub logits: Conv2d,
    pub channels: usize,
}

impl Siu {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, c: usize) -> Self {
        Siu {
            main: Cbr::same(&mut pb.sub("main"), c, c, 3),
            half_pre: Cbr::same(&mut pb.sub("half_pre"), c, c, 3),
            half_post: Cbr::same(&mut pb.sub("half_post"), c, c, 3),
            large_pre: Cbr::same(&mut pb.sub("large_pre"), c, c, 3),
            large_post: Cbr::same(&mut pb.sub("large_post"), c, c, 3),
            psi: StackedCbr::new(&mut pb.sub("psi"), 3 * c, c, 2, 3),
            logits: Conv2d::new(&mut pb.sub("logits"), c, 3, 1, 1, 1, true),
            channels: c,
        }
    }

    /// Aligned per-scale branch features.
    pub fn branches<T: Float>(&self, ctx: &Ctx<'_, T>, feats: &BTreeMap<Scale, Var<T>>) -> Result<BTreeMap<Scale, Var<T>>> {
        let main = feats.get(&Scale::Main).ok_or_else(|| Error::Contract("main-scale feature missing".into()))?;
        let ms = main.shape();
        let mut out = BTreeMap::new();
        out.insert(Scale::Main, self.main.forward(ctx, main));
        if let Some(f) = feats.get(&Scale::Half) {
            let h = resample_to_main(&self.half_pre.forward(ctx, f), Scale::Half, ms.h, ms.w)?;
            out.insert(Scale::Half, self.half_post.forward(ctx, &h));
        }
        if let Some(f) = feats.get(&Scale::OneAndHalf) {
            let h = resample_to_main(&self.large_pre.forward(ctx, f), Scale::OneAndHalf, ms.h, ms.w)?;
            out.insert(Scale::OneAndHalf, self.large_post.forward(ctx, &h));
        }
        Ok(out)
    }

    /// Attention logits for aligned branches; absent scales enter the
    /// generator as zeros.
    pub fn logits<T: Float>(&self, ctx: &Ctx<'_, T>, branches: &BTreeMap<Scale, Var<T>>) -> Var<T> {
        let ms = branches[&Scale::Main].shape();
        let zeros = Var::constant(if branches[&Scale::Main].is_meta() { Tensor::meta(ms) } else { Tensor::zeros(ms) });
        let parts: Vec<&Var<T>> = Scale::ALL.iter().map(|s| branches.get(s).unwrap_or(&zeros)).collect();
        self.logits.forward(ctx, &self.psi.forward(ctx, &ops::concat_channels(&parts)))
    }

    /// Softmax over the logit channels of the present scales, weighted sum of
    /// the branches.
    pub fn combine<T: Float>(branches: &BTreeMap<Scale, Var<T>>, logits: &Var<T>) -> (Var<T>, Var<T>) {
        let present: Vec<usize> = Scale::ALL.iter().enumerate().filter(|(_, s)| branches.contains_key(s)).map(|(i, _)| i).collect();
        let att = if present.len() == 3 {
            ops::softmax_channels(logits)
        } else {
            let parts: Vec<Var<T>> = present.iter().map(|&i| ops::slice_channels(logits, i, 1)).collect();
            let refs: Vec<&Var<T>> = parts.iter().collect();
            ops::softmax_channels(&ops::concat_channels(&refs))
        };
        let mut fused: Option<Var<T>> = None;
        for (k, b) in branches.values().enumerate() {
            let term = ops::mul(b, &ops::slice_channels(&att, k, 1));
            fused = Some(match fused {
                Some(f) => ops::add(&f, &term),
                None => term,
            });
        }
        (fused.expect("main branch present"), att)
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, feats: &BTreeMap<Scale, Var<T>>) -> Result<Merged<T>> {
        let branches = self.branches(ctx, feats)?;
        let logits = self.logits(ctx, &branches);
        let (fused, att) = Self::combine(&branches, &logits);
        Ok(Merged { fused, attention: Some(att), branches })
    }
}

/// Sum of the resampled features, without convolutions or weights.
pub fn addition_merge<T: Float>(feats: &BTreeMap<Scale, Var<T>>) -> Result<Var<T>> {
    let main = feats.get(&Scale::Main).ok_or_else(|| Error::Contract("main-scale feature missing".into()))?;
    let ms = main.shape();
    let mut out = main.clone();
    for (&s, f) in feats {
        if s != Scale::Main {
            out = ops::add(&out, &resample_to_main(f, s, ms.h, ms.w)?);
        }
    }
    Ok(out)
}

/// Per-level merge layer. With the main scale alone the layer is an exact
/// passthrough, whatever the strategy.
#[derive(Clone, Debug)]
pub enum MergeLayer {
    Siu(Siu),
    Addition,
}

impl MergeLayer {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Self {
        match cfg.merge_strategy {
            MergeStrategy::Siu => MergeLayer::Siu(Siu::new(pb, cfg.base_channels)),
            MergeStrategy::Addition => MergeLayer::Addition,
        }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, feats: &BTreeMap<Scale, Var<T>>) -> Result<Merged<T>> {
        let main = feats.get(&Scale::Main).ok_or_else(|| Error::Contract("main-scale feature missing".into()))?;
        if feats.len() == 1 {
            return Ok(Merged { fused: main.clone(), attention: None, branches: feats.clone() });
        }
        match self {
            MergeLayer::Siu(s) => s.forward(ctx, feats),
            MergeLayer::Addition => Ok(Merged { fused: addition_merge(feats)?, attention: None, branches: feats.clone() }),
        }
    }
}

