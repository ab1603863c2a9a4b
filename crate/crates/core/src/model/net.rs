//! The assembled network and its parameter store.

use std::collections::BTreeMap;

use mstnet_tensor::{ops, Float, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::decoder::{Decoder, Head};
use super::encoder::TripletEncoder;
use super::merge::MergeLayer;
use crate::config::{ModelConfig, Scale};
use crate::data::ScaleTriplet;
use crate::nn::Ctx;
use crate::params::{ParamBuilder, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct MixedScaleNet {
    pub config: ModelConfig,
    pub encoder: TripletEncoder,
    pub merges: Vec<MergeLayer>,
    pub decoder: Decoder,
    pub head: Head,
}

/// Everything one forward pass produces.
pub struct Forward<T: Float> {
    pub logits: Var<T>,
    pub prob: Var<T>,
    /// Attention weights per level when attention merging ran.
    pub attention: Vec<Option<Var<T>>>,
}

impl MixedScaleNet {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Self {
        let encoder = TripletEncoder::new(&mut pb.sub("encoder"), cfg);
        let merges = (0..5).map(|i| MergeLayer::new(&mut pb.sub(&format!("merge.level{}", i + 1)), cfg)).collect();
        let decoder = Decoder::new(&mut pb.sub("decoder"), cfg);
        let head = Head::new(&mut pb.sub("head"), cfg);
        MixedScaleNet { config: cfg.clone(), encoder, merges, decoder, head }
    }

    /// Merges per-scale encoder outputs level by level.
    pub fn merge<T: Float>(
        &self,
        ctx: &Ctx<'_, T>,
        encoded: &BTreeMap<Scale, [Var<T>; 5]>,
    ) -> Result<(Vec<Var<T>>, Vec<Option<Var<T>>>)> {
        let mut fused = Vec::with_capacity(5);
        let mut atts = Vec::with_capacity(5);
        for (lvl, m) in self.merges.iter().enumerate() {
            let feats: BTreeMap<Scale, Var<T>> = encoded.iter().map(|(&s, l)| (s, l[lvl].clone())).collect();
            let out = m.forward(ctx, &feats)?;
            if let Some(a) = &out.attention {
                ctx.probe(format!("merge.level{}.attention", lvl + 1), a);
            }
            fused.push(out.fused);
            atts.push(out.attention);
        }
        Ok((fused, atts))
    }

    pub fn forward_vars<T: Float>(&self, ctx: &Ctx<'_, T>, inputs: &BTreeMap<Scale, Var<T>>) -> Result<Forward<T>> {
        let main = inputs.get(&Scale::Main).ok_or_else(|| Error::Contract("main-scale input missing".into()))?;
        let s = main.shape();
        if s.h % 32 != 0 || s.w % 32 != 0 {
            return Err(Error::Contract(format!("input size {}x{} is not divisible by 32", s.h, s.w)));
        }
        for sc in inputs.keys() {
            if !self.config.has_scale(*sc) {
                return Err(Error::Contract(format!("scale {sc} is not in the configured scale set")));
            }
        }
        let encoded = self.encoder.encode_triplet(ctx, inputs);
        let (fused, attention) = self.merge(ctx, &encoded)?;
        let dec = self.decoder.forward(ctx, &fused)?;
        let logits = self.head.forward(ctx, &dec[0], s.h, s.w);
        let prob = ops::sigmoid(&logits);
        Ok(Forward { logits, prob, attention })
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, triplet: &ScaleTriplet<T>) -> Result<Forward<T>> {
        let inputs = triplet.images.iter().map(|(&s, t)| (s, Var::constant(t.clone()))).collect();
        self.forward_vars(ctx, &inputs)
    }
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Float> {
    pub net: MixedScaleNet,
    pub store: ParamStore<T>,
}

impl<T: Float> Model<T> {
    /// Randomly initialized model.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, seed, false)
    }

    /// Shape-only model for parameter and FLOP accounting.
    pub fn meta(cfg: &ModelConfig) -> Result<Self> {
        Self::build(cfg, 0, true)
    }

    fn build(cfg: &ModelConfig, seed: u64, meta: bool) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(meta);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = MixedScaleNet::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg);
        Ok(Model { net, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model { net: self.net.clone(), store: self.store.cast() }
    }

    /// Inference-mode probabilities `[n, 1, S, S]`.
    pub fn predict(&self, triplet: &ScaleTriplet<T>) -> Result<Tensor<T>> {
        let ctx = Ctx::eval(&self.store);
        Ok(self.net.forward(&ctx, triplet)?.prob.value().clone())
    }
}
