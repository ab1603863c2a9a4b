//! Channel compression of backbone features (C-Net) and the shared-weight
//! triplet encoder.

use std::collections::BTreeMap;

use mstnet_tensor::{ops, Float, Var};

use super::backbone::Backbone;
use crate::config::{ModelConfig, Scale};
use crate::nn::{Cbr, Ctx};
use crate::params::ParamBuilder;

pub const ASPP_KERNELS: [usize; 5] = [1, 3, 3, 3, 1];
pub const ASPP_DILATIONS: [usize; 5] = [1, 2, 5, 7, 1];

/// Five-branch dilated pooling block. The last branch is global average
/// pooling, a 1×1 CBR and an upsample back to the input size.
#[derive(Clone, Debug)]
pub struct Aspp {
    pub branches: Vec<Cbr>,
    pub fuse: Cbr,
}

impl Aspp {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cin: usize, cout: usize) -> Self {
        let branches = ASPP_KERNELS
            .iter()
            .zip(&ASPP_DILATIONS)
            .enumerate()
            .map(|(i, (&k, &d))| Cbr::new(&mut pb.sub(&format!("branch{i}")), cin, cout, k, 1, d))
            .collect();
        let fuse = Cbr::same(&mut pb.sub("fuse"), 5 * cout, cout, 3);
        Aspp { branches, fuse }
    }

    /// Global-average-pooling branch, upsampled to the input size.
    pub fn pooled_branch<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let s = x.shape();
        let g = self.branches[self.branches.len() - 1].forward(ctx, &ops::global_avg_pool(x));
        ops::resize_bilinear(&g, s.h, s.w)
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let last = self.branches.len() - 1;
        let mut outs: Vec<Var<T>> = self.branches[..last].iter().map(|b| b.forward(ctx, x)).collect();
        outs.push(self.pooled_branch(ctx, x));
        let refs: Vec<&Var<T>> = outs.iter().collect();
        self.fuse.forward(ctx, &ops::concat_channels(&refs))
    }
}

/// Per-level compression to `base_channels`: a 3×3 CBR on levels 1-4 and
/// [`Aspp`] on level 5.
#[derive(Clone, Debug)]
pub struct CNet {
    pub levels: Vec<Cbr>,
    pub aspp: Aspp,
}

impl CNet {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, in_channels: [usize; 5], base: usize) -> Self {
        let levels = (0..4).map(|i| Cbr::same(&mut pb.sub(&format!("level{}", i + 1)), in_channels[i], base, 3)).collect();
        let aspp = Aspp::new(&mut pb.sub("aspp"), in_channels[4], base);
        CNet { levels, aspp }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, feats: &[Var<T>; 5]) -> [Var<T>; 5] {
        let mut out: Vec<Var<T>> = self.levels.iter().zip(feats.iter()).map(|(c, f)| c.forward(ctx, f)).collect();
        out.push(self.aspp.forward(ctx, &feats[4]));
        out.try_into().expect("five levels")
    }
}

/// Backbone plus compression; one parameter set shared by every scale.
#[derive(Clone, Debug)]
pub struct TripletEncoder {
    pub backbone: Backbone,
    pub cnet: CNet,
}

pub type Levels<T> = [Var<T>; 5];

impl TripletEncoder {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Self {
        let backbone = Backbone::new(&mut pb.sub("backbone"), cfg.backbone);
        let cnet = CNet::new(&mut pb.sub("compress"), backbone.channels(), cfg.base_channels);
        TripletEncoder { backbone, cnet }
    }

    pub fn extract<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Levels<T> {
        self.backbone.forward(ctx, x)
    }

    pub fn encode<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Levels<T> {
        self.cnet.forward(ctx, &self.extract(ctx, x))
    }

    /// Encodes every present scale with the same weights.
    pub fn encode_triplet<T: Float>(&self, ctx: &Ctx<'_, T>, inputs: &BTreeMap<Scale, Var<T>>) -> BTreeMap<Scale, Levels<T>> {
        inputs.iter().map(|(&s, x)| (s, self.encode(ctx, x))).collect()
    }
}
