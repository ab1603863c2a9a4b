//! Top-down decoder with hierarchical mixed-scale units and the
//! prediction head.

use mstnet_tensor::{ops, Float, Shape, Tensor, Var};

use crate::config::{DecoderUnit, ModelConfig};
use crate::nn::{BatchNorm, Cbr, Conv2d, Ctx, StackedCbr};
use crate::params::ParamBuilder;
use crate::{Error, Result};

/// The three feature sets produced by the group iteration. `exchange` has
/// one entry fewer than the others because the last group passes nothing on.
pub struct GroupOutputs<T: Float> {
    pub exchange: Vec<Var<T>>,
    pub modulation: Vec<Var<T>>,
    pub payload: Vec<Var<T>>,
}

impl<T: Float> GroupOutputs<T> {
    pub fn all(&self) -> impl Iterator<Item = &Var<T>> {
        self.exchange.iter().chain(&self.modulation).chain(&self.payload)
    }
}

/// Hierarchical mixed-scale unit.
#[derive(Clone, Debug)]
pub struct Hmu {
    pub expand: Cbr,
    /// Group transforms: `C → 3C`, then `2C → 3C`, and `2C → 2C` last.
    pub groups: Vec<Cbr>,
    pub gate_reduce: Conv2d,
    pub gate_expand: Conv2d,
    pub out_conv: Conv2d,
    pub out_bn: BatchNorm,
    pub num_groups: usize,
    pub group_channels: usize,
}

impl Hmu {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, channels: usize, num_groups: usize, group_channels: usize) -> Self {
        assert!(num_groups >= 2, "an HMU needs at least two groups");
        let (g, c) = (num_groups, group_channels);
        let width = g * c;
        let groups = (0..g)
            .map(|i| {
                let (cin, cout) = match i {
                    0 => (c, 3 * c),
                    i if i == g - 1 => (2 * c, 2 * c),
                    _ => (2 * c, 3 * c),
                };
                Cbr::same(&mut pb.sub(&format!("group{}", i + 1)), cin, cout, 3)
            })
            .collect();
        let hidden = (width / 4).max(1);
        Hmu {
            expand: Cbr::same(&mut pb.sub("expand"), channels, width, 1),
            groups,
            gate_reduce: Conv2d::new(&mut pb.sub("gate.0"), width, hidden, 1, 1, 1, true),
            gate_expand: Conv2d::new(&mut pb.sub("gate.1"), hidden, width, 1, 1, 1, true),
            out_conv: Conv2d::new(&mut pb.sub("out.conv"), width, channels, 3, 1, 1, false),
            out_bn: BatchNorm::new(&mut pb.sub("out.bn"), channels),
            num_groups,
            group_channels,
        }
    }

    /// Input and output widths of each group transform.
    pub fn group_widths(&self) -> Vec<(usize, usize)> {
        self.groups.iter().map(|u| (u.conv.in_channels, u.conv.out_channels)).collect()
    }

    /// Runs the group iteration on an expanded `G·C`-channel map, applying
    /// `transform(i, input)` as the i-th group transform.
    pub fn iterate_with<T: Float>(&self, expanded: &Var<T>, transform: impl Fn(usize, &Var<T>) -> Var<T>) -> Result<GroupOutputs<T>> {
        let (g, c) = (self.num_groups, self.group_channels);
        let s = expanded.shape();
        if s.c != g * c {
            return Err(Error::Contract(format!("HMU expects {} channels, got {}", g * c, s.c)));
        }
        let mut out = GroupOutputs { exchange: Vec::new(), modulation: Vec::new(), payload: Vec::new() };
        for i in 0..g {
            let xi = ops::slice_channels(expanded, i * c, c);
            let input = match out.exchange.last() {
                Some(prev) => ops::concat_channels(&[&xi, prev]),
                None => xi,
            };
            let y = transform(i, &input);
            if i < g - 1 {
                out.exchange.push(ops::slice_channels(&y, 0, c));
                out.modulation.push(ops::slice_channels(&y, c, c));
                out.payload.push(ops::slice_channels(&y, 2 * c, c));
            } else {
                out.modulation.push(ops::slice_channels(&y, 0, c));
                out.payload.push(ops::slice_channels(&y, c, c));
            }
        }
        Ok(out)
    }

    pub fn iterate<T: Float>(&self, ctx: &Ctx<'_, T>, expanded: &Var<T>) -> Result<GroupOutputs<T>> {
        self.iterate_with(expanded, |i, x| self.groups[i].forward(ctx, x))
    }

    /// Channel modulation vector `[n, G·C, 1, 1]` in (0, 1).
    pub fn alpha<T: Float>(&self, ctx: &Ctx<'_, T>, groups: &GroupOutputs<T>) -> Var<T> {
        let refs: Vec<&Var<T>> = groups.modulation.iter().collect();
        let pooled = ops::global_avg_pool(&ops::concat_channels(&refs));
        let h = ops::relu(&self.gate_reduce.forward(ctx, &pooled));
        ops::sigmoid(&self.gate_expand.forward(ctx, &h))
    }

    /// Full unit. `alpha_override` replaces the modulation vector with a
    /// constant.
    pub fn forward_with<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>, alpha_override: Option<f64>) -> Result<Var<T>> {
        let expanded = self.expand.forward(ctx, x);
        let groups = self.iterate(ctx, &expanded)?;
        let alpha = match alpha_override {
            Some(v) => {
                let s = Shape::new(x.shape().n, self.num_groups * self.group_channels, 1, 1);
                Var::constant(if x.is_meta() { Tensor::meta(s) } else { Tensor::full(s, T::lit(v)) })
            }
            None => self.alpha(ctx, &groups),
        };
        let refs: Vec<&Var<T>> = groups.payload.iter().collect();
        let weighted = ops::mul(&ops::concat_channels(&refs), &alpha);
        let inner = self.out_bn.forward(ctx, &self.out_conv.forward(ctx, &weighted));
        Ok(ops::relu(&ops::add(x, &inner)))
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        self.forward_with(ctx, x, None)
    }
}

/// Per-level fusion unit.
#[derive(Clone, Debug)]
pub enum FusionUnit {
    /// `fu_repeat` HMUs in sequence.
    Hmu(Vec<Hmu>),
    Cbr(StackedCbr),
}

impl FusionUnit {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Self {
        let c = cfg.base_channels;
        match cfg.decoder_unit {
            DecoderUnit::Hmu => FusionUnit::Hmu(
                (0..cfg.fu_repeat).map(|i| Hmu::new(&mut pb.sub(&i.to_string()), c, cfg.hmu_groups, cfg.hmu_group_channels)).collect(),
            ),
            DecoderUnit::CbrBaseline => FusionUnit::Cbr(StackedCbr::new(pb, c, c, cfg.fu_repeat, cfg.decoder_kernel_size)),
        }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        match self {
            FusionUnit::Hmu(units) => units.iter().try_fold(x.clone(), |h, u| u.forward(ctx, &h)),
            FusionUnit::Cbr(s) => Ok(s.forward(ctx, x)),
        }
    }
}

/// Five cascaded fusion units, deepest level first.
#[derive(Clone, Debug)]
pub struct Decoder {
    /// Indexed by level, `units[0]` is level 1 (stride 2).
    pub units: Vec<FusionUnit>,
}

impl Decoder {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Self {
        Decoder { units: (0..5).map(|i| FusionUnit::new(&mut pb.sub(&format!("level{}", i + 1)), cfg)).collect() }
    }

    /// `f̂_5 = f_5`, `f̂_i = f_i + up(f̃_{i+1})`, `f̃_i = FU_i(f̂_i)`. Returns
    /// `f̃_1..f̃_5`.
    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, levels: &[Var<T>]) -> Result<Vec<Var<T>>> {
        if levels.len() != 5 {
            return Err(Error::Contract(format!("decoder expects 5 levels, got {}", levels.len())));
        }
        let mut outs: Vec<Option<Var<T>>> = vec![None; 5];
        let mut above: Option<Var<T>> = None;
        for i in (0..5).rev() {
            let f = &levels[i];
            let fhat = match &above {
                Some(a) => {
                    let s = f.shape();
                    ops::add(f, &ops::resize_bilinear(a, s.h, s.w))
                }
                None => f.clone(),
            };
            let ft = self.units[i].forward(ctx, &fhat)?;
            ctx.probe(format!("decoder.level{}", i + 1), &ft);
            above = Some(ft.clone());
            outs[i] = Some(ft);
        }
        Ok(outs.into_iter().map(|o| o.expect("filled")).collect())
    }
}

/// CBR stack, 1×1 projection to one logit channel, upsampling to the
/// input size.
#[derive(Clone, Debug)]
pub struct Head {
    pub stack: StackedCbr,
    pub proj: Conv2d,
}

impl Head {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Self {
        Head {
            stack: StackedCbr::new(&mut pb.sub("stack"), cfg.base_channels, cfg.head_mid_channels, cfg.last_cbr_repeat, cfg.decoder_kernel_size),
            proj: Conv2d::new(&mut pb.sub("proj"), cfg.head_mid_channels, 1, 1, 1, 1, true),
        }
    }

    /// Logits at `(h, w)`.
    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>, h: usize, w: usize) -> Var<T> {
        let logits = self.proj.forward(ctx, &self.stack.forward(ctx, x));
        ops::resize_bilinear(&logits, h, w)
    }
}
