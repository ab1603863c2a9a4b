//! Forward context and the convolutional building blocks.

use std::cell::RefCell;
use std::collections::HashMap;

use mstnet_tensor::{ops, ConvGeom, Float, Gradients, Shape, Tensor, Var};

use crate::params::{Init, ParamBuilder, ParamId, ParamStore};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch statistics observed by one normalization layer in training mode.
#[derive(Clone, Debug)]
pub struct BnUpdate<T: Float> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// One forward pass over a [`ParamStore`].
///
/// The context turns parameters into graph leaves (once per pass), decides
/// whether normalization uses batch or running statistics, collects the
/// statistics to fold back afterwards, and optionally records named
/// intermediate tensors.
pub struct Ctx<'s, T: Float> {
    store: &'s ParamStore<T>,
    train: bool,
    grad: bool,
    leaves: RefCell<HashMap<ParamId, Var<T>>>,
    bn_updates: RefCell<Vec<BnUpdate<T>>>,
    probes: Option<RefCell<Vec<(String, Tensor<T>)>>>,
}

impl<'s, T: Float> Ctx<'s, T> {
    /// Inference: running statistics, no gradients.
    pub fn eval(store: &'s ParamStore<T>) -> Self {
        Self::new(store, false, false)
    }

    /// Training: batch statistics and parameter gradients.
    pub fn train(store: &'s ParamStore<T>) -> Self {
        Self::new(store, true, true)
    }

    pub fn new(store: &'s ParamStore<T>, train: bool, grad: bool) -> Self {
        Ctx {
            store,
            train,
            grad,
            leaves: RefCell::new(HashMap::new()),
            bn_updates: RefCell::new(Vec::new()),
            probes: None,
        }
    }

    pub fn with_probes(mut self) -> Self {
        self.probes = Some(RefCell::new(Vec::new()));
        self
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var<T> {
        self.leaves
            .borrow_mut()
            .entry(id)
            .or_insert_with(|| Var::leaf(self.store.get(id).clone(), self.grad && self.store.entry(id).trainable))
            .clone()
    }

    pub fn buffer(&self, id: ParamId) -> &Tensor<T> {
        self.store.get(id)
    }

    fn record_bn(&self, u: BnUpdate<T>) {
        self.bn_updates.borrow_mut().push(u);
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates.borrow_mut())
    }

    pub fn probes_enabled(&self) -> bool {
        self.probes.is_some()
    }

    pub fn probe(&self, name: impl Into<String>, v: &Var<T>) {
        if let Some(p) = &self.probes {
            if !v.is_meta() {
                p.borrow_mut().push((name.into(), v.value().clone()));
            }
        }
    }

    pub fn take_probes(&self) -> Vec<(String, Tensor<T>)> {
        self.probes.as_ref().map(|p| std::mem::take(&mut *p.borrow_mut())).unwrap_or_default()
    }

    /// Gradients of every parameter used in this pass, in id order.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        let leaves = self.leaves.borrow();
        let mut out: Vec<(ParamId, Tensor<T>)> =
            leaves.iter().filter_map(|(&id, v)| grads.get(v).map(|g| (id, g.clone()))).collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// Folds batch statistics into running averages.
pub fn apply_bn_updates<T: Float>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>], momentum: f64) {
    let m = T::lit(momentum);
    let keep = T::one() - m;
    for u in updates {
        for (id, batch) in [(u.running_mean, &u.mean), (u.running_var, &u.var)] {
            let t = store.get_mut(id);
            for (r, &b) in t.data_mut().iter_mut().zip(batch.iter()) {
                *r = keep * *r + m * b;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        pb: &mut ParamBuilder<'_, T>,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        bias: bool,
    ) -> Self {
        let padding = dilation * (kernel / 2);
        Self::with_geom(pb, cin, cout, kernel, ConvGeom::new(stride, padding, dilation), bias)
    }

    pub fn with_geom<T: Float>(pb: &mut ParamBuilder<'_, T>, cin: usize, cout: usize, kernel: usize, geom: ConvGeom, bias: bool) -> Self {
        let fan_in = cin * kernel * kernel;
        let weight = pb.param("weight", Shape::new(cout, cin, kernel, kernel), Init::FanIn(fan_in));
        let bias = bias.then(|| pb.param("bias", Shape::new(1, cout, 1, 1), Init::Zeros));
        Conv2d { weight, bias, geom, in_channels: cin, out_channels: cout, kernel }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ops::conv2d(x, &w, b.as_ref(), self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, channels: usize) -> Self {
        let s = Shape::new(1, channels, 1, 1);
        BatchNorm {
            weight: pb.param("weight", s, Init::Ones),
            bias: pb.param("bias", s, Init::Zeros),
            running_mean: pb.buffer("running_mean", s, Init::Zeros),
            running_var: pb.buffer("running_var", s, Init::Ones),
        }
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        let (g, b) = (ctx.param(self.weight), ctx.param(self.bias));
        if ctx.is_train() {
            let r = ops::batch_norm_train(x, &g, &b, BN_EPS);
            if !x.is_meta() {
                ctx.record_bn(BnUpdate { running_mean: self.running_mean, running_var: self.running_var, mean: r.mean, var: r.var });
            }
            r.out
        } else {
            ops::batch_norm_eval(x, &g, &b, ctx.buffer(self.running_mean), ctx.buffer(self.running_var), BN_EPS)
        }
    }
}

/// Convolution (no bias), batch normalization, ReLU.
#[derive(Clone, Debug)]
pub struct Cbr {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl Cbr {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cin: usize, cout: usize, kernel: usize, stride: usize, dilation: usize) -> Self {
        let conv = Conv2d::new(&mut pb.sub("conv"), cin, cout, kernel, stride, dilation, false);
        let bn = BatchNorm::new(&mut pb.sub("bn"), cout);
        Cbr { conv, bn }
    }

    /// Stride 1, size-preserving.
    pub fn same<T: Float>(pb: &mut ParamBuilder<'_, T>, cin: usize, cout: usize, kernel: usize) -> Self {
        Self::new(pb, cin, cout, kernel, 1, 1)
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        ops::relu(&self.bn.forward(ctx, &self.conv.forward(ctx, x)))
    }
}

/// `num_blocks` size-preserving CBR units with channel pairs
/// `(in, out), (out, out), ...`.
#[derive(Clone, Debug)]
pub struct StackedCbr {
    pub units: Vec<Cbr>,
}

impl StackedCbr {
    pub fn new<T: Float>(pb: &mut ParamBuilder<'_, T>, cin: usize, cout: usize, num_blocks: usize, kernel: usize) -> Self {
        assert!(num_blocks >= 1, "a CBR stack needs at least one unit");
        assert!(kernel % 2 == 1, "CBR kernel size must be odd");
        let widths: Vec<usize> = std::iter::once(cin).chain(std::iter::repeat(cout).take(num_blocks)).collect();
        let units = widths.windows(2).enumerate().map(|(i, w)| Cbr::same(&mut pb.sub(&i.to_string()), w[0], w[1], kernel)).collect();
        StackedCbr { units }
    }

    pub fn channel_pairs(&self) -> Vec<(usize, usize)> {
        self.units.iter().map(|u| (u.conv.in_channels, u.conv.out_channels)).collect()
    }

    pub fn forward<T: Float>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Var<T> {
        self.units.iter().fold(x.clone(), |h, u| u.forward(ctx, &h))
    }
}
