//! Structural and numerical self-checks: parameter and FLOP accounting,
//! finite-difference gradient checks, the kernel-pyramid equivalence of the
//! HMU group iteration, and prediction polarity.

use std::collections::BTreeMap;

use mstnet_tensor::{ops, profile, Float, Shape, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ModelConfig, Scale};
use crate::data::ScaleTriplet;
use crate::model::{Hmu, Model, Siu};
use crate::nn::{apply_bn_updates, Cbr, Ctx};
use crate::objective::{loss_var, UalSpec};
use crate::params::{ParamBuilder, ParamId, ParamStore};
use crate::{Error, Result};

pub use crate::eval::polarity_fraction;

/// Denominator floor of the relative error used by [`gradcheck_fn`].
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Trainable scalar count; weight sharing across scales means it does not
/// depend on the scale set.
pub fn count_parameters(cfg: &ModelConfig) -> Result<usize> {
    Ok(Model::<f32>::meta(cfg)?.num_params())
}

/// FLOPs (2 × multiply-accumulates of every convolution) of one inference
/// pass over a single image triplet with main side `size`.
pub fn count_flops(cfg: &ModelConfig, size: usize) -> Result<u64> {
    if size == 0 || size % 32 != 0 {
        return Err(Error::Contract(format!("input size {size} is not a positive multiple of 32")));
    }
    let model = Model::<f32>::meta(cfg)?;
    let triplet = ScaleTriplet::meta(1, 3, size, &cfg.scale_set);
    let (res, flops) = profile::count_flops(|| {
        let ctx = Ctx::eval(&model.store);
        model.net.forward(&ctx, &triplet).map(|_| ())
    });
    res?;
    Ok(flops)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradcheckModule {
    Identity,
    Objective,
    Siu,
    Hmu,
    EndToEndTiny,
}

impl GradcheckModule {
    pub const ALL: [GradcheckModule; 5] =
        [GradcheckModule::Identity, GradcheckModule::Objective, GradcheckModule::Siu, GradcheckModule::Hmu, GradcheckModule::EndToEndTiny];
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckOutcome {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Coordinate with the largest error.
    pub worst: String,
}

#[derive(Clone, Copy, Debug)]
enum Coord {
    Param(ParamId, usize),
    Input(usize, usize),
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Central-difference check of `f`, a scalar function of the trainable
/// parameters in `store` and of `inputs`. Normalization runs in inference
/// mode. `coords` coordinates are sampled without replacement.
pub fn gradcheck_fn(
    store: &mut ParamStore<f64>,
    inputs: &mut [Tensor<f64>],
    f: &dyn Fn(&Ctx<'_, f64>, &[Var<f64>]) -> Result<Var<f64>>,
    coords: usize,
    eps: f64,
    seed: u64,
) -> Result<GradcheckOutcome> {
    let (param_grads, input_grads) = {
        let ctx = Ctx::new(store, false, true);
        let vars: Vec<Var<f64>> = inputs.iter().map(|t| Var::param(t.clone())).collect();
        let loss = f(&ctx, &vars)?;
        let g = loss.backward();
        let pg: BTreeMap<ParamId, Tensor<f64>> = ctx.param_grads(&g).into_iter().collect();
        let ig: Vec<Option<Tensor<f64>>> = vars.iter().map(|v| g.get(v).cloned()).collect();
        (pg, ig)
    };
    let mut all = Vec::new();
    for id in store.trainable_ids() {
        for k in 0..store.get(id).numel() {
            all.push(Coord::Param(id, k));
        }
    }
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.numel() {
            all.push(Coord::Input(i, k));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<Coord> = sample(&mut rng, all.len(), coords.min(all.len())).into_iter().map(|i| all[i]).collect();
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let ctx = Ctx::eval(store);
        let vars: Vec<Var<f64>> = inputs.iter().map(|t| Var::constant(t.clone())).collect();
        Ok(f(&ctx, &vars)?.value().data()[0])
    };
    let mut out = GradcheckOutcome { max_rel_error: 0.0, coordinates: picked.len(), worst: String::new() };
    for c in picked {
        let (analytic, label) = match c {
            Coord::Param(id, k) => (param_grads.get(&id).map_or(0.0, |g| g.data()[k]), format!("{}[{k}]", store.name(id))),
            Coord::Input(i, k) => (input_grads[i].as_ref().map_or(0.0, |g| g.data()[k]), format!("input{i}[{k}]")),
        };
        let probe = |delta: f64, store: &mut ParamStore<f64>, inputs: &mut [Tensor<f64>]| -> Result<f64> {
            match c {
                Coord::Param(id, k) => store.get_mut(id).data_mut()[k] += delta,
                Coord::Input(i, k) => inputs[i].data_mut()[k] += delta,
            }
            eval(store, inputs)
        };
        let fp = probe(eps, store, inputs)?;
        let fm = probe(-2.0 * eps, store, inputs)?;
        probe(eps, store, inputs)?;
        let numeric = (fp - fm) / (2.0 * eps);
        if !analytic.is_finite() || !numeric.is_finite() {
            return Err(Error::Contract(format!("non-finite gradient at {label}: analytic {analytic}, numeric {numeric}")));
        }
        let e = relative_error(analytic, numeric);
        if e >= out.max_rel_error {
            out.max_rel_error = e;
            out.worst = format!("{label}: analytic {analytic:.6e}, numeric {numeric:.6e}");
        }
    }
    Ok(out)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Sets every normalization layer's running statistics to the batch
/// statistics of one training-mode pass, so that inference-mode activations
/// keep a healthy scale.
pub fn calibrate_bn<T: Float>(store: &mut ParamStore<T>, f: impl Fn(&Ctx<'_, T>)) {
    let ups = {
        let ctx = Ctx::new(store, true, false);
        f(&ctx);
        ctx.take_bn_updates()
    };
    apply_bn_updates(store, &ups, 1.0);
}

fn build<R>(seed: u64, f: impl FnOnce(&mut ParamBuilder<'_, f64>) -> R) -> (ParamStore<f64>, R) {
    let mut store = ParamStore::new(false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = f(&mut ParamBuilder::new(&mut store, &mut rng));
    (store, r)
}

/// Gradient check of one module at 8×8 inputs (64×64 for the end-to-end
/// tiny network) in double precision.
pub fn gradcheck(module: GradcheckModule, eps: f64, seed: u64) -> Result<GradcheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    match module {
        GradcheckModule::Identity => {
            let mut store = ParamStore::new(false);
            let w = random_tensor(&mut rng, Shape::new(1, 2, 8, 8), -1.0, 1.0);
            let mut inputs = vec![random_tensor(&mut rng, Shape::new(1, 2, 8, 8), -1.0, 1.0)];
            gradcheck_fn(&mut store, &mut inputs, &|_, v| Ok(ops::dot_const(&v[0], &w)), 64, eps, seed)
        }
        GradcheckModule::Objective => {
            let mut store = ParamStore::new(false);
            let g = Tensor::from_fn(Shape::new(1, 1, 8, 8), |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
            let mut inputs = vec![random_tensor(&mut rng, Shape::new(1, 1, 8, 8), 0.05, 0.95)];
            let spec = UalSpec::default();
            gradcheck_fn(&mut store, &mut inputs, &|_, v| Ok(loss_var(&v[0], &g, &spec, 0.7).0), 64, eps, seed)
        }
        GradcheckModule::Siu => {
            let c = 8;
            let (mut store, siu) = build(seed, |pb| Siu::new(pb, c));
            let shapes = [Shape::new(1, c, 4, 4), Shape::new(1, c, 8, 8), Shape::new(1, c, 12, 12)];
            let mut inputs: Vec<Tensor<f64>> = shapes.iter().map(|&s| random_tensor(&mut rng, s, -1.0, 1.0)).collect();
            let run = |ctx: &Ctx<'_, f64>, v: &[Var<f64>]| -> Result<Var<f64>> {
                let feats: BTreeMap<Scale, Var<f64>> = Scale::ALL.iter().copied().zip(v.iter().cloned()).collect();
                Ok(siu.forward(ctx, &feats)?.fused)
            };
            let vars: Vec<Var<f64>> = inputs.iter().map(|t| Var::constant(t.clone())).collect();
            calibrate_bn(&mut store, |ctx| {
                run(ctx, &vars).expect("siu forward");
            });
            let w = random_tensor(&mut rng, shapes[1], -1.0, 1.0);
            gradcheck_fn(&mut store, &mut inputs, &|ctx, v| Ok(ops::dot_const(&run(ctx, v)?, &w)), 100, eps, seed)
        }
        GradcheckModule::Hmu => {
            let (mut store, hmu) = build(seed, |pb| Hmu::new(pb, 64, 2, 32));
            let shape = Shape::new(1, 64, 8, 8);
            let mut inputs = vec![random_tensor(&mut rng, shape, -1.0, 1.0)];
            let x = Var::constant(inputs[0].clone());
            calibrate_bn(&mut store, |ctx| {
                hmu.forward(ctx, &x).expect("hmu forward");
            });
            let w = random_tensor(&mut rng, shape, -1.0, 1.0);
            gradcheck_fn(&mut store, &mut inputs, &|ctx, v| Ok(ops::dot_const(&hmu.forward(ctx, &v[0])?, &w)), 100, eps, seed)
        }
        GradcheckModule::EndToEndTiny => {
            let cfg = ModelConfig::tiny();
            let mut model = Model::<f64>::new(&cfg, seed)?;
            let size = 64;
            let mut inputs: Vec<Tensor<f64>> =
                cfg.scale_set.iter().map(|s| random_tensor(&mut rng, Shape::new(1, 3, s.side(size), s.side(size)), 0.0, 1.0)).collect();
            let scales = cfg.scale_set.clone();
            let net = model.net.clone();
            let run = move |ctx: &Ctx<'_, f64>, v: &[Var<f64>]| -> Result<Var<f64>> {
                let m: BTreeMap<Scale, Var<f64>> = scales.iter().copied().zip(v.iter().cloned()).collect();
                Ok(net.forward_vars(ctx, &m)?.logits)
            };
            // the deepest half-scale maps are 1×1, so statistics come from
            // an eight-image batch
            let calib: Vec<Var<f64>> = inputs
                .iter()
                .map(|t| {
                    let mut batch = vec![t.clone()];
                    batch.extend((0..7).map(|_| random_tensor(&mut rng, t.shape(), 0.0, 1.0)));
                    Var::constant(Tensor::stack(&batch))
                })
                .collect();
            calibrate_bn(&mut model.store, |ctx| {
                run(ctx, &calib).expect("tiny forward");
            });
            let w = random_tensor(&mut rng, Shape::new(1, 1, size, size), -1.0, 1.0);
            gradcheck_fn(&mut model.store, &mut inputs, &|ctx, v| Ok(ops::dot_const(&run(ctx, v)?, &w)), 200, eps, seed)
        }
    }
}

fn slice_rows<T: Float>(t: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let s = t.shape();
    let item = s.item();
    Tensor::from_vec(Shape::new(len, s.c, s.h, s.w), t.data()[start * item..(start + len) * item].to_vec())
}

fn slice_channels<T: Float>(t: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    Tensor::from_vec(Shape::new(1, len, 1, 1), t.data()[start..start + len].to_vec())
}

/// The group transform `unit` evaluated as independent `C`-output branches
/// that share its input and use slices of its weights.
fn decoupled_transform<T: Float>(ctx: &Ctx<'_, T>, unit: &Cbr, c: usize, x: &Var<T>) -> Var<T> {
    let w = ctx.buffer(unit.conv.weight);
    let bn = &unit.bn;
    let branches: Vec<Var<T>> = (0..unit.conv.out_channels / c)
        .map(|k| {
            let wk = Var::constant(slice_rows(w, k * c, c));
            let y = ops::conv2d(x, &wk, None, unit.conv.geom);
            let part = |id| Var::constant(slice_channels(ctx.buffer(id), k * c, c));
            let (g, b) = (part(bn.weight), part(bn.bias));
            let (m, v) = (slice_channels(ctx.buffer(bn.running_mean), k * c, c), slice_channels(ctx.buffer(bn.running_var), k * c, c));
            ops::relu(&ops::batch_norm_eval(&y, &g, &b, &m, &v, crate::nn::BN_EPS))
        })
        .collect();
    let refs: Vec<&Var<T>> = branches.iter().collect();
    ops::concat_channels(&refs)
}

/// Max abs difference between the integrated group iteration and its
/// decoupled multi-branch form, over every exchange, modulation and payload
/// output.
pub fn kernel_pyramid_equivalence(hmu: &Hmu, store: &ParamStore<f32>, input: &Tensor<f32>) -> Result<f64> {
    let ctx = Ctx::eval(store);
    let expanded = hmu.expand.forward(&ctx, &Var::constant(input.clone()));
    let a = hmu.iterate(&ctx, &expanded)?;
    let c = hmu.group_channels;
    let b = hmu.iterate_with(&expanded, |i, x| decoupled_transform(&ctx, &hmu.groups[i], c, x))?;
    let mut worst = 0.0f64;
    for (x, y) in a.all().zip(b.all()) {
        worst = worst.max(x.value().max_abs_diff(y.value()).as_f64());
    }
    Ok(worst)
}

/// Random HMU (base 64, `C = 32`) and input for the equivalence check.
pub fn random_hmu(groups: usize, seed: u64) -> (Hmu, ParamStore<f32>, Tensor<f32>) {
    let mut store = ParamStore::new(false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hmu = Hmu::new(&mut ParamBuilder::new(&mut store, &mut rng), 64, groups, 32);
    for id in store.ids().collect::<Vec<_>>() {
        let s = store.get(id).shape();
        let t = Tensor::from_fn(s, |_| rng.gen_range(-0.5f32..0.5));
        let t = if store.name(id).ends_with("running_var") { t.map(|v| v.abs() + 0.5) } else { t };
        store.set(id, t).expect("same shape");
    }
    let input = Tensor::from_fn(Shape::new(1, 64, 8, 8), |_| rng.gen_range(-1.0f32..1.0));
    (hmu, store, input)
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagReport {
    pub parameter_count: usize,
    pub flop_count: u64,
    pub flop_input_size: usize,
    pub gradcheck: BTreeMap<String, GradcheckOutcome>,
    pub equivalence: BTreeMap<String, f64>,
    /// Mid-band fraction of predictions, when predictions were supplied.
    pub polarity: Option<f64>,
    pub skipped: Vec<String>,
    pub checks: Vec<Check>,
}

impl DiagReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-5;

/// Full diagnostic sweep for `cfg` at `size`. `predictions` are optional
/// probability maps for the polarity measurement.
pub fn run_diagnostics(cfg: &ModelConfig, size: usize, eps: f64, predictions: Option<&[f64]>) -> Result<DiagReport> {
    let parameter_count = count_parameters(cfg)?;
    let flop_count = count_flops(cfg, size)?;
    let mut report = DiagReport {
        parameter_count,
        flop_count,
        flop_input_size: size,
        gradcheck: BTreeMap::new(),
        equivalence: BTreeMap::new(),
        polarity: predictions.map(|p| polarity_fraction(p, 0.3, 0.7)),
        skipped: Vec::new(),
        checks: Vec::new(),
    };
    if predictions.is_none() {
        report.skipped.push("polarity: no predictions supplied (set run.checkpoint and data.test_root)".into());
    }
    for m in GradcheckModule::ALL {
        let name = serde_json::to_value(m).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let out = gradcheck(m, eps, 0)?;
        report.checks.push(Check {
            name: format!("gradcheck.{name}"),
            passed: out.max_rel_error < GRADCHECK_TOLERANCE,
            detail: format!("max relative error {:.3e} over {} coordinates", out.max_rel_error, out.coordinates),
        });
        report.gradcheck.insert(name, out);
    }
    for g in [2, 3, 4, 6, 8] {
        let (hmu, store, x) = random_hmu(g, g as u64);
        let d = kernel_pyramid_equivalence(&hmu, &store, &x)?;
        report.checks.push(Check {
            name: format!("equivalence.g{g}"),
            passed: d < EQUIVALENCE_TOLERANCE,
            detail: format!("max abs diff {d:.3e}"),
        });
        report.equivalence.insert(format!("g{g}"), d);
    }
    Ok(report)
}
