//! Pixel losses and the λ schedule that balances them.
//!
//! `total = BCE + λ(t)·UAL`, or a pixel-weighted BCE when the UAL form is
//! [`UalForm::WeightedBce`].

use std::f64::consts::PI;

use mstnet_tensor::{Float, Shape, Tensor, Var};

use crate::{Error, Result};

/// Clamp applied to predictions before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UalForm {
    /// `1 - |2p - 1|^α`
    Pow,
    /// `exp(-(α (p - 0.5))^2)`
    Exp,
    /// BCE weighted per pixel by `1 + pow_α(p)`; no separate UAL term.
    WeightedBce,
    None,
}

impl UalForm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pow" => Ok(UalForm::Pow),
            "exp" => Ok(UalForm::Exp),
            "weighted_bce" => Ok(UalForm::WeightedBce),
            "none" => Ok(UalForm::None),
            _ => Err(Error::Config(format!("train.ual_form: unknown form '{s}' (pow|exp|weighted_bce|none)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UalForm::Pow => "pow",
            UalForm::Exp => "exp",
            UalForm::WeightedBce => "weighted_bce",
            UalForm::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UalSpec {
    pub form: UalForm,
    pub alpha: f64,
}

impl Default for UalSpec {
    fn default() -> Self {
        UalSpec { form: UalForm::Pow, alpha: 2.0 }
    }
}

impl UalSpec {
    pub fn none() -> Self {
        UalSpec { form: UalForm::None, alpha: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("train.ual_alpha must be positive, got {}", self.alpha)));
        }
        if self.alpha < 1.0 && matches!(self.form, UalForm::Pow | UalForm::WeightedBce) {
            log::warn!("ual exponent {} < 1 has an unbounded gradient near p = 0.5 and tends not to converge", self.alpha);
        }
        Ok(())
    }

    /// Per-pixel penalty.
    pub fn pixel(&self, p: f64) -> f64 {
        match self.form {
            UalForm::Pow | UalForm::WeightedBce => 1.0 - (2.0 * p - 1.0).abs().powf(self.alpha),
            UalForm::Exp => (-(self.alpha * (p - 0.5)).powi(2)).exp(),
            UalForm::None => 0.0,
        }
    }

    /// Derivative of [`UalSpec::pixel`] with respect to `p`.
    pub fn pixel_grad(&self, p: f64) -> f64 {
        match self.form {
            UalForm::Pow | UalForm::WeightedBce => {
                let d = 2.0 * p - 1.0;
                if d == 0.0 {
                    return 0.0;
                }
                -2.0 * self.alpha * d.abs().powf(self.alpha - 1.0) * d.signum()
            }
            UalForm::Exp => {
                let a2 = self.alpha * self.alpha;
                -2.0 * a2 * (p - 0.5) * (-(self.alpha * (p - 0.5)).powi(2)).exp()
            }
            UalForm::None => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleKind {
    /// `λ_min + ½(1 − cos(π t/T))(λ_max − λ_min)`
    Cosine,
    /// Clipped ramp from `t_start·T` to `t_end·T`.
    Linear { t_start: f64, t_end: f64 },
    Constant { value: f64 },
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Linear { .. } => "linear",
            ScheduleKind::Constant { .. } => "constant",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec { kind: ScheduleKind::Cosine, lambda_min: 0.0, lambda_max: 1.0 }
    }
}

impl ScheduleSpec {
    pub fn linear(t_start: f64, t_end: f64) -> Self {
        ScheduleSpec { kind: ScheduleKind::Linear { t_start, t_end }, ..Self::default() }
    }

    pub fn constant(value: f64) -> Self {
        ScheduleSpec { kind: ScheduleKind::Constant { value }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_max < self.lambda_min {
            return Err(Error::Config("train.lambda_max must not be below train.lambda_min".into()));
        }
        match self.kind {
            ScheduleKind::Linear { t_start, t_end } if t_end <= t_start => Err(Error::Config(format!(
                "linear lambda schedule needs t_end > t_start, got {t_start} -> {t_end}"
            ))),
            ScheduleKind::Constant { value } if !(self.lambda_min..=self.lambda_max).contains(&value) => {
                Err(Error::Config(format!("constant lambda {value} lies outside [lambda_min, lambda_max]")))
            }
            _ => Ok(()),
        }
    }
}

/// λ at iteration `t` of `total`.
pub fn lambda_value(spec: &ScheduleSpec, t: f64, total: f64) -> f64 {
    let (lo, hi) = (spec.lambda_min, spec.lambda_max);
    let frac = if total > 0.0 { (t / total).clamp(0.0, 1.0) } else { 1.0 };
    match spec.kind {
        ScheduleKind::Cosine => lo + 0.5 * (1.0 - (frac * PI).cos()) * (hi - lo),
        ScheduleKind::Linear { t_start, t_end } => {
            let r = (frac - t_start) / (t_end - t_start);
            (lo + r * (hi - lo)).clamp(lo, hi)
        }
        ScheduleKind::Constant { value } => value,
    }
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

fn check_shapes(p: &[f64], g: &[f64]) -> Result<()> {
    if p.len() != g.len() || p.is_empty() {
        return Err(Error::Contract(format!("prediction has {} values, mask has {}", p.len(), g.len())));
    }
    Ok(())
}

fn bce_pixel(p: f64, g: f64) -> f64 {
    let p = clamp_p(p);
    -g * p.ln() - (1.0 - g) * (1.0 - p).ln()
}

/// Mean binary cross-entropy.
pub fn bcel(p: &[f64], g: &[f64]) -> Result<f64> {
    check_shapes(p, g)?;
    Ok(p.iter().zip(g).map(|(&p, &g)| bce_pixel(p, g)).sum::<f64>() / p.len() as f64)
}

/// Mean UAL penalty. Zero for the `weighted_bce` and `none` forms, whose
/// contribution is folded into the BCE term.
pub fn ual(p: &[f64], spec: &UalSpec) -> f64 {
    match spec.form {
        UalForm::Pow | UalForm::Exp => p.iter().map(|&p| spec.pixel(p)).sum::<f64>() / p.len().max(1) as f64,
        UalForm::WeightedBce | UalForm::None => 0.0,
    }
}

/// BCE with per-pixel weight `ω = 1 + pow_α(p)`.
pub fn weighted_bce(p: &[f64], g: &[f64], alpha: f64) -> Result<f64> {
    check_shapes(p, g)?;
    let w = UalSpec { form: UalForm::Pow, alpha };
    Ok(p.iter().zip(g).map(|(&p, &g)| (1.0 + w.pixel(p)) * bce_pixel(p, g)).sum::<f64>() / p.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub bcel: f64,
    pub ual: f64,
    pub lambda: f64,
    pub total: f64,
}

/// The full objective at iteration `t` of `total_iters`.
pub fn total_loss(p: &[f64], g: &[f64], spec: &UalSpec, sched: &ScheduleSpec, t: f64, total_iters: f64) -> Result<LossBreakdown> {
    let lambda = lambda_value(sched, t, total_iters);
    if spec.form == UalForm::WeightedBce {
        let b = weighted_bce(p, g, spec.alpha)?;
        return Ok(LossBreakdown { bcel: b, ual: 0.0, lambda, total: b });
    }
    let b = bcel(p, g)?;
    let u = ual(p, spec);
    Ok(LossBreakdown { bcel: b, ual: u, lambda, total: b + lambda * u })
}

/// Differentiable objective on a probability map. The returned scalar's
/// gradient flows into `p`; `g` is a constant. BCE gradients are evaluated
/// at the clamped prediction, so saturated pixels still receive a signal.
pub fn loss_var<T: Float>(p: &Var<T>, g: &Tensor<T>, spec: &UalSpec, lambda: f64) -> (Var<T>, LossBreakdown) {
    assert_eq!(p.shape(), g.shape(), "prediction and mask shapes differ");
    let pv: Vec<f64> = p.value().data().iter().map(|v| v.as_f64()).collect();
    let gv: Vec<f64> = g.data().iter().map(|v| v.as_f64()).collect();
    let n = pv.len() as f64;
    let weighted = spec.form == UalForm::WeightedBce;
    let wspec = UalSpec { form: UalForm::Pow, alpha: spec.alpha };
    let (mut sb, mut su) = (0.0, 0.0);
    let mut grad = Vec::with_capacity(pv.len());
    for (&pi, &gi) in pv.iter().zip(&gv) {
        let pc = clamp_p(pi);
        let b = bce_pixel(pi, gi);
        let db = -gi / pc + (1.0 - gi) / (1.0 - pc);
        if weighted {
            let w = 1.0 + wspec.pixel(pi);
            sb += w * b;
            grad.push(w * db / n);
        } else {
            sb += b;
            let du = spec.pixel_grad(pi);
            if spec.form != UalForm::None {
                su += spec.pixel(pi);
            }
            grad.push((db + lambda * du) / n);
        }
    }
    let bd = LossBreakdown {
        bcel: sb / n,
        ual: su / n,
        lambda,
        total: sb / n + if weighted { 0.0 } else { lambda * su / n },
    };
    let shape = p.shape();
    let grad: Vec<T> = grad.into_iter().map(T::lit).collect();
    let out = Var::from_op(Tensor::scalar(T::lit(bd.total)), &[p], move |gy| {
        let k = gy.data()[0];
        vec![Some(Tensor::from_vec(shape, grad.iter().map(|&v| v * k).collect()))]
    });
    (out, bd)
}

/// Shape helper for single-channel maps.
pub fn map_shape(n: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, 1, h, w)
}
