//! The small overfitting run shared by the training tests and the
//! acceptance suite.

use mstnet::config::{Augmentation, ModelConfig, RunConfig};
use mstnet::data::{synthetic_pair, Normalization, SampleSource, TrainSet};
use mstnet::diagnostics::polarity_fraction;
use mstnet::model::Model;
use mstnet::objective::UalSpec;

pub const SIZE: usize = 64;
pub const SAMPLES: usize = 8;

pub fn synthetic_set(cfg: &RunConfig) -> TrainSet {
    let sources = (0..SAMPLES)
        .map(|i| {
            let (image, mask) = synthetic_pair(SIZE, i as u64);
            SampleSource::Memory { stem: format!("syn{i:03}"), image, mask }
        })
        .collect();
    TrainSet {
        sources,
        size: SIZE,
        augmentation: Augmentation::none(),
        normalization: Normalization::Unit,
        scale_set: cfg.model.scale_set.clone(),
        seed: cfg.train.seed,
    }
}

/// Tiny model, 64×64, batch 8, no augmentation, one batch per epoch.
pub fn overfit_config(iterations: usize, seed: u64, ual: bool) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::tiny();
    cfg.train.main_scale = SIZE;
    cfg.train.batch_size = SAMPLES;
    cfg.train.epochs = iterations;
    cfg.train.augmentation = Augmentation::none();
    cfg.train.parallel_loading = false;
    cfg.train.seed = seed;
    cfg.train.ual = if ual { UalSpec::default() } else { UalSpec::none() };
    cfg
}

pub struct Overfit {
    pub losses: Vec<f64>,
    pub mae: f64,
    pub polarity: f64,
}

impl Overfit {
    pub fn reduction(&self) -> f64 {
        1.0 - self.losses[self.losses.len() - 1] / self.losses[0]
    }
}

pub fn overfit(iterations: usize, seed: u64, ual: bool) -> Overfit {
    let cfg = overfit_config(iterations, seed, ual);
    let set = synthetic_set(&cfg);
    let mut model = Model::<f32>::new(&cfg.model, seed).unwrap();
    let result = mstnet::train::train(&cfg, &set, &mut model, None).unwrap();
    let all: Vec<usize> = (0..SAMPLES).collect();
    let batch = set.batch(&all, 0, false).unwrap();
    let p = model.predict(&batch.triplet).unwrap();
    let mae = p.data().iter().zip(batch.masks.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / p.numel() as f64;
    let probs: Vec<f64> = p.data().iter().map(|&v| v as f64).collect();
    Overfit { losses: result.logs.iter().map(|l| l.loss.total).collect(), mae, polarity: polarity_fraction(&probs, 0.3, 0.7) }
}
