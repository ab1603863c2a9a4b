//! Image/mask datasets, augmentation, input pyramids and batching.

mod augment;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use mstnet_tensor::kernels::spatial;
use mstnet_tensor::{par, Float, Shape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{hflip, rotate, Interp, Transform};
pub use synthetic::{synthetic_pair, write_synthetic_dataset};

use crate::config::{Augmentation, Backbone, Scale};
use crate::{Error, Result};

pub const IMAGE_DIR: &str = "Image";
pub const MASK_DIR: &str = "GT";
const IMAGE_EXTS: [&str; 3] = ["jpg", "jpeg", "png"];

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePair {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub stem: String,
}

#[derive(Debug, Default)]
pub struct DatasetIndex {
    pub pairs: Vec<SamplePair>,
    pub warnings: Vec<String>,
}

fn list_by_stem(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if !path.is_file() || !ext.is_some_and(|e| exts.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Dataset(format!(
                "duplicate stem '{stem}': {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Pairs `root/Image/*.{jpg,png}` with `root/GT/*.png` by file stem, sorted
/// by stem. Files without a partner are reported in `warnings`.
pub fn index_dataset(root: &Path) -> Result<DatasetIndex> {
    let (idir, mdir) = (root.join(IMAGE_DIR), root.join(MASK_DIR));
    for d in [&idir, &mdir] {
        if !d.is_dir() {
            return Err(Error::Io {
                path: d.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            });
        }
    }
    let images = list_by_stem(&idir, &IMAGE_EXTS)?;
    let masks = list_by_stem(&mdir, &["png"])?;
    let mut idx = DatasetIndex::default();
    for (stem, image) in &images {
        match masks.get(stem) {
            Some(mask) => idx.pairs.push(SamplePair { image: image.clone(), mask: mask.clone(), stem: stem.clone() }),
            None => idx.warnings.push(format!("image {} has no mask", image.display())),
        }
    }
    for (stem, mask) in &masks {
        if !images.contains_key(stem) {
            idx.warnings.push(format!("mask {} has no image", mask.display()));
        }
    }
    if idx.pairs.is_empty() {
        return Err(Error::Dataset(format!("no matching image/mask pairs under {} and {}", idir.display(), mdir.display())));
    }
    for w in &idx.warnings {
        log::warn!("{w}");
    }
    Ok(idx)
}

/// Indexes several roots and concatenates them; stems must stay unique.
pub fn index_roots(roots: &[PathBuf]) -> Result<Vec<SamplePair>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in roots {
        for p in index_dataset(r)?.pairs {
            if !seen.insert(p.stem.clone()) {
                return Err(Error::Dataset(format!("stem '{}' appears in more than one dataset root", p.stem)));
            }
            out.push(p);
        }
    }
    Ok(out)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    image::open(path)
        .map(|i| i.to_luma8())
        .map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
}

/// `[1, 3, h, w]` in [0, 1].
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(Shape::new(1, 3, h, w), |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 255.0
    })
}

/// Mask values `> 127` become 1, everything else 0.
pub fn binarize(v: u8) -> f32 {
    if v > 127 {
        1.0
    } else {
        0.0
    }
}

/// `[1, 1, h, w]` in {0, 1}.
pub fn mask_to_tensor(mask: &GrayImage) -> Tensor<f32> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    Tensor::from_vec(Shape::new(1, 1, h, w), mask.as_raw().iter().map(|&v| binarize(v)).collect())
}

/// `[1, 1, h, w]` in [0, 1].
pub fn gray_to_tensor(img: &GrayImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::from_vec(Shape::new(1, 1, h, w), img.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
}

/// Rounds a probability map to 8 bits.
pub fn to_gray_u8(p: &[f32], h: usize, w: usize) -> GrayImage {
    let raw = p.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    GrayImage::from_raw(w as u32, h as u32, raw).expect("buffer matches size")
}

pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn resize_bilinear<T: Float>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let s = x.shape();
    if (s.h, s.w) == (h, w) {
        return x.clone();
    }
    Tensor::from_vec(s.with_hw(h, w), spatial::resize_bilinear(x.data(), s, h, w))
}

/// Nearest-neighbour resize with pixel-centre sampling.
pub fn resize_nearest<T: Float>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let s = x.shape();
    let src = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64).floor() as usize).min(inp - 1);
    let os = s.with_hw(h, w);
    Tensor::from_fn(os, |i| {
        let (nc, p) = (i / (h * w), i % (h * w));
        let (y, xx) = (src(p / w, h, s.h), src(p % w, w, s.w));
        x.data()[nc * s.plane() + y * s.w + xx]
    })
}

/// Input scaling applied after augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// Per-channel standardization with ImageNet statistics.
    ImageNet,
    /// Values stay in [0, 1].
    Unit,
}

impl Normalization {
    pub fn for_backbone(b: Backbone) -> Self {
        match b {
            Backbone::ResNet50 => Normalization::ImageNet,
            Backbone::Tiny => Normalization::Unit,
        }
    }

    pub fn apply(self, img: &mut Tensor<f32>) {
        if self == Normalization::Unit {
            return;
        }
        let s = img.shape();
        let plane = s.plane();
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            let c = (i / plane) % s.c;
            *v = (*v - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
}

/// One image rendered at the configured scales. Every entry shares the
/// batch size; the main scale is always present.
#[derive(Clone, Debug)]
pub struct ScaleTriplet<T: Float> {
    pub images: BTreeMap<Scale, Tensor<T>>,
}

impl<T: Float> ScaleTriplet<T> {
    pub fn main(&self) -> &Tensor<T> {
        &self.images[&Scale::Main]
    }

    pub fn get(&self, s: Scale) -> Option<&Tensor<T>> {
        self.images.get(&s)
    }

    /// Spatial side length per scale.
    pub fn sizes(&self) -> BTreeMap<Scale, (usize, usize)> {
        self.images.iter().map(|(&s, t)| (s, (t.shape().h, t.shape().w))).collect()
    }

    pub fn cast<U: Float>(&self) -> ScaleTriplet<U> {
        ScaleTriplet { images: self.images.iter().map(|(&s, t)| (s, t.cast())).collect() }
    }

    /// Concatenates single-image triplets along the batch axis.
    pub fn stack(items: &[ScaleTriplet<T>]) -> Self {
        let scales: Vec<Scale> = items[0].images.keys().copied().collect();
        ScaleTriplet {
            images: scales
                .into_iter()
                .map(|s| {
                    let parts: Vec<Tensor<T>> = items.iter().map(|t| t.images[&s].clone()).collect();
                    (s, Tensor::stack(&parts))
                })
                .collect(),
        }
    }

    /// Shape-only triplet for accounting.
    pub fn meta(batch: usize, channels: usize, main: usize, scales: &[Scale]) -> Self {
        ScaleTriplet {
            images: scales.iter().map(|&s| (s, Tensor::meta(Shape::new(batch, channels, s.side(main), s.side(main))))).collect(),
        }
    }
}

/// Auxiliary scales by bilinear resizing of the main image. The main entry
/// is the input itself.
pub fn build_pyramid<T: Float>(image: &Tensor<T>, scale_set: &[Scale]) -> ScaleTriplet<T> {
    let s = image.shape();
    let images = scale_set
        .iter()
        .map(|&sc| {
            let t = match sc {
                Scale::Main => image.clone(),
                _ => resize_bilinear(image, sc.side(s.h), sc.side(s.w)),
            };
            (sc, t)
        })
        .collect();
    ScaleTriplet { images }
}

/// Where a sample comes from.
#[derive(Clone, Debug)]
pub enum SampleSource {
    Files(SamplePair),
    Memory { stem: String, image: RgbImage, mask: GrayImage },
}

impl SampleSource {
    pub fn stem(&self) -> &str {
        match self {
            SampleSource::Files(p) => &p.stem,
            SampleSource::Memory { stem, .. } => stem,
        }
    }

    fn decode(&self) -> Result<(Tensor<f32>, Tensor<f32>)> {
        match self {
            SampleSource::Files(p) => Ok((rgb_to_tensor(&read_rgb(&p.image)?), mask_to_tensor(&read_gray(&p.mask)?))),
            SampleSource::Memory { image, mask, .. } => Ok((rgb_to_tensor(image), mask_to_tensor(mask))),
        }
    }
}

/// An augmented main-scale image `[1, 3, S, S]` (not yet normalized) and
/// its binary mask `[1, 1, S, S]`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub stem: String,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub transform: Transform,
}

/// Decodes, resizes to `size`, and applies the sampled flip and rotation to
/// image and mask alike.
pub fn load_and_augment(src: &SampleSource, size: usize, aug: &Augmentation, rng: &mut ChaCha8Rng) -> Result<Sample> {
    if size == 0 || size % 32 != 0 {
        return Err(Error::Contract(format!("main scale {size} is not a positive multiple of 32")));
    }
    let (img, mask) = src.decode()?;
    let img = resize_bilinear(&img, size, size);
    let mask = resize_nearest(&mask, size, size);
    let transform = Transform::sample(aug, rng);
    Ok(Sample {
        stem: src.stem().to_string(),
        image: transform.apply(&img, Interp::Bilinear),
        mask: transform.apply(&mask, Interp::Nearest),
        transform,
    })
}

/// Generator for sample `index` in `epoch`; independent of load order.
pub fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Mini-batch ready for the network.
#[derive(Clone, Debug)]
pub struct Batch {
    pub triplet: ScaleTriplet<f32>,
    /// `[n, 1, S, S]` in {0, 1}.
    pub masks: Tensor<f32>,
    pub stems: Vec<String>,
}

/// Training data: sources plus everything needed to turn them into batches.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub sources: Vec<SampleSource>,
    pub size: usize,
    pub augmentation: Augmentation,
    pub normalization: Normalization,
    pub scale_set: Vec<Scale>,
    pub seed: u64,
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Shuffled sample order for one epoch.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((1 << 63) | epoch as u64);
        order.shuffle(&mut rng);
        order
    }

    pub fn load(&self, index: usize, epoch: usize) -> Result<Sample> {
        let mut rng = sample_rng(self.seed, epoch, index);
        load_and_augment(&self.sources[index], self.size, &self.augmentation, &mut rng)
    }

    /// Loads and stacks `indices`. Undecodable samples are skipped with a
    /// warning; `None` when nothing could be loaded.
    pub fn batch(&self, indices: &[usize], epoch: usize, parallel: bool) -> Option<Batch> {
        let load = |&i: &usize| self.load(i, epoch);
        let loaded: Vec<Result<Sample>> =
            if parallel { par::map_slice(indices, load) } else { indices.iter().map(load).collect() };
        let mut triplets = Vec::new();
        let mut masks = Vec::new();
        let mut stems = Vec::new();
        for r in loaded {
            match r {
                Ok(mut s) => {
                    self.normalization.apply(&mut s.image);
                    triplets.push(build_pyramid(&s.image, &self.scale_set));
                    masks.push(s.mask);
                    stems.push(s.stem);
                }
                Err(e) => log::warn!("skipping sample: {e}"),
            }
        }
        (!stems.is_empty()).then(|| Batch { triplet: ScaleTriplet::stack(&triplets), masks: Tensor::stack(&masks), stems })
    }
}

/// Inference input: resized, normalized, pyramid built; no augmentation.
pub fn prepare_input(image: &RgbImage, size: usize, norm: Normalization, scale_set: &[Scale]) -> ScaleTriplet<f32> {
    let mut t = resize_bilinear(&rgb_to_tensor(image), size, size);
    norm.apply(&mut t);
    build_pyramid(&t, scale_set)
}
