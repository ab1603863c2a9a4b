use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use mstnet::config::{Augmentation, Scale};
use mstnet::data::{
    build_pyramid, hflip, index_dataset, index_roots, load_and_augment, rotate, sample_rng, synthetic_pair, write_synthetic_dataset,
    Interp, Normalization, SampleSource, TrainSet, Transform,
};
use mstnet::tensor::{Shape, Tensor};
use mstnet::Error;

fn touch_image(path: &Path) {
    RgbImage::from_pixel(8, 8, Rgb([10, 20, 30])).save(path).unwrap();
}

fn touch_mask(path: &Path, v: u8) {
    GrayImage::from_pixel(8, 8, Luma([v])).save(path).unwrap();
}

fn layout(root: &Path, images: &[&str], masks: &[&str]) {
    std::fs::create_dir_all(root.join("Image")).unwrap();
    std::fs::create_dir_all(root.join("GT")).unwrap();
    for s in images {
        touch_image(&root.join("Image").join(format!("{s}.png")));
    }
    for s in masks {
        touch_mask(&root.join("GT").join(format!("{s}.png")), 255);
    }
}

#[test]
fn index_matches_by_stem_and_sorts() {
    let tmp = tempfile::tempdir().unwrap();
    layout(tmp.path(), &["c", "a", "b"], &["b", "c", "a"]);
    let idx = index_dataset(tmp.path()).unwrap();
    let stems: Vec<&str> = idx.pairs.iter().map(|p| p.stem.as_str()).collect();
    assert_eq!(stems, ["a", "b", "c"]);
    assert!(idx.warnings.is_empty());
}

#[test]
fn unmatched_files_become_warnings() {
    let tmp = tempfile::tempdir().unwrap();
    layout(tmp.path(), &["a", "b", "c", "d"], &["a", "b", "c"]);
    let idx = index_dataset(tmp.path()).unwrap();
    assert_eq!(idx.pairs.len(), 3);
    assert_eq!(idx.warnings.len(), 1);
    assert!(idx.warnings[0].contains("d.png"));
}

#[test]
fn missing_image_dir_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    match index_dataset(tmp.path()).unwrap_err() {
        Error::Io { path, .. } => assert!(path.ends_with("Image"), "{}", path.display()),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn empty_intersection_and_duplicates_are_errors() {
    let tmp = tempfile::tempdir().unwrap();
    layout(tmp.path(), &["a"], &["b"]);
    assert!(matches!(index_dataset(tmp.path()), Err(Error::Dataset(_))));

    let dup = tempfile::tempdir().unwrap();
    layout(dup.path(), &["a"], &["a"]);
    RgbImage::from_pixel(4, 4, Rgb([0, 0, 0])).save(dup.path().join("Image").join("a.jpg")).unwrap();
    assert!(matches!(index_dataset(dup.path()), Err(Error::Dataset(_))));

    let other = tempfile::tempdir().unwrap();
    layout(other.path(), &["a"], &["a"]);
    let roots = [tmp.path().to_path_buf(), other.path().to_path_buf()];
    assert!(index_roots(&roots[1..]).is_ok());
    let twice = [other.path().to_path_buf(), other.path().to_path_buf()];
    assert!(matches!(index_roots(&twice), Err(Error::Dataset(_))));
}

#[test]
fn white_mask_loads_as_ones() {
    let tmp = tempfile::tempdir().unwrap();
    layout(tmp.path(), &["a"], &["a"]);
    let pair = index_dataset(tmp.path()).unwrap().pairs.remove(0);
    let mut rng = sample_rng(0, 0, 0);
    let s = load_and_augment(&SampleSource::Files(pair), 32, &Augmentation::none(), &mut rng).unwrap();
    assert_eq!(s.image.shape(), Shape::new(1, 3, 32, 32));
    assert!(s.mask.data().iter().all(|&v| v == 1.0));
}

#[test]
fn masks_are_strictly_binary_after_augmentation() {
    let (image, mask) = synthetic_pair(64, 3);
    // add intermediate grays that must not survive
    let mut mask = mask;
    for (i, p) in mask.pixels_mut().enumerate() {
        if i % 7 == 0 {
            p.0[0] = 100 + (i % 50) as u8;
        }
    }
    let src = SampleSource::Memory { stem: "x".into(), image, mask };
    for seed in 0..8 {
        let mut rng = sample_rng(seed, 0, 0);
        let s = load_and_augment(&src, 64, &Augmentation { probability: 1.0, ..Augmentation::default() }, &mut rng).unwrap();
        assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn main_scale_must_be_a_multiple_of_32() {
    let (image, mask) = synthetic_pair(40, 0);
    let src = SampleSource::Memory { stem: "x".into(), image, mask };
    assert!(load_and_augment(&src, 40, &Augmentation::none(), &mut sample_rng(0, 0, 0)).is_err());
}

#[test]
fn flip_is_an_involution() {
    let t = Tensor::from_fn(Shape::new(1, 3, 5, 7), |i| i as f32);
    assert_eq!(hflip(&hflip(&t)).data(), t.data());
}

#[test]
fn rotation_round_trip_stays_within_tolerance() {
    let s = 64;
    let t = Tensor::from_fn(Shape::new(1, 1, s, s), |i| {
        let (y, x) = ((i / s) as f32, (i % s) as f32);
        0.5 + 0.25 * (x / 9.0).sin() + 0.25 * (y / 11.0).cos()
    });
    for deg in [-15.0, -7.5, 4.0, 15.0] {
        let back = rotate(&rotate(&t, deg, Interp::Bilinear), -deg, Interp::Bilinear);
        // compare where no reflected border content reaches
        let c = (s as f32 - 1.0) / 2.0;
        let mut worst = 0.0f32;
        for y in 0..s {
            for x in 0..s {
                if ((y as f32 - c).powi(2) + (x as f32 - c).powi(2)).sqrt() < 0.35 * s as f32 {
                    worst = worst.max((back.data()[y * s + x] - t.data()[y * s + x]).abs());
                }
            }
        }
        assert!(worst < 2.0 / 255.0, "{deg}: {worst}");
    }
}

#[test]
fn recorded_transform_reproduces_the_mask() {
    let (image, mask) = synthetic_pair(64, 5);
    let src = SampleSource::Memory { stem: "x".into(), image, mask: mask.clone() };
    let aug = Augmentation { probability: 1.0, ..Augmentation::default() };
    let s = load_and_augment(&src, 64, &aug, &mut sample_rng(9, 1, 2)).unwrap();
    assert!(s.transform.flip);
    let raw = mstnet::data::mask_to_tensor(&mask);
    assert_eq!(s.transform.apply(&raw, Interp::Nearest).data(), s.mask.data());
    assert_eq!(Transform::default().apply(&raw, Interp::Nearest).data(), raw.data());
}

#[test]
fn pyramid_sizes_and_identity() {
    for (s, want) in [(384, [192, 384, 576]), (352, [176, 352, 528])] {
        let img = Tensor::<f32>::from_fn(Shape::new(1, 3, s, s), |i| (i % 255) as f32 / 255.0);
        let p = build_pyramid(&img, &Scale::ALL);
        let sizes: Vec<usize> = p.images.values().map(|t| t.shape().h).collect();
        assert_eq!(sizes, want);
        assert_eq!(p.main().data(), img.data());
        let single = build_pyramid(&img, &[Scale::Main]);
        assert_eq!(single.images.len(), 1);
    }
}

fn synthetic_set(parallel_seed: u64) -> TrainSet {
    let sources = (0..6)
        .map(|i| {
            let (image, mask) = synthetic_pair(64, i);
            SampleSource::Memory { stem: format!("s{i}"), image, mask }
        })
        .collect();
    TrainSet {
        sources,
        size: 64,
        augmentation: Augmentation::default(),
        normalization: Normalization::Unit,
        scale_set: Scale::ALL.to_vec(),
        seed: parallel_seed,
    }
}

#[test]
fn loading_is_order_independent() {
    let set = synthetic_set(11);
    let a = set.batch(&[0, 1, 2, 3, 4, 5], 2, true).unwrap();
    let b = set.batch(&[0, 1, 2, 3, 4, 5], 2, false).unwrap();
    assert_eq!(a.masks.data(), b.masks.data());
    assert_eq!(a.triplet.main().data(), b.triplet.main().data());
    // a sample's augmentation does not depend on its batch neighbours
    let single = set.batch(&[3], 2, false).unwrap();
    let plane = 3 * 64 * 64;
    assert_eq!(single.triplet.main().data(), &a.triplet.main().data()[3 * plane..4 * plane]);
    // and changes between epochs
    assert_ne!(set.load(3, 2).unwrap().transform, set.load(3, 5).unwrap().transform);
    let mut order = set.epoch_order(0);
    order.sort();
    assert_eq!(order, (0..6).collect::<Vec<_>>());
}

#[test]
fn undecodable_samples_are_skipped_in_batches() {
    let tmp = tempfile::tempdir().unwrap();
    write_synthetic_dataset(tmp.path(), 3, 32, 0).unwrap();
    std::fs::write(tmp.path().join("Image").join("syn001.png"), b"not a png").unwrap();
    let pairs = index_dataset(tmp.path()).unwrap().pairs;
    let set = TrainSet {
        sources: pairs.into_iter().map(SampleSource::Files).collect(),
        size: 32,
        augmentation: Augmentation::none(),
        normalization: Normalization::ImageNet,
        scale_set: vec![Scale::Main],
        seed: 0,
    };
    let b = set.batch(&[0, 1, 2], 0, false).unwrap();
    assert_eq!(b.stems, ["syn000", "syn002"]);
    assert!(set.batch(&[1], 0, false).is_none());
}

#[test]
fn imagenet_normalization_standardizes_channels() {
    let mut t = Tensor::<f32>::full(Shape::new(1, 3, 2, 2), 0.485);
    Normalization::ImageNet.apply(&mut t);
    assert!(t.data()[..4].iter().all(|v| v.abs() < 1e-6));
    let mut u = Tensor::<f32>::full(Shape::new(1, 3, 2, 2), 0.3);
    Normalization::Unit.apply(&mut u);
    assert!(u.data().iter().all(|&v| v == 0.3));
}
