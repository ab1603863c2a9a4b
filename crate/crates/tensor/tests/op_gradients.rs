//! Central-difference checks of every differentiable op in double precision.

use mstnet_tensor::{ops, ConvGeom, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Compares analytic and numeric gradients of `Σ f(inputs) ⊙ proj` with
/// respect to every input element.
fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&[Var<f64>]) -> Var<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let vars: Vec<_> = inputs.iter().cloned().map(Var::param).collect();
    let out = f(&vars);
    let proj = random(out.shape(), &mut rng);
    let loss = ops::dot_const(&out, &proj);
    let grads = loss.backward();
    let eps = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(&vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.numel() {
            let eval = |delta: f64| {
                let vs: Vec<_> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let mut t = t.clone();
                        if j == k {
                            t.data_mut()[i] += delta;
                        }
                        Var::constant(t)
                    })
                    .collect();
                ops::dot_const(&f(&vs), &proj).value().data()[0]
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            assert!(err < 1e-5, "input {k} elem {i}: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for g in [ConvGeom::new(1, 1, 1), ConvGeom::new(2, 1, 1), ConvGeom::new(1, 2, 2), ConvGeom::default()] {
        let k = if g == ConvGeom::default() { 1 } else { 3 };
        let x = random(Shape::new(2, 3, 6, 5), &mut rng);
        let w = random(Shape::new(4, 3, k, k), &mut rng);
        let b = random(Shape::new(1, 4, 1, 1), &mut rng);
        check(vec![x, w, b], |v| ops::conv2d(&v[0], &v[1], Some(&v[2]), g));
    }
}

#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(Shape::new(3, 2, 4, 3), &mut rng);
    let g = random(Shape::new(1, 2, 1, 1), &mut rng);
    let b = random(Shape::new(1, 2, 1, 1), &mut rng);
    check(vec![x.clone(), g.clone(), b.clone()], |v| ops::batch_norm_train(&v[0], &v[1], &v[2], 1e-5).out);
    let mean = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.1, -0.3]);
    let var = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.5, 2.0]);
    check(vec![x, g, b], |v| ops::batch_norm_eval(&v[0], &v[1], &v[2], &mean, &var, 1e-5));
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(Shape::new(2, 3, 4, 4), &mut rng);
    let b = random(Shape::new(2, 3, 4, 4), &mut rng);
    check(vec![a.clone()], |v| ops::relu(&v[0]));
    check(vec![a.clone()], |v| ops::sigmoid(&v[0]));
    check(vec![a.clone(), b.clone()], |v| ops::add(&v[0], &v[1]));
    check(vec![a.clone()], |v| ops::scale(&v[0], -2.5));
    check(vec![a.clone(), b], |v| ops::mul(&v[0], &v[1]));
    check(vec![a.clone(), random(Shape::new(2, 3, 1, 1), &mut rng)], |v| ops::mul(&v[0], &v[1]));
    check(vec![a, random(Shape::new(2, 1, 4, 4), &mut rng)], |v| ops::mul(&v[0], &v[1]));
}

#[test]
fn channel_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(Shape::new(2, 3, 3, 3), &mut rng);
    let b = random(Shape::new(2, 2, 3, 3), &mut rng);
    check(vec![a.clone(), b], |v| ops::concat_channels(&[&v[0], &v[1], &v[0]]));
    check(vec![a.clone()], |v| ops::slice_channels(&v[0], 1, 2));
    check(vec![a], |v| ops::softmax_channels(&v[0]));
}

#[test]
fn spatial_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(Shape::new(1, 2, 6, 6), &mut rng);
    check(vec![a.clone()], |v| ops::resize_bilinear(&v[0], 12, 12));
    check(vec![a.clone()], |v| ops::resize_bilinear(&v[0], 4, 4));
    check(vec![a.clone()], |v| ops::resize_bilinear(&v[0], 9, 5));
    check(vec![a.clone()], |v| ops::adaptive_avg_pool(&v[0], 4, 4));
    check(vec![a.clone()], |v| ops::adaptive_max_pool(&v[0], 4, 4));
    check(vec![a.clone()], |v| ops::global_avg_pool(&v[0]));
    check(vec![a.clone()], |v| ops::max_pool2d(&v[0], 3, 2, 1));
    check(vec![a], |v| ops::mean(&v[0]));
}

#[test]
fn shared_inputs_accumulate_gradients() {
    let x = Var::param(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![2.0f64, -1.0]));
    let y = ops::sum(&ops::mul(&x, &x));
    let g = y.backward();
    assert_eq!(g.get(&x).unwrap().data(), &[4.0, -2.0]);
}

#[test]
fn constants_keep_no_graph() {
    let x = Var::constant(Tensor::<f32>::ones(Shape::new(1, 1, 2, 2)));
    let y = ops::relu(&x);
    assert!(!y.requires_grad());
    let g = y.backward();
    assert!(g.get(&x).is_none());
}

#[test]
fn meta_tensors_propagate_shapes() {
    let x = Var::constant(Tensor::<f32>::meta(Shape::new(1, 3, 384, 384)));
    let w = Var::constant(Tensor::<f32>::meta(Shape::new(64, 3, 7, 7)));
    let (y, flops) = mstnet_tensor::profile::count_flops(|| ops::conv2d(&x, &w, None, ConvGeom::new(2, 3, 1)));
    assert!(y.is_meta());
    assert_eq!(y.shape(), Shape::new(1, 64, 192, 192));
    assert_eq!(flops, 2 * 192 * 192 * 64 * 3 * 49);
    let p = ops::max_pool2d(&y, 3, 2, 1);
    assert_eq!(p.shape(), Shape::new(1, 64, 96, 96));
}
