//! Central finite-difference checks for the tensor primitives.
//!
//! Each check builds one random instance of its op in `f64`, compares the
//! analytic backward with central differences (step [`STEP`]) and returns
//! the worst normwise relative error over the op's inputs:
//! `max |analytic - numeric| / max(|analytic|, |numeric|)`.

use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::*;

pub const STEP: f64 = 1e-3;

pub type Check = fn(&mut dyn RngCore) -> f64;

/// Every differentiable primitive with its check.
pub const CHECKS: [(&str, Check); 12] = [
    ("conv2d", conv2d_check),
    ("batch_norm", batch_norm_check),
    ("relu", relu_check),
    ("channel_split", split_check),
    ("channel_concat", concat_check),
    ("channel_shuffle", shuffle_check),
    ("max_pool", max_pool_check),
    ("global_avg_pool", global_avg_pool_check),
    ("fully_connected", fully_connected_check),
    ("softmax_cross_entropy", cross_entropy_check),
    ("smooth_l1", smooth_l1_check),
    ("sigmoid", sigmoid_check),
];

pub fn numeric_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + STEP;
            let up = f(&probe);
            probe[i] = orig - STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

fn compare(analytic: &[f64], f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> f64 {
    relative_error(analytic, &numeric_gradient(f, x))
}

fn random_vec(rng: &mut dyn RngCore, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(shape: Shape, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).expect("matching length")
}

/// `sum(r * y)` with a fixed random projection `r`.
fn project(y: &Tensor<f64>, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn random_shape(rng: &mut dyn RngCore, max_c: usize) -> Shape {
    Shape::new(
        rng.random_range(1..=3),
        2 * rng.random_range(1..=max_c / 2),
        rng.random_range(2..=6),
        rng.random_range(2..=6),
    )
}

fn conv2d_check(rng: &mut dyn RngCore) -> f64 {
    let kernel = [1, 3, 5, 7][rng.random_range(0..4)];
    let stride = rng.random_range(1..=2);
    let xs = random_shape(rng, 4);
    let spec = if rng.random_bool(0.5) {
        ConvSpec::depthwise(xs.c, kernel, stride)
    } else {
        ConvSpec::dense(xs.c, 2 * rng.random_range(1..=2), kernel, stride)
    };
    let x = random_vec(rng, xs.len());
    let w = random_vec(rng, spec.weight_len());
    let y = conv2d(&tensor(xs, &x), &w, &spec).expect("valid conv");
    let r = random_vec(rng, y.len());
    let (dx, dw) = conv2d_backward(&tensor(xs, &x), &w, &spec, &tensor(y.shape(), &r)).expect("valid conv");
    let fx = |v: &[f64]| project(&conv2d(&tensor(xs, v), &w, &spec).expect("valid conv"), &r);
    let fw = |v: &[f64]| project(&conv2d(&tensor(xs, &x), v, &spec).expect("valid conv"), &r);
    compare(dx.data(), &fx, &x).max(compare(&dw, &fw, &w))
}

fn batch_norm_check(rng: &mut dyn RngCore) -> f64 {
    let mut xs = random_shape(rng, 4);
    xs.n = rng.random_range(2..=3);
    let x = random_vec(rng, xs.len());
    let scale: Vec<f64> = (0..xs.c).map(|_| rng.random_range(0.5..1.5)).collect();
    let shift = random_vec(rng, xs.c);
    let r = random_vec(rng, xs.len());
    let eps = 1e-5;
    let bn = |x: &[f64], s: &[f64], b: &[f64]| {
        project(&batch_norm_train(&tensor(xs, x), s, b, eps).expect("valid bn").0, &r)
    };
    let (_, cache, _) = batch_norm_train(&tensor(xs, &x), &scale, &shift, eps).expect("valid bn");
    let (dx, dscale, dshift) = batch_norm_train_backward(&cache, &scale, &tensor(xs, &r)).expect("valid bn");
    compare(dx.data(), &|v| bn(v, &scale, &shift), &x)
        .max(compare(&dscale, &|v| bn(&x, v, &shift), &scale))
        .max(compare(&dshift, &|v| bn(&x, &scale, v), &shift))
}

fn relu_check(rng: &mut dyn RngCore) -> f64 {
    let xs = random_shape(rng, 4);
    // keep clear of the kink
    let x: Vec<f64> = random_vec(rng, xs.len())
        .into_iter()
        .map(|v| if v.abs() < 0.01 { 0.5 } else { v })
        .collect();
    let r = random_vec(rng, xs.len());
    let dx = relu_backward(&tensor(xs, &x), &tensor(xs, &r)).expect("same shape");
    compare(dx.data(), &|v| project(&relu(&tensor(xs, v)), &r), &x)
}

fn split_check(rng: &mut dyn RngCore) -> f64 {
    let xs = random_shape(rng, 8);
    let at = rng.random_range(0..=xs.c);
    let x = random_vec(rng, xs.len());
    let r = random_vec(rng, xs.len());
    let (a, b) = channel_split(&tensor(xs, &x), at).expect("valid split");
    let (ra, rb) = r.split_at(a.len());
    let dx = channel_concat(&tensor(a.shape(), ra), &tensor(b.shape(), rb)).expect("valid concat");
    let f = |v: &[f64]| {
        let (a, b) = channel_split(&tensor(xs, v), at).expect("valid split");
        project(&a, ra) + project(&b, rb)
    };
    compare(dx.data(), &f, &x)
}

fn concat_check(rng: &mut dyn RngCore) -> f64 {
    let xs = random_shape(rng, 8);
    let at = rng.random_range(0..=xs.c);
    let x = random_vec(rng, xs.len());
    let r = random_vec(rng, xs.len());
    let (first, second) = channel_split(&tensor(xs, &x), at).expect("valid split");
    let (dfirst, dsecond) = channel_concat_backward(&tensor(xs, &r), at).expect("valid concat");
    let f1 = |v: &[f64]| project(&channel_concat(&tensor(first.shape(), v), &second).expect("valid"), &r);
    let f2 = |v: &[f64]| project(&channel_concat(&first, &tensor(second.shape(), v)).expect("valid"), &r);
    let e1 = compare(dfirst.data(), &f1, first.data());
    if second.is_empty() {
        e1
    } else {
        e1.max(compare(dsecond.data(), &f2, second.data()))
    }
}

fn shuffle_check(rng: &mut dyn RngCore) -> f64 {
    let xs = random_shape(rng, 8);
    let x = random_vec(rng, xs.len());
    let r = random_vec(rng, xs.len());
    let dx = channel_shuffle_backward(&tensor(xs, &r), 2).expect("even channels");
    compare(dx.data(), &|v| project(&channel_shuffle(&tensor(xs, v), 2).expect("even channels"), &r), &x)
}

fn max_pool_check(rng: &mut dyn RngCore) -> f64 {
    let xs = random_shape(rng, 4);
    // distinct values spaced well beyond the probe step
    let mut x: Vec<f64> = (0..xs.len()).map(|i| i as f64 * 0.01).collect();
    for i in (1..x.len()).rev() {
        let j = rng.random_range(0..=i);
        x.swap(i, j);
    }
    let (y, arg) = max_pool(&tensor(xs, &x), 3, 2).expect("valid pool");
    let r = random_vec(rng, y.len());
    let dx = max_pool_backward(xs, &arg, &tensor(y.shape(), &r)).expect("valid pool");
    compare(dx.data(), &|v| project(&max_pool(&tensor(xs, v), 3, 2).expect("valid pool").0, &r), &x)
}

fn global_avg_pool_check(rng: &mut dyn RngCore) -> f64 {
    let xs = random_shape(rng, 6);
    let x = random_vec(rng, xs.len());
    let r = random_vec(rng, xs.n * xs.c);
    let dx = global_avg_pool_backward(xs, &tensor(Shape::matrix(xs.n, xs.c), &r)).expect("valid pool");
    compare(dx.data(), &|v| project(&global_avg_pool(&tensor(xs, v)), &r), &x)
}

fn fully_connected_check(rng: &mut dyn RngCore) -> f64 {
    let n = rng.random_range(1..=3);
    let fin = rng.random_range(1..=6);
    let out = rng.random_range(1..=5);
    let ms = Shape::matrix(n, fin);
    let x = random_vec(rng, ms.len());
    let w = random_vec(rng, out * fin);
    let b = random_vec(rng, out);
    let r = random_vec(rng, n * out);
    let fc = |x: &[f64], w: &[f64], b: &[f64]| project(&fully_connected(&tensor(ms, x), w, b).expect("valid fc"), &r);
    let (dx, dw, db) = fully_connected_backward(&tensor(ms, &x), &w, &tensor(Shape::matrix(n, out), &r)).expect("valid fc");
    compare(dx.data(), &|v| fc(v, &w, &b), &x)
        .max(compare(&dw, &|v| fc(&x, v, &b), &w))
        .max(compare(&db, &|v| fc(&x, &w, v), &b))
}

fn cross_entropy_check(rng: &mut dyn RngCore) -> f64 {
    let n = rng.random_range(1..=4);
    let k = rng.random_range(2..=6);
    let s = Shape::matrix(n, k);
    let logits: Vec<f64> = (0..s.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let (_, grad) = softmax_cross_entropy(&tensor(s, &logits), &labels).expect("valid labels");
    let f = |v: &[f64]| softmax_cross_entropy(&tensor(s, v), &labels).expect("valid labels").0;
    compare(grad.data(), &f, &logits)
}

fn smooth_l1_check(rng: &mut dyn RngCore) -> f64 {
    let s = Shape::matrix(rng.random_range(1..=4), 4);
    let target = random_vec(rng, s.len());
    // keep clear of the switch at |d| = 1
    let pred: Vec<f64> = target
        .iter()
        .map(|t| {
            let mut d: f64 = rng.random_range(-2.5..2.5);
            if (d.abs() - 1.0).abs() < 0.01 {
                d *= 0.5;
            }
            t + d
        })
        .collect();
    let tt = tensor(s, &target);
    let (_, grad) = smooth_l1(&tensor(s, &pred), &tt).expect("same shape");
    compare(grad.data(), &|v| smooth_l1(&tensor(s, v), &tt).expect("same shape").0, &pred)
}

fn sigmoid_check(rng: &mut dyn RngCore) -> f64 {
    let s = Shape::matrix(rng.random_range(1..=4), rng.random_range(1..=5));
    let x = random_vec(rng, s.len());
    let r = random_vec(rng, s.len());
    let y = sigmoid(&tensor(s, &x));
    let dx = sigmoid_backward(&y, &tensor(s, &r)).expect("same shape");
    compare(dx.data(), &|v| project(&sigmoid(&tensor(s, v)), &r), &x)
}
