use std::sync::Arc;

use autodiff::{
    check_gradients, CustomOp, Feed, Graph, NodeId, ParamStore, Result, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Builds `sum(w ⊙ op(x...))` so every primitive is checked through a
/// random linear functional of its output.
fn check_unary(build: impl Fn(&mut Graph<f64>, NodeId) -> NodeId, shape: &[usize], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::<f64>::new();
    let x = g.param("x");
    let y = build(&mut g, x);
    let mut inputs = ParamStore::new();
    inputs.insert("x", random(&mut rng, shape, 1.5));
    let probe = {
        let fwd = g.forward(&Feed::new().with_params(&inputs)).unwrap();
        fwd.value(y).shape().to_vec()
    };
    let w = g.input("w");
    let wy = g.mul(y, w);
    let loss = g.sum(wy);
    inputs.insert("w", random(&mut rng, &probe, 1.0));
    let report = check_gradients(&g, &inputs, loss, H).unwrap();
    assert!(report.checked > 0, "nothing checked");
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    for seed in 0..5 {
        check_unary(|g, x| g.relu(x), &[3, 4], seed);
        check_unary(|g, x| g.tanh(x), &[3, 4], seed);
        check_unary(|g, x| g.sin(x), &[3, 4], seed);
        check_unary(|g, x| g.cos(x), &[3, 4], seed);
        check_unary(|g, x| g.clamp(x, -0.5, 0.7), &[3, 4], seed);
        check_unary(|g, x| g.scale(x, -2.5), &[3, 4], seed);
        check_unary(|g, x| g.mul(x, x), &[3, 4], seed);
        check_unary(|g, x| g.reshape(x, &[4, 3]), &[3, 4], seed);
        check_unary(|g, x| g.slice_rows(x, 1, 2), &[3, 4], seed);
        check_unary(|g, x| g.gather_rows(x, vec![2, 0, 2, 1]), &[3, 4], seed);
        check_unary(|g, x| g.concat(x, x), &[3, 4], seed);
    }
}

#[test]
fn reductions_match_finite_differences() {
    for seed in 0..5 {
        for build in [
            (|g: &mut Graph<f64>, x| g.sum_squares(x)) as fn(&mut Graph<f64>, NodeId) -> NodeId,
            |g, x| g.mean(x),
            |g, x| g.sum(x),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::<f64>::new();
            let x = g.param("x");
            let s = build(&mut g, x);
            let mut inputs = ParamStore::new();
            inputs.insert("x", random(&mut rng, &[5, 3], 2.0));
            let r = check_gradients(&g, &inputs, s, H).unwrap();
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }
}

#[test]
fn binary_primitives_match_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut g = Graph::<f64>::new();
        let a = g.param("a");
        let b = g.param("b");
        let bias = g.param("bias");
        let other = g.param("other");
        let ab = g.matmul(a, b);
        let with_bias = g.add(ab, bias);
        let prod = g.mul(with_bias, other);
        let cat = g.concat(prod, with_bias);
        let target = g.input("target");
        let loss = g.l1_loss(cat, target);
        let mut inputs = ParamStore::new();
        inputs.insert("a", random(&mut rng, &[4, 3], 1.0));
        inputs.insert("b", random(&mut rng, &[3, 2], 1.0));
        inputs.insert("bias", random(&mut rng, &[2], 1.0));
        inputs.insert("other", random(&mut rng, &[4, 2], 1.0));
        inputs.insert("target", random(&mut rng, &[4, 4], 1.0));
        let r = check_gradients(&g, &inputs, loss, H).unwrap();
        assert!(r.checked > 20, "{r:?}");
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}

fn mlp(g: &mut Graph<f64>, widths: &[usize]) -> NodeId {
    let mut h = g.input("x");
    for i in 0..widths.len() - 1 {
        let w = g.param(&format!("w{i}"));
        let b = g.param(&format!("b{i}"));
        h = g.linear(h, w, b);
        if i + 2 < widths.len() {
            h = g.relu(h);
        }
    }
    h
}

fn mlp_inputs(rng: &mut ChaCha8Rng, batch: usize, widths: &[usize]) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    p.insert("x", random(rng, &[batch, widths[0]], 1.0));
    for i in 0..widths.len() - 1 {
        let s = 1.0 / (widths[i] as f64).sqrt();
        p.insert(format!("w{i}"), random(rng, &[widths[i], widths[i + 1]], 2.0 * s));
        p.insert(format!("b{i}"), random(rng, &[widths[i + 1]], 0.5));
    }
    p
}

#[test]
fn three_layer_mlp_matches_finite_differences() {
    let widths = [5, 8, 8, 1];
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(7 + seed);
        let mut g = Graph::<f64>::new();
        let out = mlp(&mut g, &widths);
        let target = g.input("y");
        let loss = g.l1_loss(out, target);
        let mut inputs = mlp_inputs(&mut rng, 6, &widths);
        inputs.insert("y", random(&mut rng, &[6, 1], 1.0));
        let r = check_gradients(&g, &inputs, loss, H).unwrap();
        assert!(r.checked > 100, "{r:?}");
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}

#[test]
fn smooth_graph_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::<f64>::new();
    let x = g.param("x");
    let w = g.param("w");
    let xw = g.matmul(x, w);
    let t = g.tanh(xw);
    let s = g.sin(t);
    let c = g.cos(xw);
    let p = g.mul(s, c);
    let loss = g.sum_squares(p);
    let mut inputs = ParamStore::new();
    inputs.insert("x", random(&mut rng, &[4, 3], 1.0));
    inputs.insert("w", random(&mut rng, &[3, 5], 1.0));
    let r = check_gradients(&g, &inputs, loss, H).unwrap();
    assert_eq!(r.skipped, 0);
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn clamp_flat_region_has_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x");
    let c = g.clamp(x, -0.1, 0.1);
    let s = g.sum(c);
    let mut inputs = ParamStore::new();
    inputs.insert("x", Tensor::new(&[3], vec![0.5, -2.0, 0.3]).unwrap());
    let fwd = g.forward(&Feed::new().with_params(&inputs)).unwrap();
    let grads = fwd.backward(s).unwrap();
    assert_eq!(grads.get("x").unwrap().data(), &[0.0, 0.0, 0.0]);
    let r = check_gradients(&g, &inputs, s, H).unwrap();
    assert_eq!(r.checked, 3);
    assert_eq!(r.max_rel_error, 0.0);
}

/// `x²` with a deliberately wrong backward rule (`x` instead of `2x`).
struct BrokenSquare;

impl CustomOp<f64> for BrokenSquare {
    fn name(&self) -> &'static str {
        "broken_square"
    }

    fn forward(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(input.map(|v| v * v))
    }

    fn backward(&self, input: &Tensor<f64>, _out: &Tensor<f64>, grad: &Tensor<f64>) -> Result<Tensor<f64>> {
        let data = input.data().iter().zip(grad.data()).map(|(x, g)| x * g).collect();
        Tensor::new(input.shape(), data)
    }
}

#[test]
fn checker_flags_a_corrupted_backward_rule() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x");
    let y = g.custom(x, Arc::new(BrokenSquare));
    let s = g.sum(y);
    let mut inputs = ParamStore::new();
    inputs.insert("x", Tensor::new(&[3], vec![0.4, -1.2, 2.0]).unwrap());
    let r = check_gradients(&g, &inputs, s, H).unwrap();
    assert!(r.max_rel_error > 0.4, "{r:?}");
}

#[test]
fn evaluation_is_bitwise_deterministic() {
    let widths = [4, 16, 16, 1];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = mlp_inputs(&mut rng, 32, &widths);
    let run = || {
        let mut g = Graph::<f64>::new();
        let out = mlp(&mut g, &widths);
        let loss = g.sum_squares(out);
        let fwd = g.forward(&Feed::new().with_params(&inputs)).unwrap();
        let grads = fwd.backward(loss).unwrap();
        (fwd.value(loss).item().to_bits(), grads)
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}

#[test]
fn f32_and_f64_forward_agree() {
    let widths = [3, 12, 1];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = mlp_inputs(&mut rng, 8, &widths);
    let mut g64 = Graph::<f64>::new();
    let o64 = mlp(&mut g64, &widths);
    let mut g32 = Graph::<f32>::new();
    let mut h = g32.input("x");
    let w = g32.param("w0");
    let b = g32.param("b0");
    h = g32.linear(h, w, b);
    h = g32.relu(h);
    let w = g32.param("w1");
    let b = g32.param("b1");
    let o32 = g32.linear(h, w, b);
    let inputs32 = inputs.cast::<f32>();
    let f64v = g64.forward(&Feed::new().with_params(&inputs)).unwrap();
    let f32v = g32.forward(&Feed::new().with_params(&inputs32)).unwrap();
    for (a, b) in f64v.value(o64).data().iter().zip(f32v.value(o32).data()) {
        assert!((a - *b as f64).abs() < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backward_is_linear_in_the_loss(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = ParamStore::new();
        inputs.insert("x", random(&mut rng, &[3, 2], 1.0));
        inputs.insert("w", random(&mut rng, &[2, 2], 1.0));

        let mut g = Graph::<f64>::new();
        let x = g.param("x");
        let w = g.param("w");
        let xw = g.matmul(x, w);
        let t = g.tanh(xw);
        let f = g.sum_squares(t);
        let s = g.sin(xw);
        let gsum = g.mean(s);
        let af = g.scale(f, a);
        let bg = g.scale(gsum, b);
        let combo = g.add(af, bg);

        let fwd = g.forward(&Feed::new().with_params(&inputs)).unwrap();
        let gc = fwd.backward(combo).unwrap();
        let gf = fwd.backward(f).unwrap();
        let gg = fwd.backward(gsum).unwrap();
        for name in ["x", "w"] {
            let c = gc.get(name).unwrap().data();
            let lf = gf.get(name).unwrap().data();
            let lg = gg.get(name).unwrap().data();
            for i in 0..c.len() {
                prop_assert!((c[i] - (a * lf[i] + b * lg[i])).abs() < 1e-12);
            }
        }
    }
}
