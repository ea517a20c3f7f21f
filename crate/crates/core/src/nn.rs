//! Dense-layer helpers shared by the chart predictor and the SDF decoder.

use autodiff::{Graph, NodeId, ParamStore, Real, Tensor};
use rand::Rng;

/// He-uniform weights `[fan_in, fan_out]` and zero bias.
pub(crate) fn init_dense(
    params: &mut ParamStore<f32>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) {
    let bound = (6.0 / fan_in as f64).sqrt();
    params.insert(
        format!("{name}.w"),
        Tensor::from_fn(&[fan_in, fan_out], |_| rng.random_range(-bound..bound) as f32),
    );
    params.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

/// `x · W + b` for the layer registered under `name`. Frozen layers read
/// their weights as plain inputs, so no weight gradients are formed.
pub(crate) fn dense<T: Real>(g: &mut Graph<T>, x: NodeId, name: &str, trainable: bool) -> NodeId {
    let (w, b) = (format!("{name}.w"), format!("{name}.b"));
    let (w, b) = if trainable {
        (g.param(&w), g.param(&b))
    } else {
        (g.input(&w), g.input(&b))
    };
    g.linear(x, w, b)
}
