use crate::error::Result;
use crate::graph::{Feed, Forward, Graph, NodeId, Op};
use crate::real::Real;
use crate::tensor::ParamStore;

/// Outcome of a central finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// Input name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`.
const FLOOR: f64 = 1e-6;

struct KinkState {
    regime: Vec<i64>,
    /// Distance of each kink-op input element to its nearest kink.
    margins: Vec<f64>,
    values: Vec<f64>,
}

fn sign_code(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn kink_state<T: Real>(graph: &Graph<T>, fwd: &Forward<'_, T>) -> KinkState {
    let mut state = KinkState {
        regime: Vec::new(),
        margins: Vec::new(),
        values: Vec::new(),
    };
    for id in graph.node_ids() {
        let inputs = graph.node_inputs(id);
        match graph.op(id) {
            Op::Relu => {
                for v in fwd.value(inputs[0]).data() {
                    let v = v.f64();
                    state.regime.push(sign_code(v));
                    state.margins.push(v.abs());
                    state.values.push(v);
                }
            }
            Op::Clamp { lo, hi } => {
                let (lo, hi) = (lo.f64(), hi.f64());
                for v in fwd.value(inputs[0]).data() {
                    let v = v.f64();
                    let code = if v < lo {
                        -1
                    } else if v > hi {
                        1
                    } else if v == lo || v == hi {
                        2
                    } else {
                        0
                    };
                    state.regime.push(code);
                    state.margins.push((v - lo).abs().min((v - hi).abs()));
                    state.values.push(v);
                }
            }
            Op::L1Loss => {
                let a = fwd.value(inputs[0]).data();
                let b = fwd.value(inputs[1]).data();
                for (x, y) in a.iter().zip(b) {
                    let d = x.f64() - y.f64();
                    state.regime.push(sign_code(d));
                    state.margins.push(d.abs());
                    state.values.push(d);
                }
            }
            Op::Custom(op) => {
                if let Some(r) = op.regime(fwd.value(inputs[0])) {
                    state.regime.extend(r);
                }
            }
            _ => {}
        }
    }
    state
}

/// Compares reverse-mode gradients of the scalar node `wrt` against central
/// differences with step `h`, perturbing every element of every input that
/// requires gradients. Coordinates whose perturbation moves a ReLU, clamp, L1
/// or custom-op input across (or within `10h` of) a kink are skipped.
pub fn check_gradients<T: Real>(
    graph: &Graph<T>,
    inputs: &ParamStore<T>,
    wrt: NodeId,
    h: f64,
) -> Result<GradCheck> {
    let base_feed = Feed::new().with_params(inputs);
    let base = graph.forward(&base_feed)?;
    let grads = base.backward(wrt)?;
    let base_kinks = kink_state(graph, &base);
    drop(base);

    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let mut probe = inputs.clone();
    for name in graph.grad_inputs() {
        let Some(analytic) = grads.get(name) else { continue };
        for idx in 0..analytic.len() {
            let original = probe.get(name).expect("fed input").data()[idx];
            let mut evaluate = |delta: f64| -> Result<(f64, KinkState)> {
                probe.get_mut(name).expect("fed input").data_mut()[idx] =
                    T::of(original.f64() + delta);
                let feed = Feed::new().with_params(&probe);
                let fwd = graph.forward(&feed)?;
                Ok((fwd.value(wrt).item().f64(), kink_state(graph, &fwd)))
            };
            let (f_plus, k_plus) = evaluate(h)?;
            let (f_minus, k_minus) = evaluate(-h)?;
            probe.get_mut(name).expect("fed input").data_mut()[idx] = original;

            let regime_moved =
                k_plus.regime != base_kinks.regime || k_minus.regime != base_kinks.regime;
            let near_kink = base_kinks.margins.iter().enumerate().any(|(j, &m)| {
                m < 10.0 * h
                    && (k_plus.values[j] != base_kinks.values[j]
                        || k_minus.values[j] != base_kinks.values[j])
            });
            if regime_moved || near_kink {
                report.skipped += 1;
                continue;
            }
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic.data()[idx].f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((name.to_string(), idx));
            }
        }
    }
    Ok(report)
}
