use super::{LayerWeights, GATE_CANDIDATE, GATE_FORGET, GATE_INPUT, GATE_OUTPUT, NUM_GATES};
use crate::error::{Error, Result};

/// Gate activations of one cell evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct GateRecord {
    pub input: Vec<f64>,
    pub forget: Vec<f64>,
    pub output: Vec<f64>,
    pub candidate: Vec<f64>,
}

/// One LSTM cell step for a single lane. Returns `(h, c, gates)`.
pub fn lstm_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    layer: &LayerWeights,
) -> Result<(Vec<f64>, Vec<f64>, GateRecord)> {
    let n = layer.hidden;
    if x.len() != layer.input_dim || h_prev.len() != n || c_prev.len() != n {
        return Err(Error::Contract(format!(
            "cell expects x[{}], h[{n}], c[{n}]; got x[{}], h[{}], c[{}]",
            layer.input_dim,
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut gates = vec![0.0; NUM_GATES * n];
    let mut c = vec![0.0; n];
    let mut tanh_c = vec![0.0; n];
    let mut h = vec![0.0; n];
    cell_step(layer, x, h_prev, c_prev, &mut gates, &mut c, &mut tanh_c, &mut h);
    let block = |g: usize| gates[g * n..(g + 1) * n].to_vec();
    let record = GateRecord {
        input: block(GATE_INPUT),
        forget: block(GATE_FORGET),
        output: block(GATE_OUTPUT),
        candidate: block(GATE_CANDIDATE),
    };
    Ok((h, c, record))
}

#[inline]
pub(crate) fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Unchecked single-lane step writing into caller buffers.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn cell_step(
    layer: &LayerWeights,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    gates: &mut [f64],
    c: &mut [f64],
    tanh_c: &mut [f64],
    h: &mut [f64],
) {
    let n = layer.hidden;
    let d = layer.input_dim;
    for r in 0..NUM_GATES * n {
        let wx = &layer.w_x[r * d..(r + 1) * d];
        let wh = &layer.w_h[r * n..(r + 1) * n];
        let mut a = layer.bias[r];
        for (w, v) in wx.iter().zip(x) {
            a += w * v;
        }
        for (w, v) in wh.iter().zip(h_prev) {
            a += w * v;
        }
        gates[r] = if r / n == GATE_CANDIDATE {
            a.tanh()
        } else {
            sigmoid(a)
        };
    }
    for u in 0..n {
        let i = gates[GATE_INPUT * n + u];
        let f = gates[GATE_FORGET * n + u];
        let o = gates[GATE_OUTPUT * n + u];
        let g = gates[GATE_CANDIDATE * n + u];
        c[u] = f * c_prev[u] + i * g;
        tanh_c[u] = c[u].tanh();
        h[u] = o * tanh_c[u];
    }
}
