use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One LSTM layer: gates = W·[x; h] + b, ordered (input, forget, output, candidate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmLayer {
    /// Glorot weights, zero bias except the forget gate, which starts at 1.
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = ps.add_matrix(
            format!("{prefix}.weight"),
            4 * hidden_size,
            input_size + hidden_size,
            rng,
        );
        let mut b = vec![0.0; 4 * hidden_size];
        b[hidden_size..2 * hidden_size].iter_mut().for_each(|v| *v = 1.0);
        let bias = ps.add(format!("{prefix}.bias"), Tensor::vector(b));
        LstmLayer {
            weight,
            bias,
            input_size,
            hidden_size,
        }
    }

    /// Rebind to parameters already present in `ps` (used when loading).
    pub fn bind(ps: &ParamStore, prefix: &str, input_size: usize, hidden_size: usize) -> Result<Self> {
        let find = |n: String| {
            ps.find(&n)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {n}")))
        };
        Ok(LstmLayer {
            weight: find(format!("{prefix}.weight"))?,
            bias: find(format!("{prefix}.bias"))?,
            input_size,
            hidden_size,
        })
    }

    /// One recurrence step on the graph; returns `(hidden, cell)`.
    pub fn step(&self, g: &mut Graph, x: NodeId, h: NodeId, c: NodeId) -> Result<(NodeId, NodeId)> {
        let hs = self.hidden_size;
        if g.value(x).len() != self.input_size {
            return Err(Error::Shape {
                op: "lstm_cell",
                expected: vec![self.input_size],
                got: vec![g.value(x).len()],
            });
        }
        if g.value(h).len() != hs || g.value(c).len() != hs {
            return Err(Error::Shape {
                op: "lstm_cell",
                expected: vec![hs],
                got: vec![g.value(h).len(), g.value(c).len()],
            });
        }
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xh = g.concat(&[x, h])?;
        let pre = g.matvec(w, xh)?;
        let pre = g.add(pre, b)?;
        let i = g.slice(pre, 0, hs)?;
        let i = g.sigmoid(i)?;
        let f = g.slice(pre, hs, hs)?;
        let f = g.sigmoid(f)?;
        let o = g.slice(pre, 2 * hs, hs)?;
        let o = g.sigmoid(o)?;
        let cand = g.slice(pre, 3 * hs, hs)?;
        let cand = g.tanh(cand)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let squashed = g.tanh(c_new)?;
        let h_new = g.mul(o, squashed)?;
        Ok((h_new, c_new))
    }
}

/// Hidden and cell vectors for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

/// Recurrent state for a stack of LSTM layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub layers: Vec<LayerState>,
}

impl LstmState {
    pub fn zeros(layers: usize, hidden: usize) -> Self {
        LstmState {
            layers: (0..layers)
                .map(|_| LayerState {
                    hidden: Tensor::zeros(&[hidden]),
                    cell: Tensor::zeros(&[hidden]),
                })
                .collect(),
        }
    }
}

/// Evaluate one layer step outside any training graph.
pub fn lstm_cell(
    params: &ParamStore,
    layer: &LstmLayer,
    state: &LayerState,
    input: &Tensor,
) -> Result<LayerState> {
    let mut g = Graph::new(params);
    let x = g.input(input.clone());
    let h = g.input(state.hidden.clone());
    let c = g.input(state.cell.clone());
    let (h2, c2) = layer.step(&mut g, x, h, c)?;
    Ok(LayerState {
        hidden: g.tensor(h2).clone(),
        cell: g.tensor(c2).clone(),
    })
}
