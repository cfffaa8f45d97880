//! LSTM cell and the stack LSTM built on it.

use std::rc::Rc;

use rand::Rng;

use super::graph::{Graph, ParamId, ParamStore, Value};
use super::init;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub input_weights: ParamId,
    pub hidden_weights: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmParams {
    /// Gate blocks are stacked as input, forget, output, candidate.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let input_weights = store.add(
            format!("{}.wx", name),
            init::glorot(4 * hidden_dim, input_dim, rng),
            true,
        );
        let hidden_weights = store.add(
            format!("{}.wh", name),
            init::glorot(4 * hidden_dim, hidden_dim, rng),
            true,
        );
        let mut b = init::zeros(4 * hidden_dim, 1);
        b.data[hidden_dim..2 * hidden_dim].fill(1.0);
        let bias = store.add(format!("{}.b", name), b, true);
        LstmParams {
            input_weights,
            hidden_weights,
            bias,
            input_dim,
            hidden_dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub hidden: Value,
    pub cell: Value,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, hidden_dim: usize) -> Self {
        LstmState {
            hidden: g.input(vec![0.0; hidden_dim]),
            cell: g.input(vec![0.0; hidden_dim]),
        }
    }
}

pub fn lstm_step(
    g: &mut Graph,
    params: &LstmParams,
    state: LstmState,
    input: Value,
) -> Result<LstmState> {
    let h = params.hidden_dim;
    if g.shape(input) != (params.input_dim, 1) {
        return Err(Error::Shape {
            op: "lstm",
            detail: format!("input {:?}, expected {}", g.shape(input), params.input_dim),
        });
    }
    if g.dim(state.hidden) != h || g.dim(state.cell) != h {
        return Err(Error::Shape {
            op: "lstm",
            detail: format!("state of dimension {}, expected {}", g.dim(state.hidden), h),
        });
    }
    let wx = g.param(params.input_weights);
    let wh = g.param(params.hidden_weights);
    let b = g.param(params.bias);
    let z = g.affine(b, &[(wx, input), (wh, state.hidden)])?;

    let i = g.slice(z, 0, h)?;
    let i = g.sigmoid(i);
    let f = g.slice(z, h, h)?;
    let f = g.sigmoid(f);
    let o = g.slice(z, 2 * h, h)?;
    let o = g.sigmoid(o);
    let u = g.slice(z, 3 * h, h)?;
    let u = g.tanh(u);

    let keep = g.mul(f, state.cell)?;
    let write = g.mul(i, u)?;
    let cell = g.add(keep, write)?;
    let squashed = g.tanh(cell);
    let hidden = g.mul(o, squashed)?;
    Ok(LstmState { hidden, cell })
}

#[derive(Debug)]
struct Frame {
    state: LstmState,
    depth: usize,
    below: Option<Rc<Frame>>,
}

/// Persistent stack of LSTM states. Push runs one LSTM step from the current
/// top; pop returns to the frame below without recomputation.
///
/// The bottom frame is the state after reading a learned guard vector, so
/// the summary of an empty stack is itself learned.
#[derive(Clone, Debug)]
pub struct StackLstm {
    params: LstmParams,
    top: Rc<Frame>,
}

impl StackLstm {
    pub fn new(g: &mut Graph, params: LstmParams, guard: Value) -> Result<Self> {
        let zero = LstmState::zeros(g, params.hidden_dim);
        let state = lstm_step(g, &params, zero, guard)?;
        Ok(StackLstm {
            params,
            top: Rc::new(Frame {
                state,
                depth: 0,
                below: None,
            }),
        })
    }

    pub fn push(&self, g: &mut Graph, input: Value) -> Result<Self> {
        let state = lstm_step(g, &self.params, self.top.state, input)?;
        Ok(StackLstm {
            params: self.params,
            top: Rc::new(Frame {
                state,
                depth: self.top.depth + 1,
                below: Some(Rc::clone(&self.top)),
            }),
        })
    }

    pub fn pop(&self) -> Result<Self> {
        let below = self.top.below.as_ref().ok_or(Error::EmptyStack)?;
        Ok(StackLstm {
            params: self.params,
            top: Rc::clone(below),
        })
    }

    pub fn depth(&self) -> usize {
        self.top.depth
    }

    pub fn state(&self) -> LstmState {
        self.top.state
    }

    /// Hidden state of the top frame.
    pub fn summary(&self) -> Value {
        self.top.state.hidden
    }

    /// Whether both stacks point at the same frame.
    pub fn same_top(&self, other: &StackLstm) -> bool {
        Rc::ptr_eq(&self.top, &other.top)
    }
}
