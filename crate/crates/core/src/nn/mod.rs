//! Computation graph, LSTMs and the stack-LSTM parser model.

pub mod graph;
mod init;
pub mod lstm;
pub mod model;
pub mod state;

pub use graph::{Gradients, Graph, ParamId, ParamStore, Tensor, Value};
pub use lstm::{lstm_step, LstmParams, LstmState, StackLstm};
pub use model::{EncodedSentence, ModelConfig, ParserModel};
pub use state::{
    action_distribution, compose, encode_from_scratch, ActionDistribution, ParserState,
};
