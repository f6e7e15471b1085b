//! Network building blocks: LSTM cell, reconstruction decoder, linear head,
//! parameter storage/initialization, and the Adam optimizer.

mod adam;
mod decoder;
mod init;
mod lstm;
mod params;

pub use adam::{AdamHyper, AdamState};
pub use decoder::{
    decoder_predict, onehot_columns, BoundDecoder, DecoderSpec, DEFAULT_DECODER_HIDDEN,
};
pub use init::{glorot, init_rng, InitRng};
pub use lstm::{lstm_step, BoundHead, BoundLstm, HeadSpec, LstmSpec};
pub use params::{bind_param, GradMap, ParamSet, ParamTensor};
