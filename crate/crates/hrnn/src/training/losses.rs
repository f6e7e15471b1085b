//! Auxiliary reconstruction loss at a tick, shared by the oracle and
//! streaming paths.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::layers::{decoder_predict, onehot_columns, BoundDecoder};
use crate::real::Real;

/// What the decoder is scored against.
pub enum AuxTarget<F: Real> {
    /// Discrete inputs: class per batch element, cross-entropy.
    Classes(Vec<usize>),
    /// Continuous inputs or deeper-level states: (D) or (D,B) values, mean
    /// squared error. Callers pass detached values; that realizes the
    /// gradient barrier on targets exactly (zero flows into them).
    Values(Tensor<F>),
}

/// Reconstruction loss for one consumed up-sent state: the decoder, given the
/// state and the one-hot of a sampled index i, predicts the i-th previous
/// input of the producing level. Returns the batch-mean tick loss
/// (unweighted; the training step applies its beta and normalizer).
///
/// `indices` are 1-based: 1 = most recent input. Errors if any index
/// exceeds `segment_len`.
pub fn aux_loss_at_tick<F: Real>(
    tape: &mut Tape<F>,
    decoder: &BoundDecoder<F>,
    h_up: &Tensor<F>,
    target: &AuxTarget<F>,
    indices: &[usize],
    segment_len: usize,
) -> Result<Tensor<F>> {
    for &i in indices {
        if i == 0 || i > segment_len {
            return Err(Error::Config(format!(
                "auxiliary index {i} outside segment of length {segment_len}"
            )));
        }
    }
    let slots: Vec<usize> = indices.iter().map(|&i| i - 1).collect();
    let onehot = onehot_columns(decoder.spec.k_max, &slots);
    let pred = decoder_predict(tape, decoder, h_up, &onehot)?;
    match target {
        AuxTarget::Classes(classes) => tape.softmax_cross_entropy(&pred, classes),
        AuxTarget::Values(values) => tape.mse(&pred, values),
    }
}

/// Gather, per batch element b, column b of `sources[len - i_b]` into one
/// (rows, B) constant: "the i-th previous input", elementwise over the batch.
pub fn gather_previous<F: Real>(sources: &[Tensor<F>], indices: &[usize]) -> Tensor<F> {
    let batch = indices.len();
    let rows = sources.last().map_or(0, |t| t.rows());
    if batch == 1 {
        let src = &sources[sources.len() - indices[0]];
        return Tensor::new(src.shape().to_vec(), src.to_vec());
    }
    let mut out = vec![F::zero(); rows * batch];
    for (b, &i) in indices.iter().enumerate() {
        let src = sources[sources.len() - i].values();
        for r in 0..rows {
            out[r * batch + b] = src[r * batch + b];
        }
    }
    Tensor::matrix(rows, batch, out)
}
