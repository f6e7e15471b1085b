//! Two-layer reconstruction decoder. Given a state that was sent up the
//! hierarchy and a one-hot index i, it predicts the i-th previous input of
//! the level that produced the state: logits for discrete inputs, a raw
//! vector for continuous ones.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::layers::init::{glorot, InitRng};
use crate::layers::params::{bind_param, ParamSet};
use crate::real::Real;

pub const DEFAULT_DECODER_HIDDEN: usize = 256;

#[derive(Clone, Debug)]
pub struct DecoderSpec {
    pub name: String,
    /// Width of the up-sent state this decoder reads.
    pub state_dim: usize,
    /// One-hot width = longest segment the producing level can have.
    pub k_max: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl DecoderSpec {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        k_max: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        DecoderSpec {
            name: name.into(),
            state_dim,
            k_max,
            hidden,
            out_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.k_max
    }

    pub fn param_names(&self) -> [String; 4] {
        [
            format!("{}.w1", self.name),
            format!("{}.b1", self.name),
            format!("{}.w2", self.name),
            format!("{}.b2", self.name),
        ]
    }

    pub fn init<F: Real>(&self, params: &mut ParamSet<F>, rng: &mut InitRng) {
        let [w1, b1, w2, b2] = self.param_names();
        let din = self.input_dim();
        params.insert(w1, vec![self.hidden, din], glorot(rng, self.hidden * din, din, self.hidden));
        params.insert(b1, vec![self.hidden], vec![F::zero(); self.hidden]);
        params.insert(
            w2,
            vec![self.out_dim, self.hidden],
            glorot(rng, self.out_dim * self.hidden, self.hidden, self.out_dim),
        );
        params.insert(b2, vec![self.out_dim], vec![F::zero(); self.out_dim]);
    }
}

pub struct BoundDecoder<F: Real> {
    pub spec: DecoderSpec,
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
}

impl<F: Real> BoundDecoder<F> {
    pub fn bind(
        tape: &mut Tape<F>,
        params: &ParamSet<F>,
        spec: &DecoderSpec,
        trainable: bool,
    ) -> Result<Self> {
        let [w1, b1, w2, b2] = spec.param_names();
        Ok(BoundDecoder {
            spec: spec.clone(),
            w1: bind_param(tape, params, &w1, trainable)?,
            b1: bind_param(tape, params, &b1, trainable)?,
            w2: bind_param(tape, params, &w2, trainable)?,
            b2: bind_param(tape, params, &b2, trainable)?,
        })
    }
}

/// Build a (k_max) one-hot column, or a (k_max, B) matrix of one-hot columns.
/// `indices` are zero-based slots.
pub fn onehot_columns<F: Real>(k_max: usize, indices: &[usize]) -> Tensor<F> {
    let batch = indices.len();
    let mut values = vec![F::zero(); k_max * batch];
    for (b, &i) in indices.iter().enumerate() {
        assert!(i < k_max, "one-hot slot {i} out of {k_max}");
        values[i * batch + b] = F::one();
    }
    if batch == 1 {
        Tensor::vector(values)
    } else {
        Tensor::matrix(k_max, batch, values)
    }
}

/// decoder(h_up, onehot) = W2 relu(W1 [h_up; onehot] + b1) + b2.
/// Every one-hot column must contain exactly one 1.0 and zeros elsewhere.
pub fn decoder_predict<F: Real>(
    tape: &mut Tape<F>,
    dec: &BoundDecoder<F>,
    h_up: &Tensor<F>,
    index_onehot: &Tensor<F>,
) -> Result<Tensor<F>> {
    validate_onehot(index_onehot)?;
    if index_onehot.rows() != dec.spec.k_max || index_onehot.cols() != h_up.cols() {
        return Err(Error::ShapeMismatch {
            op: "decoder-predict",
            lhs: h_up.shape().to_vec(),
            rhs: index_onehot.shape().to_vec(),
        });
    }
    let input = tape.concat(&[h_up, index_onehot])?;
    let z1 = tape.matmul(&dec.w1, &input)?;
    let z1 = tape.bias_add(&z1, &dec.b1)?;
    let a1 = tape.relu(&z1)?;
    let z2 = tape.matmul(&dec.w2, &a1)?;
    tape.bias_add(&z2, &dec.b2)
}

fn validate_onehot<F: Real>(t: &Tensor<F>) -> Result<()> {
    let rows = t.rows();
    let cols = t.cols();
    let v = t.values();
    for b in 0..cols {
        let mut ones = 0usize;
        for r in 0..rows {
            let x = v[r * cols + b];
            if x == F::one() {
                ones += 1;
            } else if x != F::zero() {
                return Err(Error::MalformedOneHot(format!(
                    "column {b} contains {x} (expected 0 or 1)"
                )));
            }
        }
        if ones != 1 {
            return Err(Error::MalformedOneHot(format!(
                "column {b} has {ones} ones (expected exactly 1)"
            )));
        }
    }
    Ok(())
}
