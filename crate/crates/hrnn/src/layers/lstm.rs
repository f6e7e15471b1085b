//! LSTM cell and linear output head over the tape.
//!
//! Gate layout in the stacked kernels is fixed as (input, forget, candidate,
//! output): rows [0,H) i, [H,2H) f, [2H,3H) g, [3H,4H) o.

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::layers::init::{glorot, InitRng};
use crate::layers::params::{bind_param, ParamSet};
use crate::real::Real;

/// Dimensions and parameter-name prefix of one LSTM cell.
#[derive(Clone, Debug)]
pub struct LstmSpec {
    pub name: String,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmSpec {
    pub fn new(name: impl Into<String>, input_dim: usize, hidden: usize) -> Self {
        LstmSpec {
            name: name.into(),
            input_dim,
            hidden,
        }
    }

    pub fn param_names(&self) -> [String; 3] {
        [
            format!("{}.w_x", self.name),
            format!("{}.w_h", self.name),
            format!("{}.b", self.name),
        ]
    }

    /// Insert freshly initialized parameters for this cell.
    pub fn init<F: Real>(&self, params: &mut ParamSet<F>, rng: &mut InitRng) {
        let (d, h) = (self.input_dim, self.hidden);
        let [w_x, w_h, b] = self.param_names();
        params.insert(w_x, vec![4 * h, d], glorot(rng, 4 * h * d, d, h));
        params.insert(w_h, vec![4 * h, h], glorot(rng, 4 * h * h, h, h));
        let mut bias = vec![F::zero(); 4 * h];
        // Forget-gate bias starts at 1 so early training does not erase state.
        for v in &mut bias[h..2 * h] {
            *v = F::one();
        }
        params.insert(b, vec![4 * h], bias);
    }
}

/// Cell parameters registered on a specific tape.
pub struct BoundLstm<F: Real> {
    pub spec: LstmSpec,
    pub w_x: Tensor<F>,
    pub w_h: Tensor<F>,
    pub b: Tensor<F>,
}

impl<F: Real> BoundLstm<F> {
    pub fn bind(
        tape: &mut Tape<F>,
        params: &ParamSet<F>,
        spec: &LstmSpec,
        trainable: bool,
    ) -> Result<Self> {
        let [w_x, w_h, b] = spec.param_names();
        Ok(BoundLstm {
            spec: spec.clone(),
            w_x: bind_param(tape, params, &w_x, trainable)?,
            w_h: bind_param(tape, params, &w_h, trainable)?,
            b: bind_param(tape, params, &b, trainable)?,
        })
    }
}

/// One LSTM step. `h`, `c` are (H) or (H,B); `x` is (D) or (D,B).
pub fn lstm_step<F: Real>(
    tape: &mut Tape<F>,
    cell: &BoundLstm<F>,
    h: &Tensor<F>,
    c: &Tensor<F>,
    x: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let hidden = cell.spec.hidden;
    let zx = tape.matmul(&cell.w_x, x)?;
    let zh = tape.matmul(&cell.w_h, h)?;
    let z = tape.add(&zx, &zh)?;
    let z = tape.bias_add(&z, &cell.b)?;

    let i_lin = tape.slice_rows(&z, 0, hidden)?;
    let f_lin = tape.slice_rows(&z, hidden, 2 * hidden)?;
    let g_lin = tape.slice_rows(&z, 2 * hidden, 3 * hidden)?;
    let o_lin = tape.slice_rows(&z, 3 * hidden, 4 * hidden)?;

    let i = tape.sigmoid(&i_lin)?;
    let f = tape.sigmoid(&f_lin)?;
    let g = tape.tanh(&g_lin)?;
    let o = tape.sigmoid(&o_lin)?;

    let fc = tape.mul(&f, c)?;
    let ig = tape.mul(&i, &g)?;
    let c_next = tape.add(&fc, &ig)?;
    let c_act = tape.tanh(&c_next)?;
    let h_next = tape.mul(&o, &c_act)?;
    Ok((h_next, c_next))
}

/// Linear output head: logits = W h + b.
#[derive(Clone, Debug)]
pub struct HeadSpec {
    pub name: String,
    pub input_dim: usize,
    pub classes: usize,
}

impl HeadSpec {
    pub fn new(name: impl Into<String>, input_dim: usize, classes: usize) -> Self {
        HeadSpec {
            name: name.into(),
            input_dim,
            classes,
        }
    }

    pub fn param_names(&self) -> [String; 2] {
        [format!("{}.w", self.name), format!("{}.b", self.name)]
    }

    pub fn init<F: Real>(&self, params: &mut ParamSet<F>, rng: &mut InitRng) {
        let [w, b] = self.param_names();
        params.insert(
            w,
            vec![self.classes, self.input_dim],
            glorot(rng, self.classes * self.input_dim, self.input_dim, self.classes),
        );
        params.insert(b, vec![self.classes], vec![F::zero(); self.classes]);
    }
}

pub struct BoundHead<F: Real> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
}

impl<F: Real> BoundHead<F> {
    pub fn bind(
        tape: &mut Tape<F>,
        params: &ParamSet<F>,
        spec: &HeadSpec,
        trainable: bool,
    ) -> Result<Self> {
        let [w, b] = spec.param_names();
        Ok(BoundHead {
            w: bind_param(tape, params, &w, trainable)?,
            b: bind_param(tape, params, &b, trainable)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape<F>, h: &Tensor<F>) -> Result<Tensor<F>> {
        let z = tape.matmul(&self.w, h)?;
        tape.bias_add(&z, &self.b)
    }
}
