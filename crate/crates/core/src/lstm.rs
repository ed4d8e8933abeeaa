//! LSTM cell built from tape primitives.
//!
//! Gate layout in the stacked `[4d]` pre-activation is input, forget, cell
//! candidate, output:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)      f = σ(W_f x + U_f h + b_f)
//! ĉ = tanh(W_c x + U_c h + b_c)   o = σ(W_o x + U_o h + b_o)
//! c' = f ⊙ c + i ⊙ ĉ              h' = o ⊙ tanh(c')
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::tape::{Tape, Var};

/// Parameter handles of one LSTM cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmIds {
    /// Registers `{prefix}.w_ih [4d × d_in]`, `{prefix}.w_hh [4d × d]` and
    /// `{prefix}.bias [4d]`.
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = input + hidden;
        LstmIds {
            w_ih: params.add_uniform(format!("{prefix}.w_ih"), &[4 * hidden, input], fan_in, rng),
            w_hh: params.add_uniform(format!("{prefix}.w_hh"), &[4 * hidden, hidden], fan_in, rng),
            bias: params.add_uniform(format!("{prefix}.bias"), &[4 * hidden], fan_in, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> LstmVars {
        LstmVars {
            w_ih: tape.param(params, self.w_ih),
            w_hh: tape.param(params, self.w_hh),
            bias: tape.param(params, self.bias),
        }
    }

    pub fn hidden(&self, params: &ParamSet) -> usize {
        params.get(self.w_hh).shape()[1]
    }
}

/// Tape handles of one LSTM cell's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

impl LstmVars {
    pub fn hidden(&self, tape: &Tape) -> usize {
        tape.shape(self.w_hh)[1]
    }

    pub fn input(&self, tape: &Tape) -> usize {
        tape.shape(self.w_ih)[1]
    }
}

/// One LSTM step: `(x, h_prev, c_prev) → (h, c)`.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let wx = tape.matvec(p.w_ih, x)?;
    let pre = tape.add(wx, p.bias)?;
    lstm_recur(tape, pre, h_prev, c_prev, p.w_hh)
}

/// The recurrent half of [`lstm_cell`], given the input contribution
/// `W_ih x + b` already computed.
pub fn lstm_recur(
    tape: &mut Tape,
    input_pre: Var,
    h_prev: Var,
    c_prev: Var,
    w_hh: Var,
) -> Result<(Var, Var)> {
    let d = tape.shape(w_hh)[1];
    if tape.shape(input_pre) != [4 * d] {
        return Err(Error::shape("lstm_cell", tape.shape(input_pre), &[4 * d]));
    }
    if tape.shape(c_prev) != [d] {
        return Err(Error::shape("lstm_cell", tape.shape(c_prev), &[d]));
    }
    let uh = tape.matvec(w_hh, h_prev)?;
    let gates = tape.add(input_pre, uh)?;
    let i_pre = tape.slice(gates, 0, d)?;
    let f_pre = tape.slice(gates, d, d)?;
    let g_pre = tape.slice(gates, 2 * d, d)?;
    let o_pre = tape.slice(gates, 3 * d, d)?;
    let i = tape.sigmoid(i_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let g = tape.tanh(g_pre)?;
    let o = tape.sigmoid(o_pre)?;
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}
