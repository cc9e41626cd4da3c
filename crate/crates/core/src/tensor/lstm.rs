use super::{Result, Tape, TensorError, Var};

/// Weights of one LSTM cell. Gate rows are stacked input, forget, candidate,
/// output: `w_ih` is `[4h, d_in]`, `w_hh` is `[4h, h]`, `bias` is `[4h]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// One LSTM step. Returns `(h, c)`.
pub fn lstm_cell(tape: &mut Tape<'_>, x: Var, h_prev: Var, c_prev: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let hidden = tape.shape(h_prev)[0];
    if tape.shape(w.w_ih)[0] != 4 * hidden || tape.shape(c_prev) != [hidden] {
        return Err(TensorError::Shape {
            op: "lstm_cell",
            shapes: format!(
                "{:?}",
                [tape.shape(w.w_ih), tape.shape(h_prev), tape.shape(c_prev)]
            ),
        });
    }
    let xi = tape.matmul(w.w_ih, x)?;
    let hh = tape.matmul(w.w_hh, h_prev)?;
    let pre = tape.add(xi, hh)?;
    let gates = tape.add(pre, w.bias)?;

    let i_pre = tape.slice(gates, 0, hidden)?;
    let f_pre = tape.slice(gates, hidden, hidden)?;
    let g_pre = tape.slice(gates, 2 * hidden, hidden)?;
    let o_pre = tape.slice(gates, 3 * hidden, hidden)?;
    let input = tape.sigmoid(i_pre);
    let forget = tape.sigmoid(f_pre);
    let cand = tape.tanh(g_pre);
    let output = tape.sigmoid(o_pre);

    let kept = tape.mul(forget, c_prev)?;
    let written = tape.mul(input, cand)?;
    let c = tape.add(kept, written)?;
    let squashed = tape.tanh(c);
    let h = tape.mul(output, squashed)?;
    Ok((h, c))
}
