use crate::error::Result;
use crate::numcore::{Matrix, Tape, Var};

/// Weights of one gate: `x·wx + h·wh + b`.
#[derive(Debug, Clone, Copy)]
pub struct Gate {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmGates {
    pub input: Gate,
    pub forget: Gate,
    pub cell: Gate,
    pub output: Gate,
}

fn pre_activation(tape: &mut Tape, g: &Gate, x: Var, h: Var) -> Result<Var> {
    let a = tape.matmul(x, g.wx)?;
    let b = tape.matmul(h, g.wh)?;
    let s = tape.add(a, b)?;
    tape.add_row(s, g.b)
}

/// One LSTM step over a batch of rows:
/// `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_cell(tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var, gates: &LstmGates) -> Result<(Var, Var)> {
    let i = pre_activation(tape, &gates.input, x, h_prev)?;
    let i = tape.sigmoid(i);
    let f = pre_activation(tape, &gates.forget, x, h_prev)?;
    let f = tape.sigmoid(f);
    let g = pre_activation(tape, &gates.cell, x, h_prev)?;
    let g = tape.tanh(g);
    let o = pre_activation(tape, &gates.output, x, h_prev)?;
    let o = tape.sigmoid(o);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Runs stacked layers over `inputs` from zero initial states and returns
/// the top layer's hidden state after the last step.
pub fn run_stack(tape: &mut Tape, inputs: &[Var], layers: &[LstmGates], hidden: usize) -> Result<Var> {
    let rows = tape.value(inputs[0]).rows();
    let mut seq = inputs.to_vec();
    for gates in layers {
        let mut h = tape.constant(Matrix::zeros(rows, hidden));
        let mut c = tape.constant(Matrix::zeros(rows, hidden));
        let mut out = Vec::with_capacity(seq.len());
        for &x in &seq {
            (h, c) = lstm_cell(tape, x, h, c, gates)?;
            out.push(h);
        }
        seq = out;
    }
    Ok(*seq.last().expect("non-empty sequence"))
}
