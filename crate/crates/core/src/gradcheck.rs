//! Central finite-difference gradient checking in 64-bit.
//!
//! The numeric side only ever evaluates the forward pass, so it is
//! independent of every backward rule it is used to validate.

use crate::autodiff::{Tape, Var};
use crate::error::{contract_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Coordinate {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Coordinate {
    /// `|a - n| / max(|a|, |n|, 1e-8)`.
    pub fn rel_err(&self) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs()).max(1e-8);
        (self.analytic - self.numeric).abs() / denom
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub coords: Vec<Coordinate>,
}

impl Report {
    pub fn max_rel_err(&self) -> f64 {
        self.coords.iter().map(Coordinate::rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Coordinate> {
        self.coords.iter().max_by(|a, b| a.rel_err().total_cmp(&b.rel_err()))
    }
}

/// Compare reverse-mode gradients of `f` against central differences with
/// step `h` at every coordinate of every input.
///
/// `f` receives a fresh tape and one node per input and must return a
/// scalar loss node.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<Report>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_subset(inputs, h, |_, _| true, f)
}

/// As [`check`], restricted to the coordinates `select(input, index)` accepts.
pub fn check_subset<F, S>(inputs: &[Tensor<f64>], h: f64, select: S, f: F) -> Result<Report>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    S: Fn(usize, usize) -> bool,
{
    if h <= 0.0 {
        return Err(contract_err!("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = perturbed
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut coords = Vec::new();
    for (i, &v) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[i].shape().to_vec());
        let g = grads.get(v).unwrap_or(&zeros);
        for j in 0..inputs[i].len() {
            if !select(i, j) {
                continue;
            }
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x0;
            coords.push(Coordinate {
                input: i,
                index: j,
                analytic: g.data()[j],
                numeric: (up - down) / (2.0 * h),
            });
        }
    }
    Ok(Report { coords })
}
