use crate::error::Result;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

fn eval(inputs: &[Tensor], f: &impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Largest relative error, over the inputs, between tape gradients and
/// central differences with step 1e-5. `f` must return a scalar.
pub fn gradient_check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut point = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.tensor(*v);
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nf = 0.0;
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data[j];
            point[i].data[j] = x0 + FD_STEP;
            let fp = eval(&point, &f)?;
            point[i].data[j] = x0 - FD_STEP;
            let fm = eval(&point, &f)?;
            point[i].data[j] = x0;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic.data[j];
            diff += (a - fd) * (a - fd);
            na += a * a;
            nf += fd * fd;
        }
        let denom = na.sqrt().max(nf.sqrt()).max(1e-8);
        worst = worst.max(diff.sqrt() / denom);
    }
    Ok(worst)
}
