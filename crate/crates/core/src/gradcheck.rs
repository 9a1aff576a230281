//! Finite-difference checks of tape gradients.
//!
//! The scalar probed is `<f(inputs), R>` for a fixed random cotangent `R`.
//! Its derivative is estimated by central differences at steps `h` and `h/2`
//! combined by Richardson extrapolation, which keeps the truncation error at
//! `O(h^4)` while `h` stays large enough that round-off in `f` does not
//! dominate. Errors are relative: `|a - f| / max(|a|, |f|, floor)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::gformer::Block;
use crate::params::{BlockParams, ParamVars};
use crate::tensor::{Op, Tape, Tensor, Var};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_FLOOR: f64 = 1e-8;
pub const DEFAULT_STEP: f64 = 1e-2;

#[derive(Debug, Clone, Serialize)]
pub struct InputCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst element.
    pub worst: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol
    }
}

fn probe(out: &Tensor, r: &Tensor) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Compare reverse-mode gradients of `f` with finite differences for every
/// element of every named input.
pub fn check<F>(inputs: &[(String, Tensor)], f: F, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let out = f(&tape, &leaves)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng);
    let grads = tape.backward(&out, r.clone())?;
    let analytic: Vec<Tensor> = leaves.iter().map(|v| grads.wrt(v)).collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let t = Tape::inference();
        let vars: Vec<Var> = values.iter().map(|v| t.constant(v.clone())).collect();
        Ok(probe(f(&t, &vars)?.value(), &r))
    };
    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut central = |i: usize, j: usize, h: f64| -> Result<f64> {
        let x0 = values[i].data()[j];
        values[i].data_mut()[j] = x0 + h;
        let plus = eval(&values)?;
        values[i].data_mut()[j] = x0 - h;
        let minus = eval(&values)?;
        values[i].data_mut()[j] = x0;
        Ok((plus - minus) / (2.0 * h))
    };

    let mut report = GradCheckReport { inputs: Vec::new() };
    for (i, (name, t)) in inputs.iter().enumerate() {
        let mut check = InputCheck {
            name: name.clone(),
            numel: t.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst: 0,
        };
        for j in 0..t.len() {
            let coarse = central(i, j, DEFAULT_STEP)?;
            let fine = central(i, j, DEFAULT_STEP / 2.0)?;
            let fd = (4.0 * fine - coarse) / 3.0;
            let a = analytic[i].data()[j];
            let abs = (a - fd).abs();
            let rel = abs / a.abs().max(fd.abs()).max(DEFAULT_FLOOR);
            check.max_abs_error = check.max_abs_error.max(abs);
            if rel > check.max_rel_error || rel.is_nan() {
                check.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                check.worst = j;
            }
        }
        report.inputs.push(check);
    }
    Ok(report)
}

/// Check one primitive at `primals`.
pub fn check_op(op: &Op, primals: &[Tensor], seed: u64) -> Result<GradCheckReport> {
    let inputs: Vec<(String, Tensor)> = primals
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("{}[{i}]", op.name()), t.clone()))
        .collect();
    check(&inputs, |tape, vars| {
        let refs: Vec<&Var> = vars.iter().collect();
        tape.apply(op.clone(), &refs)
    }, seed)
}

/// Check a parameterised function of one input `x` with respect to `x` and
/// every parameter.
pub fn check_with_params<F>(x: &Tensor, params: &BlockParams, f: F, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &Var, &ParamVars) -> Result<Var>,
{
    let mut inputs = vec![("x".to_string(), x.clone())];
    inputs.extend(params.iter().map(|(k, v)| (k.to_string(), v.clone())));
    let names: Vec<String> = params.names().map(str::to_string).collect();
    check(&inputs, |tape, vars| {
        let p = ParamVars::from_pairs(names.iter().cloned().zip(vars[1..].iter().cloned()));
        f(tape, &vars[0], &p)
    }, seed)
}

/// Check an assembled block.
pub fn check_block(block: &Block, params: &BlockParams, x: &Tensor, seed: u64) -> Result<GradCheckReport> {
    check_with_params(x, params, |t, x, p| block.forward_on(t, p, x), seed)
}
