//! Central-difference gradient verification in 64-bit.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Step used throughout the verification suite.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many coordinates per input (sampled without replacement).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>], requires_grad: bool) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    if let Some((i, v)) = value.first_non_finite() {
        return Err(Error::NonFinite {
            what: "output".into(),
            index: i,
            value: v,
        });
    }
    Ok((tape, vars, out))
}

/// Compares the tape's gradients of the scalar `f(inputs)` against central
/// differences, over every (or a sampled subset of) input coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, out) = eval(&f, inputs, true)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = input.data()[i];
            let at = |delta: f64, probe: &mut Vec<Tensor<f64>>| -> Result<f64> {
                probe[ti].data_mut()[i] = orig + delta;
                let (tape, _, o) = eval(&f, probe, false)?;
                Ok(tape.value(o).data()[0])
            };
            let plus = at(opts.step, &mut probe)?;
            let minus = at(-opts.step, &mut probe)?;
            probe[ti].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[ti].data()[i];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of input {ti}"),
                    index: i,
                    value: if a.is_finite() { numeric } else { a },
                });
            }
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((ti, i));
            }
        }
    }
    Ok(report)
}
