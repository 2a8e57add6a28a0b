//! Central finite-difference check of tape gradients.

use alloc::vec::Vec;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Lower bound on the denominator of the relative error, so that gradients
/// that are exactly zero are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
    pub max_rel_error: f64,
    /// Number of input entries compared.
    pub entries: usize,
}

fn scalar_output(tape: &Tape, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(Error::shape("gradcheck output", v.shape(), &[]));
    }
    Ok(v.item())
}

fn run<F>(inputs: &[Tensor], f: &F) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_output(&tape, out)?;
    Ok((tape, vars, out))
}

/// Compares the reverse-mode gradient of the scalar built by `f` with
/// `(f(x + h) - f(x - h)) / 2h`, entry by entry, for every input.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, vars, out) = run(inputs, &f)?;
    let grads = tape.backward(out)?;
    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    let mut entries = 0;
    for (k, &var) in vars.iter().enumerate() {
        let analytic = grads.get(var).expect("every param gets a gradient").data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let (t, _, o) = run(&work, &f)?;
            let plus = t.value(o).item();
            work[k].data_mut()[i] = orig - step;
            let (t, _, o) = run(&work, &f)?;
            let minus = t.value(o).item();
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
            entries += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x = Tensor::vector(alloc::vec![0.3, -1.2, 2.0]);
        let r = check_gradients(&[x], 1e-5, |t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert_eq!(r.entries, 3);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn non_scalar_output_rejected() {
        let x = Tensor::vector(alloc::vec![1.0, 2.0]);
        assert!(check_gradients(&[x], 1e-5, |_, v| Ok(v[0])).is_err());
    }
}
