//! Central finite-difference gradient checking at 64-bit precision.

use crate::error::Result;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(input, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences with step `h`.
///
/// `f` must build its graph from the provided leaves only. Inputs with more
/// than `max_coords` elements are checked on a seeded random subset.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, max_coords: usize, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut rng = Rng::new(seed);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut probe = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let n = inputs[which].numel();
        let analytic = tape.grad(*var).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let mut coords: Vec<usize> = (0..n).collect();
        if n > max_coords {
            rng.shuffle(&mut coords);
            coords.truncate(max_coords);
            coords.sort_unstable();
        }
        for idx in coords {
            let orig = inputs[which].data()[idx];
            probe[which].data_mut()[idx] = orig + h;
            let plus = eval(&probe)?;
            probe[which].data_mut()[idx] = orig - h;
            let minus = eval(&probe)?;
            probe[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_err(analytic[idx], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((which, idx, analytic[idx], numeric));
            }
        }
    }
    Ok(report)
}

/// Random tensor with entries uniform in `[-scale, scale]`.
pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_range(-scale, scale)).collect())
}
