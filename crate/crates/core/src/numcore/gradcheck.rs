//! Central-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Inputs this close to a ReLU/LeakyReLU kink (or a max-pool tie) are
/// nudged before checking.
pub const KINK_MARGIN: f64 = 1e-4;
/// Relative errors are measured against `max(|autodiff|, |numeric|, floor)`.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub skipped: usize,
    pub tol: f64,
    pub passed: bool,
    pub error: Option<String>,
}

fn eval<T: Scalar, F>(f: &F, inputs: &[Tensor<T>], grads: bool) -> Result<(Tape<T>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.track_kinks(true);
    let vars = inputs
        .iter()
        .map(|t| if grads { tape.input(t) } else { tape.constant(t) })
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

/// Deterministic jitter in `[-1, 1)`.
fn jitter(state: &mut u64) -> f64 {
    *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

/// Compares autodiff gradients of the scalar `f` with central differences
/// (step [`FD_STEP`]) at every input coordinate.
pub fn grad_check<T: Scalar, F>(f: F, inputs: &[Tensor<T>], tol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let failed = |msg: String| GradCheckReport {
        max_rel_error: f64::INFINITY,
        worst: None,
        checked: 0,
        skipped: 0,
        tol,
        passed: false,
        error: Some(msg),
    };

    let mut point: Vec<Tensor<T>> = inputs.to_vec();
    let mut seed = 0x5eed_u64;
    for attempt in 0..8 {
        match eval(&f, &point, false) {
            Ok((tape, _, _)) if tape.kinks().min_distance < KINK_MARGIN => {
                for t in &mut point {
                    for v in t.values_mut() {
                        *v += T::lit(jitter(&mut seed) * KINK_MARGIN * 10.0 * (attempt + 1) as f64);
                    }
                }
            }
            Ok(_) => break,
            Err(e) => return failed(e.to_string()),
        }
    }

    let (mut tape, vars, out) = match eval(&f, &point, true) {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    let base_sig = tape.kinks().signature;
    if let Err(e) = tape.backward(out) {
        return failed(e.to_string());
    }
    let analytic: Vec<Vec<T>> = vars.iter().map(|&v| tape.grad(v).expect("backward ran")).collect();

    let h = FD_STEP;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        tol,
        passed: true,
        error: None,
    };
    for (ti, tensor) in point.iter().enumerate() {
        for ci in 0..tensor.len() {
            let probe = |delta: f64| -> Result<(f64, u64)> {
                let mut moved = point.clone();
                let v = &mut moved[ti].values_mut()[ci];
                *v += T::lit(delta);
                let (tape, _, out) = eval(&f, &moved, false)?;
                Ok((tape.scalar_value(out).as_f64(), tape.kinks().signature))
            };
            let (plus, minus) = match (probe(h), probe(-h)) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => return failed(e.to_string()),
            };
            if plus.1 != base_sig || minus.1 != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.0 - minus.0) / (2.0 * h);
            let auto = analytic[ti][ci].as_f64();
            let rel = (auto - numeric).abs() / auto.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = Some((ti, ci));
            }
        }
    }
    report.passed = report.max_rel_error < tol && report.checked > 0;
    report
}
