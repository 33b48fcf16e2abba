//! Finite-difference verification of tape gradients.
//!
//! [`finite_difference_check`] evaluates a scalar-valued tape program twice
//! per perturbed coordinate (central differences) and compares against the
//! analytic gradient from [`Tape::backward`]. Inputs are held in f64 and cast
//! to the working precision per evaluation, so the same check runs at f32 with
//! a larger step. The function under test must be deterministic — dropout and
//! anything else consuming randomness is rejected by a double-evaluation probe.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Mode, NodeId, Tape};
use crate::value::{fmt_shape, Value};

#[derive(Clone, Debug)]
pub struct FdOptions {
    /// Central-difference step h.
    pub step: f64,
    /// Denominator floor in the relative error, so near-zero gradients are
    /// compared absolutely: |a−n| / max(|a|, |n|, floor).
    pub floor: f64,
    /// If set, at most this many coordinates are probed per input tensor,
    /// sampled without replacement from a seeded stream.
    pub max_coords: Option<usize>,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-6,
            floor: 1.0,
            max_coords: None,
            seed: 0x5eed,
        }
    }
}

/// Worst-offending coordinate of a check.
#[derive(Clone, Debug)]
pub struct FdWorst {
    pub input: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    /// Coordinates actually compared.
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<FdWorst>,
}

impl FdReport {
    /// Errors (with the worst coordinate spelled out) if the report exceeds `tol`.
    pub fn require(&self, tol: f64, context: &str) -> Result<()> {
        if self.max_rel_err <= tol {
            return Ok(());
        }
        let detail = match &self.worst {
            Some(w) => format!(
                "worst at {}[{}]: analytic {:.6e} vs numeric {:.6e}",
                w.input, w.coord, w.analytic, w.numeric
            ),
            None => "no coordinate recorded".to_string(),
        };
        Err(Error::Config(format!(
            "{context}: max relative gradient error {:.3e} exceeds {tol:.1e} ({detail})",
            self.max_rel_err
        )))
    }
}

/// |a − n| / max(|a|, |n|, floor); infinite if either value is non-finite.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::INFINITY;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks the gradient of `f` with respect to every input tensor.
///
/// `f` receives an evaluation-mode tape plus one leaf per input (in order) and
/// must return a scalar node. The analytic gradient comes from one backward
/// pass; the numeric one from central differences at working precision `S`.
pub fn finite_difference_check<S, F>(
    inputs: &[(&str, Value<f64>)],
    opts: &FdOptions,
    f: F,
) -> Result<FdReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |vals: &[Value<f64>]| -> Result<f64> {
        let mut tape = Tape::<S>::new(Mode::Eval);
        let ids: Vec<NodeId> = vals
            .iter()
            .map(|v| {
                Value::<S>::from_f64s(v.shape(), v.data()).map(|cast| tape.leaf(cast))
            })
            .collect::<Result<_>>()?;
        let out = f(&mut tape, &ids)?;
        let shape = tape.shape(out);
        if tape.value(out).numel() != 1 {
            return Err(Error::shape(
                "finite_difference_check: function output",
                "scalar (1 element)",
                fmt_shape(shape),
            ));
        }
        Ok(tape.data(out)[0].to_f64())
    };

    let base: Vec<Value<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let y0 = eval(&base)?;
    let y1 = eval(&base)?;
    if y0.to_bits() != y1.to_bits() {
        return Err(Error::NonDeterministicFn {
            context: "finite_difference_check: two evaluations at the same point disagree".into(),
        });
    }

    // Analytic gradients from one recorded forward + backward.
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::<S>::new(Mode::Eval);
        let ids: Vec<NodeId> = base
            .iter()
            .map(|v| {
                Value::<S>::from_f64s(v.shape(), v.data()).map(|cast| tape.leaf(cast))
            })
            .collect::<Result<_>>()?;
        let out = f(&mut tape, &ids)?;
        tape.backward(out)?;
        ids.iter()
            .map(|&id| {
                tape.grad(id)
                    .expect("backward populates every node")
                    .iter()
                    .map(|g| g.to_f64())
                    .collect()
            })
            .collect()
    };

    let mut report = FdReport::default();
    let mut work = base.clone();
    for (ti, (name, _)) in inputs.iter().enumerate() {
        let n = work[ti].numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(cap) if cap < n => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(ti as u64 * 0x9e3779b9));
                rand::seq::index::sample(&mut rng, n, cap).into_vec()
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = work[ti].data()[c];
            work[ti].data_mut()[c] = orig + opts.step;
            let y_plus = eval(&work)?;
            work[ti].data_mut()[c] = orig - opts.step;
            let y_minus = eval(&work)?;
            work[ti].data_mut()[c] = orig;

            let numeric = (y_plus - y_minus) / (2.0 * opts.step);
            let a = analytic[ti][c];
            let rel = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel >= report.max_rel_err {
                    report.worst = Some(FdWorst {
                        input: name.to_string(),
                        coord: c,
                        analytic: a,
                        numeric,
                    });
                }
            }
        }
    }
    Ok(report)
}
