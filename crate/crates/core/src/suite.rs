//! The standing gradient-verification suite: one named finite-difference
//! check per differentiable operation, plus composites up to the complete
//! networks, each with its own tolerance and deterministic inputs.
//!
//! Per-op checks run every coordinate; composite checks probe a sampled
//! subset. `quick` mode shrinks the composite samples for interactive use.
//! Everything runs at f64: linear/structural ops are held to 1e-8,
//! elementwise and normalization ops to 1e-6, and the end-to-end composites
//! (whose losses have seed-frozen kinks at neighbor-graph and max-pool ties)
//! to 1e-4.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dfa::{Aggregation, DfaConfig, DfaLayer};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_difference_check, relative_error, FdOptions, FdReport, FdWorst};
use crate::graph::Domain;
use crate::models::{ModelConfig, Network};
use crate::params::ParamSet;
use crate::tape::{Mode, NodeId, Tape};
use crate::value::{fmt_shape, Value};

/// Result of one named check.
#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub tol: f64,
    pub max_rel_err: f64,
    pub checked: usize,
    pub pass: bool,
    /// Worst coordinate, spelled out when the check fails.
    pub worst: Option<String>,
}

impl SuiteOutcome {
    /// One human-readable line, stable enough to grep in CI logs.
    pub fn line(&self) -> String {
        let verdict = if self.pass { "pass" } else { "FAIL" };
        let mut s = format!(
            "{verdict}  {name:<24} max rel err {err:.3e} (tol {tol:.0e}, {n} coords)",
            name = self.name,
            err = self.max_rel_err,
            tol = self.tol,
            n = self.checked
        );
        if !self.pass {
            if let Some(w) = &self.worst {
                s.push_str(&format!("  [{w}]"));
            }
        }
        s
    }
}

fn outcome_from(name: &'static str, tol: f64, report: &FdReport) -> SuiteOutcome {
    SuiteOutcome {
        name,
        tol,
        max_rel_err: report.max_rel_err,
        checked: report.checked,
        pass: report.max_rel_err <= tol,
        worst: report.worst.as_ref().map(|w| {
            format!(
                "worst {}[{}]: analytic {:.6e} vs numeric {:.6e}",
                w.input, w.coord, w.analytic, w.numeric
            )
        }),
    }
}

fn rng_for(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xd1f5_0000 ^ tag)
}

fn rand_value(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Value<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Value::new(shape.to_vec(), data).expect("static shape")
}

/// Signed values bounded away from zero, for kinked activations.
fn rand_signed(shape: &[usize], min_abs: f64, max_abs: f64, rng: &mut ChaCha8Rng) -> Value<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(min_abs..max_abs)
        })
        .collect();
    Value::new(shape.to_vec(), data).expect("static shape")
}

/// Reduces an arbitrary tensor to a scalar through fixed pseudo-random
/// weights, so permuted or dropped gradient entries cannot cancel out.
fn weighted_scalar(tape: &mut Tape<f64>, y: NodeId, weights: &Value<f64>) -> Result<NodeId> {
    let n = tape.value(y).numel();
    if weights.numel() != n {
        return Err(Error::shape(
            "suite: reduction weights",
            format!("[{n}]"),
            fmt_shape(weights.shape()),
        ));
    }
    let flat = tape.reshape(y, &[n])?;
    let w = tape.leaf(weights.clone());
    let prod = tape.mul(flat, w)?;
    tape.sum_axis(prod, 0)
}

fn weights_for(n: usize, tag: u64) -> Value<f64> {
    rand_value(&[n], 0.5, 1.5, &mut rng_for(tag.wrapping_mul(0x9e37).wrapping_add(17)))
}

fn sample_coords(n: usize, cap: Option<usize>, seed: u64) -> Vec<usize> {
    match cap {
        Some(c) if c < n => {
            rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, c).into_vec()
        }
        _ => (0..n).collect(),
    }
}

/// Finite-difference check through a model whose parameters live in a
/// [`ParamSet`]: probes the given input leaves *and* every trainable
/// parameter, reading analytic parameter gradients off the tape's bindings.
/// Parameters the function never binds must not affect the output, so their
/// analytic gradient is taken as zero.
fn fd_model_check<F>(
    pset: &mut ParamSet<f64>,
    inputs: &[(&str, Value<f64>)],
    opts: &FdOptions,
    f: F,
) -> Result<FdReport>
where
    F: Fn(&mut Tape<f64>, &mut ParamSet<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |pset: &mut ParamSet<f64>, vals: &[Value<f64>]| -> Result<f64> {
        let mut tape = Tape::new(Mode::Eval);
        let ids: Vec<NodeId> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, pset, &ids)?;
        if tape.value(out).numel() != 1 {
            return Err(Error::shape(
                "fd_model_check: function output",
                "scalar (1 element)",
                fmt_shape(tape.shape(out)),
            ));
        }
        Ok(tape.data(out)[0])
    };

    let base: Vec<Value<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let y0 = eval(pset, &base)?;
    let y1 = eval(pset, &base)?;
    if y0.to_bits() != y1.to_bits() {
        return Err(Error::NonDeterministicFn {
            context: "fd_model_check: two evaluations at the same point disagree".into(),
        });
    }

    let (input_grads, param_grads) = {
        let mut tape = Tape::new(Mode::Eval);
        let ids: Vec<NodeId> = base.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, pset, &ids)?;
        tape.backward(out)?;
        let input_grads: Vec<Vec<f64>> = ids
            .iter()
            .map(|&id| tape.grad(id).expect("backward populates every node").to_vec())
            .collect();
        let param_grads: BTreeMap<String, Vec<f64>> = tape
            .bindings()
            .map(|(name, id)| {
                (name.to_string(), tape.grad(id).expect("backward populates every node").to_vec())
            })
            .collect();
        (input_grads, param_grads)
    };

    let mut report = FdReport::default();
    let record = |report: &mut FdReport, name: &str, c: usize, a: f64, numeric: f64| {
        let rel = relative_error(a, numeric, opts.floor);
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_err {
            report.worst =
                Some(FdWorst { input: name.to_string(), coord: c, analytic: a, numeric });
        }
        report.max_rel_err = report.max_rel_err.max(rel);
    };

    let mut work = base.clone();
    for (ti, (name, _)) in inputs.iter().enumerate() {
        let n = work[ti].numel();
        for c in sample_coords(n, opts.max_coords, opts.seed.wrapping_add(ti as u64)) {
            let orig = work[ti].data()[c];
            work[ti].data_mut()[c] = orig + opts.step;
            let y_plus = eval(pset, &work)?;
            work[ti].data_mut()[c] = orig - opts.step;
            let y_minus = eval(pset, &work)?;
            work[ti].data_mut()[c] = orig;
            let numeric = (y_plus - y_minus) / (2.0 * opts.step);
            record(&mut report, name, c, input_grads[ti][c], numeric);
        }
    }

    let names: Vec<String> =
        pset.iter().filter(|(_, e)| e.trainable).map(|(n, _)| n.to_string()).collect();
    for (pi, name) in names.iter().enumerate() {
        let n = pset.entry(name)?.value.numel();
        let seed = opts.seed.wrapping_add(1000).wrapping_add(pi as u64);
        for c in sample_coords(n, opts.max_coords, seed) {
            let orig = pset.entry(name)?.value.data()[c];
            pset.entry_mut(name)?.value.data_mut()[c] = orig + opts.step;
            let y_plus = eval(pset, &base)?;
            pset.entry_mut(name)?.value.data_mut()[c] = orig - opts.step;
            let y_minus = eval(pset, &base)?;
            pset.entry_mut(name)?.value.data_mut()[c] = orig;
            let numeric = (y_plus - y_minus) / (2.0 * opts.step);
            let a = param_grads.get(name.as_str()).map_or(0.0, |g| g[c]);
            record(&mut report, name, c, a, numeric);
        }
    }
    Ok(report)
}

const TOL_LINEAR: f64 = 1e-8;
const TOL_ELEMENTWISE: f64 = 1e-6;
const TOL_COMPOSITE: f64 = 1e-4;

fn op_check<F>(
    name: &'static str,
    tol: f64,
    inputs: &[(&str, Value<f64>)],
    f: F,
) -> Result<SuiteOutcome>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let report = finite_difference_check::<f64, _>(inputs, &FdOptions::default(), f)?;
    Ok(outcome_from(name, tol, &report))
}

fn check_dfa_layer(
    name: &'static str,
    aggregation: Aggregation,
    quick: bool,
) -> Result<SuiteOutcome> {
    let cfg = DfaConfig {
        d_in: 4,
        d_out: 6,
        k: 3,
        pos_dim: 5,
        aggregation,
        use_position_encoding: true,
        graph_domain: Domain::Feature,
    };
    let layer = DfaLayer::new("edge", cfg)?;
    let mut pset = ParamSet::<f64>::new();
    let mut rng = rng_for(0xd1);
    layer.register(&mut pset, &mut rng)?;
    let f = rand_value(&[1, 6, 4], -1.0, 1.0, &mut rng);
    let x = rand_value(&[1, 6, 3], -1.0, 1.0, &mut rng);
    let w = weights_for(6 * 6, 0xd2);
    let opts = FdOptions {
        max_coords: Some(if quick { 4 } else { 12 }),
        ..FdOptions::default()
    };
    let report = fd_model_check(&mut pset, &[("f", f), ("x", x)], &opts, |t, p, ids| {
        let (out, _) = layer.forward(t, p, ids[0], ids[1])?;
        weighted_scalar(t, out, &w)
    })?;
    Ok(outcome_from(name, TOL_COMPOSITE, &report))
}

fn check_classifier(quick: bool) -> Result<SuiteOutcome> {
    let mut cfg = ModelConfig::classification(2);
    cfg.num_points = 8;
    cfg.k = 4;
    cfg.width_scale = 0.125;
    let net = Network::build(cfg)?;
    let mut pset = ParamSet::<f64>::new();
    let mut rng = rng_for(0xc1a5);
    net.register(&mut pset, &mut rng)?;
    // The alignment net's last weight starts at zero, which blanks gradients
    // upstream of it; randomize so the transform branch carries signal.
    for v in pset.entry_mut("tnet.final.w")?.value.data_mut() {
        *v = rng.gen_range(-0.2..0.2);
    }
    let points = rand_value(&[2, 8, 3], -1.0, 1.0, &mut rng);
    let opts = FdOptions {
        max_coords: Some(if quick { 2 } else { 8 }),
        ..FdOptions::default()
    };
    let report = fd_model_check(&mut pset, &[("points", points)], &opts, |t, p, ids| {
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(0);
        let logits = net.forward_node(t, p, ids[0], None, &mut dropout_rng)?;
        t.cross_entropy(logits, &[0, 1])
    })?;
    Ok(outcome_from("classifier_end_to_end", TOL_COMPOSITE, &report))
}

fn check_segmenter(quick: bool) -> Result<SuiteOutcome> {
    let mut cfg = ModelConfig::part_segmentation(1, 2);
    cfg.num_points = 8;
    cfg.k = 4;
    cfg.width_scale = 0.125;
    let net = Network::build(cfg)?;
    let mut pset = ParamSet::<f64>::new();
    let mut rng = rng_for(0x5e65);
    net.register(&mut pset, &mut rng)?;
    for v in pset.entry_mut("tnet.final.w")?.value.data_mut() {
        *v = rng.gen_range(-0.2..0.2);
    }
    let points = rand_value(&[2, 8, 3], -1.0, 1.0, &mut rng);
    let labels: Vec<u32> = (0..16).map(|i| (i % 2) as u32).collect();
    let opts = FdOptions {
        max_coords: Some(if quick { 2 } else { 8 }),
        ..FdOptions::default()
    };
    let report = fd_model_check(&mut pset, &[("points", points)], &opts, |t, p, ids| {
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(0);
        let logits = net.forward_node(t, p, ids[0], Some(&[0, 0]), &mut dropout_rng)?;
        let s = t.shape(logits).to_vec();
        let flat = t.reshape(logits, &[s[0] * s[1], s[2]])?;
        t.cross_entropy(flat, &labels)
    })?;
    Ok(outcome_from("segmenter_end_to_end", TOL_COMPOSITE, &report))
}

/// Runs every check and returns their outcomes in a fixed order. `quick`
/// shrinks the composite coordinate samples; per-op checks always cover
/// every coordinate. An `Err` means a check could not run at all — a failing
/// tolerance is reported through [`SuiteOutcome::pass`] instead.
pub fn run_gradient_suite(quick: bool) -> Result<Vec<SuiteOutcome>> {
    let mut out = Vec::with_capacity(26);
    let mut r = rng_for(1);

    let x = rand_value(&[3, 4], -1.0, 1.0, &mut r);
    let wt = rand_value(&[4, 2], -0.8, 0.8, &mut r);
    let b = rand_value(&[2], -0.3, 0.3, &mut r);
    let w = weights_for(6, 1);
    out.push(op_check("linear", TOL_LINEAR, &[("x", x), ("w", wt), ("b", b)], |t, ids| {
        let y = t.linear(ids[0], ids[1], ids[2])?;
        weighted_scalar(t, y, &w)
    })?);

    let a = rand_value(&[2, 3, 4], -1.0, 1.0, &mut r);
    let bm = rand_value(&[2, 4, 2], -1.0, 1.0, &mut r);
    let w = weights_for(12, 2);
    out.push(op_check("bmm", TOL_LINEAR, &[("a", a), ("b", bm)], |t, ids| {
        let y = t.bmm(ids[0], ids[1])?;
        weighted_scalar(t, y, &w)
    })?);

    let x = rand_signed(&[3, 5], 0.2, 1.2, &mut r);
    let w = weights_for(15, 3);
    out.push(op_check("leaky_relu", TOL_ELEMENTWISE, &[("x", x)], |t, ids| {
        let y = t.leaky_relu(ids[0], 0.1)?;
        weighted_scalar(t, y, &w)
    })?);

    let x = rand_value(&[6, 3], -2.0, 2.0, &mut r);
    let gamma = rand_value(&[3], 0.5, 1.5, &mut r);
    let beta = rand_value(&[3], -0.5, 0.5, &mut r);
    let w = weights_for(18, 4);
    out.push(op_check(
        "batch_norm_train",
        TOL_ELEMENTWISE,
        &[("x", x), ("gamma", gamma), ("beta", beta)],
        |t, ids| {
            let (y, _, _) = t.batch_norm_train(ids[0], ids[1], ids[2], 1e-5)?;
            weighted_scalar(t, y, &w)
        },
    )?);

    let x = rand_value(&[4, 3], -2.0, 2.0, &mut r);
    let gamma = rand_value(&[3], 0.5, 1.5, &mut r);
    let beta = rand_value(&[3], -0.5, 0.5, &mut r);
    let w = weights_for(12, 5);
    out.push(op_check(
        "batch_norm_eval",
        TOL_ELEMENTWISE,
        &[("x", x), ("gamma", gamma), ("beta", beta)],
        |t, ids| {
            let y = t.batch_norm_eval(
                ids[0],
                ids[1],
                ids[2],
                &[0.1, -0.2, 0.3],
                &[1.2, 0.8, 1.5],
                1e-5,
            )?;
            weighted_scalar(t, y, &w)
        },
    )?);

    // Entries spread out so no pair sits within the probe step of a tie.
    let mut x = rand_value(&[2, 4, 3], -1.0, 1.0, &mut r);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += (i % 7) as f64 * 0.05;
    }
    let w = weights_for(6, 6);
    out.push(op_check("reduce_max", TOL_LINEAR, &[("x", x)], |t, ids| {
        let y = t.reduce_max(ids[0], 1)?;
        weighted_scalar(t, y, &w)
    })?);

    let x = rand_value(&[3, 4], -2.0, 2.0, &mut r);
    let w = weights_for(12, 7);
    out.push(op_check("softmax", TOL_LINEAR, &[("x", x)], |t, ids| {
        let y = t.softmax(ids[0], 1)?;
        weighted_scalar(t, y, &w)
    })?);

    let logits = rand_value(&[4, 3], -2.0, 2.0, &mut r);
    out.push(op_check("cross_entropy", TOL_LINEAR, &[("logits", logits)], |t, ids| {
        t.cross_entropy(ids[0], &[0, 2, 1, 0])
    })?);

    let x = rand_value(&[1, 5, 3], -1.0, 1.0, &mut r);
    let idx: &[u32] = &[0, 1, 2, 0, 3, 4, 1, 1, 4, 2];
    let w = weights_for(30, 8);
    out.push(op_check("gather", TOL_LINEAR, &[("x", x)], |t, ids| {
        let y = t.gather(ids[0], idx, 2)?;
        weighted_scalar(t, y, &w)
    })?);

    let a = rand_value(&[2, 3, 2], -1.0, 1.0, &mut r);
    let b = rand_value(&[2, 3, 3], -1.0, 1.0, &mut r);
    let w = weights_for(30, 9);
    out.push(op_check("concat_last", TOL_LINEAR, &[("a", a), ("b", b)], |t, ids| {
        let y = t.concat_last(&[ids[0], ids[1]])?;
        weighted_scalar(t, y, &w)
    })?);

    let x = rand_value(&[2, 3, 4], -1.0, 1.0, &mut r);
    let w = weights_for(8, 10);
    out.push(op_check("sum_axis", TOL_LINEAR, &[("x", x)], |t, ids| {
        let y = t.sum_axis(ids[0], 1)?;
        weighted_scalar(t, y, &w)
    })?);

    let x = rand_value(&[2, 3, 4], -1.0, 1.0, &mut r);
    let w = weights_for(6, 11);
    out.push(op_check("mean_axis", TOL_LINEAR, &[("x", x)], |t, ids| {
        let y = t.mean_axis(ids[0], 2)?;
        weighted_scalar(t, y, &w)
    })?);

    let x = rand_value(&[3, 3], -1.0, 1.0, &mut r);
    let w = weights_for(9, 12);
    out.push(op_check("scale", TOL_ELEMENTWISE, &[("x", x)], |t, ids| {
        let y = t.scale(ids[0], 1.7)?;
        weighted_scalar(t, y, &w)
    })?);

    let a = rand_value(&[2, 3], -1.0, 1.0, &mut r);
    let b = rand_value(&[2, 3], -1.0, 1.0, &mut r);
    let w = weights_for(6, 13);
    out.push(op_check("add", TOL_ELEMENTWISE, &[("a", a), ("b", b)], |t, ids| {
        let y = t.add(ids[0], ids[1])?;
        weighted_scalar(t, y, &w)
    })?);

    let a = rand_value(&[2, 3], -1.0, 1.0, &mut r);
    let b = rand_value(&[2, 3], -1.0, 1.0, &mut r);
    let w = weights_for(6, 14);
    out.push(op_check("sub", TOL_ELEMENTWISE, &[("a", a), ("b", b)], |t, ids| {
        let y = t.sub(ids[0], ids[1])?;
        weighted_scalar(t, y, &w)
    })?);

    let a = rand_value(&[2, 3], -1.0, 1.0, &mut r);
    let b = rand_value(&[2, 3], -1.0, 1.0, &mut r);
    let w = weights_for(6, 15);
    out.push(op_check("mul", TOL_ELEMENTWISE, &[("a", a), ("b", b)], |t, ids| {
        let y = t.mul(ids[0], ids[1])?;
        weighted_scalar(t, y, &w)
    })?);

    let a = rand_value(&[2, 3, 4], -1.0, 1.0, &mut r);
    let b = rand_value(&[2, 3, 1], 0.3, 1.3, &mut r);
    let w = weights_for(24, 16);
    out.push(op_check("mul_bcast_last", TOL_ELEMENTWISE, &[("a", a), ("w", b)], |t, ids| {
        let y = t.mul_bcast_last(ids[0], ids[1])?;
        weighted_scalar(t, y, &w)
    })?);

    let x = rand_value(&[2, 3], -1.0, 1.0, &mut r);
    let w = weights_for(24, 17);
    out.push(op_check("expand_dim", TOL_LINEAR, &[("x", x)], |t, ids| {
        let y = t.expand_dim(ids[0], 1, 4)?;
        weighted_scalar(t, y, &w)
    })?);

    // Components bounded away from zero keep each row's norm differentiable.
    let x = rand_signed(&[2, 3, 3], 0.3, 1.0, &mut r);
    let w = weights_for(6, 18);
    out.push(op_check("norm_last", TOL_ELEMENTWISE, &[("x", x)], |t, ids| {
        let y = t.norm_last(ids[0])?;
        weighted_scalar(t, y, &w)
    })?);

    let x = rand_value(&[2, 3, 5], -1.0, 1.0, &mut r);
    let w = weights_for(18, 19);
    out.push(op_check("slice_last", TOL_LINEAR, &[("x", x)], |t, ids| {
        let y = t.slice_last(ids[0], 1, 3)?;
        weighted_scalar(t, y, &w)
    })?);

    let x = rand_value(&[2, 6], -1.0, 1.0, &mut r);
    let w = weights_for(12, 20);
    out.push(op_check("reshape", TOL_LINEAR, &[("x", x)], |t, ids| {
        let y = t.reshape(ids[0], &[3, 4])?;
        weighted_scalar(t, y, &w)
    })?);

    let x = rand_value(&[3, 4], -1.0, 1.0, &mut r);
    let w = weights_for(12, 21);
    out.push(op_check("dropout_eval_identity", TOL_LINEAR, &[("x", x)], |t, ids| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = t.dropout(ids[0], 0.5, &mut rng)?;
        weighted_scalar(t, y, &w)
    })?);

    out.push(check_dfa_layer("dfa_layer_max", Aggregation::Max, quick)?);
    out.push(check_dfa_layer("dfa_layer_attention", Aggregation::AttentionSum, quick)?);
    out.push(check_classifier(quick)?);
    out.push(check_segmenter(quick)?);

    Ok(out)
}
