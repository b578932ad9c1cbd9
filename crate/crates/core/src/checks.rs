//! Finite-difference verification suites for the differentiable pieces.
//!
//! Every loss term and the full attention layer are checked against central
//! differences at safe points (nudged off max ties, activation kinks and
//! clamp boundaries). The suites are deterministic for a given seed and are
//! what the `gradcheck` command and the acceptance tests run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check_multi, AutodiffError, BackwardFault, Tape, Tensor, Var};
use crate::fuzzattn::{
    self, fuzzy_attention_layer, gradcheck_point_is_safe, init_params, layer_leaves, BankVars,
    LayerVars,
};
use crate::jcam::{
    bce_loss, continuity_loss, jcam_loss, lam_loss, nlam_loss, soft_jaccard_loss, JcamWeights,
};

/// Relative-error tolerance every check must meet.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const GRAD_STEP: f64 = 1e-5;
/// Safety margin for kinks and ties (well above 10 * GRAD_STEP).
const SAFE_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn outcome(name: &str, instances: usize, max_rel_err: f64) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        instances,
        max_rel_err,
        tolerance: GRAD_TOLERANCE,
        pass: max_rel_err <= GRAD_TOLERANCE,
    }
}

fn random_soft(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(0.05..0.95)).collect(),
    )
    .expect("finite data")
}

fn random_hard(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 })
            .collect(),
    )
    .expect("finite data")
}

/// Hard tensor with at least one nonzero entry (centerlines must be
/// nonempty) and clear margins against X projections.
fn random_centerline(rng: &mut ChaCha8Rng, y: &Tensor<f64>) -> Tensor<f64> {
    let mut cl = y.clone();
    for (i, v) in cl.data_mut().iter_mut().enumerate() {
        if i % 2 == 1 {
            *v = 0.0;
        }
    }
    if cl.data().iter().all(|&v| v == 0.0) {
        let idx = y
            .data()
            .iter()
            .position(|&v| v == 1.0)
            .unwrap_or_else(|| rng.gen_range(0..cl.numel()));
        cl.data_mut()[idx] = 1.0;
    }
    cl
}

/// Projections of X and Y must not collide within the margin, or the LAM
/// absolute value sits on its kink.
fn lam_margins_ok(x: &Tensor<f64>, y: &Tensor<f64>) -> bool {
    let shape = x.shape();
    let (d, h, w) = (shape[0], shape[1], shape[2]);
    let proj = |t: &Tensor<f64>, axis: usize| -> Vec<f64> {
        let mut out = vec![0.0; t.numel() / shape[axis]];
        for dz in 0..d {
            for hy in 0..h {
                for wx in 0..w {
                    let v = t.data()[(dz * h + hy) * w + wx];
                    let oi = match axis {
                        0 => hy * w + wx,
                        1 => dz * w + wx,
                        _ => dz * h + hy,
                    };
                    out[oi] += v;
                }
            }
        }
        out
    };
    for axis in 0..3 {
        let px = proj(x, axis);
        let py = proj(y, axis);
        if px
            .iter()
            .zip(&py)
            .any(|(&a, &b)| (a - b).abs() < SAFE_MARGIN)
        {
            return false;
        }
    }
    true
}

type LossBuilder = dyn Fn(&mut Tape<f64>, Var, Var, Var) -> Result<Var, AutodiffError>;

/// Gradient checks for every composite-loss term, `instances` random cases
/// each. `fault` arms a deliberately wrong backward rule (negative control).
pub fn jcam_checks(seed: u64, instances: usize, fault: bool) -> Vec<CheckOutcome> {
    let w = JcamWeights::<f64>::standard();
    let cases: Vec<(&str, Box<LossBuilder>)> = vec![
        (
            "jcam/soft_jaccard",
            Box::new(move |t, x, y, _| {
                soft_jaccard_loss(t, x, y, w.epsilon).map_err(|_| non_loss_err())
            }),
        ),
        (
            "jcam/continuity",
            Box::new(move |t, x, _, cl| continuity_loss(t, x, cl).map_err(|_| non_loss_err())),
        ),
        (
            "jcam/cross_entropy",
            Box::new(move |t, x, y, _| bce_loss(t, x, y, w.prob_clamp).map_err(|_| non_loss_err())),
        ),
        (
            "jcam/lam",
            Box::new(move |t, x, y, _| lam_loss(t, x, y).map_err(|_| non_loss_err())),
        ),
        (
            "jcam/nlam",
            Box::new(move |t, x, y, _| nlam_loss(t, x, y, w.epsilon).map_err(|_| non_loss_err())),
        ),
        (
            "jcam/total",
            Box::new(move |t, x, y, cl| {
                jcam_loss(t, x, y, cl, &w)
                    .map(|(total, _)| total)
                    .map_err(|_| non_loss_err())
            }),
        ),
    ];

    let mut out = Vec::new();
    for (name, builder) in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fxhash(name));
        let mut worst = 0.0f64;
        let mut done = 0usize;
        while done < instances {
            let x = random_soft(&mut rng, &[4, 4, 4]);
            let y = random_hard(&mut rng, &[4, 4, 4]);
            let cl = random_centerline(&mut rng, &y);
            if (name == "jcam/lam" || name == "jcam/nlam" || name == "jcam/total")
                && !lam_margins_ok(&x, &y)
            {
                continue;
            }
            done += 1;
            let y_const = y.clone();
            let cl_const = cl.clone();
            let err = grad_check_multi(
                |tape, vars| {
                    if fault {
                        tape.inject_backward_fault(BackwardFault::ExpSignFlip);
                    }
                    let yv = tape.constant(y_const.clone());
                    let cv = tape.constant(cl_const.clone());
                    builder(tape, vars[0], yv, cv)
                },
                std::slice::from_ref(&x),
                GRAD_STEP,
            )
            .expect("gradcheck evaluates");
            worst = worst.max(err);
        }
        out.push(outcome(name, instances, worst));
    }
    out
}

/// Gradient checks for the membership machinery and the full attention layer
/// with respect to inputs and every parameter group.
pub fn fuzzattn_checks(seed: u64, instances: usize, fault: bool) -> Vec<CheckOutcome> {
    let (c, m) = (2usize, 2usize);
    let mut out = Vec::new();

    // Membership degrees wrt X, mu, sigma.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d66);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let x = random_soft(&mut rng, &[c, 3, 3]);
            let mu = Tensor::new(
                vec![m, c],
                (0..m * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .expect("finite");
            let sigma = Tensor::new(
                vec![m, c],
                (0..m * c).map(|_| rng.gen_range(0.5..1.5)).collect(),
            )
            .expect("finite");
            let err = grad_check_multi(
                |tape, vars| {
                    if fault {
                        tape.inject_backward_fault(BackwardFault::ExpSignFlip);
                    }
                    let bank = BankVars {
                        mu: vars[1],
                        sigma: vars[2],
                        m,
                        c,
                    };
                    let d = fuzzattn::membership_degrees(tape, vars[0], &bank)?;
                    let sq = tape.square(d);
                    Ok(tape.sum_all(sq))
                },
                &[x, mu, sigma],
                GRAD_STEP,
            )
            .expect("gradcheck evaluates");
            worst = worst.max(err);
        }
        out.push(outcome("fuzzattn/membership_degrees", instances, worst));
    }

    // Full layer wrt both inputs and all ten parameter groups.
    {
        let mut worst = 0.0f64;
        let mut done = 0usize;
        let mut attempt_seed = seed ^ 0xfa97;
        while done < instances {
            let params = init_params::<f64>(c, m, attempt_seed);
            let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed ^ 0x517e);
            attempt_seed += 1;
            let shape = [c, 3, 3, 3];
            let n: usize = shape.iter().product();
            let e = Tensor::new(
                shape.to_vec(),
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .expect("finite");
            let d = Tensor::new(
                shape.to_vec(),
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .expect("finite");
            if !gradcheck_point_is_safe(&e, &d, &params, SAFE_MARGIN) {
                continue;
            }
            done += 1;
            let slope = params.leaky_slope;
            let t = |shape: Vec<usize>, data: &[f64]| {
                Tensor::new(shape, data.to_vec()).expect("finite")
            };
            let inputs = vec![
                e,
                d,
                t(vec![c, c], &params.w_e),
                t(vec![c], &params.b_e),
                t(vec![c, c], &params.w_d),
                t(vec![c], &params.b_d),
                t(vec![c], &params.in_gain_e),
                t(vec![c], &params.in_shift_e),
                t(vec![c], &params.in_gain_d),
                t(vec![c], &params.in_shift_d),
                t(vec![m, c], &params.mu),
                t(vec![m, c], &params.sigma),
            ];
            let err = grad_check_multi(
                |tape, vars| {
                    if fault {
                        tape.inject_backward_fault(BackwardFault::ExpSignFlip);
                    }
                    let layer = LayerVars {
                        w_e: vars[2],
                        b_e: vars[3],
                        w_d: vars[4],
                        b_d: vars[5],
                        in_gain_e: vars[6],
                        in_shift_e: vars[7],
                        in_gain_d: vars[8],
                        in_shift_d: vars[9],
                        bank: BankVars {
                            mu: vars[10],
                            sigma: vars[11],
                            m,
                            c,
                        },
                    };
                    let y = fuzzy_attention_layer(tape, vars[0], vars[1], &layer, slope)?;
                    let sq = tape.square(y);
                    Ok(tape.sum_all(sq))
                },
                &inputs,
                GRAD_STEP,
            )
            .expect("gradcheck evaluates");
            worst = worst.max(err);
        }
        out.push(outcome("fuzzattn/full_layer", instances, worst));
    }
    out
}

/// Both suites back to back.
pub fn all_checks(seed: u64, instances: usize, fault: bool) -> Vec<CheckOutcome> {
    let mut out = fuzzattn_checks(seed, instances, fault);
    out.extend(jcam_checks(seed, instances, fault));
    out
}

fn non_loss_err() -> AutodiffError {
    AutodiffError::Invalid("loss construction failed".into())
}

fn fxhash(s: &str) -> u64 {
    // Tiny deterministic string hash for per-check seeds.
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_at_tolerance() {
        for check in all_checks(42, 3, false) {
            assert!(
                check.pass,
                "{} failed: {:e} > {:e}",
                check.name, check.max_rel_err, check.tolerance
            );
        }
    }

    #[test]
    fn fault_injection_is_detected_by_the_suites() {
        // The flipped exp rule must blow up at least the membership and
        // cross-entropy checks.
        let faulty = all_checks(42, 2, true);
        assert!(
            faulty.iter().any(|c| !c.pass && c.max_rel_err > 1e-2),
            "no check detected the injected fault"
        );
    }

    #[test]
    fn suites_are_deterministic() {
        let a = all_checks(7, 2, false);
        let b = all_checks(7, 2, false);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.max_rel_err.to_bits(), y.max_rel_err.to_bits());
        }
    }
}
