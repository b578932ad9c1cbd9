//! Channel-specific fuzzy attention gate.
//!
//! Feature values are scored by banks of learnable Gaussian membership
//! functions, one bank per channel, and the per-channel degrees are fused
//! with the max ("OR") aggregation. The full layer reconstitutes encoder and
//! decoder features through 1x1x1 channel mixing, instance normalization and
//! LeakyReLU, fuses them additively, gates with the membership map, and
//! multiplies the encoder stream by the gate. Everything is built on
//! [`crate::autodiff`], so the layer is differentiable with respect to both
//! inputs and every parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::scalar::Real;

/// Effective spreads are floored at this magnitude when degrees are evaluated.
pub const SIGMA_FLOOR: f64 = 1e-3;
/// LeakyReLU negative slope used when none is configured.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
/// Instance-normalization epsilon.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;
/// Membership functions per channel when none is configured: one for each
/// side of the normalized feature distribution.
pub const DEFAULT_MEMBERSHIP_COUNT: usize = 2;

/// Bank of `m` Gaussian membership functions per channel: centres and
/// spreads are `m x C`, row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianMfBank<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub m: usize,
    pub c: usize,
}

impl<T: Real> GaussianMfBank<T> {
    pub fn new(mu: Vec<T>, sigma: Vec<T>, m: usize, c: usize) -> Result<Self, AutodiffError> {
        if m == 0 || c == 0 || mu.len() != m * c || sigma.len() != m * c {
            return Err(AutodiffError::Invalid(format!(
                "bank wants m*C = {} entries, got mu {} sigma {}",
                m * c,
                mu.len(),
                sigma.len()
            )));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(AutodiffError::Invalid("bank parameters must be finite".into()));
        }
        Ok(Self { mu, sigma, m, c })
    }

    fn mu_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.m, self.c], self.mu.clone()).expect("validated bank")
    }

    fn sigma_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.m, self.c], self.sigma.clone()).expect("validated bank")
    }
}

/// Every learnable quantity of the layer. Weight matrices are `C x C`
/// row-major, per-channel vectors have length `C`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuzzyAttentionParams<T> {
    pub w_e: Vec<T>,
    pub b_e: Vec<T>,
    pub w_d: Vec<T>,
    pub b_d: Vec<T>,
    pub in_gain_e: Vec<T>,
    pub in_shift_e: Vec<T>,
    pub in_gain_d: Vec<T>,
    pub in_shift_d: Vec<T>,
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub leaky_slope: T,
    pub m: usize,
    #[serde(rename = "C")]
    pub c: usize,
}

impl<T: Real> FuzzyAttentionParams<T> {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        let c = self.c;
        let want = [
            ("w_e", self.w_e.len(), c * c),
            ("w_d", self.w_d.len(), c * c),
            ("b_e", self.b_e.len(), c),
            ("b_d", self.b_d.len(), c),
            ("in_gain_e", self.in_gain_e.len(), c),
            ("in_shift_e", self.in_shift_e.len(), c),
            ("in_gain_d", self.in_gain_d.len(), c),
            ("in_shift_d", self.in_shift_d.len(), c),
            ("mu", self.mu.len(), self.m * c),
            ("sigma", self.sigma.len(), self.m * c),
        ];
        for (name, got, expect) in want {
            if got != expect {
                return Err(AutodiffError::Invalid(format!(
                    "{name} has {got} entries, expected {expect}"
                )));
            }
        }
        Ok(())
    }

    pub fn bank(&self) -> GaussianMfBank<T> {
        GaussianMfBank {
            mu: self.mu.clone(),
            sigma: self.sigma.clone(),
            m: self.m,
            c: self.c,
        }
    }
}

/// Bank parameters as tape leaves, for differentiating through the gate.
pub struct BankVars {
    pub mu: Var,
    pub sigma: Var,
    pub m: usize,
    pub c: usize,
}

/// Layer parameters as tape leaves.
pub struct LayerVars {
    pub w_e: Var,
    pub b_e: Var,
    pub w_d: Var,
    pub b_d: Var,
    pub in_gain_e: Var,
    pub in_shift_e: Var,
    pub in_gain_d: Var,
    pub in_shift_d: Var,
    pub bank: BankVars,
}

impl LayerVars {
    /// All parameter handles in a fixed order (useful for gradient sweeps).
    pub fn all(&self) -> Vec<Var> {
        vec![
            self.w_e,
            self.b_e,
            self.w_d,
            self.b_d,
            self.in_gain_e,
            self.in_shift_e,
            self.in_gain_d,
            self.in_shift_d,
            self.bank.mu,
            self.bank.sigma,
        ]
    }
}

/// Load a bank onto the tape as leaves.
pub fn bank_leaves<T: Real>(tape: &mut Tape<T>, bank: &GaussianMfBank<T>) -> BankVars {
    BankVars {
        mu: tape.leaf(bank.mu_tensor()),
        sigma: tape.leaf(bank.sigma_tensor()),
        m: bank.m,
        c: bank.c,
    }
}

/// Load full layer parameters onto the tape as leaves.
pub fn layer_leaves<T: Real>(tape: &mut Tape<T>, params: &FuzzyAttentionParams<T>) -> LayerVars {
    let c = params.c;
    let t = |shape: Vec<usize>, data: &[T]| Tensor::new(shape, data.to_vec()).expect("validated");
    LayerVars {
        w_e: tape.leaf(t(vec![c, c], &params.w_e)),
        b_e: tape.leaf(t(vec![c], &params.b_e)),
        w_d: tape.leaf(t(vec![c, c], &params.w_d)),
        b_d: tape.leaf(t(vec![c], &params.b_d)),
        in_gain_e: tape.leaf(t(vec![c], &params.in_gain_e)),
        in_shift_e: tape.leaf(t(vec![c], &params.in_shift_e)),
        in_gain_d: tape.leaf(t(vec![c], &params.in_gain_d)),
        in_shift_d: tape.leaf(t(vec![c], &params.in_shift_d)),
        bank: bank_leaves(tape, &params.bank()),
    }
}

/// Membership degrees of every feature value under every membership function:
/// input `[C, ...spatial]`, output `[m, C, ...spatial]` with entries
/// `exp(-(x - mu)^2 / (2 max(|sigma|, floor)^2))`, all in (0, 1].
pub fn membership_degrees<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    bank: &BankVars,
) -> Result<Var, AutodiffError> {
    let x_shape = tape.value(x).shape().to_vec();
    if x_shape.is_empty() || x_shape[0] != bank.c {
        return Err(AutodiffError::Invalid(format!(
            "input has {} channels, bank expects {}",
            x_shape.first().copied().unwrap_or(0),
            bank.c
        )));
    }
    let spatial = x_shape[1..].to_vec();

    let mu_full = tape.broadcast_spatial(bank.mu, &spatial)?; // [m, C, S...]
    let sigma_full = tape.broadcast_spatial(bank.sigma, &spatial)?;
    let x_full = tape.repeat_axis0(x, bank.m)?; // [m, C, S...]

    let sigma_abs = tape.abs(sigma_full);
    let floor = T::from_f64_lossy(SIGMA_FLOOR);
    let sigma_eff = tape.clamp(sigma_abs, floor, T::infinity())?;

    let diff = tape.sub(x_full, mu_full)?;
    let num = tape.square(diff);
    let sig2 = tape.square(sigma_eff);
    let denom = tape.scalar_mul(sig2, T::from_f64_lossy(2.0));
    let ratio = tape.div(num, denom)?;
    let neg = tape.scalar_mul(ratio, -T::one());
    Ok(tape.exp(neg))
}

/// Fuse membership degrees with the "OR" aggregation: elementwise max over
/// the leading membership axis. `[m, C, ...]` becomes `[C, ...]`.
pub fn fuzzy_or<T: Real>(tape: &mut Tape<T>, degrees: Var) -> Result<Var, AutodiffError> {
    tape.max_over_axis(degrees, 0)
}

/// Fuzzy attention gate: membership degrees fused by OR, yielding a
/// channel-specific attention map with the input's shape and values in (0, 1].
pub fn fag_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    bank: &BankVars,
) -> Result<Var, AutodiffError> {
    let degrees = membership_degrees(tape, x, bank)?;
    fuzzy_or(tape, degrees)
}

/// Full fuzzy attention layer over same-shape encoder/decoder features
/// `[C, ...spatial]`:
///
/// ```text
/// X = LReLU[ LReLU(IN(w_e e + b_e)) + LReLU(IN(w_d d + b_d)) ]
/// y = e * FAG(X)
/// ```
pub fn fuzzy_attention_layer<T: Real>(
    tape: &mut Tape<T>,
    e_l: Var,
    d_l: Var,
    vars: &LayerVars,
    leaky_slope: T,
) -> Result<Var, AutodiffError> {
    let (se, sd) = (
        tape.value(e_l).shape().to_vec(),
        tape.value(d_l).shape().to_vec(),
    );
    if se != sd {
        return Err(AutodiffError::ShapeMismatch(se, sd));
    }
    let eps = T::from_f64_lossy(INSTANCE_NORM_EPS);

    let ae = tape.channel_affine(e_l, vars.w_e, vars.b_e)?;
    let ne = tape.instance_norm(ae, vars.in_gain_e, vars.in_shift_e, eps)?;
    let he = tape.leaky_relu(ne, leaky_slope);

    let ad = tape.channel_affine(d_l, vars.w_d, vars.b_d)?;
    let nd = tape.instance_norm(ad, vars.in_gain_d, vars.in_shift_d, eps)?;
    let hd = tape.leaky_relu(nd, leaky_slope);

    let fused = tape.add(he, hd)?;
    let x = tape.leaky_relu(fused, leaky_slope);

    let attention = fag_forward(tape, x, &vars.bank)?;
    tape.mul(e_l, attention)
}

/// Convenience entry point: run the layer once over concrete tensors and
/// return the gated output values.
pub fn apply_layer<T: Real>(
    e_l: &Tensor<T>,
    d_l: &Tensor<T>,
    params: &FuzzyAttentionParams<T>,
) -> Result<Tensor<T>, AutodiffError> {
    params.validate()?;
    let mut tape = Tape::new();
    let e = tape.leaf(e_l.clone());
    let d = tape.leaf(d_l.clone());
    let vars = layer_leaves(&mut tape, params);
    let y = fuzzy_attention_layer(&mut tape, e, d, &vars, params.leaky_slope)?;
    Ok(tape.value(y).clone())
}

/// Random initialization: centres uniform in [-1, 1] (instance-normalized
/// activations are roughly unit-scale), spreads at 1, channel mixing
/// He-normal with variance 2/C, biases and shifts at 0, gains at 1.
/// Deterministic for a given seed.
pub fn init_params<T: Real>(c: usize, m: usize, seed: u64) -> FuzzyAttentionParams<T> {
    assert!(c >= 1 && m >= 1, "need at least one channel and one MF");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let he_std = (2.0 / c as f64).sqrt();
    let mut he = |n: usize| -> Vec<T> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::from_f64_lossy(z * he_std)
            })
            .collect()
    };
    let w_e = he(c * c);
    let w_d = he(c * c);
    let mu = (0..m * c)
        .map(|_| T::from_f64_lossy(rng.gen_range(-1.0..=1.0)))
        .collect();
    FuzzyAttentionParams {
        w_e,
        b_e: vec![T::zero(); c],
        w_d,
        b_d: vec![T::zero(); c],
        in_gain_e: vec![T::one(); c],
        in_shift_e: vec![T::zero(); c],
        in_gain_d: vec![T::one(); c],
        in_shift_d: vec![T::zero(); c],
        mu,
        sigma: vec![T::one(); m * c],
        leaky_slope: T::from_f64_lossy(DEFAULT_LEAKY_SLOPE),
        m,
        c,
    }
}


/// True when a (e, d, params) triple is a safe finite-difference point: all
/// LeakyReLU pre-activations and membership max gaps clear `margin`, and no
/// effective sigma sits near the floor.
pub fn gradcheck_point_is_safe<T: Real>(
    e_l: &Tensor<T>,
    d_l: &Tensor<T>,
    params: &FuzzyAttentionParams<T>,
    margin: f64,
) -> bool {
    let mut tape: Tape<T> = Tape::new();
    let e = tape.leaf(e_l.clone());
    let d = tape.leaf(d_l.clone());
    let vars = layer_leaves(&mut tape, params);
    let eps = T::from_f64_lossy(INSTANCE_NORM_EPS);

    let mut build = || -> Result<(Var, Var, Var, Var), AutodiffError> {
        let ae = tape.channel_affine(e, vars.w_e, vars.b_e)?;
        let ne = tape.instance_norm(ae, vars.in_gain_e, vars.in_shift_e, eps)?;
        let he = tape.leaky_relu(ne, params.leaky_slope);
        let ad = tape.channel_affine(d, vars.w_d, vars.b_d)?;
        let nd = tape.instance_norm(ad, vars.in_gain_d, vars.in_shift_d, eps)?;
        let hd = tape.leaky_relu(nd, params.leaky_slope);
        let fused = tape.add(he, hd)?;
        let x = tape.leaky_relu(fused, params.leaky_slope);
        let degrees = membership_degrees(&mut tape, x, &vars.bank)?;
        Ok((ne, nd, fused, degrees))
    };
    let (ne, nd, fused, degrees) = match build() {
        Ok(v) => v,
        Err(_) => return false,
    };

    let margin_t = T::from_f64_lossy(margin);
    let near_kink = |v: Var| {
        tape.value(v)
            .data()
            .iter()
            .any(|x| x.abs() < margin_t)
    };
    if near_kink(ne) || near_kink(nd) || near_kink(fused) {
        return false;
    }
    if params
        .sigma
        .iter()
        .any(|s| (s.abs() - T::from_f64_lossy(SIGMA_FLOOR)).abs() < margin_t)
    {
        return false;
    }
    // Max ties: the top two membership degrees per (channel, voxel) must be
    // separated.
    let deg = tape.value(degrees);
    let m = params.m;
    let per = deg.numel() / m;
    if m > 1 {
        for i in 0..per {
            let mut top = T::neg_infinity();
            let mut second = T::neg_infinity();
            for k in 0..m {
                let v = deg.data()[k * per + i];
                if v > top {
                    second = top;
                    top = v;
                } else if v > second {
                    second = v;
                }
            }
            if (top - second).abs() < margin_t {
                return false;
            }
        }
    }
    true
}
