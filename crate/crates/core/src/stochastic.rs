//! Reparameterized samplers and KL divergences for the three variational
//! families: Kumaraswamy (standing in for Beta), Binary Concrete (relaxing
//! Bernoulli) and diagonal Gaussian, plus the stick-breaking transform.
//!
//! Every sampler takes its noise explicitly so a training step can be
//! replayed exactly, which is what the finite-difference checks rely on.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::special::{beta_fn, digamma, ln_beta, sigmoid, softplus, trigamma, EULER_GAMMA};
use crate::tensor::{Tape, Tensor, Var};

/// Uniform noise is clamped into `[NOISE_EPS, 1 - NOISE_EPS]`.
pub const NOISE_EPS: f64 = 1e-7;
/// Kumaraswamy draws and relaxed Bernoulli samples are kept this far from
/// 0 and 1.
pub const SAMPLE_EPS: f64 = 1e-7;
/// Stick products entering a logit are clamped into `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;
/// Terms kept from the infinite series of the Kumaraswamy–Beta KL.
pub const KL_SERIES_TERMS: usize = 10;

/// Uniform noise on the open unit interval.
#[derive(Clone, Debug, PartialEq)]
pub struct ReparamNoise {
    u: Tensor,
}

impl ReparamNoise {
    pub fn new(u: Tensor) -> Self {
        Self {
            u: u.map(|x| x.clamp(NOISE_EPS, 1.0 - NOISE_EPS)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random::<f64>()).collect();
        Self::new(Tensor::new(shape.to_vec(), data).expect("length matches shape"))
    }

    pub fn uniform(&self) -> &Tensor {
        &self.u
    }

    /// Logistic noise `ln(u / (1 - u))`.
    pub fn logistic(&self) -> Tensor {
        self.u.map(|u| u.ln() - (-u).ln_1p())
    }
}

/// Standard normal noise of the given shape.
pub fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Kumaraswamy(c, d) posterior over stick proportions.
#[derive(Clone, Copy, Debug)]
pub struct KumaraswamyParams {
    pub c: Var,
    pub d: Var,
}

/// Binary Concrete with unconstrained location logits and a temperature.
#[derive(Clone, Copy, Debug)]
pub struct ConcreteParams {
    pub logit_pi: Var,
    pub temperature: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GaussianParams {
    pub mu: Var,
    pub log_sigma: Var,
}

/// One reparameterized draw of the latent blocks. Blocks a model variant
/// does not use are `None`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LatentSample {
    pub v: Option<Var>,
    pub pi: Option<Var>,
    /// Pre-sigmoid value of the relaxed memberships.
    pub b_logits: Option<Var>,
    pub b: Option<Var>,
    pub r: Option<Var>,
}

/// `v = (1 - u^{1/d})^{1/c}`, differentiable in `c` and `d`.
pub fn sample_kumaraswamy(tape: &mut Tape, p: KumaraswamyParams, noise: &ReparamNoise) -> Result<Var> {
    let (c, d) = (tape.value(p.c), tape.value(p.d));
    if c.shape() != d.shape() || c.shape() != noise.uniform().shape() {
        return Err(Error::shape("sample_kumaraswamy", c.shape(), noise.uniform().shape()));
    }
    let n = c.len();
    let mut out = Vec::with_capacity(n);
    let mut dc = Vec::with_capacity(n);
    let mut dd = Vec::with_capacity(n);
    for ((&ci, &di), &u) in c.data().iter().zip(d.data()).zip(noise.uniform().data()) {
        let ln_u = u.ln();
        let t = (ln_u / di).exp();
        let w = -(ln_u / di).exp_m1();
        let v = (w.ln() / ci).exp();
        if !(SAMPLE_EPS..=1.0 - SAMPLE_EPS).contains(&v) || !v.is_finite() {
            out.push(v.clamp(SAMPLE_EPS, 1.0 - SAMPLE_EPS));
            dc.push(0.0);
            dd.push(0.0);
            continue;
        }
        out.push(v);
        dc.push(-v * w.ln() / (ci * ci));
        dd.push(v / (ci * w) * t * ln_u / (di * di));
    }
    let value = Tensor::new(c.shape().to_vec(), out)?;
    tape.pointwise2_from_parts("sample_kumaraswamy", p.c, p.d, value, dc, dd)
}

/// Mean of Kumaraswamy(a, b): `b · B(1 + 1/a, b)`.
pub fn kumaraswamy_mean(a: f64, b: f64) -> f64 {
    b * beta_fn(1.0 + 1.0 / a, b)
}

/// Row-wise cumulative product `π_k = ∏_{j≤k} v_j`.
pub fn stick_breaking(tape: &mut Tape, v: Var) -> Result<Var> {
    tape.cumprod_rows(v)
}

/// Logit of stick products, clamped away from 0 and 1 first.
pub fn stick_logits(tape: &mut Tape, pi: Var) -> Result<Var> {
    let p = tape.clamp(pi, PROB_EPS, 1.0 - PROB_EPS)?;
    let lp = tape.log(p)?;
    let one_minus = tape.affine(p, -1.0, 1.0)?;
    let lq = tape.log(one_minus)?;
    tape.sub(lp, lq)
}

/// KL(Kumaraswamy(a, b) ‖ Beta(α, β)) with its partial derivatives in
/// `a` and `b`.
///
/// The infinite series is cut after `n_terms`; it vanishes for β = 1.
pub fn kl_kumaraswamy_beta_scalar(a: f64, b: f64, alpha: f64, beta: f64, n_terms: usize) -> (f64, f64, f64) {
    let s = -EULER_GAMMA - digamma(b) - 1.0 / b;
    let mut value = (a - alpha) / a * s + (a * b).ln() + ln_beta(alpha, beta) - (b - 1.0) / b;
    let mut da = alpha / (a * a) * s + 1.0 / a;
    let mut db = (a - alpha) / a * (1.0 / (b * b) - trigamma(b)) + 1.0 / b - 1.0 / (b * b);
    if beta != 1.0 {
        let (mut sum, mut sum_da, mut sum_db) = (0.0, 0.0, 0.0);
        let psi_b = digamma(b);
        for m in 1..=n_terms {
            let m = m as f64;
            let x = m / a;
            let bm = ln_beta(x, b).exp();
            let den = m + a * b;
            let psi_xb = digamma(x + b);
            sum += bm / den;
            sum_da += bm * (digamma(x) - psi_xb) * (-m / (a * a)) / den - bm * b / (den * den);
            sum_db += bm * (psi_b - psi_xb) / den - bm * a / (den * den);
        }
        value += (beta - 1.0) * b * sum;
        da += (beta - 1.0) * b * sum_da;
        db += (beta - 1.0) * (sum + b * sum_db);
    }
    (value, da, db)
}

/// Sum over entries of KL(Kumaraswamy(c, d) ‖ Beta(α, β)).
pub fn kl_kumaraswamy_beta(
    tape: &mut Tape,
    q: KumaraswamyParams,
    prior_alpha: f64,
    prior_beta: f64,
    n_terms: usize,
) -> Result<Var> {
    if !(prior_alpha > 0.0 && prior_beta > 0.0) {
        return Err(Error::Domain {
            op: "kl_kumaraswamy_beta",
            index: 0,
            value: prior_alpha.min(prior_beta),
        });
    }
    for t in [tape.value(q.c), tape.value(q.d)] {
        if let Some(i) = t.data().iter().position(|&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "kl_kumaraswamy_beta",
                index: i,
                value: t.data()[i],
            });
        }
    }
    let per_entry = tape.map_pointwise2("kl_kumaraswamy_beta", q.c, q.d, |a, b| {
        kl_kumaraswamy_beta_scalar(a, b, prior_alpha, prior_beta, n_terms)
    })?;
    Ok(tape.sum(per_entry))
}

/// Pre-sigmoid relaxed sample `(logit π + L) / λ`.
pub fn concrete_logits(tape: &mut Tape, p: ConcreteParams, noise: &ReparamNoise) -> Result<Var> {
    if !(p.temperature > 0.0) {
        return Err(Error::Config(format!("temperature {} must be positive", p.temperature)));
    }
    let l = tape.constant(noise.logistic());
    let shifted = tape.add(p.logit_pi, l)?;
    tape.scale(shifted, 1.0 / p.temperature)
}

/// Relaxed Bernoulli sample `σ((logit π + L) / λ)`, or with `hard` set the
/// gradient-free indicator `1[π ≥ 0.5]`.
pub fn sample_binary_concrete(tape: &mut Tape, p: ConcreteParams, noise: &ReparamNoise, hard: bool) -> Result<Var> {
    if hard {
        let ind = tape.value(p.logit_pi).map(|l| if l >= 0.0 { 1.0 } else { 0.0 });
        return Ok(tape.constant(ind));
    }
    let x = concrete_logits(tape, p, noise)?;
    let y = tape.sigmoid(x)?;
    tape.clamp(y, SAMPLE_EPS, 1.0 - SAMPLE_EPS)
}

/// Binary Concrete log density at `y = σ(x)` with location `α = e^l`,
/// written in terms of `x` so that neither `log y` nor `log(1-y)` can
/// overflow. Returns `(value, ∂/∂x, ∂/∂l)`.
pub fn concrete_log_density_scalar(x: f64, l: f64, lambda: f64) -> (f64, f64, f64) {
    let ln_y = -softplus(-x);
    let ln_1my = -softplus(x);
    let t = l - lambda * x;
    let value = lambda.ln() + l - (lambda + 1.0) * (ln_y + ln_1my) + 2.0 * lambda * ln_1my - 2.0 * softplus(t);
    let sx = sigmoid(x);
    let st = sigmoid(t);
    let dx = -(lambda + 1.0) * (1.0 - 2.0 * sx) - 2.0 * lambda * sx + 2.0 * lambda * st;
    let dl = 1.0 - 2.0 * st;
    (value, dx, dl)
}

/// Elementwise log density of a relaxed sample given by its pre-sigmoid
/// value `x`.
pub fn log_density_concrete_logits(tape: &mut Tape, x: Var, p: ConcreteParams) -> Result<Var> {
    let lambda = p.temperature;
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("temperature {lambda} must be positive")));
    }
    tape.map_pointwise2("concrete_log_density", x, p.logit_pi, |x, l| {
        concrete_log_density_scalar(x, l, lambda)
    })
}

/// Elementwise log density of a relaxed sample `y ∈ (0, 1)`:
/// `log λ + log α − (λ+1)(log y + log(1−y)) − 2 log(α y^{−λ} + (1−y)^{−λ})`.
pub fn log_density_binary_concrete(tape: &mut Tape, y: Var, p: ConcreteParams) -> Result<Var> {
    if let Some(i) = tape.value(y).data().iter().position(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::Domain {
            op: "log_density_binary_concrete",
            index: i,
            value: tape.value(y).data()[i],
        });
    }
    let yc = tape.clamp(y, SAMPLE_EPS, 1.0 - SAMPLE_EPS)?;
    let ly = tape.log(yc)?;
    let one_minus = tape.affine(yc, -1.0, 1.0)?;
    let l1y = tape.log(one_minus)?;
    let x = tape.sub(ly, l1y)?;
    log_density_concrete_logits(tape, x, p)
}

/// Single-sample estimate of KL(q ‖ p) between two Binary Concretes,
/// evaluated at the relaxed sample with pre-sigmoid value `x` drawn from `q`.
pub fn kl_concrete_mc(tape: &mut Tape, x: Var, q: ConcreteParams, p: ConcreteParams) -> Result<Var> {
    let lq = log_density_concrete_logits(tape, x, q)?;
    let lp = log_density_concrete_logits(tape, x, p)?;
    let diff = tape.sub(lq, lp)?;
    Ok(tape.sum(diff))
}

/// `r = μ + σ ⊙ ε`.
pub fn sample_gaussian(tape: &mut Tape, p: GaussianParams, eps: &Tensor) -> Result<Var> {
    if tape.shape(p.mu) != eps.shape() {
        return Err(Error::shape("sample_gaussian", tape.shape(p.mu), eps.shape()));
    }
    let sigma = tape.exp(p.log_sigma)?;
    let e = tape.constant(eps.clone());
    let noise = tape.mul(sigma, e)?;
    tape.add(p.mu, noise)
}

/// Per-entry KL(N(μ, σ²) ‖ N(0, s²)) with partials in `μ` and `log σ`.
pub fn kl_gaussian_scalar(mu: f64, log_sigma: f64, prior_sigma: f64) -> (f64, f64, f64) {
    let s2 = prior_sigma * prior_sigma;
    let var = (2.0 * log_sigma).exp();
    let value = prior_sigma.ln() - log_sigma + (var + mu * mu) / (2.0 * s2) - 0.5;
    (value, mu / s2, -1.0 + var / s2)
}

/// Sum over entries of KL(N(μ, σ²) ‖ N(0, prior_sigma²)).
pub fn kl_gaussian_std(tape: &mut Tape, p: GaussianParams, prior_sigma: f64) -> Result<Var> {
    if !(prior_sigma > 0.0) {
        return Err(Error::Config(format!("prior sigma {prior_sigma} must be positive")));
    }
    let per_entry = tape.map_pointwise2("kl_gaussian", p.mu, p.log_sigma, |m, s| {
        kl_gaussian_scalar(m, s, prior_sigma)
    })?;
    Ok(tape.sum(per_entry))
}
