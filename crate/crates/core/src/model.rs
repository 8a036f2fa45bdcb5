//! Encoder, decoders and the five model variants.
//!
//! The encoder is a two-layer GCN: one shared hidden layer followed by
//! linear heads for the variational parameters. Which heads exist depends
//! on the variant and on whether the stick variables are global
//! (structured) or per node (mean-field). Every parameter in the store is
//! used by the variant it was built for.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{sigmoid, softplus_inv};
use crate::stochastic::{
    concrete_logits, kl_concrete_mc, kl_gaussian_std, kl_kumaraswamy_beta, kumaraswamy_mean, sample_gaussian,
    sample_kumaraswamy, standard_normal, stick_breaking, stick_logits, ConcreteParams, GaussianParams,
    KumaraswamyParams, LatentSample, ReparamNoise, KL_SERIES_TERMS,
};
use crate::tensor::{ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};

/// Floor added after the softplus of the Kumaraswamy parameter heads.
pub const POSITIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `z = b ⊙ r`, MLP decoder.
    Dglfrm,
    /// `z = b`, MLP decoder.
    DglfrmB,
    /// `z = b`, bilinear decoder.
    Lfrm,
    /// `z = r`, bilinear decoder.
    Lsm,
    /// `z = r`, inner-product decoder.
    Vgae,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Dglfrm, Variant::DglfrmB, Variant::Lfrm, Variant::Lsm, Variant::Vgae];

    pub fn uses_b(self) -> bool {
        !matches!(self, Variant::Lsm | Variant::Vgae)
    }

    pub fn uses_r(self) -> bool {
        matches!(self, Variant::Dglfrm | Variant::Lsm | Variant::Vgae)
    }

    pub fn default_decoder(self) -> DecoderForm {
        match self {
            Variant::Dglfrm | Variant::DglfrmB => DecoderForm::Mlp,
            Variant::Lfrm | Variant::Lsm => DecoderForm::Bilinear,
            Variant::Vgae => DecoderForm::Inner,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dglfrm => "dglfrm",
            Variant::DglfrmB => "dglfrm-b",
            Variant::Lfrm => "lfrm",
            Variant::Lsm => "lsm",
            Variant::Vgae => "vgae",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown variant `{s}` (expected dglfrm, dglfrm-b, lfrm, lsm or vgae)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderForm {
    /// `σ(f(z_n)ᵀ f(z_m))` with an MLP `f`.
    Mlp,
    /// `σ(z_nᵀ W z_m)` with `W = (P + Pᵀ)/2`.
    Bilinear,
    /// `σ(z_nᵀ z_m)`.
    Inner,
}

impl FromStr for DecoderForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(DecoderForm::Mlp),
            "bilinear" => Ok(DecoderForm::Bilinear),
            "inner" => Ok(DecoderForm::Inner),
            _ => Err(Error::Usage(format!("unknown decoder `{s}` (expected mlp, bilinear or inner)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StickMode {
    /// One Kumaraswamy posterior per component, shared by all nodes.
    Structured,
    /// Per-node Kumaraswamy posteriors produced by encoder heads.
    MeanField,
}

impl FromStr for StickMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(StickMode::Structured),
            "mean-field" => Ok(StickMode::MeanField),
            _ => Err(Error::Usage(format!("unknown stick mode `{s}` (expected structured or mean-field)"))),
        }
    }
}

/// Architecture and prior hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Truncation level.
    pub k: usize,
    pub hidden: usize,
    pub decoder: DecoderForm,
    /// Widths of the decoder MLP; the last entry is the output width.
    pub decoder_layers: Vec<usize>,
    pub stick_mode: StickMode,
    /// Reconstruct node features from `z` as part of the loss.
    pub feature_term: bool,
    pub dropout: f64,
    /// IBP concentration `α` of the `Beta(α, 1)` stick prior.
    pub alpha: f64,
    pub prior_r_sigma: f64,
    pub lambda_prior: f64,
    pub lambda_post: f64,
}

impl ModelConfig {
    /// Defaults for a variant; the hidden width is 32 with node features
    /// and 128 without.
    pub fn new(variant: Variant, k: usize, has_features: bool) -> Self {
        Self {
            variant,
            k,
            hidden: if has_features { 32 } else { 128 },
            decoder: variant.default_decoder(),
            decoder_layers: vec![32, 16],
            stick_mode: StickMode::Structured,
            feature_term: has_features,
            dropout: 0.5,
            alpha: 10.0,
            prior_r_sigma: 1.0,
            lambda_prior: 0.5,
            lambda_post: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1".into());
        }
        if self.decoder == DecoderForm::Mlp && (self.decoder_layers.is_empty() || self.decoder_layers.contains(&0)) {
            return bad(format!("decoder layers {:?} must be non-empty and positive", self.decoder_layers));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("prior r sigma", self.prior_r_sigma),
            ("prior temperature", self.lambda_prior),
            ("posterior temperature", self.lambda_post),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Data the forward pass reads: the normalized adjacency, the encoder input
/// (identity when the graph has no features) and optional dense feature
/// targets for the feature decoder.
#[derive(Clone, Debug)]
pub struct ModelInputs {
    pub a_hat: Arc<SparseMatrix>,
    pub x: Arc<SparseMatrix>,
    pub x_target: Option<Tensor>,
}

impl ModelInputs {
    pub fn new(adjacency: &SparseMatrix, features: Option<&Tensor>) -> Self {
        let n = adjacency.rows();
        let x = match features {
            Some(f) => SparseMatrix::from_dense(f),
            None => SparseMatrix::identity(n),
        };
        Self {
            a_hat: Arc::new(crate::graph::normalize_adjacency(adjacency)),
            x: Arc::new(x),
            x_target: features.cloned(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.a_hat.rows()
    }

    pub fn d_in(&self) -> usize {
        self.x.cols()
    }
}

/// Per-node variational parameters. Heads that the variant does not use
/// are `None`.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub c: Option<Var>,
    pub d: Option<Var>,
    pub pi_logits: Option<Var>,
    pub mu: Option<Var>,
    pub log_sigma: Option<Var>,
}

#[derive(Clone, Debug)]
struct ParamIds {
    w1: ParamId,
    head_c: Option<ParamId>,
    head_d: Option<ParamId>,
    head_pi: Option<ParamId>,
    head_mu: Option<ParamId>,
    head_log_sigma: Option<ParamId>,
    stick_c: Option<ParamId>,
    stick_d: Option<ParamId>,
    mlp: Vec<(ParamId, ParamId)>,
    bilinear: Option<ParamId>,
    feat: Option<(ParamId, ParamId)>,
}

/// Noise for one stochastic forward pass.
#[derive(Clone, Debug, Default)]
pub struct StepNoise {
    pub v: Option<ReparamNoise>,
    pub b: Option<ReparamNoise>,
    pub r: Option<Tensor>,
}

/// Taped quantities of one training forward pass.
#[derive(Clone, Copy, Debug)]
pub struct TrainForward {
    pub latent: LatentSample,
    pub z: Var,
    pub link_logits: Var,
    pub feature_logits: Option<Var>,
    pub kl_b: Option<Var>,
    pub kl_v: Option<Var>,
    pub kl_r: Option<Var>,
}

/// Deterministic embeddings used for scoring: `b̂ = σ(π logits)`, `r̂ = μ`
/// and the two decoder factors whose row products give link logits.
#[derive(Clone, Debug)]
pub struct PosteriorMean {
    pub pi_hat: Option<Tensor>,
    pub z: Tensor,
    left: Tensor,
    right: Tensor,
}

impl PosteriorMean {
    pub fn link_logit(&self, u: usize, v: usize) -> f64 {
        self.left.row(u).iter().zip(self.right.row(v)).map(|(a, b)| a * b).sum()
    }

    pub fn link_probability(&self, u: usize, v: usize) -> f64 {
        sigmoid(self.link_logit(u, v))
    }
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::matrix(rows, cols, data).expect("length matches shape")
}

/// Parameters and architecture of one model.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    n_nodes: usize,
    d_in: usize,
    store: ParamStore,
    ids: ParamIds,
}

impl Model {
    /// Builds and initializes a model: Glorot-uniform weights, zero biases,
    /// and global sticks at `c = α, d = 1` so their KL starts at zero.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, n_nodes: usize, d_in: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if n_nodes == 0 || d_in == 0 {
            return Err(Error::Config(format!("need nodes and inputs, got {n_nodes}×{d_in}")));
        }
        let (k, h) = (config.k, config.hidden);
        let v = config.variant;
        let mut store = ParamStore::new();
        let w1 = store.add("enc.w1", glorot(d_in, h, rng));
        let mut head = |store: &mut ParamStore, name: &str, on: bool| on.then(|| store.add(name, glorot(h, k, rng)));
        let mean_field = config.stick_mode == StickMode::MeanField && v.uses_b();
        let head_c = head(&mut store, "enc.c", mean_field);
        let head_d = head(&mut store, "enc.d", mean_field);
        let head_pi = head(&mut store, "enc.pi", v.uses_b());
        let head_mu = head(&mut store, "enc.mu", v.uses_r());
        let head_log_sigma = head(&mut store, "enc.log_sigma", v.uses_r());
        let structured = config.stick_mode == StickMode::Structured && v.uses_b();
        let (stick_c, stick_d) = if structured {
            let c0 = softplus_inv(config.alpha - POSITIVE_FLOOR);
            let d0 = softplus_inv(1.0 - POSITIVE_FLOOR);
            (
                Some(store.add("sticks.c", Tensor::full(&[1, k], c0))),
                Some(store.add("sticks.d", Tensor::full(&[1, k], d0))),
            )
        } else {
            (None, None)
        };
        let mut mlp = Vec::new();
        let mut bilinear = None;
        match config.decoder {
            DecoderForm::Mlp => {
                let mut fan_in = k;
                for (i, &width) in config.decoder_layers.iter().enumerate() {
                    let w = store.add(format!("dec.w{i}"), glorot(fan_in, width, rng));
                    let b = store.add(format!("dec.b{i}"), Tensor::zeros(&[1, width]));
                    mlp.push((w, b));
                    fan_in = width;
                }
            }
            DecoderForm::Bilinear => bilinear = Some(store.add("dec.bilinear", glorot(k, k, rng))),
            DecoderForm::Inner => {}
        }
        let feat = config.feature_term.then(|| {
            (
                store.add("featdec.w", glorot(k, d_in, rng)),
                store.add("featdec.b", Tensor::zeros(&[1, d_in])),
            )
        });
        Ok(Self {
            config,
            n_nodes,
            d_in,
            store,
            ids: ParamIds {
                w1,
                head_c,
                head_d,
                head_pi,
                head_mu,
                head_log_sigma,
                stick_c,
                stick_d,
                mlp,
                bilinear,
                feat,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Overwrites a parameter by name, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .store
            .find(name)
            .ok_or_else(|| Error::ConfigMismatch(format!("model has no parameter `{name}`")))?;
        let p = self.store.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::ConfigMismatch(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    fn check_inputs(&self, inputs: &ModelInputs) -> Result<()> {
        if inputs.n_nodes() != self.n_nodes || inputs.d_in() != self.d_in || inputs.x.rows() != self.n_nodes {
            return Err(Error::ConfigMismatch(format!(
                "model expects {} nodes with {} inputs, got {} nodes with {}",
                self.n_nodes,
                self.d_in,
                inputs.n_nodes(),
                inputs.d_in()
            )));
        }
        Ok(())
    }

    /// GCN encoder. Dropout on the inputs and the hidden layer is applied
    /// when `dropout_rng` is given (training mode).
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<EncoderOutput> {
        self.check_inputs(inputs)?;
        let rate = self.config.dropout;
        let x = match dropout_rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => Arc::new(dropout_sparse(&inputs.x, rate, rng)),
            _ => Arc::clone(&inputs.x),
        };
        let w1 = tape.param(&self.store, self.ids.w1);
        let xw = tape.spmm(&x, w1)?;
        let pre = tape.spmm(&inputs.a_hat, xw)?;
        let mut h1 = tape.leaky_relu(pre, DEFAULT_LEAKY_SLOPE)?;
        if let Some(rng) = dropout_rng {
            h1 = tape.dropout(h1, rate, rng)?;
        }
        let ah = tape.spmm(&inputs.a_hat, h1)?;
        let head = |tape: &mut Tape, id: Option<ParamId>, name: &str| -> Result<Option<Var>> {
            let Some(id) = id else { return Ok(None) };
            let w = tape.param(&self.store, id);
            let out = tape.matmul(ah, w)?;
            if let Some(i) = tape.value(out).first_non_finite() {
                return Err(Error::NonFinite(format!("encoder head {name} (entry {i})")));
            }
            Ok(Some(out))
        };
        let c = head(tape, self.ids.head_c, "c")?;
        let d = head(tape, self.ids.head_d, "d")?;
        let pi_logits = head(tape, self.ids.head_pi, "pi")?;
        let mu = head(tape, self.ids.head_mu, "mu")?;
        let log_sigma = head(tape, self.ids.head_log_sigma, "log_sigma")?;
        let positive = |tape: &mut Tape, v: Option<Var>| -> Result<Option<Var>> {
            v.map(|v| {
                let s = tape.softplus(v)?;
                tape.affine(s, 1.0, POSITIVE_FLOOR)
            })
            .transpose()
        };
        Ok(EncoderOutput {
            c: positive(tape, c)?,
            d: positive(tape, d)?,
            pi_logits,
            mu,
            log_sigma,
        })
    }

    /// Global stick parameters `(c, d)`, each `1×K`, in structured mode.
    pub fn global_sticks(&self, tape: &mut Tape) -> Result<Option<(Var, Var)>> {
        let (Some(ic), Some(id)) = (self.ids.stick_c, self.ids.stick_d) else {
            return Ok(None);
        };
        let mut pos = |id| -> Result<Var> {
            let p = tape.param(&self.store, id);
            let s = tape.softplus(p)?;
            tape.affine(s, 1.0, POSITIVE_FLOOR)
        };
        Ok(Some((pos(ic)?, pos(id)?)))
    }

    /// Fresh noise for one training step.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> StepNoise {
        let (n, k) = (self.n_nodes, self.config.k);
        let v_shape = match self.config.stick_mode {
            StickMode::Structured => [1, k],
            StickMode::MeanField => [n, k],
        };
        let uses_b = self.config.variant.uses_b();
        StepNoise {
            v: uses_b.then(|| ReparamNoise::sample(&v_shape, rng)),
            b: uses_b.then(|| ReparamNoise::sample(&[n, k], rng)),
            r: self.config.variant.uses_r().then(|| standard_normal(&[n, k], rng)),
        }
    }

    /// Decoder factors `(L, R)` with link logits `L Rᵀ`.
    pub fn decoder_factors(&self, tape: &mut Tape, z: Var) -> Result<(Var, Var)> {
        if tape.shape(z).len() != 2 || tape.shape(z)[1] != self.config.k {
            return Err(Error::shape("decode_links", tape.shape(z), &[0, self.config.k]));
        }
        match self.config.decoder {
            DecoderForm::Inner => Ok((z, z)),
            DecoderForm::Bilinear => {
                let p = tape.param(&self.store, self.ids.bilinear.expect("bilinear decoder has a matrix"));
                let pt = tape.transpose(p);
                let sum = tape.add(p, pt)?;
                let w = tape.scale(sum, 0.5)?;
                let zw = tape.matmul(z, w)?;
                Ok((zw, z))
            }
            DecoderForm::Mlp => {
                let mut h = z;
                let last = self.ids.mlp.len() - 1;
                for (i, &(w, b)) in self.ids.mlp.iter().enumerate() {
                    let w = tape.param(&self.store, w);
                    let b = tape.param(&self.store, b);
                    let hw = tape.matmul(h, w)?;
                    h = tape.add_row(hw, b)?;
                    if i < last {
                        h = tape.leaky_relu(h, DEFAULT_LEAKY_SLOPE)?;
                    }
                }
                Ok((h, h))
            }
        }
    }

    /// Full `N×N` grid of link logits.
    pub fn decode_links(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let (l, r) = self.decoder_factors(tape, z)?;
        tape.matmul_nt(l, r)
    }

    /// Feature logits `z W + b`, `N×D`.
    pub fn decode_features(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let (w, b) = self
            .ids
            .feat
            .ok_or_else(|| Error::Usage("model was built without a feature decoder".into()))?;
        let w = tape.param(&self.store, w);
        let b = tape.param(&self.store, b);
        let zw = tape.matmul(z, w)?;
        tape.add_row(zw, b)
    }

    /// One stochastic forward pass with its KL terms. KL terms of latent
    /// blocks the variant does not use are `None`.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs,
        noise: &StepNoise,
        dropout_rng: Option<&mut R>,
    ) -> Result<TrainForward> {
        let cfg = &self.config;
        let enc = self.encode(tape, inputs, dropout_rng)?;
        let n = self.n_nodes;
        let mut latent = LatentSample::default();
        let (mut kl_b, mut kl_v, mut kl_r) = (None, None, None);
        if cfg.variant.uses_b() {
            let (c, d) = match self.global_sticks(tape)? {
                Some(cd) => cd,
                None => (enc.c.expect("mean-field c head"), enc.d.expect("mean-field d head")),
            };
            let q_v = KumaraswamyParams { c, d };
            let u_v = noise.v.as_ref().ok_or_else(|| Error::Usage("missing stick noise".into()))?;
            let v = sample_kumaraswamy(tape, q_v, u_v)?;
            kl_v = Some(kl_kumaraswamy_beta(tape, q_v, cfg.alpha, 1.0, KL_SERIES_TERMS)?);
            let pi = stick_breaking(tape, v)?;
            let mut prior_logits = stick_logits(tape, pi)?;
            if tape.shape(prior_logits)[0] != n {
                prior_logits = tape.repeat_rows(prior_logits, n)?;
            }
            let head = enc.pi_logits.expect("pi head");
            // Structured: q(b_n | v) has logit(π(v)) + encoder offset.
            let post_logits = if self.ids.stick_c.is_some() {
                tape.add(head, prior_logits)?
            } else {
                head
            };
            let q_b = ConcreteParams {
                logit_pi: post_logits,
                temperature: cfg.lambda_post,
            };
            let p_b = ConcreteParams {
                logit_pi: prior_logits,
                temperature: cfg.lambda_prior,
            };
            let u_b = noise.b.as_ref().ok_or_else(|| Error::Usage("missing membership noise".into()))?;
            let x = concrete_logits(tape, q_b, u_b)?;
            kl_b = Some(kl_concrete_mc(tape, x, q_b, p_b)?);
            latent.v = Some(v);
            latent.pi = Some(pi);
            latent.b_logits = Some(x);
            latent.b = Some(tape.sigmoid(x)?);
        }
        if cfg.variant.uses_r() {
            let q_r = GaussianParams {
                mu: enc.mu.expect("mu head"),
                log_sigma: enc.log_sigma.expect("log sigma head"),
            };
            let eps = noise.r.as_ref().ok_or_else(|| Error::Usage("missing strength noise".into()))?;
            latent.r = Some(sample_gaussian(tape, q_r, eps)?);
            kl_r = Some(kl_gaussian_std(tape, q_r, cfg.prior_r_sigma)?);
        }
        let z = compose_z(tape, cfg.variant, &latent)?;
        let link_logits = self.decode_links(tape, z)?;
        let feature_logits = if self.ids.feat.is_some() {
            Some(self.decode_features(tape, z)?)
        } else {
            None
        };
        Ok(TrainForward {
            latent,
            z,
            link_logits,
            feature_logits,
            kl_b,
            kl_v,
            kl_r,
        })
    }

    /// `logit` of the stick products of the posterior-mean sticks
    /// `v̂_k = d_k B(1 + 1/c_k, d_k)`, as a `1×K` row; `None` unless the
    /// sticks are global.
    pub fn mean_stick_logits(&self) -> Result<Option<Tensor>> {
        let mut tape = Tape::new();
        let Some((c, d)) = self.global_sticks(&mut tape)? else {
            return Ok(None);
        };
        let v = tape.value(c).zip_map(tape.value(d), kumaraswamy_mean)?;
        let v = tape.constant(v);
        let pi = stick_breaking(&mut tape, v)?;
        let l = stick_logits(&mut tape, pi)?;
        Ok(Some(tape.value(l).clone()))
    }

    /// Deterministic embeddings with dropout off: `b̂ = σ(π logits)`,
    /// `r̂ = μ`.
    pub fn posterior_mean(&self, inputs: &ModelInputs) -> Result<PosteriorMean> {
        let mut tape = Tape::new();
        let enc = self.encode::<rand_chacha::ChaCha8Rng>(&mut tape, inputs, None)?;
        let mut latent = LatentSample::default();
        let mut pi_hat = None;
        if let Some(mut l) = enc.pi_logits {
            if let Some(prior) = self.mean_stick_logits()? {
                let prior = tape.constant(prior.repeat_rows(self.n_nodes));
                l = tape.add(l, prior)?;
            }
            let b = tape.sigmoid(l)?;
            pi_hat = Some(tape.value(b).clone());
            latent.b = Some(b);
        }
        latent.r = enc.mu;
        let z = compose_z(&mut tape, self.config.variant, &latent)?;
        let (l, r) = self.decoder_factors(&mut tape, z)?;
        Ok(PosteriorMean {
            pi_hat,
            z: tape.value(z).clone(),
            left: tape.value(l).clone(),
            right: tape.value(r).clone(),
        })
    }
}

/// Inverted dropout on the stored values of a sparse matrix.
pub fn dropout_sparse<R: Rng + ?Sized>(x: &SparseMatrix, rate: f64, rng: &mut R) -> SparseMatrix {
    let keep = 1.0 / (1.0 - rate);
    let values = x
        .values()
        .iter()
        .map(|&v| if rng.random::<f64>() < rate { 0.0 } else { v * keep })
        .collect();
    x.with_values(values)
}

/// `g(Â · h · w)`, with `g` a leaky ReLU of the given slope or the identity
/// when `slope` is `None`.
pub fn gcn_layer(tape: &mut Tape, h: Var, w: Var, a_hat: &Arc<SparseMatrix>, slope: Option<f64>) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let out = tape.spmm(a_hat, hw)?;
    match slope {
        Some(s) => tape.leaky_relu(out, s),
        None => Ok(out),
    }
}

/// Embedding for a variant: `b ⊙ r`, `b` or `r`.
pub fn compose_z(tape: &mut Tape, variant: Variant, s: &LatentSample) -> Result<Var> {
    let missing = |what: &str| Error::Usage(format!("variant {variant} needs the {what} sample"));
    match variant {
        Variant::Dglfrm => {
            let b = s.b.ok_or_else(|| missing("b"))?;
            let r = s.r.ok_or_else(|| missing("r"))?;
            tape.mul(b, r)
        }
        Variant::DglfrmB | Variant::Lfrm => s.b.ok_or_else(|| missing("b")),
        Variant::Lsm | Variant::Vgae => s.r.ok_or_else(|| missing("r")),
    }
}
