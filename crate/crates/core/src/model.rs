//! The VAE: gated-MLP encoder emitting `(μ, log σ², v₁)`, the linear chain
//! producing `v₂ … v_T`, the decoder, and the single-sample estimator of the
//! flow-augmented bound
//!
//! ```text
//! ELBO = ln p(x | z⁽ᵀ⁾) − β [ln q(z⁽⁰⁾ | x) − ln p(z⁽ᵀ⁾)] + Σₜ ln|det ∂z⁽ᵗ⁾/∂z⁽ᵗ⁻¹⁾|
//! ```
//!
//! Parameter containers are generic over their leaf type so the same
//! structure carries values ([`TensorValue`]), tape handles ([`NodeId`]) and
//! gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{NodeId, Tape};
use crate::distributions::{self, DiagGaussianParams, LikelihoodKind, LikelihoodParams, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::error::{Error, Result};
use crate::flows::{self, HouseholderVector};
use crate::optim::glorot_init;
use crate::tensor::{Shape, TensorValue};

/// Architecture of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Pixels per datum (`D`).
    pub data_dim: usize,
    /// Stochastic latent units (`M`).
    pub latent_dim: usize,
    /// Width of both gated hidden layers.
    pub hidden: usize,
    /// Householder flow length `T`; 0 is the plain VAE.
    pub flow_length: usize,
    pub likelihood: LikelihoodKind,
}

impl ModelConfig {
    pub fn new(data_dim: usize, latent_dim: usize, hidden: usize, flow_length: usize, likelihood: LikelihoodKind) -> Self {
        ModelConfig {
            data_dim,
            latent_dim,
            hidden,
            flow_length,
            likelihood,
        }
    }

    /// Output width of all encoder heads: `2M` for `(μ, log σ²)` plus `M` for
    /// every Householder vector.
    pub fn head_output_dims(&self) -> usize {
        (2 + self.flow_length) * self.latent_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T = TensorValue> {
    /// `in x out`, applied as `x W`.
    pub weight: T,
    pub bias: T,
}

/// `(W h + b) ⊙ σ(V h + c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedLayer<T = TensorValue> {
    pub w: T,
    pub b: T,
    pub v: T,
    pub c: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T = TensorValue> {
    pub layers: Vec<GatedLayer<T>>,
    pub head_mu: Linear<T>,
    pub head_log_var: Linear<T>,
    /// Present iff `T ≥ 1`; maps the last hidden layer to `v₁`.
    pub head_v1: Option<Linear<T>>,
    /// `T − 1` maps `vₜ₋₁ ↦ vₜ`.
    pub flow_linears: Vec<Linear<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T = TensorValue> {
    pub layers: Vec<GatedLayer<T>>,
    pub head_mean: Linear<T>,
    /// Learned per-pixel log-variance (bounded-gaussian only).
    pub log_var: Option<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams<T = TensorValue> {
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
}

pub type GatedLayerParams = GatedLayer<TensorValue>;
pub type EncoderParams = Encoder<TensorValue>;
pub type DecoderParams = Decoder<TensorValue>;

impl<T> Linear<T> {
    fn try_map<U>(&self, f: &mut impl FnMut(&T) -> Result<U>) -> Result<Linear<U>> {
        Ok(Linear {
            weight: f(&self.weight)?,
            bias: f(&self.bias)?,
        })
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&'a mut T)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

impl<T> GatedLayer<T> {
    fn try_map<U>(&self, f: &mut impl FnMut(&T) -> Result<U>) -> Result<GatedLayer<U>> {
        Ok(GatedLayer {
            w: f(&self.w)?,
            b: f(&self.b)?,
            v: f(&self.v)?,
            c: f(&self.c)?,
        })
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{prefix}.w"), &self.w);
        f(format!("{prefix}.b"), &self.b);
        f(format!("{prefix}.gate_w"), &self.v);
        f(format!("{prefix}.gate_b"), &self.c);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&'a mut T)) {
        f(&mut self.w);
        f(&mut self.b);
        f(&mut self.v);
        f(&mut self.c);
    }
}

impl<T> VaeParams<T> {
    /// Applies `f` to every tensor in canonical order.
    pub fn try_map<U>(&self, mut f: impl FnMut(&T) -> Result<U>) -> Result<VaeParams<U>> {
        let e = &self.encoder;
        let encoder = Encoder {
            layers: e.layers.iter().map(|l| l.try_map(&mut f)).collect::<Result<_>>()?,
            head_mu: e.head_mu.try_map(&mut f)?,
            head_log_var: e.head_log_var.try_map(&mut f)?,
            head_v1: e.head_v1.as_ref().map(|l| l.try_map(&mut f)).transpose()?,
            flow_linears: e.flow_linears.iter().map(|l| l.try_map(&mut f)).collect::<Result<_>>()?,
        };
        let d = &self.decoder;
        let decoder = Decoder {
            layers: d.layers.iter().map(|l| l.try_map(&mut f)).collect::<Result<_>>()?,
            head_mean: d.head_mean.try_map(&mut f)?,
            log_var: d.log_var.as_ref().map(&mut f).transpose()?,
        };
        Ok(VaeParams { encoder, decoder })
    }

    /// `(name, tensor)` pairs in canonical order.
    pub fn named<'a>(&'a self) -> Vec<(String, &'a T)> {
        let mut out = Vec::new();
        let mut push = |name: String, t: &'a T| out.push((name, t));
        let e = &self.encoder;
        for (i, l) in e.layers.iter().enumerate() {
            l.visit(&format!("encoder.layer{i}"), &mut push);
        }
        e.head_mu.visit("encoder.mu", &mut push);
        e.head_log_var.visit("encoder.log_var", &mut push);
        if let Some(h) = &e.head_v1 {
            h.visit("encoder.v1", &mut push);
        }
        for (i, l) in e.flow_linears.iter().enumerate() {
            l.visit(&format!("encoder.flow{}", i + 2), &mut push);
        }
        let d = &self.decoder;
        for (i, l) in d.layers.iter().enumerate() {
            l.visit(&format!("decoder.layer{i}"), &mut push);
        }
        d.head_mean.visit("decoder.mean", &mut push);
        if let Some(lv) = &d.log_var {
            push("decoder.log_var".to_string(), lv);
        }
        out
    }

    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable tensors in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.for_each_mut(|t| out.push(t));
        out
    }

    /// Visits mutable tensors in canonical order.
    pub fn for_each_mut<'a>(&'a mut self, mut f: impl FnMut(&'a mut T)) {
        let e = &mut self.encoder;
        for l in &mut e.layers {
            l.visit_mut(&mut f);
        }
        e.head_mu.visit_mut(&mut f);
        e.head_log_var.visit_mut(&mut f);
        if let Some(h) = &mut e.head_v1 {
            h.visit_mut(&mut f);
        }
        for l in &mut e.flow_linears {
            l.visit_mut(&mut f);
        }
        let d = &mut self.decoder;
        for l in &mut d.layers {
            l.visit_mut(&mut f);
        }
        d.head_mean.visit_mut(&mut f);
        if let Some(lv) = &mut d.log_var {
            f(lv);
        }
    }
}

impl VaeParams<TensorValue> {
    /// Glorot-uniform weights, zero biases, zero decoder log-variance.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let (d, m, h) = (config.data_dim, config.latent_dim, config.hidden);
        if d == 0 || m == 0 || h == 0 {
            return Err(Error::Invalid("model dimensions must be positive".into()));
        }
        let mut linear = |fan_in: usize, fan_out: usize| -> Result<Linear> {
            Ok(Linear {
                weight: glorot_init(fan_in, fan_out, rng)?,
                bias: TensorValue::zeros(Shape::vector(fan_out)),
            })
        };
        let mut gated = |fan_in: usize, fan_out: usize| -> Result<GatedLayer> {
            let a = linear(fan_in, fan_out)?;
            let g = linear(fan_in, fan_out)?;
            Ok(GatedLayer {
                w: a.weight,
                b: a.bias,
                v: g.weight,
                c: g.bias,
            })
        };
        let enc_layers = vec![gated(d, h)?, gated(h, h)?];
        let dec_layers = vec![gated(m, h)?, gated(h, h)?];
        let mut linear = |fan_in: usize, fan_out: usize| -> Result<Linear> {
            Ok(Linear {
                weight: glorot_init(fan_in, fan_out, rng)?,
                bias: TensorValue::zeros(Shape::vector(fan_out)),
            })
        };
        let encoder = Encoder {
            layers: enc_layers,
            head_mu: linear(h, m)?,
            head_log_var: linear(h, m)?,
            head_v1: if config.flow_length >= 1 { Some(linear(h, m)?) } else { None },
            flow_linears: (1..config.flow_length).map(|_| linear(m, m)).collect::<Result<_>>()?,
        };
        let decoder = Decoder {
            layers: dec_layers,
            head_mean: linear(h, d)?,
            log_var: match config.likelihood {
                LikelihoodKind::Bernoulli => None,
                LikelihoodKind::BoundedGaussian => Some(TensorValue::zeros(Shape::vector(d))),
            },
        };
        Ok(VaeParams { encoder, decoder })
    }

    /// Same structure, every tensor zero.
    pub fn zeros_like(&self) -> Self {
        self.try_map(|t| Ok(TensorValue::zeros(t.shape().clone())))
            .expect("infallible")
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor as a trainable leaf.
    pub fn to_tape(&self, tape: &mut Tape) -> Result<VaeParams<NodeId>> {
        self.try_map(|t| tape.leaf(t.clone()))
    }
}

impl VaeParams<NodeId> {
    pub fn gradients(&self, tape: &Tape, grads: &crate::autodiff::Gradients) -> VaeParams<TensorValue> {
        self.try_map(|&id| Ok(grads.get_or_zeros(tape, id))).expect("infallible")
    }
}

/// Shape-checked gated layer on a `B x in` batch.
pub fn gated_layer_node(tape: &mut Tape, h: NodeId, layer: &GatedLayer<NodeId>) -> Result<NodeId> {
    let a = tape.affine(h, layer.w, layer.b)?;
    let g = tape.affine(h, layer.v, layer.c)?;
    let g = tape.sigmoid(g)?;
    tape.mul(a, g)
}

fn linear_node(tape: &mut Tape, h: NodeId, l: &Linear<NodeId>) -> Result<NodeId> {
    tape.affine(h, l.weight, l.bias)
}

/// Encoder outputs for a batch.
#[derive(Clone, Copy, Debug)]
pub struct EncodedNodes {
    pub mu: NodeId,
    pub log_var: NodeId,
    pub v1: Option<NodeId>,
    /// Last hidden layer.
    pub h: NodeId,
}

pub fn encode_nodes(tape: &mut Tape, x: NodeId, enc: &Encoder<NodeId>) -> Result<EncodedNodes> {
    let mut h = x;
    for layer in &enc.layers {
        h = gated_layer_node(tape, h, layer)?;
    }
    let mu = linear_node(tape, h, &enc.head_mu)?;
    let lv = linear_node(tape, h, &enc.head_log_var)?;
    let log_var = tape.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX)?;
    let v1 = enc.head_v1.as_ref().map(|l| linear_node(tape, h, l)).transpose()?;
    Ok(EncodedNodes { mu, log_var, v1, h })
}

/// `v₁ … v_T` with `vₜ = Aₜ vₜ₋₁ + aₜ`.
pub fn flow_vector_nodes(tape: &mut Tape, v1: NodeId, enc: &Encoder<NodeId>, flow_length: usize) -> Result<Vec<NodeId>> {
    if flow_length == 0 || flow_length > enc.flow_linears.len() + 1 {
        return Err(Error::FlowLength {
            requested: flow_length,
            configured: enc.flow_linears.len() + usize::from(enc.head_v1.is_some()),
        });
    }
    let mut vs = vec![v1];
    for l in &enc.flow_linears[..flow_length - 1] {
        let prev = *vs.last().expect("nonempty");
        vs.push(linear_node(tape, prev, l)?);
    }
    Ok(vs)
}

#[derive(Clone, Copy, Debug)]
pub struct DecodedNodes {
    /// Clamped sigmoid means, `B x D`.
    pub mean: NodeId,
    /// Clamped per-pixel log-variance, length `D`.
    pub log_var: Option<NodeId>,
}

pub fn decode_nodes(tape: &mut Tape, z: NodeId, dec: &Decoder<NodeId>) -> Result<DecodedNodes> {
    let mut h = z;
    for layer in &dec.layers {
        h = gated_layer_node(tape, h, layer)?;
    }
    let logits = linear_node(tape, h, &dec.head_mean)?;
    let mean = distributions::tape::bounded_mean(tape, logits)?;
    let log_var = dec
        .log_var
        .map(|lv| tape.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX))
        .transpose()?;
    Ok(DecodedNodes { mean, log_var })
}

/// Per-datum objective terms on the tape (each a length-`B` vector).
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveNodes {
    pub re: NodeId,
    pub kl: NodeId,
    pub elbo: NodeId,
    pub logdet: f64,
}

/// Records the single-sample bound for the batch `x` (`B x D`) with noise
/// `eps` (`B x M`).
pub fn objective_nodes(
    tape: &mut Tape,
    params: &VaeParams<NodeId>,
    kind: LikelihoodKind,
    flow_length: usize,
    x: &TensorValue,
    eps: &TensorValue,
    beta: f64,
) -> Result<ObjectiveNodes> {
    let xs = tape.constant(x.clone())?;
    let enc = encode_nodes(tape, xs, &params.encoder)?;
    if tape.value(enc.mu).shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            op: "eps",
            left: tape.value(enc.mu).shape().clone(),
            right: eps.shape().clone(),
        });
    }
    let e = tape.constant(eps.clone())?;
    let z0 = distributions::tape::sample_reparam(tape, enc.mu, enc.log_var, e)?;
    let (z_t, logdet) = if flow_length == 0 {
        (z0, 0.0)
    } else {
        let v1 = enc.v1.ok_or(Error::FlowLength {
            requested: flow_length,
            configured: 0,
        })?;
        let vs = flow_vector_nodes(tape, v1, &params.encoder, flow_length)?;
        let states = flows::tape::flow_forward(tape, z0, &vs)?;
        let logdet = vs.len() as f64 * flows::REFLECTION_LOG_DET;
        (*states.last().expect("nonempty"), logdet)
    };
    let dec = decode_nodes(tape, z_t, &params.decoder)?;
    let re = match (kind, dec.log_var) {
        (LikelihoodKind::Bernoulli, _) => distributions::tape::bernoulli_log_prob(tape, x, dec.mean)?,
        (LikelihoodKind::BoundedGaussian, Some(lv)) => distributions::tape::bounded_gaussian_log_prob(tape, x, dec.mean, lv)?,
        (LikelihoodKind::BoundedGaussian, None) => {
            return Err(Error::Invalid("bounded-gaussian decoder has no log-variance".into()))
        }
    };
    let log_q = distributions::tape::log_prob_diag_gaussian(tape, z0, enc.mu, enc.log_var)?;
    let log_p = distributions::tape::log_prob_std_normal(tape, z_t)?;
    let kl = tape.sub(log_q, log_p)?;
    let weighted = tape.scale(kl, beta)?;
    let elbo = tape.sub(re, weighted)?;
    let elbo = tape.add_scalar(elbo, logdet)?;
    Ok(ObjectiveNodes { re, kl, elbo, logdet })
}

/// Terms of the bound in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboBreakdown {
    /// `ln p(x | z⁽ᵀ⁾)`.
    pub re: f64,
    /// `ln q(z⁽⁰⁾ | x) − ln p(z⁽ᵀ⁾)`.
    pub kl: f64,
    pub logdet: f64,
    pub beta: f64,
    /// `re − beta·kl + logdet`.
    pub elbo: f64,
}

impl ElboBreakdown {
    pub fn new(re: f64, kl: f64, logdet: f64, beta: f64) -> Self {
        ElboBreakdown {
            re,
            kl,
            logdet,
            beta,
            elbo: re - beta * kl + logdet,
        }
    }
}

/// Per-datum terms for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTerms {
    pub re: Vec<f64>,
    pub kl: Vec<f64>,
    pub elbo: Vec<f64>,
    pub logdet: f64,
    pub beta: f64,
}

impl BatchTerms {
    pub fn mean(&self) -> ElboBreakdown {
        let n = self.re.len() as f64;
        let re = self.re.iter().sum::<f64>() / n;
        let kl = self.kl.iter().sum::<f64>() / n;
        ElboBreakdown::new(re, kl, self.logdet, self.beta)
    }
}

/// A model: architecture plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    pub config: ModelConfig,
    pub params: VaeParams,
}

impl Vae {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let params = VaeParams::init(&config, rng)?;
        Ok(Vae { config, params })
    }

    /// Standard-normal noise for `batch` data.
    pub fn draw_eps(&self, batch: usize, rng: &mut impl Rng) -> TensorValue {
        let m = self.config.latent_dim;
        let data = (0..batch * m).map(|_| rng.sample(StandardNormal)).collect();
        TensorValue::from_parts(Shape::matrix(batch, m), data)
    }

    fn check_batch(&self, x: &TensorValue) -> Result<usize> {
        let (b, d) = x.shape().as_matrix().ok_or_else(|| Error::InvalidShape(format!("batch must be B x D, got {}", x.shape())))?;
        if d != self.config.data_dim {
            return Err(Error::LengthMismatch {
                what: "datum",
                expected: self.config.data_dim,
                got: d,
            });
        }
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(b)
    }

    /// Per-datum terms without gradients.
    pub fn evaluate_with_eps(&self, x: &TensorValue, eps: &TensorValue, beta: f64) -> Result<BatchTerms> {
        self.check_batch(x)?;
        let mut tape = Tape::new();
        let nodes = self.params.to_tape(&mut tape)?;
        let obj = objective_nodes(&mut tape, &nodes, self.config.likelihood, self.config.flow_length, x, eps, beta)?;
        Ok(BatchTerms {
            re: tape.value(obj.re).data().to_vec(),
            kl: tape.value(obj.kl).data().to_vec(),
            elbo: tape.value(obj.elbo).data().to_vec(),
            logdet: obj.logdet,
            beta,
        })
    }

    /// Batch mean of the bound with caller-supplied noise, and the gradient
    /// of `−mean ELBO` for every parameter.
    pub fn batch_objective_with_eps(&self, x: &TensorValue, eps: &TensorValue, beta: f64) -> Result<(ElboBreakdown, VaeParams)> {
        let b = self.check_batch(x)?;
        let mut tape = Tape::new();
        let nodes = self.params.to_tape(&mut tape)?;
        let obj = objective_nodes(&mut tape, &nodes, self.config.likelihood, self.config.flow_length, x, eps, beta)?;
        let total = tape.sum(obj.elbo)?;
        let loss = tape.scale(total, -1.0 / b as f64)?;
        let grads = tape.backward(loss)?;
        let terms = BatchTerms {
            re: tape.value(obj.re).data().to_vec(),
            kl: tape.value(obj.kl).data().to_vec(),
            elbo: Vec::new(),
            logdet: obj.logdet,
            beta,
        };
        Ok((terms.mean(), nodes.gradients(&tape, &grads)))
    }

    /// Batch mean of the bound with one fresh noise draw per datum.
    pub fn batch_objective(&self, x: &TensorValue, rng: &mut impl Rng, beta: f64) -> Result<(ElboBreakdown, VaeParams)> {
        let b = self.check_batch(x)?;
        let eps = self.draw_eps(b, rng);
        self.batch_objective_with_eps(x, &eps, beta)
    }

    /// Single-datum bound.
    pub fn elbo_single_sample(&self, x: &[f64], eps: &[f64], beta: f64) -> Result<ElboBreakdown> {
        let xs = TensorValue::matrix(1, x.len(), x.to_vec())?;
        let es = TensorValue::matrix(1, eps.len(), eps.to_vec())?;
        Ok(self.evaluate_with_eps(&xs, &es, beta)?.mean())
    }

    /// Posterior parameters, Householder vectors and last hidden layer for
    /// one datum.
    pub fn encode(&self, x: &[f64]) -> Result<EncodedDatum> {
        encode(x, &self.params.encoder, self.config.flow_length)
    }

    pub fn decode(&self, z: &[f64]) -> Result<LikelihoodParams> {
        decode(z, &self.params.decoder, self.config.likelihood)
    }
}

/// Plain outputs of the encoder for one datum.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDatum {
    pub posterior: DiagGaussianParams,
    /// `v₁ … v_T` (empty when `T = 0`).
    pub vectors: Vec<HouseholderVector>,
    pub hidden: Vec<f64>,
}

fn row_matrix(v: &[f64]) -> Result<TensorValue> {
    TensorValue::matrix(1, v.len(), v.to_vec())
}

fn constants(tape: &mut Tape, t: &TensorValue) -> Result<NodeId> {
    tape.constant(t.clone())
}

/// `(W h + b) ⊙ σ(V h + c)` for a single input vector.
pub fn gated_layer(h: &[f64], params: &GatedLayerParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let layer = GatedLayer {
        w: constants(&mut tape, &params.w)?,
        b: constants(&mut tape, &params.b)?,
        v: constants(&mut tape, &params.v)?,
        c: constants(&mut tape, &params.c)?,
    };
    if params.w.shape() != params.v.shape() || params.b.shape() != params.c.shape() {
        return Err(Error::ShapeMismatch {
            op: "gated-layer",
            left: params.w.shape().clone(),
            right: params.v.shape().clone(),
        });
    }
    let x = tape.constant(row_matrix(h)?)?;
    let out = gated_layer_node(&mut tape, x, &layer)?;
    Ok(tape.value(out).data().to_vec())
}

fn encoder_constants(tape: &mut Tape, params: &EncoderParams) -> Result<Encoder<NodeId>> {
    let wrapped = VaeParams {
        encoder: params.clone(),
        decoder: Decoder {
            layers: Vec::new(),
            head_mean: Linear {
                weight: TensorValue::scalar(0.0),
                bias: TensorValue::scalar(0.0),
            },
            log_var: None,
        },
    };
    Ok(wrapped.try_map(|t| tape.constant(t.clone()))?.encoder)
}

/// Encoder forward pass for one datum, including the flow vectors.
pub fn encode(x: &[f64], params: &EncoderParams, flow_length: usize) -> Result<EncodedDatum> {
    let mut tape = Tape::new();
    let enc = encoder_constants(&mut tape, params)?;
    let xs = tape.constant(row_matrix(x)?)?;
    let out = encode_nodes(&mut tape, xs, &enc)?;
    let vectors = match (flow_length, out.v1) {
        (0, _) => Vec::new(),
        (t, Some(v1)) => flow_vector_nodes(&mut tape, v1, &enc, t)?
            .into_iter()
            .map(|id| HouseholderVector::new(tape.value(id).data().to_vec()))
            .collect(),
        (t, None) => {
            return Err(Error::FlowLength {
                requested: t,
                configured: 0,
            })
        }
    };
    Ok(EncodedDatum {
        posterior: DiagGaussianParams::new(tape.value(out.mu).data().to_vec(), tape.value(out.log_var).data().to_vec())?,
        vectors,
        hidden: tape.value(out.h).data().to_vec(),
    })
}

/// `v₁ … v_T` from `v₁` through the encoder's chain maps.
pub fn flow_vectors(v1: &[f64], params: &EncoderParams, flow_length: usize) -> Result<Vec<HouseholderVector>> {
    let mut tape = Tape::new();
    let enc = encoder_constants(&mut tape, params)?;
    let v = tape.constant(row_matrix(v1)?)?;
    let ids = flow_vector_nodes(&mut tape, v, &enc, flow_length)?;
    Ok(ids
        .into_iter()
        .map(|id| HouseholderVector::new(tape.value(id).data().to_vec()))
        .collect())
}

/// Decoder forward pass for one latent vector.
pub fn decode(z: &[f64], params: &DecoderParams, kind: LikelihoodKind) -> Result<LikelihoodParams> {
    let mut tape = Tape::new();
    let dec = Decoder {
        layers: params
            .layers
            .iter()
            .map(|l| l.try_map(&mut |t: &TensorValue| tape.constant(t.clone())))
            .collect::<Result<_>>()?,
        head_mean: params.head_mean.try_map(&mut |t: &TensorValue| tape.constant(t.clone()))?,
        log_var: params.log_var.as_ref().map(|t| tape.constant(t.clone())).transpose()?,
    };
    let zs = tape.constant(row_matrix(z)?)?;
    let out = decode_nodes(&mut tape, zs, &dec)?;
    let mean = tape.value(out.mean).data().to_vec();
    match kind {
        LikelihoodKind::Bernoulli => Ok(LikelihoodParams::bernoulli(mean)),
        LikelihoodKind::BoundedGaussian => {
            let lv = out
                .log_var
                .ok_or_else(|| Error::Invalid("bounded-gaussian decoder has no log-variance".into()))?;
            LikelihoodParams::bounded_gaussian(mean, tape.value(lv).data().to_vec())
        }
    }
}
