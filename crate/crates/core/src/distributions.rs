//! Log-densities, the analytic Gaussian KL and reparameterized sampling.
//!
//! Every function here has two forms: a plain one over slices (used by
//! tests, oracles and diagnostics) and a batched one in [`tape`] that records
//! differentiable nodes. Batched forms take `B x M` row-major matrices and
//! return a length-`B` vector of per-datum values.

use crate::error::{Error, Result};

/// `½ ln 2π`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// Likelihood means are kept inside `[MEAN_EPS, 1 − MEAN_EPS]` so that
/// every log stays finite.
pub const MEAN_EPS: f64 = 1e-7;
pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 20.0;

fn same_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { what, expected, got })
    }
}

fn all_finite(what: &'static str, xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(index) => Err(Error::OutOfRange {
            what,
            index,
            value: xs[index],
            range: "the finite reals",
        }),
    }
}

/// Mean and log-variance of a diagonal Gaussian. Log-variances are clamped
/// into `[LOG_VAR_MIN, LOG_VAR_MAX]` on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussianParams {
    mu: Vec<f64>,
    log_var: Vec<f64>,
}

impl DiagGaussianParams {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        same_len("log_var", mu.len(), log_var.len())?;
        all_finite("mu", &mu)?;
        all_finite("log_var", &log_var)?;
        let log_var = log_var.into_iter().map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect();
        Ok(DiagGaussianParams { mu, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussianParams {
            mu: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|v| v.exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `z = μ + exp(½ log σ²) ⊙ ε`.
pub fn sample_reparam(params: &DiagGaussianParams, eps: &[f64]) -> Result<Vec<f64>> {
    same_len("eps", params.dim(), eps.len())?;
    Ok(params
        .mu
        .iter()
        .zip(&params.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

pub fn log_prob_diag_gaussian(z: &[f64], params: &DiagGaussianParams) -> Result<f64> {
    same_len("z", params.dim(), z.len())?;
    Ok(z
        .iter()
        .zip(&params.mu)
        .zip(&params.log_var)
        .map(|((z, m), lv)| -HALF_LN_2PI - 0.5 * lv - (z - m).powi(2) / (2.0 * lv.exp()))
        .sum())
}

/// Log-density under the `N(0, I)` prior.
pub fn log_prob_std_normal(z: &[f64]) -> Result<f64> {
    all_finite("z", z)?;
    let sq: f64 = z.iter().map(|x| x * x).sum();
    Ok(-HALF_LN_2PI * z.len() as f64 - 0.5 * sq)
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ (σ² + μ² − 1 − log σ²)`.
pub fn kl_diag_vs_std(params: &DiagGaussianParams) -> f64 {
    0.5 * params
        .mu
        .iter()
        .zip(&params.log_var)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LikelihoodKind {
    /// Binary pixels.
    Bernoulli,
    /// Continuous intensities in `[0, 1]`: Gaussian with sigmoid-bounded mean
    /// and a learned per-pixel log-variance.
    BoundedGaussian,
}

impl LikelihoodKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LikelihoodKind::Bernoulli => "bernoulli",
            LikelihoodKind::BoundedGaussian => "bounded-gaussian",
        }
    }
}

impl std::str::FromStr for LikelihoodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(LikelihoodKind::Bernoulli),
            "bounded-gaussian" | "gaussian" => Ok(LikelihoodKind::BoundedGaussian),
            other => Err(Error::Invalid(format!("unknown likelihood `{other}`"))),
        }
    }
}

/// Decoder output for one datum.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodParams {
    pub kind: LikelihoodKind,
    /// Clamped into `[MEAN_EPS, 1 − MEAN_EPS]`.
    pub mean: Vec<f64>,
    /// Present only for [`LikelihoodKind::BoundedGaussian`].
    pub log_var: Option<Vec<f64>>,
}

impl LikelihoodParams {
    pub fn bernoulli(mean: Vec<f64>) -> Self {
        LikelihoodParams {
            kind: LikelihoodKind::Bernoulli,
            mean: clamp_means(mean),
            log_var: None,
        }
    }

    pub fn bounded_gaussian(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        same_len("log_var", mean.len(), log_var.len())?;
        Ok(LikelihoodParams {
            kind: LikelihoodKind::BoundedGaussian,
            mean: clamp_means(mean),
            log_var: Some(log_var.into_iter().map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect()),
        })
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        match self.kind {
            LikelihoodKind::Bernoulli => bernoulli_log_prob(x, &self.mean),
            LikelihoodKind::BoundedGaussian => bounded_gaussian_log_prob(x, self),
        }
    }
}

fn clamp_means(mean: Vec<f64>) -> Vec<f64> {
    mean.into_iter().map(|m| m.clamp(MEAN_EPS, 1.0 - MEAN_EPS)).collect()
}

/// `Σ xᵢ ln pᵢ + (1 − xᵢ) ln(1 − pᵢ)` for binary `x`.
pub fn bernoulli_log_prob(x: &[f64], mean: &[f64]) -> Result<f64> {
    same_len("mean", x.len(), mean.len())?;
    let mut total = 0.0;
    for (index, (&xi, &p)) in x.iter().zip(mean).enumerate() {
        if xi != 0.0 && xi != 1.0 {
            return Err(Error::OutOfRange {
                what: "bernoulli target",
                index,
                value: xi,
                range: "{0, 1}",
            });
        }
        total += if xi == 1.0 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total)
}

/// Diagonal Gaussian log-density of intensities `x ∈ [0,1]ᴰ`. Positive values
/// are legitimate: this is a density, not a probability.
pub fn bounded_gaussian_log_prob(x: &[f64], params: &LikelihoodParams) -> Result<f64> {
    let log_var = match (&params.kind, &params.log_var) {
        (LikelihoodKind::BoundedGaussian, Some(lv)) => lv,
        _ => return Err(Error::Invalid("bounded-gaussian log-prob needs a log-variance".into())),
    };
    same_len("x", params.mean.len(), x.len())?;
    if let Some(index) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::OutOfRange {
            what: "gaussian target",
            index,
            value: x[index],
            range: "[0, 1]",
        });
    }
    Ok(x
        .iter()
        .zip(&params.mean)
        .zip(log_var)
        .map(|((x, m), lv)| -HALF_LN_2PI - 0.5 * lv - (x - m).powi(2) / (2.0 * lv.exp()))
        .sum())
}

/// Differentiable batched forms.
pub mod tape {
    use super::{HALF_LN_2PI, MEAN_EPS};
    use crate::autodiff::{NodeId, Tape};
    use crate::error::{Error, Result};
    use crate::tensor::TensorValue;

    fn cols(tape: &Tape, id: NodeId) -> usize {
        tape.value(id).shape().last()
    }

    /// `μ + exp(½ log σ²) ⊙ ε`, all `B x M`.
    pub fn sample_reparam(tape: &mut Tape, mu: NodeId, log_var: NodeId, eps: NodeId) -> Result<NodeId> {
        let half = tape.scale(log_var, 0.5)?;
        let sigma = tape.exp(half)?;
        let noise = tape.mul(sigma, eps)?;
        tape.add(mu, noise)
    }

    /// Per-row `ln N(z | μ, diag exp(log σ²))`.
    pub fn log_prob_diag_gaussian(tape: &mut Tape, z: NodeId, mu: NodeId, log_var: NodeId) -> Result<NodeId> {
        let m = cols(tape, z) as f64;
        let diff = tape.sub(z, mu)?;
        let sq = tape.square(diff)?;
        let neg_lv = tape.scale(log_var, -1.0)?;
        let inv_var = tape.exp(neg_lv)?;
        let mahalanobis = tape.mul(sq, inv_var)?;
        let inner = tape.add(mahalanobis, log_var)?;
        let rows = tape.row_sum(inner)?;
        let half = tape.scale(rows, -0.5)?;
        tape.add_scalar(half, -HALF_LN_2PI * m)
    }

    /// Per-row `ln N(z | 0, I)`.
    pub fn log_prob_std_normal(tape: &mut Tape, z: NodeId) -> Result<NodeId> {
        let m = cols(tape, z) as f64;
        let sq = tape.square(z)?;
        let rows = tape.row_sum(sq)?;
        let half = tape.scale(rows, -0.5)?;
        tape.add_scalar(half, -HALF_LN_2PI * m)
    }

    /// Per-row analytic `KL(N(μ, diag σ²) ‖ N(0, I))`.
    pub fn kl_diag_vs_std(tape: &mut Tape, mu: NodeId, log_var: NodeId) -> Result<NodeId> {
        let m = cols(tape, mu) as f64;
        let var = tape.exp(log_var)?;
        let mu2 = tape.square(mu)?;
        let a = tape.add(var, mu2)?;
        let b = tape.sub(a, log_var)?;
        let rows = tape.row_sum(b)?;
        let shifted = tape.add_scalar(rows, -m)?;
        tape.scale(shifted, 0.5)
    }

    /// Sigmoid of `logits`, clamped to `[MEAN_EPS, 1 − MEAN_EPS]`.
    pub fn bounded_mean(tape: &mut Tape, logits: NodeId) -> Result<NodeId> {
        let s = tape.sigmoid(logits)?;
        tape.clamp(s, MEAN_EPS, 1.0 - MEAN_EPS)
    }

    /// Per-row Bernoulli log-likelihood of the binary batch `x` (`B x D`).
    pub fn bernoulli_log_prob(tape: &mut Tape, x: &TensorValue, mean: NodeId) -> Result<NodeId> {
        if let Some(index) = x.data().iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::OutOfRange {
                what: "bernoulli target",
                index,
                value: x.data()[index],
                range: "{0, 1}",
            });
        }
        let ones = tape.constant(x.clone())?;
        let zeros = tape.constant(x.map(|v| 1.0 - v))?;
        let log_p = tape.ln(mean)?;
        let neg = tape.scale(mean, -1.0)?;
        let one_minus = tape.add_scalar(neg, 1.0)?;
        let log_q = tape.ln(one_minus)?;
        let a = tape.mul(ones, log_p)?;
        let b = tape.mul(zeros, log_q)?;
        let s = tape.add(a, b)?;
        tape.row_sum(s)
    }

    /// Per-row Gaussian log-density of `x` (`B x D`) at `mean` with the
    /// per-pixel log-variance vector `log_var` (length `D`) shared by all rows.
    pub fn bounded_gaussian_log_prob(tape: &mut Tape, x: &TensorValue, mean: NodeId, log_var: NodeId) -> Result<NodeId> {
        if let Some(index) = x.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange {
                what: "gaussian target",
                index,
                value: x.data()[index],
                range: "[0, 1]",
            });
        }
        let zeros = tape.constant(TensorValue::zeros(x.shape().clone()))?;
        let lv_rows = tape.add_bias(zeros, log_var)?;
        let xs = tape.constant(x.clone())?;
        log_prob_diag_gaussian(tape, xs, mean, lv_rows)
    }
}
