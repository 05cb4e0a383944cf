//! Adam, Glorot initialisation, KL warm-up and early stopping.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::VaeParams;
use crate::tensor::TensorValue;

/// Candidate learning rates tried by the probe run.
pub const LR_GRID: [f64; 3] = [1e-3, 3e-4, 1e-4];

/// Minimum gain in validation ELBO (nats) that counts as an improvement.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-4;

/// `fan_in x fan_out` matrix of draws from `U(−b, b)`, `b = √(6/(fan_in+fan_out))`.
pub fn glorot_init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<TensorValue> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidShape(format!("glorot_init needs positive fans, got {fan_in}x{fan_out}")));
    }
    let bound = glorot_bound(fan_in, fan_out);
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
    TensorValue::matrix(fan_in, fan_out, data)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// KL weight for a 1-based epoch: `min(1, epoch / warmup_epochs)`.
pub fn warmup_beta(epoch: usize, warmup_epochs: usize) -> f64 {
    if warmup_epochs == 0 {
        return 1.0;
    }
    (epoch as f64 / warmup_epochs as f64).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of one block in place; `step` is the 1-based
/// step count after incrementing.
pub fn adam_update(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], step: u64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..theta.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps_hat);
    }
}

/// Optimizer state for every block of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub config: AdamConfig,
    pub m: VaeParams,
    pub v: VaeParams,
}

impl AdamState {
    pub fn new(params: &VaeParams, config: AdamConfig) -> Self {
        AdamState {
            step: 0,
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One Adam step. Gradients are checked before anything is touched, so
    /// an error leaves parameters and state unchanged.
    pub fn step(&mut self, params: &mut VaeParams, grads: &VaeParams) -> Result<()> {
        let gs = grads.named();
        for ((name, g), p) in gs.iter().zip(params.tensors()) {
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam-step",
                    left: p.shape().clone(),
                    right: g.shape().clone(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        if gs.len() != params.tensors().len() {
            return Err(Error::LengthMismatch {
                what: "gradient blocks",
                expected: params.tensors().len(),
                got: gs.len(),
            });
        }
        self.step += 1;
        let (step, cfg) = (self.step, self.config);
        let blocks = params.tensors_mut().into_iter().zip(grads.tensors());
        for ((theta, g), (m, v)) in blocks.zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut())) {
            adam_update(theta.data_mut(), g.data(), m.data_mut(), v.data_mut(), step, &cfg);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Tracks the best validation ELBO and the epochs since it improved.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState<S> {
    pub best_validation_elbo: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub lookahead: usize,
    pub max_epochs: usize,
    pub best_checkpoint: Option<S>,
}

impl<S> EarlyStopState<S> {
    pub fn new(lookahead: usize, max_epochs: usize) -> Self {
        EarlyStopState {
            best_validation_elbo: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            lookahead,
            max_epochs,
            best_checkpoint: None,
        }
    }

    /// Records the validation ELBO of `epoch`; `snapshot` is called only
    /// when it improves on the best by at least [`IMPROVEMENT_THRESHOLD`].
    pub fn update(&mut self, validation_elbo: f64, epoch: usize, snapshot: impl FnOnce() -> S) -> Result<StopDecision> {
        if !validation_elbo.is_finite() {
            return Err(Error::NonFinite { op: "validation-elbo" });
        }
        if validation_elbo >= self.best_validation_elbo + IMPROVEMENT_THRESHOLD {
            self.best_validation_elbo = validation_elbo;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
            self.best_checkpoint = Some(snapshot());
        } else {
            self.epochs_since_improvement += 1;
        }
        if self.epochs_since_improvement >= self.lookahead || epoch >= self.max_epochs {
            Ok(StopDecision::Stop)
        } else {
            Ok(StopDecision::Continue)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::LikelihoodKind;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut theta = vec![0.3, -1.2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_update(&mut theta, &[0.0, 0.0], &mut m, &mut v, 1, &AdamConfig::default());
        assert_eq!(theta, vec![0.3, -1.2]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut theta = vec![0.0; 3];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        adam_update(&mut theta, &[5.0, -0.002, 1e3], &mut m, &mut v, 1, &cfg);
        for (t, s) in theta.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((t - s * 0.01).abs() < 1e-7, "{t}");
        }
    }

    #[test]
    fn adam_first_step_is_gradient_scale_free() {
        let cfg = AdamConfig::default();
        let g = [0.7, -0.05, 3.0];
        let run = |c: f64| {
            let mut theta = vec![1.0, 2.0, 3.0];
            let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
            let gs: Vec<f64> = g.iter().map(|x| x * c).collect();
            adam_update(&mut theta, &gs, &mut m, &mut v, 1, &cfg);
            theta
        };
        let base = run(1.0);
        for c in [0.5, 2.0, 40.0] {
            for (a, b) in run(c).iter().zip(&base) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adam_minimises_square() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut theta = vec![1.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        for t in 1..=100 {
            let g = [2.0 * theta[0]];
            adam_update(&mut theta, &g, &mut m, &mut v, t, &cfg);
        }
        assert!(theta[0].abs() < 0.05, "{}", theta[0]);
    }

    #[test]
    fn adam_state_rejects_non_finite_gradient_by_name() {
        let cfg = ModelConfig::new(4, 2, 3, 1, LikelihoodKind::Bernoulli);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = VaeParams::init(&cfg, &mut rng).unwrap();
        let before = params.clone();
        let mut grads = params.zeros_like();
        grads.decoder.head_mean.bias.data_mut()[1] = f64::NAN;
        let mut state = AdamState::new(&params, AdamConfig::default());
        match state.step(&mut params, &grads) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "decoder.mean.bias"),
            other => panic!("{other:?}"),
        }
        assert_eq!(params, before);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn adam_state_matches_blockwise_update() {
        let cfg = ModelConfig::new(3, 2, 2, 2, LikelihoodKind::BoundedGaussian);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = VaeParams::init(&cfg, &mut rng).unwrap();
        let grads = VaeParams::init(&cfg, &mut rng).unwrap();
        let mut state = AdamState::new(&params, AdamConfig::default());
        let expected: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .zip(grads.tensors())
            .map(|(p, g)| {
                let mut theta = p.data().to_vec();
                let n = theta.len();
                adam_update(&mut theta, g.data(), &mut vec![0.0; n], &mut vec![0.0; n], 1, &state.config);
                theta
            })
            .collect();
        state.step(&mut params, &grads).unwrap();
        for (p, e) in params.tensors().iter().zip(&expected) {
            assert_eq!(p.data(), e.as_slice());
        }
        assert!(state.v.tensors().iter().all(|t| t.data().iter().all(|&x| x >= 0.0)));
    }

    #[test]
    fn glorot_bound_and_variance() {
        assert_eq!(glorot_bound(3, 3), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (fi, fo) = (1000, 1000);
        let w = glorot_init(fi, fo, &mut rng).unwrap();
        let b = glorot_bound(fi, fo);
        assert!(w.data().iter().all(|x| x.abs() <= b));
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let var = w.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        // Variance of U(−b, b) is b²/3.
        let oracle = b * b / 3.0;
        assert!((var / oracle - 1.0).abs() < 0.02);
        assert!((oracle - 2.0 / (fi + fo) as f64).abs() < 1e-15);
    }

    #[test]
    fn glorot_is_deterministic() {
        let a = glorot_init(4, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = glorot_init(4, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn warmup_examples() {
        assert_eq!(warmup_beta(200, 200), 1.0);
        assert_eq!(warmup_beta(1, 200), 0.005);
        assert_eq!(warmup_beta(5000, 200), 1.0);
        let mut prev = 0.0;
        for e in 1..400 {
            let b = warmup_beta(e, 200);
            assert!(b >= prev && (0.0..=1.0).contains(&b));
            prev = b;
        }
    }

    #[test]
    fn constant_sequence_stops_at_101() {
        let mut s = EarlyStopState::new(100, 5000);
        let mut stopped = None;
        for epoch in 1..=5000 {
            if s.update(-90.0, epoch, || epoch).unwrap() == StopDecision::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(101));
        assert_eq!(s.best_checkpoint, Some(1));
    }

    #[test]
    fn improving_sequence_runs_to_max_epochs() {
        let mut s = EarlyStopState::new(100, 5000);
        for epoch in 1..5000 {
            assert_eq!(s.update(epoch as f64, epoch, || ()).unwrap(), StopDecision::Continue);
        }
        assert_eq!(s.update(5000.0, 5000, || ()).unwrap(), StopDecision::Stop);
    }

    #[test]
    fn late_improvement_resets_counter_and_keeps_best_snapshot() {
        let mut s = EarlyStopState::new(100, 5000);
        for epoch in 1..=149 {
            let v = if epoch <= 60 { epoch as f64 } else { 60.0 - 0.5 };
            s.update(v, epoch, || epoch).unwrap();
        }
        assert_eq!(s.epochs_since_improvement, 89);
        s.update(61.0, 150, || 150).unwrap();
        assert_eq!(s.epochs_since_improvement, 0);
        s.update(10.0, 151, || 151).unwrap();
        assert_eq!(s.best_checkpoint, Some(150));
        assert!(s.update(f64::NAN, 152, || 152).is_err());
    }
}
