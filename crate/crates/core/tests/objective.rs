use hfvae::autodiff::{finite_difference_gradient, Tape};
use hfvae::distributions::{kl_diag_vs_std, LikelihoodKind};
use hfvae::model::{encode_nodes, decode_nodes, ModelConfig, Vae, VaeParams};
use hfvae::TensorValue;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Replaces block `index` of `params` with `value`.
fn with_block(params: &VaeParams, index: usize, value: &TensorValue) -> VaeParams {
    let mut p = params.clone();
    *p.tensors_mut()[index] = value.clone();
    p
}

fn check_batch_gradients(kind: LikelihoodKind, flow_length: usize, seed: u64) {
    let cfg = ModelConfig::new(5, 3, 4, flow_length, kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vae = Vae::new(cfg, &mut rng).unwrap();
    let x = match kind {
        LikelihoodKind::Bernoulli => TensorValue::matrix(2, 5, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap(),
        LikelihoodKind::BoundedGaussian => TensorValue::matrix(2, 5, (0..10).map(|_| rng.gen::<f64>()).collect()).unwrap(),
    };
    let eps = vae.draw_eps(2, &mut rng);
    let (_, grads) = vae.batch_objective_with_eps(&x, &eps, 0.7).unwrap();

    let names: Vec<String> = vae.params.named().into_iter().map(|(n, _)| n).collect();
    for (i, block) in vae.params.tensors().into_iter().enumerate() {
        let fd = finite_difference_gradient(
            |theta| {
                let probe = Vae {
                    config: vae.config.clone(),
                    params: with_block(&vae.params, i, theta),
                };
                Ok(-probe.evaluate_with_eps(&x, &eps, 0.7)?.mean().elbo)
            },
            block,
            1e-5,
        )
        .unwrap();
        let analytic = grads.tensors()[i];
        let err = rel_err(analytic.data(), fd.data());
        assert!(err < 1e-4, "{kind:?} T={flow_length} block {}: rel err {err}", names[i]);
    }
}

#[test]
fn batch_gradients_match_finite_differences() {
    check_batch_gradients(LikelihoodKind::Bernoulli, 0, 1);
    check_batch_gradients(LikelihoodKind::Bernoulli, 3, 2);
    check_batch_gradients(LikelihoodKind::BoundedGaussian, 2, 3);
}

#[test]
fn encoder_and_decoder_gradients_match_finite_differences() {
    let cfg = ModelConfig::new(6, 3, 5, 1, LikelihoodKind::Bernoulli);
    let vae = Vae::new(cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let x = [0.3, 0.9, 0.1, 0.0, 1.0, 0.6];
    let z = [0.5, -1.2, 0.3];

    let mut tape = Tape::new();
    let nodes = vae.params.to_tape(&mut tape).unwrap();
    let xs = tape.constant(TensorValue::matrix(1, 6, x.to_vec()).unwrap()).unwrap();
    let enc = encode_nodes(&mut tape, xs, &nodes.encoder).unwrap();
    let sum_mu = tape.sum(enc.mu).unwrap();
    let g = tape.backward(sum_mu).unwrap();
    let analytic = g.get_or_zeros(&tape, nodes.encoder.layers[0].w);
    let fd = finite_difference_gradient(
        |w| {
            let mut p = vae.params.encoder.clone();
            p.layers[0].w = w.clone();
            Ok(hfvae::model::encode(&x, &p, 1)?.posterior.mu().iter().sum())
        },
        &vae.params.encoder.layers[0].w,
        1e-5,
    )
    .unwrap();
    assert!(rel_err(analytic.data(), fd.data()) < 1e-4);

    let mut tape = Tape::new();
    let nodes = vae.params.to_tape(&mut tape).unwrap();
    let zs = tape.constant(TensorValue::matrix(1, 3, z.to_vec()).unwrap()).unwrap();
    let dec = decode_nodes(&mut tape, zs, &nodes.decoder).unwrap();
    let sum_mean = tape.sum(dec.mean).unwrap();
    let g = tape.backward(sum_mean).unwrap();
    let analytic = g.get_or_zeros(&tape, nodes.decoder.layers[0].w);
    let fd = finite_difference_gradient(
        |w| {
            let mut p = vae.params.decoder.clone();
            p.layers[0].w = w.clone();
            Ok(hfvae::model::decode(&z, &p, LikelihoodKind::Bernoulli)?.mean.iter().sum())
        },
        &vae.params.decoder.layers[0].w,
        1e-5,
    )
    .unwrap();
    assert!(rel_err(analytic.data(), fd.data()) < 1e-4);
}

fn repeat_rows(x: &[f64], n: usize) -> TensorValue {
    TensorValue::matrix(n, x.len(), x.repeat(n)).unwrap()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn single_sample_kl_is_unbiased() {
    let cfg = ModelConfig::new(6, 3, 5, 0, LikelihoodKind::Bernoulli);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut vae = Vae::new(cfg, &mut rng).unwrap();
    // Push the posterior away from the prior so the KL is not trivially small.
    vae.params.encoder.head_mu.bias = TensorValue::from_slice(&[0.8, -0.5, 0.3]);
    vae.params.encoder.head_log_var.bias = TensorValue::from_slice(&[-1.0, 0.4, -0.3]);
    let x = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
    let analytic = kl_diag_vs_std(&vae.encode(&x).unwrap().posterior);

    let n = 100_000;
    let eps = vae.draw_eps(n, &mut rng);
    let terms = vae.evaluate_with_eps(&repeat_rows(&x, n), &eps, 1.0).unwrap();
    let (mean, se) = mean_and_se(&terms.kl);
    assert!((mean - analytic).abs() < 3.0 * se, "mc {mean} ± {se} vs {analytic}");
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[test]
fn elbo_is_below_importance_sampled_marginal() {
    for (t, seed) in [(0, 31), (2, 32)] {
        let cfg = ModelConfig::new(4, 2, 3, t, LikelihoodKind::Bernoulli);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vae = Vae::new(cfg, &mut rng).unwrap();
        let x = [1.0, 0.0, 1.0, 1.0];

        // With β = 1 the per-sample ELBO is exactly the importance log-weight
        // ln p(x|z) + ln p(z) − ln q(z|x): reflections preserve volume, so the
        // density of z⁽ᵀ⁾ equals that of z⁽⁰⁾.
        let chunk = 100_000;
        let mut log_w = Vec::with_capacity(1_000_000);
        for _ in 0..10 {
            let eps = vae.draw_eps(chunk, &mut rng);
            log_w.extend(vae.evaluate_with_eps(&repeat_rows(&x, chunk), &eps, 1.0).unwrap().elbo);
        }
        let k = log_w.len() as f64;
        let log_px = log_sum_exp(&log_w) - k.ln();
        let w: Vec<f64> = log_w.iter().map(|l| (l - log_px).exp()).collect();
        let (_, w_se) = mean_and_se(&w);
        // Delta method: se(ln p̂) ≈ se(ŵ) / mean(ŵ), and mean(ŵ) = 1 here.
        let log_px_se = w_se;

        let eps = vae.draw_eps(chunk, &mut rng);
        let elbo = vae.evaluate_with_eps(&repeat_rows(&x, chunk), &eps, 1.0).unwrap().elbo;
        let (elbo_mean, elbo_se) = mean_and_se(&elbo);
        let tol = 3.0 * (log_px_se.powi(2) + elbo_se.powi(2)).sqrt();
        assert!(elbo_mean <= log_px + tol, "T={t}: elbo {elbo_mean} vs ln p(x) {log_px} (tol {tol})");
        assert!(log_px < 0.0);
    }
}
