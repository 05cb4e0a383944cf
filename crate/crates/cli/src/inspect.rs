//! Posterior covariance implied by a trained flow for one input.

use std::path::Path;

use hfvae::data::Split;
use hfvae::flows::oracle::{covariance_transport_check, symmetric_eigenvalues};
use hfvae::model::Vae;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::error::{CliError, Result};
use crate::train::load_datasets;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowReport {
    pub split: String,
    pub index: usize,
    pub mu: Vec<f64>,
    /// Diagonal of the base posterior covariance.
    pub variance: Vec<f64>,
    /// `v₁ … v_T`.
    pub vectors: Vec<Vec<f64>>,
    /// `U diag(σ²) Uᵀ` with `U = H_T ⋯ H_1`, row by row.
    pub covariance: Vec<Vec<f64>>,
    /// Eigenvalues of `covariance`, ascending.
    pub eigenvalues: Vec<f64>,
}

/// Flow report for a single input vector.
pub fn inspect_input(vae: &Vae, x: &[f64]) -> Result<FlowReport> {
    if vae.config.flow_length == 0 {
        return Err(CliError::Usage(
            "this checkpoint has flow length 0: the posterior is diagonal and there are no Householder vectors to inspect".into(),
        ));
    }
    let enc = vae.encode(x)?;
    let variance = enc.posterior.variance();
    let cov = covariance_transport_check(&variance, &enc.vectors);
    Ok(FlowReport {
        split: String::new(),
        index: 0,
        mu: enc.posterior.mu().to_vec(),
        variance,
        vectors: enc.vectors.iter().map(|v| v.as_slice().to_vec()).collect(),
        covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        eigenvalues: symmetric_eigenvalues(&cov),
    })
}

/// Flow report for item `index` of a split, scored on the same fixed inputs
/// as evaluation.
pub fn cmd_inspect_flow(checkpoint: &Path, split: Split, index: usize) -> Result<FlowReport> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.config.flow_length == 0 {
        return inspect_input(
            &Vae {
                config: ck.model_config(),
                params: ck.best_params().clone(),
            },
            &[],
        );
    }
    let data = load_datasets(&ck.config)?;
    let inputs = data.eval_inputs(split);
    let n = data.get(split).len();
    if index >= n {
        return Err(CliError::Usage(format!("index {index} is out of range for the {split} split ({n} items)")));
    }
    let vae = Vae {
        config: ck.model_config(),
        params: ck.best_params().clone(),
    };
    let mut report = inspect_input(&vae, inputs.row(index))?;
    report.split = split.as_str().to_string();
    report.index = index;
    Ok(report)
}
