//! One-record reconstruction dispatch shared by `reconstruct` and the
//! benchmark subcommands.

use std::path::Path;

use qst_core::hilbert::{fidelity, DensityMatrix};
use qst_core::measurement::{normalize_for_net, HusimiGrid};
use qst_core::nn::{
    load_checkpoint, msnn_reconstruct_one, rfb_reconstruct_one, MsModel, OptimConfig, RfbModel,
};
use qst_core::recon::{gd_reconstruct, linear_inversion, mle_iterative, Parameterization};
use qst_core::states::CoefficientTable;

use crate::util::{CliError, CliResult, Method};

/// Hyperparameters for the classical reconstruction methods. Adam's betas
/// stay at their defaults; iteration budget, learning rate, epsilon, and
/// seed are the knobs the paper's experiments vary.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub iters: usize,
    pub lr: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub damping: f64,
    pub ridge: f64,
}

impl EngineConfig {
    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            learning_rate: self.lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: self.epsilon,
            iterations: self.iters,
            seed: self.seed,
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("iters", self.iters.to_string()),
            ("lr", self.lr.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("seed", self.seed.to_string()),
            ("damping", self.damping.to_string()),
            ("ridge", self.ridge.to_string()),
        ]
    }
}

/// Loaded network state for the neural methods. The measurement-supervised
/// model is mutable because its forward pass updates batch-norm statistics
/// in training mode; inference here never does, but the signature follows.
pub struct NeuralState {
    pub rfb: Option<(RfbModel, CoefficientTable)>,
    pub msnn: Option<MsModel>,
}

impl NeuralState {
    pub fn empty() -> Self {
        NeuralState { rfb: None, msnn: None }
    }

    /// Loads whichever checkpoints the requested methods need. A neural
    /// method without its checkpoint flag is a usage error; a checkpoint
    /// of the wrong kind surfaces as the core's mismatch error.
    pub fn load(
        methods: &[Method],
        rfb_path: Option<&Path>,
        msnn_path: Option<&Path>,
    ) -> CliResult<Self> {
        let mut state = NeuralState::empty();
        if methods.contains(&Method::Rfb) {
            let path = rfb_path.ok_or_else(|| {
                CliError::Usage("method rfb requires --checkpoint-rfb".into())
            })?;
            let model = load_checkpoint(path)?.into_rfb()?;
            state.rfb = Some((model, CoefficientTable::bundled()));
        }
        if methods.contains(&Method::Msnn) {
            let path = msnn_path.ok_or_else(|| {
                CliError::Usage("method msnn requires --checkpoint-msnn".into())
            })?;
            state.msnn = Some(load_checkpoint(path)?.into_msnn()?);
        }
        Ok(state)
    }
}

/// Outcome of one single-record reconstruction.
#[derive(Debug, Clone)]
pub struct RecordOutcome {
    pub fidelity: f64,
    /// Final objective value for the iterative methods; inference-only
    /// methods have none.
    pub loss: Option<f64>,
    pub iterations: usize,
    /// Class index predicted by the classifier head, when one ran.
    pub predicted_class: Option<usize>,
}

/// Reconstructs one record with a classical method. Callers may run this
/// from parallel workers; it takes no mutable state.
pub fn run_classical(
    method: Method,
    grid: &HusimiGrid,
    truth: &DensityMatrix,
    config: &EngineConfig,
) -> CliResult<RecordOutcome> {
    let dim = truth.dim();
    let result = match method {
        Method::Linear => linear_inversion(grid, dim, config.ridge, Some(truth))?,
        Method::Mle => mle_iterative(grid, dim, config.iters, config.damping, Some(truth))?,
        Method::GdCholesky => {
            gd_reconstruct(grid, dim, Parameterization::Cholesky, &config.optim(), Some(truth))?
        }
        Method::GdSplit => {
            gd_reconstruct(grid, dim, Parameterization::Split, &config.optim(), Some(truth))?
        }
        Method::Rfb | Method::Msnn => {
            return Err(CliError::Usage(format!(
                "method {} is not classical",
                method.name()
            )))
        }
    };
    Ok(RecordOutcome {
        fidelity: result.fidelity_vs_truth.expect("truth was supplied"),
        loss: Some(result.final_loss),
        iterations: result.iterations,
        predicted_class: None,
    })
}

/// Reconstructs one record with a neural method. Runs on the caller's
/// thread; the measurement-supervised path needs the model mutably.
pub fn run_neural(
    method: Method,
    grid: &HusimiGrid,
    truth: &DensityMatrix,
    label: usize,
    state: &mut NeuralState,
) -> CliResult<RecordOutcome> {
    let dim = truth.dim();
    let normalized = normalize_for_net(grid)?;
    match method {
        Method::Rfb => {
            let (model, table) = state
                .rfb
                .as_ref()
                .ok_or_else(|| CliError::Usage("rfb checkpoint not loaded".into()))?;
            let (class, rho) = rfb_reconstruct_one(model, normalized.values(), dim, table)?;
            Ok(RecordOutcome {
                fidelity: fidelity(&rho, truth)?,
                loss: None,
                iterations: 0,
                predicted_class: Some(class),
            })
        }
        Method::Msnn => {
            let model = state
                .msnn
                .as_mut()
                .ok_or_else(|| CliError::Usage("msnn checkpoint not loaded".into()))?;
            let rho = msnn_reconstruct_one(model, normalized.values(), label)?;
            Ok(RecordOutcome {
                fidelity: fidelity(&rho, truth)?,
                loss: None,
                iterations: 0,
                predicted_class: None,
            })
        }
        _ => Err(CliError::Usage(format!("method {} is not neural", method.name()))),
    }
}
