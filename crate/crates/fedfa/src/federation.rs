//! Server loop: client selection, local-training orchestration, sample-size
//! and information-quantity weighted aggregation, and server-side momentum
//! with round gating.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FederatedDataset;
use crate::error::{FedError, Result};
use crate::metrics::RoundRecord;
use crate::model::{accuracy, accuracy_over, mean_loss_over, ModelParams};
use crate::optim::{local_train, LocalTrainConfig};
use crate::rng::{derive_seed, derive_seed2, stream};

/// What one client sends back after a round of local training.
#[derive(Debug, Clone)]
pub struct ClientReport {
    pub client_id: usize,
    pub params: ModelParams,
    /// Training accuracy of the returned model on the client's train split.
    pub train_acc: f64,
    /// Cumulative number of rounds this client has participated in,
    /// including the current one.
    pub participation: u64,
    /// Train-split sample count.
    pub n_samples: usize,
    /// Mean loss of the client's final local epoch.
    pub final_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    FedAvg,
    FedProx,
    FedFa,
}

impl std::fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlgorithmKind::FedAvg => write!(f, "fedavg"),
            AlgorithmKind::FedProx => write!(f, "fedprox"),
            AlgorithmKind::FedFa => write!(f, "fedfa"),
        }
    }
}

/// Server-side aggregation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregationPolicy {
    pub kind: AlgorithmKind,
    /// Weight of the accuracy information term.
    pub alpha: f64,
    /// Weight of the participation-frequency information term.
    pub beta: f64,
    /// Server momentum factor, `[0, 1)`.
    pub gamma_s: f64,
    /// Server correction step size.
    pub eta_s: f64,
    /// Apply the momentum correction every `round_b`-th round.
    pub round_b: usize,
    /// Small constant guarding `log2` of a zero argument.
    pub c_eps: f64,
    pub weighting_enabled: bool,
    pub server_momentum_enabled: bool,
}

impl AggregationPolicy {
    pub fn fedavg() -> Self {
        AggregationPolicy {
            kind: AlgorithmKind::FedAvg,
            alpha: 0.5,
            beta: 0.5,
            gamma_s: 0.0,
            eta_s: 1.0,
            round_b: 1,
            c_eps: 1e-10,
            weighting_enabled: false,
            server_momentum_enabled: false,
        }
    }

    pub fn fedprox() -> Self {
        AggregationPolicy {
            kind: AlgorithmKind::FedProx,
            ..Self::fedavg()
        }
    }

    pub fn fedfa(alpha: f64, beta: f64, gamma_s: f64, eta_s: f64, round_b: usize) -> Self {
        AggregationPolicy {
            kind: AlgorithmKind::FedFa,
            alpha,
            beta,
            gamma_s,
            eta_s,
            round_b,
            c_eps: 1e-10,
            weighting_enabled: true,
            server_momentum_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weighting_enabled {
            if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
                return Err(FedError::InvalidParameter(format!(
                    "alpha and beta must be in [0, 1], got ({}, {})",
                    self.alpha, self.beta
                )));
            }
            if (self.alpha + self.beta - 1.0).abs() > 1e-9 {
                return Err(FedError::InvalidParameter(format!(
                    "alpha + beta must equal 1, got {} + {}",
                    self.alpha, self.beta
                )));
            }
        }
        if !(0.0..1.0).contains(&self.gamma_s) {
            return Err(FedError::InvalidParameter(format!(
                "gamma_s must be in [0, 1), got {}",
                self.gamma_s
            )));
        }
        if !(self.eta_s > 0.0) || !self.eta_s.is_finite() {
            return Err(FedError::InvalidParameter(format!(
                "eta_s must be > 0, got {}",
                self.eta_s
            )));
        }
        if self.round_b < 1 {
            return Err(FedError::InvalidParameter("round_b must be >= 1".into()));
        }
        if !(self.c_eps > 0.0) {
            return Err(FedError::InvalidParameter(format!(
                "c_eps must be > 0, got {}",
                self.c_eps
            )));
        }
        Ok(())
    }
}

/// Mutable server-side state across rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    /// Current global parameters `w^t`.
    pub params: ModelParams,
    /// Server momentum buffer, zero at round 0.
    pub momentum: ModelParams,
    /// Round counter `t`.
    pub round: usize,
    /// Per-client cumulative participation counts.
    pub participation: Vec<u64>,
    /// Client selection stream.
    pub rng: ChaCha8Rng,
}

impl ServerState {
    pub fn new(dim: usize, classes: usize, n_clients: usize, selection_seed: u64) -> Self {
        ServerState {
            params: ModelParams::zeros(dim, classes),
            momentum: ModelParams::zeros(dim, classes),
            round: 0,
            participation: vec![0; n_clients],
            rng: stream(selection_seed, "selection"),
        }
    }
}

/// Uniform selection probabilities over `n` clients.
pub fn uniform_probs(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Samples `k` distinct indices without replacement, proportionally to
/// `probs`, renormalizing after each draw.
pub fn weighted_sample_distinct(
    rng: &mut ChaCha8Rng,
    k: usize,
    probs: &[f64],
) -> Result<Vec<usize>> {
    let n = probs.len();
    if k < 1 || k > n {
        return Err(FedError::InvalidClientCount(format!(
            "k = {k} must be in [1, {n}]"
        )));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(FedError::InvalidProbability(
            "probabilities must be finite and non-negative".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(FedError::InvalidProbability(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    let mut chosen = vec![false; n];
    let mut remaining = total;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        if remaining <= 0.0 {
            return Err(FedError::InvalidProbability(
                "remaining probability mass exhausted before k draws".into(),
            ));
        }
        let target = rng.gen::<f64>() * remaining;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &p) in probs.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            acc += p;
            if target < acc {
                pick = Some(i);
                break;
            }
        }
        // Floating-point slack: fall back to the last eligible index.
        let pick = match pick {
            Some(i) => i,
            None => match (0..n).rev().find(|&i| !chosen[i] && probs[i] > 0.0) {
                Some(i) => i,
                None => {
                    return Err(FedError::InvalidProbability(
                        "no eligible client with positive probability left".into(),
                    ))
                }
            },
        };
        chosen[pick] = true;
        remaining -= probs[pick];
        out.push(pick);
    }
    out.sort_unstable();
    Ok(out)
}

/// Selects `k` distinct clients using the server's RNG stream.
pub fn select_clients(state: &mut ServerState, k: usize, probs: &[f64]) -> Result<Vec<usize>> {
    weighted_sample_distinct(&mut state.rng, k, probs)
}

/// Sample-size weighted aggregation: `w = sum_k (n_k / n) w_k`, accumulated
/// in client-id order so the result is independent of report ordering.
pub fn aggregate_sample_size(reports: &[ClientReport]) -> Result<ModelParams> {
    if reports.is_empty() {
        return Err(FedError::Empty("aggregate_sample_size reports".into()));
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by_key(|&i| reports[i].client_id);
    let total: usize = reports.iter().map(|r| r.n_samples).sum();
    if total == 0 {
        return Err(FedError::InvalidParameter(
            "total sample count is zero".into(),
        ));
    }
    let first = &reports[order[0]].params;
    let mut agg = ModelParams::zeros(first.dim(), first.classes());
    for &i in &order {
        let r = &reports[i];
        agg.add_scaled(&r.params, r.n_samples as f64 / total as f64)?;
    }
    Ok(agg)
}

/// Information quantity of a normalized training accuracy: low accuracy means
/// the client still has much to learn, so its information is high.
pub fn acc_information(normalized_acc: f64, c_eps: f64) -> f64 {
    if normalized_acc != 0.0 {
        -normalized_acc.log2()
    } else {
        -(normalized_acc + c_eps).log2()
    }
}

/// Information quantity of a normalized participation frequency: frequent
/// participants carry more information about the aggregate trajectory.
pub fn freq_information(normalized_freq: f64, c_eps: f64) -> f64 {
    let complement = 1.0 - normalized_freq;
    if complement != 0.0 {
        -complement.log2()
    } else {
        -(complement + c_eps).log2()
    }
}

/// Information-quantity weights over the round's participants.
///
/// Accuracies and participation counts are normalized over the selected
/// clients, mapped through `-log2`, renormalized to sum one, and blended as
/// `alpha * acc_inf + beta * freq_inf`. Returns weights aligned with the
/// input order; all sums run in client-id order so the result is invariant
/// to report permutation.
pub fn info_weights(reports: &[ClientReport], policy: &AggregationPolicy) -> Result<Vec<f64>> {
    if !policy.weighting_enabled {
        return Err(FedError::InvalidParameter(
            "info_weights called with weighting disabled".into(),
        ));
    }
    policy.validate()?;
    let k = reports.len();
    if k == 0 {
        return Err(FedError::Empty("info_weights reports".into()));
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&i| reports[i].client_id);

    let acc_sum: f64 = order.iter().map(|&i| reports[i].train_acc).sum();
    let freq_sum: u64 = order.iter().map(|&i| reports[i].participation).sum();
    if freq_sum == 0 {
        return Err(FedError::InvalidParameter(
            "participation counts are all zero".into(),
        ));
    }

    let mut acc_inf = vec![0.0; k];
    let mut freq_inf = vec![0.0; k];
    for &i in &order {
        acc_inf[i] = if acc_sum == 0.0 {
            // Uniform fallback when no client reports any accuracy.
            1.0 / k as f64
        } else {
            acc_information(reports[i].train_acc / acc_sum, policy.c_eps)
        };
        freq_inf[i] = freq_information(
            reports[i].participation as f64 / freq_sum as f64,
            policy.c_eps,
        );
    }
    if acc_sum != 0.0 {
        let inf_sum: f64 = order.iter().map(|&i| acc_inf[i]).sum();
        if inf_sum > 0.0 {
            for v in &mut acc_inf {
                *v /= inf_sum;
            }
        } else {
            acc_inf.fill(1.0 / k as f64);
        }
    }
    let inf_sum: f64 = order.iter().map(|&i| freq_inf[i]).sum();
    if inf_sum > 0.0 {
        for v in &mut freq_inf {
            *v /= inf_sum;
        }
    } else {
        freq_inf.fill(1.0 / k as f64);
    }

    Ok((0..k)
        .map(|i| policy.alpha * acc_inf[i] + policy.beta * freq_inf[i])
        .collect())
}

/// Server momentum update with round gating.
///
/// The momentum buffer tracks `m = gamma_s * m + (1 - gamma_s) * (w_agg - w^t)`
/// every round, but the correction `w_agg - eta_s * m` is applied only when
/// `t + 1` is a multiple of `round_b`. Returns the (possibly corrected)
/// aggregate and whether the correction fired.
pub fn server_momentum_step(
    state: &mut ServerState,
    w_agg: ModelParams,
    policy: &AggregationPolicy,
) -> Result<(ModelParams, bool)> {
    let delta = w_agg.sub(&state.params)?;
    state.momentum.scale(policy.gamma_s);
    state.momentum.add_scaled(&delta, 1.0 - policy.gamma_s)?;
    if (state.round + 1) % policy.round_b == 0 {
        let mut corrected = w_agg;
        corrected.add_scaled(&state.momentum, -policy.eta_s)?;
        Ok((corrected, true))
    } else {
        Ok((w_agg, false))
    }
}

/// Full experiment output: the per-round history plus the final global
/// model's accuracy on every device's test split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub final_per_device_test_acc: Vec<f64>,
}

fn train_one_client(
    id: usize,
    state_params: &ModelParams,
    dataset: &FederatedDataset,
    train_cfg: &LocalTrainConfig,
    participation_before: u64,
    shuffle_seed: u64,
) -> Result<ClientReport> {
    let wrap = |source: FedError| FedError::Client {
        id,
        source: Box::new(source),
    };
    let shard = &dataset.shards[id];
    let cfg = LocalTrainConfig {
        shuffle_seed,
        ..train_cfg.clone()
    };
    let (params, final_loss) = local_train(state_params, &shard.train, &cfg).map_err(wrap)?;
    let train_acc = accuracy(&params, &shard.train).map_err(wrap)?;
    Ok(ClientReport {
        client_id: id,
        params,
        train_acc,
        participation: participation_before + 1,
        n_samples: shard.train.len(),
        final_loss,
    })
}

/// Runs one federated round: select clients, train them from the current
/// global model, aggregate (information-quantity weights for FedFa when
/// enabled, sample-size weights otherwise), then apply server momentum.
pub fn run_round(
    state: &mut ServerState,
    dataset: &FederatedDataset,
    policy: &AggregationPolicy,
    train_cfg: &LocalTrainConfig,
    clients_per_round: usize,
    shuffle_base: u64,
    eval_test: bool,
) -> Result<RoundRecord> {
    policy.validate()?;
    train_cfg.validate()?;
    let n = dataset.n_devices();
    if state.participation.len() != n {
        return Err(FedError::InvalidParameter(format!(
            "server tracks {} clients but dataset has {n}",
            state.participation.len()
        )));
    }
    let probs = uniform_probs(n);
    let selected = select_clients(state, clients_per_round, &probs)?;
    let round = state.round;

    let jobs: Vec<(usize, u64, u64)> = selected
        .iter()
        .map(|&id| {
            (
                id,
                state.participation[id],
                derive_seed2(shuffle_base, "shuffle", round as u64, id as u64),
            )
        })
        .collect();

    #[cfg(feature = "parallel")]
    let results: Vec<Result<ClientReport>> = jobs
        .par_iter()
        .map(|&(id, before, seed)| {
            train_one_client(id, &state.params, dataset, train_cfg, before, seed)
        })
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<ClientReport>> = jobs
        .iter()
        .map(|&(id, before, seed)| {
            train_one_client(id, &state.params, dataset, train_cfg, before, seed)
        })
        .collect();

    let mut reports = Vec::with_capacity(results.len());
    for result in results {
        reports.push(result?);
    }
    for report in &reports {
        state.participation[report.client_id] = report.participation;
    }

    let use_info_weights = policy.kind == AlgorithmKind::FedFa && policy.weighting_enabled;
    let (w_agg, applied_weights) = if use_info_weights {
        let weights = info_weights(&reports, policy)?;
        let mut order: Vec<usize> = (0..reports.len()).collect();
        order.sort_by_key(|&i| reports[i].client_id);
        let mut agg = ModelParams::zeros(state.params.dim(), state.params.classes());
        for &i in &order {
            agg.add_scaled(&reports[i].params, weights[i])?;
        }
        (agg, Some(weights))
    } else {
        (aggregate_sample_size(&reports)?, None)
    };

    let (new_params, corrected) = if policy.server_momentum_enabled {
        server_momentum_step(state, w_agg, policy)?
    } else {
        (w_agg, false)
    };
    if !new_params.is_finite() {
        return Err(FedError::NonFinite(format!(
            "aggregated parameters diverged at round {round}"
        )));
    }
    state.params = new_params;
    state.round += 1;

    let mean_client_loss =
        reports.iter().map(|r| r.final_loss).sum::<f64>() / reports.len() as f64;
    let global_train_loss = mean_loss_over(&state.params, dataset.all_train())?;
    let test_accuracy = if eval_test {
        Some(accuracy_over(&state.params, dataset.all_test())?)
    } else {
        None
    };

    Ok(RoundRecord {
        round,
        global_train_loss,
        mean_client_loss,
        test_accuracy,
        selected,
        weights: applied_weights,
        momentum_corrected: corrected,
    })
}

/// Runs `rounds` federated rounds from a zero-initialized global model and
/// returns the history plus the final per-device test accuracies. All
/// randomness derives from `root_seed` via labeled streams.
pub fn run_experiment(
    dataset: &FederatedDataset,
    policy: &AggregationPolicy,
    train_cfg: &LocalTrainConfig,
    clients_per_round: usize,
    rounds: usize,
    eval_every: usize,
    root_seed: u64,
) -> Result<ExperimentResult> {
    if rounds < 1 {
        return Err(FedError::InvalidParameter("rounds must be >= 1".into()));
    }
    if eval_every < 1 {
        return Err(FedError::InvalidParameter("eval_every must be >= 1".into()));
    }
    let mut state = ServerState::new(
        dataset.dim,
        dataset.classes,
        dataset.n_devices(),
        derive_seed(root_seed, "selection"),
    );
    let shuffle_base = derive_seed(root_seed, "shuffle");
    let mut records = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let eval = (t + 1) % eval_every == 0 || t + 1 == rounds;
        records.push(run_round(
            &mut state,
            dataset,
            policy,
            train_cfg,
            clients_per_round,
            shuffle_base,
            eval,
        )?);
    }
    let final_per_device_test_acc = dataset
        .shards
        .iter()
        .map(|shard| accuracy(&state.params, &shard.test))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ExperimentResult {
        records,
        final_per_device_test_acc,
    })
}
