//! Local client training: mini-batch gradient descent with client-side
//! momentum (`m = gamma * m + lr * g`, `w = w - m`) and an optional proximal
//! term anchored at the round's starting parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{FedError, Result};
use crate::model::{loss_and_grad_over, ModelParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Client momentum factor, `[0, 1)`. Zero disables momentum.
    pub momentum: f64,
    /// Proximal coefficient; zero disables the penalty.
    pub prox_mu: f64,
    pub shuffle_seed: u64,
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(FedError::InvalidParameter("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(FedError::InvalidParameter("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(FedError::InvalidParameter(format!(
                "lr must be > 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(FedError::InvalidParameter(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.prox_mu < 0.0 || !self.prox_mu.is_finite() {
            return Err(FedError::InvalidParameter(format!(
                "prox_mu must be >= 0, got {}",
                self.prox_mu
            )));
        }
        Ok(())
    }
}

/// Momentum buffer with the same shape as the parameters.
#[derive(Debug, Clone)]
pub struct MomentumState {
    m: ModelParams,
}

impl MomentumState {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        MomentumState {
            m: ModelParams::zeros(dim, classes),
        }
    }

    pub fn buffer(&self) -> &ModelParams {
        &self.m
    }

    /// One momentum step: `m = gamma * m + lr * g`, then `params -= m`.
    pub fn apply_step(
        &mut self,
        params: &mut ModelParams,
        grad: &ModelParams,
        gamma: f64,
        lr: f64,
    ) -> Result<()> {
        self.m.check_same_shape(grad)?;
        params.check_same_shape(grad)?;
        let m = self.m.as_mut_slice();
        let p = params.as_mut_slice();
        for (i, g) in grad.as_slice().iter().enumerate() {
            m[i] = gamma * m[i] + lr * g;
            p[i] -= m[i];
        }
        Ok(())
    }
}

/// Trains `start` on one client's shard for `cfg.epochs` epochs of seeded,
/// shuffled mini-batches. The momentum buffer starts at zero for every call;
/// no optimizer state survives between rounds. Returns the trained parameters
/// and the mean loss observed over the final epoch.
pub fn local_train(
    start: &ModelParams,
    shard_train: &[Example],
    cfg: &LocalTrainConfig,
) -> Result<(ModelParams, f64)> {
    cfg.validate()?;
    if shard_train.is_empty() {
        return Err(FedError::Empty("local_train shard".into()));
    }
    let n = shard_train.len();
    let anchor = if cfg.prox_mu > 0.0 {
        Some(start.clone())
    } else {
        None
    };
    let mut params = start.clone();
    let mut momentum = MomentumState::zeros(start.dim(), start.classes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_epoch_loss = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let eval = loss_and_grad_over(
                &params,
                batch.iter().map(|&i| &shard_train[i]),
                cfg.prox_mu,
                anchor.as_ref(),
            )?;
            if !eval.loss.is_finite() {
                return Err(FedError::NonFinite(format!(
                    "loss diverged at epoch {epoch}, batch {batch_idx} (loss = {})",
                    eval.loss
                )));
            }
            epoch_loss_sum += eval.loss * batch.len() as f64;
            momentum.apply_step(&mut params, &eval.grad, cfg.momentum, cfg.lr)?;
            if !params.is_finite() {
                return Err(FedError::NonFinite(format!(
                    "parameters diverged at epoch {epoch}, batch {batch_idx}"
                )));
            }
        }
        last_epoch_loss = epoch_loss_sum / n as f64;
    }
    Ok((params, last_epoch_loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_shard() -> Vec<Example> {
        // Separable two-class problem in two dimensions: label is the sign
        // of the first coordinate.
        vec![
            Example { features: vec![1.0, 0.3], label: 1 },
            Example { features: vec![2.0, -0.4], label: 1 },
            Example { features: vec![0.7, 0.9], label: 1 },
            Example { features: vec![-1.0, 0.2], label: 0 },
            Example { features: vec![-2.0, -0.3], label: 0 },
            Example { features: vec![-0.6, 0.8], label: 0 },
        ]
    }

    fn base_cfg() -> LocalTrainConfig {
        LocalTrainConfig {
            epochs: 1,
            batch_size: 6,
            lr: 0.1,
            momentum: 0.0,
            prox_mu: 0.0,
            shuffle_seed: 17,
        }
    }

    #[test]
    fn full_batch_without_momentum_is_one_gradient_step() {
        let shard = toy_shard();
        let start = ModelParams::zeros(2, 2);
        let cfg = base_cfg();
        let (trained, _) = local_train(&start, &shard, &cfg).unwrap();
        // The full batch is still visited in shuffled order, so replay the
        // shuffle to accumulate the gradient in the same order.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
        let mut order: Vec<usize> = (0..shard.len()).collect();
        order.shuffle(&mut rng);
        let g = loss_and_grad_over(&start, order.iter().map(|&i| &shard[i]), 0.0, None)
            .unwrap()
            .grad;
        for i in 0..start.len() {
            let expected = start.as_slice()[i] - cfg.lr * g.as_slice()[i];
            assert_eq!(trained.as_slice()[i], expected, "coordinate {i}");
        }
    }

    #[test]
    fn momentum_follows_geometric_series_for_constant_gradient() {
        // Feed the same gradient k times; the buffer must match the closed
        // form lr * g * (1 - gamma^k) / (1 - gamma).
        let gamma = 0.9;
        let lr = 0.05;
        let mut grad = ModelParams::zeros(2, 2);
        grad.as_mut_slice().copy_from_slice(&[1.0, -2.0, 0.5, 3.0, -1.5, 0.25]);
        let mut params = ModelParams::zeros(2, 2);
        let mut momentum = MomentumState::zeros(2, 2);
        // Independent replay accumulators.
        let mut replay_m = vec![0.0; 6];
        let mut replay_p = vec![0.0; 6];
        for k in 1..=12 {
            momentum.apply_step(&mut params, &grad, gamma, lr).unwrap();
            for i in 0..6 {
                replay_m[i] = gamma * replay_m[i] + lr * grad.as_slice()[i];
                replay_p[i] -= replay_m[i];
            }
            let closed_factor = lr * (1.0 - gamma.powi(k)) / (1.0 - gamma);
            for i in 0..6 {
                let closed = closed_factor * grad.as_slice()[i];
                assert!(
                    (momentum.buffer().as_slice()[i] - closed).abs() <= 1e-12,
                    "step {k} coord {i}"
                );
                assert_eq!(momentum.buffer().as_slice()[i], replay_m[i]);
                assert_eq!(params.as_slice()[i], replay_p[i]);
            }
        }
    }

    #[test]
    fn reduces_to_plain_sgd_when_momentum_and_prox_are_off() {
        let shard = toy_shard();
        let start = ModelParams::zeros(2, 2);
        let cfg = LocalTrainConfig {
            epochs: 3,
            batch_size: 2,
            momentum: 0.0,
            prox_mu: 0.0,
            ..base_cfg()
        };
        let (trained, last_loss) = local_train(&start, &shard, &cfg).unwrap();

        // Reference: plain mini-batch SGD over the same seeded shuffles.
        let mut params = start.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
        let mut order: Vec<usize> = (0..shard.len()).collect();
        let mut ref_last = 0.0;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let eval = loss_and_grad_over(
                    &params,
                    batch.iter().map(|&i| &shard[i]),
                    0.0,
                    None,
                )
                .unwrap();
                loss_sum += eval.loss * batch.len() as f64;
                for (p, g) in params.as_mut_slice().iter_mut().zip(eval.grad.as_slice()) {
                    *p -= cfg.lr * g;
                }
            }
            ref_last = loss_sum / shard.len() as f64;
        }
        assert_eq!(trained.as_slice(), params.as_slice());
        assert_eq!(last_loss, ref_last);
    }

    #[test]
    fn momentum_recurrence_replays_exactly() {
        let shard = toy_shard();
        let start = ModelParams::zeros(2, 2);
        let cfg = LocalTrainConfig {
            epochs: 2,
            batch_size: 2,
            momentum: 0.9,
            ..base_cfg()
        };
        let (trained, _) = local_train(&start, &shard, &cfg).unwrap();

        let mut params = start.clone();
        let mut m = vec![0.0; start.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
        let mut order: Vec<usize> = (0..shard.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let eval = loss_and_grad_over(
                    &params,
                    batch.iter().map(|&i| &shard[i]),
                    0.0,
                    None,
                )
                .unwrap();
                for i in 0..params.len() {
                    m[i] = cfg.momentum * m[i] + cfg.lr * eval.grad.as_slice()[i];
                    params.as_mut_slice()[i] -= m[i];
                }
            }
        }
        assert_eq!(trained.as_slice(), params.as_slice());
    }

    #[test]
    fn loss_descends_on_separable_instance() {
        let shard = toy_shard();
        let start = ModelParams::zeros(2, 2);
        let first = local_train(&start, &shard, &LocalTrainConfig { epochs: 1, ..base_cfg() })
            .unwrap()
            .1;
        let last = local_train(&start, &shard, &LocalTrainConfig { epochs: 8, ..base_cfg() })
            .unwrap()
            .1;
        assert!(last <= first, "last {last} vs first {first}");
    }

    #[test]
    fn strong_prox_pins_params_to_start() {
        let shard = toy_shard();
        let mut start = ModelParams::zeros(2, 2);
        start.as_mut_slice().copy_from_slice(&[0.2, -0.1, 0.05, -0.3, 0.15, 0.0]);
        let distance = |mu: f64| {
            let cfg = LocalTrainConfig {
                epochs: 1,
                batch_size: 1,
                lr: 1e-6,
                momentum: 0.0,
                prox_mu: mu,
                shuffle_seed: 3,
            };
            let (trained, _) = local_train(&start, &shard, &cfg).unwrap();
            trained.sub(&start).unwrap().l2_norm()
        };
        let d1 = distance(1.0);
        let d2 = distance(1e2);
        let d3 = distance(1e6);
        assert!(d1 > d2 && d2 > d3, "distances not monotone: {d1} {d2} {d3}");
        assert!(d3 < 1e-3, "prox 1e6 distance {d3}");
    }

    #[test]
    fn same_seed_reproduces_training() {
        let shard = toy_shard();
        let start = ModelParams::zeros(2, 2);
        let cfg = LocalTrainConfig { epochs: 4, batch_size: 2, momentum: 0.5, ..base_cfg() };
        let a = local_train(&start, &shard, &cfg).unwrap();
        let b = local_train(&start, &shard, &cfg).unwrap();
        assert_eq!(a.0.as_slice(), b.0.as_slice());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn divergence_aborts_with_non_finite_error() {
        // Gradient magnitude ~2 at zero params, so an lr near f64::MAX
        // overflows the very first update.
        let shard = vec![
            Example { features: vec![4.0, 0.1], label: 1 },
            Example { features: vec![-4.0, 0.2], label: 0 },
        ];
        let start = ModelParams::zeros(2, 2);
        let cfg = LocalTrainConfig {
            epochs: 1,
            batch_size: 2,
            lr: 1e308,
            ..base_cfg()
        };
        let err = local_train(&start, &shard, &cfg).unwrap_err();
        assert!(matches!(err, FedError::NonFinite(_)), "{err:?}");
    }

    #[test]
    fn empty_shard_is_rejected() {
        let start = ModelParams::zeros(2, 2);
        assert!(matches!(
            local_train(&start, &[], &base_cfg()).unwrap_err(),
            FedError::Empty(_)
        ));
    }
}
