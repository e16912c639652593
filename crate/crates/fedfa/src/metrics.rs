//! Fairness and convergence statistics plus CSV/JSON emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::federation::ExperimentResult;

/// Summary of the per-device test accuracy distribution, in percent.
/// `variance` is the population variance of the percent values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub average: f64,
    pub worst20: f64,
    pub best20: f64,
    pub variance: f64,
}

/// Per-round metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean cross-entropy of the updated global model over every device's
    /// train split (the quantity plotted as "training loss").
    pub global_train_loss: f64,
    /// Mean of the selected clients' final local-epoch losses.
    pub mean_client_loss: f64,
    /// Pooled test accuracy of the global model; present on eval rounds.
    pub test_accuracy: Option<f64>,
    /// Clients selected this round, ascending.
    pub selected: Vec<usize>,
    /// Aggregation weights aligned with `selected`; present only when
    /// information-quantity weighting was applied.
    pub weights: Option<Vec<f64>>,
    /// Whether the server momentum correction fired this round.
    pub momentum_corrected: bool,
}

/// Sorted-quintile accuracy statistics over per-device accuracies in `[0, 1]`.
/// The 20% buckets hold `ceil(0.2 * N)` devices so they are never empty.
pub fn accuracy_stats(per_device_acc: &[f64]) -> Result<AccuracyStats> {
    if per_device_acc.is_empty() {
        return Err(FedError::Empty("accuracy_stats input".into()));
    }
    let mut percents: Vec<f64> = per_device_acc.iter().map(|a| a * 100.0).collect();
    percents.sort_by(|a, b| a.partial_cmp(b).expect("accuracies are finite"));
    let n = percents.len();
    let bucket = ((0.2 * n as f64).ceil() as usize).max(1);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let average = mean(&percents);
    let worst20 = mean(&percents[..bucket]);
    let best20 = mean(&percents[n - bucket..]);
    let variance =
        percents.iter().map(|v| (v - average) * (v - average)).sum::<f64>() / n as f64;
    Ok(AccuracyStats {
        average,
        worst20,
        best20,
        variance,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| FedError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FedError + '_ {
    move |source| FedError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Writes `<prefix>_rounds.csv`, `<prefix>_final_acc.csv` and
/// `<prefix>_summary.json`. The summary embeds the resolved configuration so
/// any result can be re-run from its own output.
pub fn emit_history(
    result: &ExperimentResult,
    stats: &AccuracyStats,
    config_echo: &serde_json::Value,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    let rounds_path = PathBuf::from(format!("{prefix}_rounds.csv"));
    let acc_path = PathBuf::from(format!("{prefix}_final_acc.csv"));
    let summary_path = PathBuf::from(format!("{prefix}_summary.json"));

    let mut w = create(&rounds_path)?;
    writeln!(
        w,
        "round,global_train_loss,mean_client_loss,test_accuracy,momentum_correction,selected,weights"
    )
    .map_err(io_err(&rounds_path))?;
    for rec in &result.records {
        let selected = rec
            .selected
            .iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let weights = rec
            .weights
            .as_ref()
            .map(|ws| {
                ws.iter()
                    .map(|w| format!("{w:.6}"))
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .unwrap_or_default();
        writeln!(
            w,
            "{},{:.6},{:.6},{},{},{},{}",
            rec.round,
            rec.global_train_loss,
            rec.mean_client_loss,
            fmt_opt(rec.test_accuracy),
            rec.momentum_corrected as u8,
            selected,
            weights
        )
        .map_err(io_err(&rounds_path))?;
    }
    w.flush().map_err(io_err(&rounds_path))?;

    let mut w = create(&acc_path)?;
    writeln!(w, "device_id,test_accuracy").map_err(io_err(&acc_path))?;
    for (id, acc) in result.final_per_device_test_acc.iter().enumerate() {
        writeln!(w, "{id},{acc:.6}").map_err(io_err(&acc_path))?;
    }
    w.flush().map_err(io_err(&acc_path))?;

    let summary = serde_json::json!({
        "config": config_echo,
        "stats": stats,
    });
    let mut w = create(&summary_path)?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| FedError::Io {
        path: summary_path.clone(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e),
    })?;
    writeln!(w).map_err(io_err(&summary_path))?;
    w.flush().map_err(io_err(&summary_path))?;

    Ok(vec![rounds_path, acc_path, summary_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_distribution_has_zero_variance() {
        let stats = accuracy_stats(&[0.5; 7]).unwrap();
        assert_eq!(stats.average, 50.0);
        assert_eq!(stats.worst20, 50.0);
        assert_eq!(stats.best20, 50.0);
        assert_eq!(stats.variance, 0.0);
    }

    #[test]
    fn five_device_hand_computation() {
        let stats = accuracy_stats(&[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(stats.worst20, 0.0);
        assert_eq!(stats.best20, 100.0);
        assert_eq!(stats.average, 50.0);
        // Population variance of {0, 25, 50, 75, 100}.
        assert!((stats.variance - 1250.0).abs() < 1e-9);
    }

    #[test]
    fn thirty_devices_use_six_per_bucket() {
        let accs: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let stats = accuracy_stats(&accs).unwrap();
        let expected_worst: f64 = (0..6).map(|i| i as f64 / 29.0 * 100.0).sum::<f64>() / 6.0;
        let expected_best: f64 = (24..30).map(|i| i as f64 / 29.0 * 100.0).sum::<f64>() / 6.0;
        assert!((stats.worst20 - expected_worst).abs() < 1e-9);
        assert!((stats.best20 - expected_best).abs() < 1e-9);
    }

    #[test]
    fn variance_magnitudes_are_percent_squared() {
        // A skewed 30-device distribution in the shape reported for highly
        // heterogeneous runs: worst fifth far below the rest. The percent^2
        // scale puts the variance in the hundreds, not in [0, 1].
        let mut accs = vec![0.37; 6];
        accs.extend(vec![0.83; 18]);
        accs.extend(vec![1.0; 6]);
        let stats = accuracy_stats(&accs).unwrap();
        assert!(stats.average > 70.0 && stats.average < 85.0);
        assert!((stats.worst20 - 37.0).abs() < 1e-9);
        assert_eq!(stats.best20, 100.0);
        assert!(stats.variance > 100.0 && stats.variance < 1000.0, "{}", stats.variance);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            accuracy_stats(&[]).unwrap_err(),
            FedError::Empty(_)
        ));
    }

    fn brute_force_variance(percents: &[f64]) -> f64 {
        let n = percents.len() as f64;
        let mean = percents.iter().sum::<f64>() / n;
        percents.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }

    proptest! {
        #[test]
        fn stats_are_order_invariant_and_bounded(
            mut accs in proptest::collection::vec(0.0..=1.0f64, 1..50),
            swap_a in 0usize..50,
            swap_b in 0usize..50,
        ) {
            let original = accuracy_stats(&accs).unwrap();
            let a = swap_a % accs.len();
            let b = swap_b % accs.len();
            accs.swap(a, b);
            let permuted = accuracy_stats(&accs).unwrap();
            prop_assert_eq!(original.clone(), permuted);
            prop_assert!(original.worst20 <= original.average + 1e-9);
            prop_assert!(original.average <= original.best20 + 1e-9);
            prop_assert!(original.variance >= 0.0);
            let percents: Vec<f64> = accs.iter().map(|a| a * 100.0).collect();
            prop_assert!((original.variance - brute_force_variance(&percents)).abs() <= 1e-9);
        }
    }
}
