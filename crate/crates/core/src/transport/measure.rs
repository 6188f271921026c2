use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{open_source, Locator, TransportError};

pub const MIN_TRIALS: usize = 5;

/// Read rate of a source across trials, in bytes per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputStats {
    pub trials: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub bytes: u64,
}

impl ThroughputStats {
    pub fn from_trials(trials: Vec<f64>, bytes: u64) -> Self {
        let (mean, std_dev) = mean_std(&trials);
        Self {
            trials,
            mean,
            std_dev,
            bytes,
        }
    }
}

/// Sample mean and standard deviation (n - 1 denominator).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sustained payload read rate of `locator` over roughly `duration`, split
/// into [`MIN_TRIALS`] trials.
pub fn measure_source_throughput(
    locator: &Locator,
    duration: Duration,
) -> Result<ThroughputStats, TransportError> {
    measure_source_throughput_trials(locator, duration, MIN_TRIALS)
}

/// As [`measure_source_throughput`] with an explicit trial count (at least 5).
///
/// Replayable sources are rewound and re-read until the trial's time slice is
/// used up; one-shot sources are reopened once per trial and read to the end
/// or until the slice expires.
pub fn measure_source_throughput_trials(
    locator: &Locator,
    duration: Duration,
    trials: usize,
) -> Result<ThroughputStats, TransportError> {
    let trials = trials.max(MIN_TRIALS);
    let slice = duration / trials as u32;
    let mut rates = Vec::with_capacity(trials);
    let mut total = 0u64;
    for _ in 0..trials {
        let mut source = open_source(locator)?;
        let start = Instant::now();
        let mut bytes = 0u64;
        let mut pass_bytes = 0u64;
        loop {
            match source.next_frame()? {
                Some(frame) => {
                    bytes += frame.payload.len() as u64;
                    pass_bytes += frame.payload.len() as u64;
                }
                None if source.is_replayable() && pass_bytes > 0 => {
                    source.rewind()?;
                    pass_bytes = 0;
                }
                None => break,
            }
            if start.elapsed() >= slice {
                break;
            }
        }
        let secs = start.elapsed().as_secs_f64();
        rates.push(if bytes == 0 || secs == 0.0 {
            0.0
        } else {
            bytes as f64 / secs
        });
        total += bytes;
    }
    Ok(ThroughputStats::from_trials(rates, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colfmt::{ColumnBatch, DenseColumn};

    #[test]
    fn zero_length_source_reports_zero() {
        let batch = ColumnBatch::new(0, vec![DenseColumn::new("dense_0", vec![])], vec![]).unwrap();
        let locator = Locator::Memory(batch.to_file_bytes().into());
        let stats = measure_source_throughput(&locator, Duration::from_millis(20)).unwrap();
        assert_eq!(stats.trials.len(), 5);
        assert_eq!(stats.mean, 0.0);
        assert_eq!(stats.std_dev, 0.0);
        assert_eq!(stats.bytes, 0);
    }

    #[test]
    fn mean_std_matches_hand_computation() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
