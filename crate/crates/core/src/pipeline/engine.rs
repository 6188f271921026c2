use std::collections::BTreeSet;
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::transport::{FrameSink, FrameSource, BEAT_BYTES, MAX_PAYLOAD};

use super::slot::{rate, SlotConfig};
use super::{compile_spec, MiniPipeSlot, PipelineError, PipelineSpec, ReconfigureAck, RunStats};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub slot_count: usize,
    /// Stream granularity; fixed at 64.
    pub beat_bytes: usize,
    /// In-flight frames per slot. Also the arbiter's reorder window.
    pub queue_depth: usize,
    pub max_payload: usize,
    pub drain_deadline: Duration,
    /// Where one-shot sources are spooled for stateful runs; the system temp
    /// directory when unset.
    pub spool_dir: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            slot_count: 7,
            beat_bytes: BEAT_BYTES,
            queue_depth: 8,
            max_payload: MAX_PAYLOAD,
            drain_deadline: Duration::from_millis(100),
            spool_dir: None,
        }
    }
}

impl EngineConfig {
    pub fn with_slots(slot_count: usize) -> Self {
        Self {
            slot_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.slot_count == 0 || self.slot_count > 256 {
            return bad(format!(
                "slot_count must be in 1..=256, got {}",
                self.slot_count
            ));
        }
        if self.beat_bytes != BEAT_BYTES {
            return bad(format!(
                "beat_bytes is fixed at {BEAT_BYTES}, got {}",
                self.beat_bytes
            ));
        }
        if self.queue_depth == 0 {
            return bad("queue_depth must be at least 1".into());
        }
        if self.max_payload < BEAT_BYTES
            || self.max_payload > MAX_PAYLOAD
            || self.max_payload % BEAT_BYTES != 0
        {
            return bad(format!(
                "max_payload must be a multiple of {BEAT_BYTES} in {BEAT_BYTES}..={MAX_PAYLOAD}, got {}",
                self.max_payload
            ));
        }
        Ok(())
    }
}

/// A job for [`Engine::run_concurrent`].
pub struct Job<'a> {
    pub slot: usize,
    pub source: Box<dyn FrameSource + 'a>,
    pub sink: Box<dyn FrameSink + Send + 'a>,
}

impl<'a> Job<'a> {
    pub fn new(
        slot: usize,
        source: impl FrameSource + 'a,
        sink: impl FrameSink + Send + 'a,
    ) -> Self {
        Self {
            slot,
            source: Box::new(source),
            sink: Box::new(sink),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobThroughput {
    pub slot: usize,
    pub bytes: u64,
    pub rows: u64,
    pub seconds: f64,
    pub bytes_per_sec: f64,
    pub rows_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub wall_seconds: f64,
    pub total_bytes: u64,
    pub total_rows: u64,
    /// Input bytes of all successful jobs over the wall time of the batch.
    pub aggregate_bytes_per_sec: f64,
    pub aggregate_rows_per_sec: f64,
    pub per_job: Vec<JobThroughput>,
}

#[derive(Debug)]
pub struct ConcurrentRun {
    /// One result per job, in submission order.
    pub jobs: Vec<Result<RunStats, PipelineError>>,
    pub report: ThroughputReport,
}

/// A fixed pool of [`MiniPipeSlot`]s.
#[derive(Debug)]
pub struct Engine {
    config: EngineConfig,
    slots: Vec<MiniPipeSlot>,
}

impl Engine {
    /// All slots start idle with the `P-I` spec installed.
    pub fn new(config: EngineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let initial = PipelineSpec::preset("P-I").expect("built in");
        let slot_config = SlotConfig {
            queue_depth: config.queue_depth,
            max_payload: config.max_payload,
            spool_dir: config.spool_dir.clone(),
        };
        let slots = (0..config.slot_count)
            .map(|i| MiniPipeSlot::new(i, initial.clone(), slot_config.clone()))
            .collect();
        Ok(Self { config, slots })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[MiniPipeSlot] {
        &self.slots
    }

    pub fn slot(&self, slot: usize) -> Result<&MiniPipeSlot, PipelineError> {
        self.slots.get(slot).ok_or(PipelineError::NoSuchSlot {
            slot,
            slot_count: self.slots.len(),
        })
    }

    /// Quiesce-and-swap with the configured drain deadline.
    pub fn reconfigure(
        &self,
        slot: usize,
        spec: PipelineSpec,
    ) -> Result<ReconfigureAck, PipelineError> {
        self.slot(slot)?
            .reconfigure(spec, self.config.drain_deadline)
    }

    /// Compiles `description` first; an invalid one leaves the slot untouched.
    pub fn reconfigure_with(
        &self,
        slot: usize,
        description: &str,
    ) -> Result<ReconfigureAck, PipelineError> {
        let target = self.slot(slot)?;
        let spec = compile_spec(description)?;
        target.reconfigure(spec, self.config.drain_deadline)
    }

    pub fn run(
        &self,
        slot: usize,
        source: &mut dyn FrameSource,
        sink: &mut dyn FrameSink,
    ) -> Result<RunStats, PipelineError> {
        self.slot(slot)?.run(source, sink)
    }

    /// Runs each job on its own slot, all at once.
    pub fn run_concurrent(&self, jobs: Vec<Job<'_>>) -> Result<ConcurrentRun, PipelineError> {
        if jobs.len() > self.slots.len() {
            return Err(PipelineError::Scheduling(format!(
                "{} jobs for {} slots",
                jobs.len(),
                self.slots.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for job in &jobs {
            self.slot(job.slot)?;
            if !seen.insert(job.slot) {
                return Err(PipelineError::Scheduling(format!(
                    "slot {} assigned twice",
                    job.slot
                )));
            }
        }

        let start = Instant::now();
        let results: Vec<(usize, Result<RunStats, PipelineError>)> = thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .into_iter()
                .map(|mut job| {
                    let slot = &self.slots[job.slot];
                    let id = job.slot;
                    scope.spawn(move || (id, slot.run(&mut job.source, &mut job.sink)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("slot worker panicked"))
                .collect()
        });
        let wall = start.elapsed();

        let per_job: Vec<JobThroughput> = results
            .iter()
            .filter_map(|(slot, r)| r.as_ref().ok().map(|s| (*slot, s)))
            .map(|(slot, s)| JobThroughput {
                slot,
                bytes: s.input_bytes,
                rows: s.rows,
                seconds: s.elapsed.as_secs_f64(),
                bytes_per_sec: s.bytes_per_sec(),
                rows_per_sec: s.rows_per_sec(),
            })
            .collect();
        let total_bytes = per_job.iter().map(|j| j.bytes).sum();
        let total_rows = per_job.iter().map(|j| j.rows).sum();
        let report = ThroughputReport {
            wall_seconds: wall.as_secs_f64(),
            total_bytes,
            total_rows,
            aggregate_bytes_per_sec: rate(total_bytes, wall),
            aggregate_rows_per_sec: rate(total_rows, wall),
            per_job,
        };
        Ok(ConcurrentRun {
            jobs: results.into_iter().map(|(_, r)| r).collect(),
            report,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colfmt::{generate_synthetic, ColumnBatch, DatasetSpec};
    use crate::transport::{BatchSink, MemorySource};

    fn batch(seed: u64) -> ColumnBatch {
        generate_synthetic(&DatasetSpec {
            rows: 30_000,
            dense_features: 3,
            sparse_features: 4,
            seed,
            sparse_cardinality: 20_000,
            ..DatasetSpec::default()
        })
        .unwrap()
    }

    fn solo(preset: &str, b: &ColumnBatch) -> ColumnBatch {
        let engine = Engine::new(EngineConfig::with_slots(1)).unwrap();
        engine.reconfigure_with(0, preset).unwrap();
        let mut sink = BatchSink::new();
        engine
            .run(0, &mut MemorySource::from_batch(b), &mut sink)
            .unwrap();
        sink.into_batch().unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(EngineConfig::default().validate().is_ok());
        assert_eq!(EngineConfig::default().slot_count, 7);
        for bad in [
            EngineConfig::with_slots(0),
            EngineConfig {
                beat_bytes: 32,
                ..EngineConfig::default()
            },
            EngineConfig {
                queue_depth: 0,
                ..EngineConfig::default()
            },
            EngineConfig {
                max_payload: 100,
                ..EngineConfig::default()
            },
        ] {
            assert!(matches!(
                Engine::new(bad),
                Err(PipelineError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn oversubscription_is_a_scheduling_error() {
        let engine = Engine::new(EngineConfig::with_slots(2)).unwrap();
        let b = batch(1);
        let mut sinks: Vec<BatchSink> = (0..3).map(|_| BatchSink::new()).collect();
        let jobs: Vec<Job> = sinks
            .iter_mut()
            .enumerate()
            .map(|(i, s)| Job::new(i % 2, MemorySource::from_batch(&b), s))
            .collect();
        assert!(matches!(
            engine.run_concurrent(jobs),
            Err(PipelineError::Scheduling(_))
        ));
        let jobs = vec![
            Job::new(1, MemorySource::from_batch(&b), BatchSink::new()),
            Job::new(1, MemorySource::from_batch(&b), BatchSink::new()),
        ];
        assert!(matches!(
            engine.run_concurrent(jobs),
            Err(PipelineError::Scheduling(_))
        ));
    }

    #[test]
    fn mixed_concurrent_jobs_match_solo_runs() {
        let engine = Engine::new(EngineConfig::with_slots(4)).unwrap();
        let presets = ["P-I", "P-III", "P-II", "P-III"];
        let batches: Vec<ColumnBatch> = (0..4).map(batch).collect();
        for (i, p) in presets.iter().enumerate() {
            engine.reconfigure_with(i, p).unwrap();
        }
        let mut sinks: Vec<BatchSink> = (0..4).map(|_| BatchSink::new()).collect();
        let jobs = sinks
            .iter_mut()
            .enumerate()
            .map(|(i, s)| Job::new(i, MemorySource::from_batch(&batches[i]), s))
            .collect();
        let run = engine.run_concurrent(jobs).unwrap();
        assert!(run.jobs.iter().all(|r| r.is_ok()));
        assert_eq!(run.report.per_job.len(), 4);
        assert!(run.report.aggregate_bytes_per_sec > 0.0);
        for (i, sink) in sinks.into_iter().enumerate() {
            assert_eq!(
                sink.into_batch().unwrap(),
                solo(presets[i], &batches[i]),
                "slot {i}"
            );
        }
        assert_eq!(engine.slot(0).unwrap().tables().len(), 0);
        assert_eq!(engine.slot(1).unwrap().tables()[0].modulus().get(), 524_288);
        assert_eq!(engine.slot(2).unwrap().tables()[0].modulus().get(), 8192);
    }

    #[test]
    fn invalid_reconfiguration_keeps_old_spec() {
        let engine = Engine::new(EngineConfig::with_slots(2)).unwrap();
        engine.reconfigure_with(1, "P-II").unwrap();
        assert!(engine
            .reconfigure_with(1, "sparse=vocab_map,vocab_gen")
            .is_err());
        assert!(engine.reconfigure_with(1, "P-7").is_err());
        assert_eq!(engine.slot(1).unwrap().spec().id(), "P-II");
        assert!(matches!(
            engine.reconfigure_with(5, "P-I"),
            Err(PipelineError::NoSuchSlot { .. })
        ));
    }
}
