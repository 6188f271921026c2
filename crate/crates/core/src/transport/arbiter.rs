use std::collections::BTreeMap;

use super::{StreamFrame, TransportError};

#[derive(Debug)]
struct Lane {
    expected: u64,
    pending: BTreeMap<u64, StreamFrame>,
}

/// Demultiplexes interleaved frames by slot id and restores per-slot
/// sequence order.
///
/// Sequences start at 1 on every slot. A frame may arrive up to
/// `window - 1` positions early; anything further ahead is a gap.
#[derive(Debug)]
pub struct Arbiter {
    window: u64,
    lanes: BTreeMap<u8, Lane>,
}

impl Arbiter {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1) as u64,
            lanes: BTreeMap::new(),
        }
    }

    /// Next sequence number expected on `slot`.
    pub fn expected(&self, slot: u8) -> u64 {
        self.lanes.get(&slot).map_or(1, |l| l.expected)
    }

    /// Accepts one frame; returns the frames of its slot that are now
    /// deliverable, in order.
    pub fn push(&mut self, frame: StreamFrame) -> Result<Vec<StreamFrame>, TransportError> {
        let slot = frame.header.slot_id;
        let seq = frame.header.sequence;
        let lane = self.lanes.entry(slot).or_insert_with(|| Lane {
            expected: 1,
            pending: BTreeMap::new(),
        });
        if seq < lane.expected || lane.pending.contains_key(&seq) {
            return Err(TransportError::Protocol {
                sequence: seq,
                reason: format!(
                    "duplicate or stale frame on slot {slot} (expected {})",
                    lane.expected
                ),
            });
        }
        if seq >= lane.expected + self.window {
            return Err(TransportError::SequenceGap {
                slot,
                expected: lane.expected,
                actual: seq,
            });
        }
        lane.pending.insert(seq, frame);
        let mut ready = Vec::new();
        while let Some(f) = lane.pending.remove(&lane.expected) {
            ready.push(f);
            lane.expected += 1;
        }
        Ok(ready)
    }

    /// Fails if any slot still holds frames waiting on a missing sequence.
    pub fn finish(&self) -> Result<(), TransportError> {
        for (slot, lane) in &self.lanes {
            if let Some((&actual, _)) = lane.pending.iter().next() {
                return Err(TransportError::SequenceGap {
                    slot: *slot,
                    expected: lane.expected,
                    actual,
                });
            }
        }
        Ok(())
    }
}

/// Splits an interleaved frame stream into ordered per-slot substreams.
pub fn arbitrate<I>(
    frames: I,
    window: usize,
) -> Result<BTreeMap<u8, Vec<StreamFrame>>, TransportError>
where
    I: IntoIterator<Item = StreamFrame>,
{
    let mut arbiter = Arbiter::new(window);
    let mut out: BTreeMap<u8, Vec<StreamFrame>> = BTreeMap::new();
    for frame in frames {
        let slot = frame.header.slot_id;
        let ready = arbiter.push(frame)?;
        out.entry(slot).or_default().extend(ready);
    }
    arbiter.finish()?;
    Ok(out)
}
