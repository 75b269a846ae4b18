//! Bounded set of reference keyframes with LFU-with-decay or
//! max-distance maintenance, plus nearest-landmark reference selection.
//!
//! Every mutation is appended to a [`PolicyTrace`], which can be serialized
//! as JSON lines and replayed against a fresh store state.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{landmark_distance, LandmarkSet};

/// Default bound on the number of stored keyframes.
pub const DEFAULT_MAX_CARDINALITY: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    /// Least-frequently-used eviction; all use counters halve on each arrival.
    #[default]
    #[serde(rename = "lfu")]
    LfuDecay,
    /// Keep the subset with the largest total pairwise landmark distance.
    #[serde(rename = "maxdist")]
    MaxDistance,
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lfu" | "lfu-decay" => Ok(Policy::LfuDecay),
            "maxdist" | "max-distance" => Ok(Policy::MaxDistance),
            other => Err(Error::InvalidConfig(format!("unknown policy `{other}` (expected lfu or maxdist)"))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::LfuDecay => "lfu",
            Policy::MaxDistance => "maxdist",
        })
    }
}

#[derive(Clone, Debug)]
pub struct KeyframeEntry<T> {
    pub payload: T,
    pub landmarks: LandmarkSet,
    pub use_count: f64,
    pub arrival_index: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InsertReport {
    pub arrival_index: u64,
    pub added: bool,
    /// Arrival index of the evicted entry, if any. Under the max-distance
    /// policy a rejected newcomer is not reported as evicted.
    pub evicted: Option<u64>,
}

#[derive(Debug)]
pub struct Selection<'a, T> {
    pub entry: &'a KeyframeEntry<T>,
    /// Position of the entry within [`KeyframeStore::entries`].
    pub position: usize,
    pub distance: f64,
}

/// `(arrival_index, use_count)` for one stored entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountSnapshot(pub u64, pub f64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Insert {
        frame_index: u64,
        arrival_index: u64,
        added: bool,
        evicted: Option<u64>,
        /// Distances from the newcomer to each entry present before the insert.
        distances: Vec<f64>,
        use_counts: Vec<CountSnapshot>,
    },
    Select {
        frame_index: u64,
        arrival_index: u64,
        distance: f64,
        use_counts: Vec<CountSnapshot>,
    },
}

impl TraceEvent {
    pub fn use_counts(&self) -> &[CountSnapshot] {
        match self {
            TraceEvent::Insert { use_counts, .. } | TraceEvent::Select { use_counts, .. } => use_counts,
        }
    }
}

/// Ordered log of store mutations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTrace {
    pub policy: Policy,
    pub max_cardinality: usize,
    pub events: Vec<TraceEvent>,
}

impl PolicyTrace {
    pub fn new(policy: Policy, max_cardinality: usize) -> Self {
        Self { policy, max_cardinality, events: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One JSON object per line, one line per event.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(policy: Policy, max_cardinality: usize, text: &str) -> Result<Self> {
        let mut trace = Self::new(policy, max_cardinality);
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let event =
                serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            trace.events.push(event);
        }
        Ok(trace)
    }

    /// Re-applies the recorded decisions to an empty store state, checking
    /// every recorded counter snapshot. Returns the final snapshot.
    pub fn replay(&self) -> Result<Vec<CountSnapshot>> {
        let mut state: Vec<CountSnapshot> = Vec::new();
        let diverged = |event: usize, message: String| Error::TraceReplay { event, message };
        for (i, event) in self.events.iter().enumerate() {
            match event {
                TraceEvent::Insert { arrival_index, added, evicted, .. } => {
                    if self.policy == Policy::LfuDecay {
                        state.iter_mut().for_each(|s| s.1 *= 0.5);
                    }
                    if let Some(id) = evicted {
                        let pos = state
                            .iter()
                            .position(|s| s.0 == *id)
                            .ok_or_else(|| diverged(i, format!("evicted entry {id} is not stored")))?;
                        state.remove(pos);
                    }
                    if *added {
                        state.push(CountSnapshot(*arrival_index, 0.0));
                    }
                    if state.len() > self.max_cardinality {
                        return Err(diverged(i, "cardinality bound exceeded".into()));
                    }
                }
                TraceEvent::Select { arrival_index, .. } => {
                    let slot = state
                        .iter_mut()
                        .find(|s| s.0 == *arrival_index)
                        .ok_or_else(|| diverged(i, format!("selected entry {arrival_index} is not stored")))?;
                    if self.policy == Policy::LfuDecay {
                        slot.1 += 1.0;
                    }
                }
            }
            if state.as_slice() != event.use_counts() {
                return Err(diverged(i, format!("state {state:?} differs from recorded {:?}", event.use_counts())));
            }
        }
        Ok(state)
    }
}

/// Given the pairwise distances of `m` candidates (the newcomer last),
/// returns the candidate whose removal leaves the size `m - 1` subset with
/// maximal total pairwise distance. Dropping candidate `j` removes exactly its
/// row sum from the total, so the best subset drops the smallest row sum.
/// Ties prefer dropping the newcomer, then the earliest arrival.
pub fn choose_drop(pairwise: &[Vec<f64>]) -> usize {
    let m = pairwise.len();
    assert!(m > 0, "at least one candidate");
    let row_sum = |j: usize| pairwise[j].iter().enumerate().filter(|&(k, _)| k != j).map(|(_, d)| d).sum::<f64>();
    let mut best = m - 1;
    let mut best_sum = row_sum(best);
    for j in 0..m - 1 {
        let sum = row_sum(j);
        if sum < best_sum {
            best_sum = sum;
            best = j;
        }
    }
    best
}

/// The dynamic keyframe set. `T` is the per-entry payload (the aligned
/// reference image in the restoration pipeline, `()` in policy simulation).
#[derive(Clone, Debug)]
pub struct KeyframeStore<T> {
    entries: Vec<KeyframeEntry<T>>,
    max_cardinality: usize,
    policy: Policy,
    next_arrival: u64,
    trace: PolicyTrace,
}

impl<T> KeyframeStore<T> {
    pub fn new(policy: Policy, max_cardinality: usize) -> Result<Self> {
        if max_cardinality == 0 {
            return Err(Error::InvalidConfig("max_cardinality must be positive".into()));
        }
        Ok(Self {
            entries: Vec::with_capacity(max_cardinality + 1),
            max_cardinality,
            policy,
            next_arrival: 0,
            trace: PolicyTrace::new(policy, max_cardinality),
        })
    }

    pub fn entries(&self) -> &[KeyframeEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn max_cardinality(&self) -> usize {
        self.max_cardinality
    }

    pub fn trace(&self) -> &PolicyTrace {
        &self.trace
    }

    pub fn export_trace(&self) -> PolicyTrace {
        self.trace.clone()
    }

    pub fn snapshot(&self) -> Vec<CountSnapshot> {
        self.entries.iter().map(|e| CountSnapshot(e.arrival_index, e.use_count)).collect()
    }

    /// Offers a new keyframe to the set.
    pub fn insert(&mut self, payload: T, landmarks: LandmarkSet, frame_index: u64) -> InsertReport {
        let arrival_index = self.next_arrival;
        self.next_arrival += 1;
        let distances: Vec<f64> = self
            .entries
            .iter()
            .map(|e| landmark_distance(&e.landmarks, &landmarks).expect("landmark sets have equal length"))
            .collect();

        let (added, evicted) = match self.policy {
            Policy::LfuDecay => {
                for e in &mut self.entries {
                    e.use_count *= 0.5;
                }
                let evicted = (self.entries.len() >= self.max_cardinality).then(|| {
                    // First minimum in arrival order = earliest arrival among ties.
                    let pos = (0..self.entries.len())
                        .reduce(|best, i| if self.entries[i].use_count < self.entries[best].use_count { i } else { best })
                        .expect("store at capacity is non-empty");
                    self.entries.remove(pos).arrival_index
                });
                (true, evicted)
            }
            Policy::MaxDistance => {
                if self.entries.len() < self.max_cardinality {
                    (true, None)
                } else {
                    match self.max_distance_drop(&distances) {
                        None => (false, None),
                        Some(pos) => (true, Some(self.entries.remove(pos).arrival_index)),
                    }
                }
            }
        };
        if added {
            self.entries.push(KeyframeEntry { payload, landmarks, use_count: 0.0, arrival_index });
        }
        let report = InsertReport { arrival_index, added, evicted };
        self.trace.events.push(TraceEvent::Insert {
            frame_index,
            arrival_index,
            added,
            evicted,
            distances,
            use_counts: self.snapshot(),
        });
        report
    }

    fn max_distance_drop(&self, newcomer_distances: &[f64]) -> Option<usize> {
        let n = self.entries.len();
        let mut pairwise = vec![vec![0.0; n + 1]; n + 1];
        for j in 0..n {
            for k in j + 1..n {
                let d = landmark_distance(&self.entries[j].landmarks, &self.entries[k].landmarks)
                    .expect("landmark sets have equal length");
                pairwise[j][k] = d;
                pairwise[k][j] = d;
            }
            pairwise[j][n] = newcomer_distances[j];
            pairwise[n][j] = newcomer_distances[j];
        }
        let drop = choose_drop(&pairwise);
        (drop < n).then_some(drop)
    }

    /// Returns the stored keyframe nearest to `landmarks`; ties go to the
    /// earliest arrival. Under LFU the winner's use count is incremented.
    pub fn select(&mut self, landmarks: &LandmarkSet, frame_index: u64) -> Result<Selection<'_, T>> {
        let (position, distance) = self
            .entries
            .iter()
            .map(|e| landmark_distance(&e.landmarks, landmarks).expect("landmark sets have equal length"))
            .enumerate()
            .reduce(|best, cur| if cur.1 < best.1 { cur } else { best })
            .ok_or(Error::EmptyStore)?;
        if self.policy == Policy::LfuDecay {
            self.entries[position].use_count += 1.0;
        }
        let arrival_index = self.entries[position].arrival_index;
        let use_counts = self.snapshot();
        self.trace.events.push(TraceEvent::Select { frame_index, arrival_index, distance, use_counts });
        Ok(Selection { entry: &self.entries[position], position, distance })
    }
}
