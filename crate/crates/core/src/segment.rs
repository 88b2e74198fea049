//! Coarse-then-fine segmentation: diarization turns are made single-speaker,
//! then voiced chunks inside each turn are grouped into 3-30 s spans.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTurn {
    pub speaker: String,
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
}

impl SpeakerTurn {
    pub fn new(speaker: impl Into<String>, start_s: f64, end_s: f64) -> Self {
        Self {
            speaker: speaker.into(),
            start_s,
            end_s,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadChunk {
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
}

impl VadChunk {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// A single-speaker training clip window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub source_id: String,
    pub speaker: String,
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
}

impl SegmentSpan {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StitchPolicy {
    pub min_s: f64,
    pub max_s: f64,
    pub max_gap_s: f64,
}

impl Default for StitchPolicy {
    fn default() -> Self {
        Self {
            min_s: 3.0,
            max_s: 30.0,
            max_gap_s: 1.0,
        }
    }
}

impl StitchPolicy {
    /// Returns the name of the first offending field.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_s.is_finite() && self.min_s > 0.0) {
            return Err(format!("min_s must be positive, got {}", self.min_s));
        }
        if !(self.max_s.is_finite() && self.max_s > self.min_s) {
            return Err(format!(
                "min_s ({}) must be less than max_s ({})",
                self.min_s, self.max_s
            ));
        }
        if !(self.max_gap_s.is_finite() && self.max_gap_s >= 0.0) {
            return Err(format!("max_gap_s must be >= 0, got {}", self.max_gap_s));
        }
        Ok(())
    }
}

/// Unions each speaker's own overlapping or touching turns.
fn union_per_speaker(turns: &[SpeakerTurn]) -> Vec<SpeakerTurn> {
    let mut sorted: Vec<SpeakerTurn> = turns
        .iter()
        .filter(|t| t.end_s > t.start_s)
        .cloned()
        .collect();
    sorted.sort_by(|a, b| {
        a.speaker
            .cmp(&b.speaker)
            .then(a.start_s.total_cmp(&b.start_s))
    });
    let mut out: Vec<SpeakerTurn> = Vec::with_capacity(sorted.len());
    for t in sorted {
        match out.last_mut() {
            Some(last) if last.speaker == t.speaker && t.start_s <= last.end_s => {
                last.end_s = last.end_s.max(t.end_s);
            }
            _ => out.push(t),
        }
    }
    out
}

/// Makes turns single-speaker: any region covered by two or more speakers is
/// cut out of all of them, then consecutive same-speaker turns separated by
/// less than `max_gap_s` are merged, provided no other speaker was active in
/// the gap.
pub fn resolve_turns(turns: &[SpeakerTurn], max_gap_s: f64) -> Vec<SpeakerTurn> {
    let unioned = union_per_speaker(turns);
    if unioned.is_empty() {
        return Vec::new();
    }

    let mut bounds: Vec<f64> = unioned.iter().flat_map(|t| [t.start_s, t.end_s]).collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();

    // After the per-speaker union a speaker's intervals are disjoint, so an
    // elementary interval is exclusive iff exactly one unioned turn covers it.
    let mut pieces: Vec<SpeakerTurn> = Vec::new();
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut covering = unioned.iter().filter(|t| t.start_s <= a && t.end_s >= b);
        let (Some(only), None) = (covering.next(), covering.next()) else {
            continue;
        };
        match pieces
            .iter_mut()
            .rev()
            .find(|p| p.speaker == only.speaker && p.end_s == a)
        {
            Some(p) => p.end_s = b,
            None => pieces.push(SpeakerTurn::new(only.speaker.clone(), a, b)),
        }
    }
    pieces.sort_by(|x, y| {
        x.start_s
            .total_cmp(&y.start_s)
            .then_with(|| x.speaker.cmp(&y.speaker))
    });

    let mut out: Vec<SpeakerTurn> = Vec::with_capacity(pieces.len());
    for p in pieces {
        if let Some(last) = out.last_mut() {
            let gap = p.start_s - last.end_s;
            let gap_clear = !unioned.iter().any(|t| {
                t.speaker != p.speaker && t.start_s < p.start_s && t.end_s > last.end_s
            });
            if last.speaker == p.speaker && gap < max_gap_s && gap_clear {
                last.end_s = p.end_s;
                continue;
            }
        }
        out.push(p);
    }
    out
}

/// Splits chunks longer than `max_s` into equal pieces that each fit.
fn split_long(chunk: VadChunk, max_s: f64, out: &mut Vec<VadChunk>) {
    let len = chunk.duration_s();
    if len <= max_s {
        out.push(chunk);
        return;
    }
    let mut k = (len / max_s).ceil() as usize;
    loop {
        let edges: Vec<f64> = (0..=k)
            .map(|i| {
                if i == k {
                    chunk.end_s
                } else {
                    chunk.start_s + len * i as f64 / k as f64
                }
            })
            .collect();
        if edges.windows(2).all(|w| w[1] - w[0] <= max_s) {
            out.extend(edges.windows(2).map(|w| VadChunk::new(w[0], w[1])));
            return;
        }
        k += 1;
    }
}

/// Greedy left-to-right grouping of one turn's voiced chunks.
///
/// A run starts at the first unconsumed chunk and absorbs the next chunk while
/// the silence before it is at most `max_gap_s` and the run would still span at
/// most `max_s`. Runs shorter than `min_s` are dropped.
pub fn stitch(
    source_id: &str,
    turn: &SpeakerTurn,
    chunks: &[VadChunk],
    policy: &StitchPolicy,
) -> Vec<SegmentSpan> {
    let mut pieces = Vec::with_capacity(chunks.len());
    for c in chunks {
        let clipped = VadChunk::new(c.start_s.max(turn.start_s), c.end_s.min(turn.end_s));
        if clipped.end_s > clipped.start_s {
            split_long(clipped, policy.max_s, &mut pieces);
        }
    }

    let mut spans = Vec::new();
    let mut emit = |start: f64, end: f64| {
        if end - start >= policy.min_s {
            spans.push(SegmentSpan {
                source_id: source_id.to_string(),
                speaker: turn.speaker.clone(),
                start_s: start,
                end_s: end,
            });
        }
    };

    let mut iter = pieces.into_iter();
    let Some(first) = iter.next() else {
        return Vec::new();
    };
    let (mut run_start, mut run_end) = (first.start_s, first.end_s);
    for c in iter {
        let joins = c.start_s - run_end <= policy.max_gap_s && c.end_s - run_start <= policy.max_s;
        if joins {
            run_end = c.end_s;
        } else {
            emit(run_start, run_end);
            (run_start, run_end) = (c.start_s, c.end_s);
        }
    }
    emit(run_start, run_end);
    spans
}

/// Full segmentation of one source item.
///
/// Chunks are cut at resolved turn boundaries and each piece goes to the turn
/// containing its midpoint; pieces in gaps or excised overlap regions are dropped.
pub fn segment_source(
    source_id: &str,
    turns: &[SpeakerTurn],
    chunks: &[VadChunk],
    policy: &StitchPolicy,
) -> Vec<SegmentSpan> {
    let resolved = resolve_turns(turns, policy.max_gap_s);
    let mut per_turn: Vec<Vec<VadChunk>> = vec![Vec::new(); resolved.len()];

    for c in chunks.iter().filter(|c| c.end_s > c.start_s) {
        // Turns are sorted and disjoint: cut the chunk at every boundary inside it.
        let first = resolved.partition_point(|t| t.end_s <= c.start_s);
        for (idx, t) in resolved.iter().enumerate().skip(first) {
            if t.start_s >= c.end_s {
                break;
            }
            let piece = VadChunk::new(c.start_s.max(t.start_s), c.end_s.min(t.end_s));
            let mid = 0.5 * (piece.start_s + piece.end_s);
            if piece.end_s > piece.start_s && t.start_s <= mid && mid < t.end_s {
                per_turn[idx].push(piece);
            }
        }
    }

    let mut spans: Vec<SegmentSpan> = resolved
        .iter()
        .zip(&per_turn)
        .flat_map(|(t, cs)| stitch(source_id, t, cs, policy))
        .collect();
    spans.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    spans
}
