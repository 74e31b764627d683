//! FIFO replay buffer with the three sampling views the two-level loop
//! needs: uniform transitions for the low level, same-episode triplets for
//! the representation loss, and k-step segments for the high level.
//!
//! Storage is a ring addressed by absolute push index, so triplet and
//! segment lookups stay valid relative to eviction: the oldest entries
//! leave first and every arithmetic step forward from a live index is
//! still live.

use rand::Rng;

use crate::objective::Triplet;
use crate::Result;

#[derive(Clone, Debug)]
pub struct Transition {
    pub s: Vec<f64>,
    /// Active subgoal in latent space.
    pub g: Vec<f64>,
    pub a: Vec<f64>,
    pub r_env: f64,
    pub s_next: Vec<f64>,
    /// Subgoal active at the next step (a fresh one at segment boundaries).
    pub g_next: Vec<f64>,
    pub done: bool,
    pub episode: u64,
    /// Episode-relative step index.
    pub step: u32,
}

/// One sampled high-level transition: the state at a segment start, the
/// subgoal acted on, the summed environment reward over the segment, and
/// the state where the segment ended.
#[derive(Clone, Debug)]
pub struct SegmentSample {
    pub s_start: Vec<f64>,
    pub g: Vec<f64>,
    pub r_sum: f64,
    pub s_end: Vec<f64>,
    pub done: bool,
}

#[derive(Clone, Copy, Debug)]
struct SegmentRef {
    start: u64,
    len: u32,
}

#[derive(Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    /// High-level interval used to delimit segments.
    k: u32,
    data: Vec<Transition>,
    /// Total transitions ever pushed; the ring holds the last `len()`.
    total: u64,
    segments: Vec<SegmentRef>,
    /// First entry of `segments` that is still alive (lazy eviction).
    seg_head: usize,
    open_segment: Option<SegmentRef>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, k: u32) -> Self {
        assert!(capacity > 0 && k > 0);
        ReplayBuffer {
            capacity,
            k,
            data: Vec::new(),
            total: 0,
            segments: Vec::new(),
            seg_head: 0,
            open_segment: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn total_pushed(&self) -> u64 {
        self.total
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// Oldest absolute index still in the ring.
    fn low(&self) -> u64 {
        self.total - self.data.len() as u64
    }

    pub fn get(&self, abs: u64) -> &Transition {
        debug_assert!(abs >= self.low() && abs < self.total);
        &self.data[(abs % self.capacity as u64) as usize]
    }

    pub fn push(&mut self, t: Transition) {
        debug_assert!(t.s.iter().all(|v| v.is_finite()));
        debug_assert!(t.s_next.iter().all(|v| v.is_finite()));
        let abs = self.total;
        if t.step % self.k == 0 {
            // a fresh segment starts here; drop any unfinished one
            self.open_segment = Some(SegmentRef { start: abs, len: 0 });
        }
        if let Some(seg) = &mut self.open_segment {
            seg.len += 1;
            if seg.len == self.k || t.done {
                self.segments.push(*seg);
                self.open_segment = None;
            }
        }
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[(abs % self.capacity as u64) as usize] = t;
        }
        self.total += 1;
        self.evict_stale_segments();
    }

    fn evict_stale_segments(&mut self) {
        let low = self.low();
        while self.seg_head < self.segments.len() && self.segments[self.seg_head].start < low {
            self.seg_head += 1;
        }
        // compact occasionally so the vec does not grow unboundedly
        if self.seg_head > 4096 && self.seg_head * 2 > self.segments.len() {
            self.segments.drain(..self.seg_head);
            self.seg_head = 0;
        }
    }

    /// Uniform sample of `n` transitions with replacement.
    pub fn sample_uniform(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>> {
        if self.is_empty() {
            return Err(crate::CoreError::InsufficientBuffer("uniform transitions"));
        }
        let low = self.low();
        Ok((0..n)
            .map(|_| self.get(rng.gen_range(low..self.total)))
            .collect())
    }

    /// Triplets (s_i, s_{i+1}, s_{i+k}) from one episode each. When i+k
    /// runs past the end of the episode (or past the newest data), the
    /// final available state of that episode stands in for s_{i+k}.
    pub fn sample_triplets(&self, n: usize, k: u32, rng: &mut impl Rng) -> Result<Vec<Triplet>> {
        if self.is_empty() {
            return Err(crate::CoreError::InsufficientBuffer("triplets"));
        }
        let low = self.low();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.gen_range(low..self.total);
            let anchor = self.get(i);
            // last transition belonging to the same episode at distance < k
            let mut j = (i + k as u64 - 1).min(self.total - 1);
            while j > i && self.get(j).episode != anchor.episode {
                j -= 1;
            }
            let tail = self.get(j);
            out.push(Triplet::same_episode(
                anchor.s.clone(),
                anchor.s_next.clone(),
                tail.s_next.clone(),
                anchor.episode,
            ));
        }
        Ok(out)
    }

    fn live_segment_count(&self) -> usize {
        self.segments.len() - self.seg_head
    }

    /// Uniform sample of `n` completed high-level segments with replacement.
    pub fn sample_segments(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<SegmentSample>> {
        if self.live_segment_count() == 0 {
            return Err(crate::CoreError::InsufficientBuffer("segments"));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let pick = self.seg_head + rng.gen_range(0..self.live_segment_count());
            let seg = self.segments[pick];
            let first = self.get(seg.start);
            let last = self.get(seg.start + seg.len as u64 - 1);
            let r_sum = (0..seg.len as u64).map(|o| self.get(seg.start + o).r_env).sum();
            out.push(SegmentSample {
                s_start: first.s.clone(),
                g: first.g.clone(),
                r_sum,
                s_end: last.s_next.clone(),
                done: last.done,
            });
        }
        Ok(out)
    }

    /// A random contiguous run of up to `max_segments` completed segments
    /// from one episode, as the raw state sequence they cover plus the
    /// per-segment lengths (the last segment of an episode may be short).
    /// Used to build the support windows for hyperparameter updates.
    pub fn sample_window(
        &self,
        max_segments: u32,
        rng: &mut impl Rng,
    ) -> Option<(Vec<Vec<f64>>, Vec<u32>)> {
        let live = self.live_segment_count();
        if live == 0 {
            return None;
        }
        let pick = self.seg_head + rng.gen_range(0..live);
        // extend backwards from the picked segment while contiguous in the
        // same episode
        let mut first = pick;
        while first > self.seg_head
            && (pick - first) + 1 < max_segments as usize
            && self.segments[first - 1].start + self.segments[first - 1].len as u64
                == self.segments[first].start
            && self.get(self.segments[first - 1].start).episode
                == self.get(self.segments[pick].start).episode
            && self.segments[first - 1].start >= self.low()
        {
            first -= 1;
        }
        let mut states = Vec::new();
        let mut lens = Vec::with_capacity(pick - first + 1);
        for seg in &self.segments[first..=pick] {
            lens.push(seg.len);
            for off in 0..seg.len as u64 {
                states.push(self.get(seg.start + off).s.clone());
            }
        }
        // the closing state of the run
        let last = self.segments[pick];
        states.push(self.get(last.start + last.len as u64 - 1).s_next.clone());
        Some((states, lens))
    }

    /// Direct access to raw storage for checkpointing.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let low = self.low();
        (low..self.total).map(move |abs| self.get(abs))
    }

    /// Rebuilds a buffer from an ordered transition dump (oldest first),
    /// preserving absolute indexing and segment bookkeeping.
    pub fn rebuild(capacity: usize, k: u32, ordered: Vec<Transition>, total: u64) -> Self {
        let len = ordered.len();
        assert!(len <= capacity && len as u64 <= total);
        let start = total - len as u64;
        let data = if start == 0 {
            ordered
        } else {
            // wrapped ring: place each entry at its abs % capacity slot
            assert_eq!(len, capacity, "a wrapped ring must be full");
            let mut slots: Vec<Option<Transition>> = (0..capacity).map(|_| None).collect();
            for (i, t) in ordered.into_iter().enumerate() {
                let abs = start + i as u64;
                slots[(abs % capacity as u64) as usize] = Some(t);
            }
            slots.into_iter().map(|o| o.unwrap()).collect()
        };
        let mut buf = ReplayBuffer {
            capacity,
            k,
            data,
            total,
            segments: Vec::new(),
            seg_head: 0,
            open_segment: None,
        };
        let mut open: Option<SegmentRef> = None;
        for abs in start..total {
            let (step, done) = {
                let t = buf.get(abs);
                (t.step, t.done)
            };
            if step % k == 0 {
                open = Some(SegmentRef { start: abs, len: 0 });
            }
            if let Some(seg) = &mut open {
                seg.len += 1;
                if seg.len == k || done {
                    buf.segments.push(*seg);
                    open = None;
                }
            }
        }
        buf.open_segment = open;
        buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(episode: u64, step: u32, x: f64, done: bool) -> Transition {
        Transition {
            s: vec![x],
            g: vec![0.0, 0.0],
            a: vec![0.1],
            r_env: x,
            s_next: vec![x + 1.0],
            g_next: vec![0.0, 0.0],
            done,
            episode,
            step,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(2, 5);
        buf.push(tr(0, 0, 0.0, false));
        buf.push(tr(0, 1, 1.0, false));
        buf.push(tr(0, 2, 2.0, false));
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.get(1).s[0], 1.0);
        assert_eq!(buf.get(2).s[0], 2.0);
    }

    #[test]
    fn triplets_never_cross_episodes() {
        let mut buf = ReplayBuffer::new(1000, 5);
        let mut rng = crate::rng::stream(1, 1);
        // two episodes of 20 steps each, states tagged by episode
        for ep in 0..2u64 {
            for step in 0..20u32 {
                buf.push(tr(ep, step, (ep * 1000 + step as u64) as f64, step == 19));
            }
        }
        for _ in 0..100_000 {
            let t = &buf.sample_triplets(1, 5, &mut rng).unwrap()[0];
            let ep_i = (t.s_i[0] as u64) / 1000;
            let ep_k = ((t.s_k[0] - 1.0) as u64) / 1000;
            assert_eq!(ep_i, ep_k);
            // s_k is at most k ahead and never behind s_{i+1}
            let gap = t.s_k[0] - t.s_i[0];
            assert!((1.0..=5.0).contains(&gap), "gap {gap}");
        }
    }

    #[test]
    fn triplet_truncates_at_episode_end() {
        let mut buf = ReplayBuffer::new(100, 10);
        for step in 0..5u32 {
            buf.push(tr(0, step, step as f64, step == 4));
        }
        let mut rng = crate::rng::stream(2, 1);
        for _ in 0..200 {
            let t = &buf.sample_triplets(1, 10, &mut rng).unwrap()[0];
            // k=10 always exceeds the 5-step episode: s_k is the final state
            assert_eq!(t.s_k[0], 5.0);
        }
    }

    #[test]
    fn segment_rewards_match_recomputation() {
        let k = 4u32;
        let mut buf = ReplayBuffer::new(1000, k);
        let mut expected = Vec::new();
        for ep in 0..3u64 {
            let len = 10 + ep as u32 * 3; // not a multiple of k
            for step in 0..len {
                buf.push(tr(ep, step, (ep * 100 + step as u64) as f64, step == len - 1));
            }
            let mut step = 0;
            while step < len {
                let seg_len = k.min(len - step);
                let sum: f64 = (step..step + seg_len).map(|s| (ep * 100 + s as u64) as f64).sum();
                expected.push(((ep * 100 + step as u64) as f64, sum, seg_len));
                step += seg_len;
            }
        }
        let mut rng = crate::rng::stream(3, 1);
        let samples = buf.sample_segments(500, &mut rng).unwrap();
        for s in samples {
            let found = expected
                .iter()
                .find(|(start, _, _)| *start == s.s_start[0])
                .expect("sampled segment must be one of the constructed ones");
            assert_eq!(s.r_sum, found.1, "segment at {}", s.s_start[0]);
        }
    }

    #[test]
    fn insufficient_buffer_signals() {
        let buf = ReplayBuffer::new(10, 5);
        let mut rng = crate::rng::stream(4, 1);
        assert!(buf.sample_uniform(1, &mut rng).is_err());
        assert!(buf.sample_triplets(1, 5, &mut rng).is_err());
        assert!(buf.sample_segments(1, &mut rng).is_err());
    }

    #[test]
    fn sampled_window_spans_contiguous_segments() {
        let k = 4u32;
        let mut buf = ReplayBuffer::new(1000, k);
        // 14 steps: three full segments and a truncated 2-step one
        for step in 0..14u32 {
            buf.push(tr(0, step, step as f64, step == 13));
        }
        let mut rng = crate::rng::stream(5, 1);
        let mut saw_truncated = false;
        for _ in 0..100 {
            let (states, lens) = buf.sample_window(3, &mut rng).unwrap();
            assert!(!lens.is_empty() && lens.len() <= 3);
            let total: u32 = lens.iter().sum();
            assert_eq!(states.len() as u32, total + 1);
            for w in states.windows(2) {
                assert_eq!(w[1][0] - w[0][0], 1.0);
            }
            if *lens.last().unwrap() < k {
                saw_truncated = true;
            }
        }
        assert!(saw_truncated, "the short trailing segment must be sampleable");
    }

    #[test]
    fn rebuild_preserves_absolute_indexing() {
        let mut buf = ReplayBuffer::new(8, 3);
        for step in 0..20u32 {
            buf.push(tr(0, step, step as f64, step == 19));
        }
        let ordered: Vec<Transition> = buf.iter_ordered().cloned().collect();
        let rebuilt = ReplayBuffer::rebuild(8, 3, ordered, buf.total_pushed());
        assert_eq!(rebuilt.len(), buf.len());
        assert_eq!(rebuilt.total_pushed(), buf.total_pushed());
        for abs in buf.low()..buf.total_pushed() {
            assert_eq!(rebuilt.get(abs).s, buf.get(abs).s);
        }
        let mut r1 = crate::rng::stream(6, 1);
        let mut r2 = crate::rng::stream(6, 1);
        let s1 = buf.sample_segments(20, &mut r1).unwrap();
        let s2 = rebuilt.sample_segments(20, &mut r2).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert_eq!(a.s_start, b.s_start);
            assert_eq!(a.r_sum, b.r_sum);
        }
    }
}
