//! Keyframe insertion, gradient-aided coverage-maximizing selection, and
//! adaptive pruning.
//!
//! A frame is inserted when it overlaps too little with the last inserted
//! keyframe or too many frames have passed. Each keyframe freezes, at
//! insertion time, the per-voxel score `max(cnt^2 * g, 1)` from its own
//! observation: looking closer at rich-textured regions raises both the
//! pixel count and the gradient, so those views win the greedy selection.
//! Once every covered voxel has been observed by some selected keyframe,
//! the coverage flags reset and keyframes never selected during the
//! elapsed epoch are pruned.

use crate::camera::RgbdFrame;
use crate::config::SelectionPolicy;
use crate::index::{PackedMap, PackedSet};
use crate::octree::SparseVoxelOctree;
use crate::texture::per_frame_voxel_stats;
use rand::Rng;
use std::sync::Arc;

/// Eq. floor-scored voxel contribution of one keyframe observation.
pub fn voxel_score(cnt: f64, g: f64) -> f64 {
    debug_assert!(cnt >= 0.0 && g >= 0.0);
    (cnt * cnt * g).max(1.0)
}

/// Why a frame was inserted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InsertReason {
    FirstFrame,
    LowOverlap(f64),
    MaxInterval,
}

/// One stored keyframe with its frozen per-voxel scores.
#[derive(Debug, Clone)]
pub struct KeyframeRecord {
    pub frame: Arc<RgbdFrame>,
    /// Voxels observed by this frame (packed indices, strided sampling).
    pub voxels: PackedSet,
    /// Frozen score per observed voxel.
    pub scores: PackedMap<f64>,
    pub ever_selected: bool,
    pub insertion_step: u64,
}

/// Observed/unobserved bookkeeping across selection rounds.
#[derive(Debug, Clone, Default)]
pub struct CoverageState {
    observed: PackedSet,
    pub epoch: u64,
}

/// The keyframe set driven by the mapping loop (single-threaded).
#[derive(Debug, Clone, Default)]
pub struct KeyframeSet {
    records: Vec<KeyframeRecord>,
    pub coverage: CoverageState,
    last_inserted: Option<(u64, PackedSet)>,
}

impl KeyframeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[KeyframeRecord] {
        &self.records
    }

    /// Insertion test against the last inserted keyframe: low overlap of
    /// the current frame's voxel set, or the maximum interval elapsed.
    pub fn should_insert(
        &self,
        frame_id: u64,
        frame_voxels: &PackedSet,
        overlap_threshold: f64,
        max_interval: u64,
    ) -> Option<InsertReason> {
        let Some((last_id, last_voxels)) = &self.last_inserted else {
            return Some(InsertReason::FirstFrame);
        };
        if frame_id.saturating_sub(*last_id) >= max_interval {
            return Some(InsertReason::MaxInterval);
        }
        if frame_voxels.is_empty() {
            return None;
        }
        let inter = frame_voxels.iter().filter(|v| last_voxels.contains(v)).count();
        let ratio = inter as f64 / frame_voxels.len() as f64;
        (ratio < overlap_threshold).then_some(InsertReason::LowOverlap(ratio))
    }

    /// Inserts a keyframe, freezing its voxel set and per-voxel scores
    /// from this frame's statistics.
    pub fn insert(
        &mut self,
        frame: Arc<RgbdFrame>,
        octree: &SparseVoxelOctree,
        stride: u32,
        step: u64,
    ) {
        let voxels = octree.frame_voxel_set(&frame, stride);
        let stats = per_frame_voxel_stats(&frame, octree);
        let mut scores = PackedMap::default();
        for &v in &voxels {
            let (g, cnt) = stats.get(&v).copied().unwrap_or((0.0, 0.0));
            scores.insert(v, voxel_score(cnt, g));
        }
        self.last_inserted = Some((frame.frame_id, voxels.clone()));
        self.records.push(KeyframeRecord {
            frame,
            voxels,
            scores,
            ever_selected: false,
            insertion_step: step,
        });
    }

    /// True when every voxel covered by a stored keyframe is observed.
    pub fn coverage_complete(&self) -> bool {
        self.records
            .iter()
            .flat_map(|r| r.voxels.iter())
            .all(|v| self.coverage.observed.contains(v))
    }

    /// Greedy top-score selection of up to `k` keyframes over the
    /// unobserved voxels; marks selections observed and triggers a
    /// coverage reset (with pruning if enabled) whenever coverage
    /// completes mid-selection. Returns indices into `records()` at the
    /// moment of return, plus the frame ids pruned along the way.
    pub fn select(
        &mut self,
        k: usize,
        policy: SelectionPolicy,
        prune: bool,
        rng: &mut impl Rng,
    ) -> (Vec<usize>, Vec<u64>) {
        assert!(k >= 1);
        if self.records.is_empty() {
            return (Vec::new(), Vec::new());
        }
        if policy == SelectionPolicy::Random {
            let mut chosen: Vec<usize> = Vec::new();
            let n = self.records.len();
            while chosen.len() < k.min(n) {
                let pick = rng.gen_range(0..n);
                if !chosen.contains(&pick) {
                    chosen.push(pick);
                }
            }
            let mut pruned = Vec::new();
            for &i in &chosen {
                self.records[i].ever_selected = true;
                let voxels: Vec<u64> = self.records[i].voxels.iter().copied().collect();
                self.coverage.observed.extend(voxels);
            }
            if self.coverage_complete() {
                pruned = self.reset_coverage_internal(prune);
            }
            return (chosen, pruned);
        }

        let mut selected_ids: Vec<u64> = Vec::new();
        let mut pruned = Vec::new();
        for _ in 0..k.min(self.records.len()) {
            if self.coverage_complete() {
                pruned.extend(self.reset_coverage_internal(prune));
            }
            let mut best: Option<(f64, u64, usize)> = None;
            for (i, rec) in self.records.iter().enumerate() {
                let sum: f64 = rec
                    .voxels
                    .iter()
                    .filter(|v| !self.coverage.observed.contains(v))
                    .map(|v| match policy {
                        SelectionPolicy::GradientAided => rec.scores[v],
                        _ => 1.0,
                    })
                    .sum();
                let candidate = (sum, rec.frame.frame_id, i);
                best = Some(match best {
                    None => candidate,
                    Some(b) => {
                        // Higher score wins; ties go to the lowest frame id.
                        if candidate.0 > b.0 || (candidate.0 == b.0 && candidate.1 < b.1) {
                            candidate
                        } else {
                            b
                        }
                    }
                });
            }
            let (_, frame_id, idx) = best.expect("nonempty record set");
            self.records[idx].ever_selected = true;
            let voxels: Vec<u64> = self.records[idx].voxels.iter().copied().collect();
            self.coverage.observed.extend(voxels);
            if !selected_ids.contains(&frame_id) {
                selected_ids.push(frame_id);
            }
        }
        // Map back to current indices (pruning inside the loop may have
        // shifted them).
        let indices = selected_ids
            .iter()
            .filter_map(|id| self.records.iter().position(|r| r.frame.frame_id == *id))
            .collect();
        (indices, pruned)
    }

    /// Public reset entry point; panics unless coverage is complete.
    pub fn reset_coverage(&mut self, prune: bool) -> Vec<u64> {
        assert!(self.coverage_complete(), "unobserved voxels remain");
        self.reset_coverage_internal(prune)
    }

    fn reset_coverage_internal(&mut self, prune: bool) -> Vec<u64> {
        let mut pruned = Vec::new();
        if prune {
            let latest = self
                .records
                .iter()
                .map(|r| r.insertion_step)
                .max()
                .unwrap_or(0);
            let survivors: Vec<bool> = self
                .records
                .iter()
                .map(|r| r.ever_selected || r.insertion_step == latest)
                .collect();
            // Never drop below one keyframe.
            if survivors.iter().any(|&s| s) {
                let mut i = 0;
                self.records.retain(|r| {
                    let keep = survivors[i];
                    i += 1;
                    if !keep {
                        pruned.push(r.frame.frame_id);
                    }
                    keep
                });
            }
        }
        for r in self.records.iter_mut() {
            r.ever_selected = false;
        }
        self.coverage.observed.clear();
        self.coverage.epoch += 1;
        pruned
    }
}
