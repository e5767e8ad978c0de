//! Per-voxel texture pattern tracking.
//!
//! Each leaf voxel is classified, in priority order, as rich-textured
//! with low-frequency directions (it intersects validated 3D line
//! segments whose fused directions are tracked across frames), as
//! weak-textured (fused color gradient below `tr_weak`), or as
//! unstructured rich-textured. The class picks the space warps used for
//! texture feature lookups.

use crate::camera::{backproject, project, Ray, RgbdFrame};
use crate::index::PackedMap;
use crate::linedetect::{sobel_magnitude, LineDetector, Segment2D};
use crate::octree::SparseVoxelOctree;
use nalgebra::Vector3;
use std::io::Write;

/// A validated, planar 3D line segment.
#[derive(Debug, Clone)]
pub struct LineSegment3D {
    pub endpoints: [Vector3<f64>; 2],
    /// Unit direction, canonicalized so its first nonzero component is
    /// positive (line directions are unsigned).
    pub direction: Vector3<f64>,
    pub confidence: f64,
    pub source_frame: u64,
}

/// Why a 2D segment failed 3D validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentRejection {
    OffPlane,
    InvalidDepth,
    Occlusion,
}

/// Tracked low-frequency directions of one voxel with their fused weights.
#[derive(Debug, Clone, Default)]
pub struct VoxelDirectionState {
    /// At most `M` unit directions with positive weights.
    pub dirs: Vec<(Vector3<f64>, f64)>,
}

/// Fused color gradient of one voxel.
#[derive(Debug, Clone, Copy, Default)]
pub struct VoxelGradientState {
    pub gradient: f64,
    pub pixel_count: f64,
}

/// Texture classification of one voxel; the priority order is
/// rich-with-directions, then weak, then unstructured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureClass {
    /// Bit `m` set means tracked direction slot `m` is present.
    RichWithLowFreq { slot_mask: u8 },
    Weak,
    UnstructuredRich,
}

/// Flips a direction so its first component with magnitude above 1e-12 is
/// positive.
pub fn canonicalize_direction(d: Vector3<f64>) -> Vector3<f64> {
    for a in 0..3 {
        if d[a].abs() > 1e-12 {
            return if d[a] < 0.0 { -d } else { d };
        }
    }
    d
}

/// Validates a detected 2D segment against the depth image.
///
/// Both endpoints are lifted to 3D; five points sampled uniformly on the
/// 3D chord are projected back into the frame. A sample whose measured
/// depth differs from the chord depth by more than `3 * tr_plane` marks an
/// occlusion edge; otherwise the segment is accepted iff the summed
/// distance between chord points and their measured back-projections is
/// below `tr_plane`.
pub fn validate_line_segment(
    seg: &Segment2D,
    frame: &RgbdFrame,
    tr_plane: f64,
) -> Result<LineSegment3D, SegmentRejection> {
    let k = &frame.intrinsics;
    let lift = |(row, col): (f64, f64)| -> Option<Vector3<f64>> {
        let (r, c) = (row.round(), col.round());
        if !k.contains(r, c) {
            return None;
        }
        let d = frame.depth.valid(r as u32, c as u32)?;
        backproject((row, col), d, k, &frame.pose)
    };
    let q0 = lift(seg.p0).ok_or(SegmentRejection::InvalidDepth)?;
    let q1 = lift(seg.p1).ok_or(SegmentRejection::InvalidDepth)?;

    let mut distance_sum = 0.0;
    for i in 0..5 {
        let t = i as f64 / 4.0;
        let p = q0 + (q1 - q0) * t;
        let Some((row, col, chord_z)) = project(p, k, &frame.pose) else {
            return Err(SegmentRejection::InvalidDepth);
        };
        let (r, c) = (row.round(), col.round());
        if !k.contains(r, c) {
            return Err(SegmentRejection::InvalidDepth);
        }
        let Some(measured) = frame.depth.valid(r as u32, c as u32) else {
            return Err(SegmentRejection::InvalidDepth);
        };
        if (measured - chord_z).abs() > 3.0 * tr_plane {
            return Err(SegmentRejection::Occlusion);
        }
        let back = backproject((row, col), measured, k, &frame.pose).expect("measured > 0");
        distance_sum += (p - back).norm();
    }
    if distance_sum >= tr_plane {
        return Err(SegmentRejection::OffPlane);
    }
    let dir = canonicalize_direction((q1 - q0).normalize());
    Ok(LineSegment3D {
        endpoints: [q0, q1],
        direction: dir,
        confidence: seg.confidence,
        source_frame: frame.frame_id,
    })
}

/// Fuses the directions of the segments intersecting one voxel in one
/// frame: repeatedly take the highest-confidence remaining direction,
/// average it (sign-aligned, confidence-weighted) with every direction
/// within `tr_near` of it, and remove the group; stop after `max_dirs`
/// groups.
pub fn fuse_frame_directions(
    segments: &[(Vector3<f64>, f64)],
    tr_near: f64,
    max_dirs: usize,
) -> Vec<(Vector3<f64>, f64)> {
    let mut remaining: Vec<(Vector3<f64>, f64)> = segments.to_vec();
    let mut fused = Vec::new();
    while !remaining.is_empty() && fused.len() < max_dirs {
        let best = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let d_max = remaining[best].0;
        let mut acc = Vector3::zeros();
        let mut weight = 0.0;
        let mut keep = Vec::new();
        for (d, w) in remaining.into_iter() {
            let dot = d.dot(&d_max);
            if dot.abs() >= tr_near {
                acc += d * (w * dot.signum());
                weight += w;
            } else {
                keep.push((d, w));
            }
        }
        remaining = keep;
        if weight > 0.0 && acc.norm() > 1e-12 {
            fused.push((canonicalize_direction(acc.normalize()), weight));
        }
    }
    fused
}

/// Folds fused per-frame directions into the tracked per-voxel state: a
/// fused direction within `tr_near` of its best-matching tracked
/// direction updates it as a sign-aligned running weighted mean; otherwise
/// it opens a new slot while fewer than `max_dirs` exist.
pub fn update_voxel_directions(
    state: &mut VoxelDirectionState,
    fused: &[(Vector3<f64>, f64)],
    tr_near: f64,
    max_dirs: usize,
) {
    for &(dir, w) in fused {
        let best = state
            .dirs
            .iter()
            .enumerate()
            .map(|(m, (d, _))| (m, dir.dot(d).abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        match best {
            Some((m, sim)) if sim >= tr_near => {
                let (tracked, weight) = state.dirs[m];
                let sign = dir.dot(&tracked).signum();
                let merged = tracked * weight + dir * (w * sign);
                if merged.norm() > 1e-12 {
                    state.dirs[m] = (canonicalize_direction(merged.normalize()), weight + w);
                }
            }
            _ if state.dirs.len() < max_dirs => {
                state.dirs.push((canonicalize_direction(dir), w));
            }
            _ => {}
        }
    }
}

/// Running pixel-count-weighted mean of per-frame average color gradients.
pub fn update_voxel_gradient(state: &mut VoxelGradientState, g: f64, cnt: f64) {
    debug_assert!(g >= 0.0 && cnt >= 0.0);
    if cnt <= 0.0 {
        return;
    }
    let total = state.pixel_count + cnt;
    state.gradient = (state.pixel_count * state.gradient + cnt * g) / total;
    state.pixel_count = total;
}

/// Pure classification from the tracked states.
pub fn classify_voxel(
    dir_state: &VoxelDirectionState,
    grad_state: &VoxelGradientState,
    tr_weak: f64,
) -> TextureClass {
    if !dir_state.dirs.is_empty() {
        TextureClass::RichWithLowFreq {
            slot_mask: ((1u16 << dir_state.dirs.len()) - 1) as u8,
        }
    } else if grad_state.gradient < tr_weak {
        TextureClass::Weak
    } else {
        TextureClass::UnstructuredRich
    }
}

/// Per-voxel mean gradient magnitude and pixel count for one frame:
/// valid-depth pixels are binned by the voxel containing their
/// backprojection. Keys are packed voxel indices.
pub fn per_frame_voxel_stats(
    frame: &RgbdFrame,
    octree: &SparseVoxelOctree,
) -> PackedMap<(f64, f64)> {
    let mag = sobel_magnitude(&frame.color);
    let k = &frame.intrinsics;
    let mut sums: PackedMap<(f64, f64)> = PackedMap::default();
    for row in 0..k.height {
        for col in 0..k.width {
            let Some(d) = frame.depth.valid(row, col) else { continue };
            let p = backproject((row as f64, col as f64), d, k, &frame.pose).expect("valid");
            let key = crate::index::GridIndex::of_point([p.x, p.y, p.z], octree.leaf_size()).pack();
            let e = sums.entry(key).or_insert((0.0, 0.0));
            e.0 += mag[(row * k.width + col) as usize];
            e.1 += 1.0;
        }
    }
    for (_, v) in sums.iter_mut() {
        v.0 /= v.1;
    }
    sums
}

/// Parameters of the texture tracking stage.
#[derive(Debug, Clone)]
pub struct TextureParams {
    pub tr_plane: f64,
    pub tr_near: f64,
    pub tr_weak: f64,
    pub max_dirs: usize,
}

/// Per-voxel texture state for every allocated leaf, indexed by leaf id.
#[derive(Debug, Clone)]
pub struct VoxelTextureState {
    pub dirs: VoxelDirectionState,
    pub grad: VoxelGradientState,
    pub class: TextureClass,
}

impl Default for VoxelTextureState {
    fn default() -> Self {
        VoxelTextureState {
            dirs: VoxelDirectionState::default(),
            grad: VoxelGradientState::default(),
            class: TextureClass::Weak,
        }
    }
}

/// Texture states of the whole octree; grows as leaves are allocated.
#[derive(Debug, Clone, Default)]
pub struct TextureField {
    states: Vec<VoxelTextureState>,
}

impl TextureField {
    pub fn sync_with(&mut self, octree: &SparseVoxelOctree) {
        self.states.resize_with(octree.num_leaves(), VoxelTextureState::default);
    }

    pub fn state(&self, leaf: u32) -> &VoxelTextureState {
        &self.states[leaf as usize]
    }

    pub fn state_mut(&mut self, leaf: u32) -> &mut VoxelTextureState {
        &mut self.states[leaf as usize]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Runs one texture-pattern determination pass: segment detection and
    /// validation, per-voxel direction fusion, gradient fusion, and
    /// reclassification.
    pub fn update_from_frame(
        &mut self,
        frame: &RgbdFrame,
        octree: &SparseVoxelOctree,
        detector: &dyn LineDetector,
        params: &TextureParams,
    ) {
        self.sync_with(octree);

        // Validated 3D segments grouped by the leaves they cross.
        let mut per_voxel: PackedMap<Vec<(Vector3<f64>, f64)>> = PackedMap::default();
        for seg in detector.detect(&frame.color, &frame.depth) {
            let Ok(seg3d) = validate_line_segment(&seg, frame, params.tr_plane) else {
                continue;
            };
            let chord = seg3d.endpoints[1] - seg3d.endpoints[0];
            let len = chord.norm();
            if len < 1e-9 {
                continue;
            }
            let ray = Ray {
                origin: seg3d.endpoints[0],
                direction: chord / len,
                pixel: (0, 0),
            };
            for (leaf, _, _) in octree.ray_leaf_intervals(&ray, 0.0, len) {
                per_voxel
                    .entry(leaf as u64)
                    .or_default()
                    .push((seg3d.direction, seg3d.confidence));
            }
        }
        let mut leaves: Vec<u64> = per_voxel.keys().copied().collect();
        leaves.sort_unstable();
        for leaf in leaves {
            let segs = &per_voxel[&leaf];
            let fused = fuse_frame_directions(segs, params.tr_near, params.max_dirs);
            update_voxel_directions(
                &mut self.states[leaf as usize].dirs,
                &fused,
                params.tr_near,
                params.max_dirs,
            );
        }

        // Gradient fusion over every voxel observed in this frame.
        let stats = per_frame_voxel_stats(frame, octree);
        for (key, (g, cnt)) in stats {
            let Some(leaf) = octree.leaf_id_at_index_packed(key) else { continue };
            update_voxel_gradient(&mut self.states[leaf as usize].grad, g, cnt);
        }

        for state in self.states.iter_mut() {
            state.class = classify_voxel(&state.dirs, &state.grad, params.tr_weak);
        }
    }

    /// Writes the per-voxel debug CSV.
    pub fn write_csv(
        &self,
        octree: &SparseVoxelOctree,
        mut out: impl Write,
    ) -> std::io::Result<()> {
        writeln!(out, "ix,iy,iz,class,gradient,pixel_count,dir_slots")?;
        for (leaf, state) in self.states.iter().enumerate() {
            let idx = octree.leaf_record(leaf as u32).index;
            let class = match state.class {
                TextureClass::RichWithLowFreq { .. } => "rich_low_freq",
                TextureClass::Weak => "weak",
                TextureClass::UnstructuredRich => "unstructured_rich",
            };
            let dirs: Vec<String> = state
                .dirs
                .dirs
                .iter()
                .map(|(d, w)| format!("({:.6};{:.6};{:.6};w={:.6})", d.x, d.y, d.z, w))
                .collect();
            writeln!(
                out,
                "{},{},{},{},{:.9},{}, {}",
                idx.x,
                idx.y,
                idx.z,
                class,
                state.grad.gradient,
                state.grad.pixel_count,
                dirs.join("|")
            )?;
        }
        Ok(())
    }
}
