//! Sparse voxel grid with an optimizable signed-distance prior on leaf
//! vertices.
//!
//! Only leaf-level voxels and their corner vertices are ever queried, so
//! the structure is realized as a hash-indexed leaf grid plus a shared
//! vertex map instead of a pointer tree. Adjacent leaves share vertex
//! entries, which makes the interpolated coarse SDF continuous across
//! faces by construction.
//!
//! Mutation (allocation, vertex initialization, optimizer updates) happens
//! on the mapping thread only; read-only queries may run concurrently
//! between mutations.

use crate::camera::{backproject, project, Ray, RgbdFrame};
use crate::index::{GridIndex, PackedMap, PackedSet};
use nalgebra::Vector3;
use rand::Rng;

/// Slot value marking a vertex whose SDF has not been observed yet.
const UNINITIALIZED: u32 = u32::MAX;

/// One allocated leaf voxel.
#[derive(Debug, Clone)]
pub struct VoxelRecord {
    pub index: GridIndex,
    pub center: Vector3<f64>,
    /// Corner vertex ids in (dx, dy, dz) binary order: index = dx | dy<<1 | dz<<2.
    pub corners: [u32; 8],
    pub first_seen_frame: u64,
}

#[derive(Debug, Clone)]
struct VertexRecord {
    index: GridIndex,
    /// Index into `vertex_values` once initialized, `UNINITIALIZED` before.
    slot: u32,
}

/// Sparse leaf-voxel grid with per-vertex SDF parameters.
#[derive(Debug, Clone)]
pub struct SparseVoxelOctree {
    leaf_size: f64,
    leaves: PackedMap<u32>,
    leaf_records: Vec<VoxelRecord>,
    vertices: PackedMap<u32>,
    vertex_records: Vec<VertexRecord>,
    /// SDF values of initialized vertices; the optimizer mutates this
    /// vector in place.
    vertex_values: Vec<f64>,
    /// Maps a value slot back to its vertex id (for serialization).
    slot_vertex: Vec<u32>,
    aabb_min: GridIndex,
    aabb_max: GridIndex,
}

/// Trilinear coarse-SDF evaluation with the weights needed for
/// backpropagation into vertex parameters.
#[derive(Debug, Clone, Copy)]
pub struct CoarseSdfEval {
    pub value: f64,
    /// (value slot, weight) pairs over the initialized corners, already
    /// renormalized. `len` entries are valid.
    pub grads: [(u32, f64); 8],
    pub len: usize,
    pub leaf: u32,
}

/// One point sample on a ray, inside an allocated leaf.
#[derive(Debug, Clone, Copy)]
pub struct RaySample {
    pub point: Vector3<f64>,
    /// Distance along the (unit) ray direction.
    pub t: f64,
    pub leaf: u32,
}

impl SparseVoxelOctree {
    pub fn new(leaf_size: f64) -> Self {
        assert!(leaf_size > 0.0);
        SparseVoxelOctree {
            leaf_size,
            leaves: PackedMap::default(),
            leaf_records: Vec::new(),
            vertices: PackedMap::default(),
            vertex_records: Vec::new(),
            vertex_values: Vec::new(),
            slot_vertex: Vec::new(),
            aabb_min: GridIndex::new(i32::MAX, i32::MAX, i32::MAX),
            aabb_max: GridIndex::new(i32::MIN, i32::MIN, i32::MIN),
        }
    }

    pub fn leaf_size(&self) -> f64 {
        self.leaf_size
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_records.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_records.len()
    }

    pub fn leaf_record(&self, leaf: u32) -> &VoxelRecord {
        &self.leaf_records[leaf as usize]
    }

    pub fn leaf_records(&self) -> &[VoxelRecord] {
        &self.leaf_records
    }

    pub fn leaf_id_at_index(&self, index: GridIndex) -> Option<u32> {
        self.leaves.get(&index.pack()).copied()
    }

    pub fn leaf_id_at_index_packed(&self, key: u64) -> Option<u32> {
        self.leaves.get(&key).copied()
    }

    /// Leaf containing a world point, if allocated.
    pub fn leaf_at(&self, p: Vector3<f64>) -> Option<u32> {
        let idx = GridIndex::of_point([p.x, p.y, p.z], self.leaf_size);
        self.leaf_id_at_index(idx)
    }

    /// Axis-aligned bounds of one leaf.
    pub fn leaf_bounds(&self, leaf: u32) -> (Vector3<f64>, Vector3<f64>) {
        let idx = self.leaf_records[leaf as usize].index;
        let h = self.leaf_size;
        let lo = Vector3::new(idx.x as f64 * h, idx.y as f64 * h, idx.z as f64 * h);
        (lo, lo.add_scalar(h))
    }

    /// Bounds of the allocated region (empty octree gives `None`).
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        if self.leaf_records.is_empty() {
            return None;
        }
        let h = self.leaf_size;
        let lo = Vector3::new(
            self.aabb_min.x as f64 * h,
            self.aabb_min.y as f64 * h,
            self.aabb_min.z as f64 * h,
        );
        let hi = Vector3::new(
            (self.aabb_max.x + 1) as f64 * h,
            (self.aabb_max.y + 1) as f64 * h,
            (self.aabb_max.z + 1) as f64 * h,
        );
        Some((lo, hi))
    }

    pub fn vertex_values(&self) -> &[f64] {
        &self.vertex_values
    }

    pub fn vertex_values_mut(&mut self) -> &mut [f64] {
        &mut self.vertex_values
    }

    /// (vertex grid index, slot) pairs in slot order, for checkpointing.
    pub fn initialized_vertices(&self) -> impl Iterator<Item = (GridIndex, u32)> + '_ {
        self.slot_vertex.iter().enumerate().map(|(slot, &vid)| {
            (self.vertex_records[vid as usize].index, slot as u32)
        })
    }

    fn vertex_id(&mut self, index: GridIndex) -> u32 {
        let key = index.pack();
        if let Some(&id) = self.vertices.get(&key) {
            return id;
        }
        let id = self.vertex_records.len() as u32;
        self.vertices.insert(key, id);
        self.vertex_records.push(VertexRecord { index, slot: UNINITIALIZED });
        id
    }

    fn allocate_index(&mut self, index: GridIndex, frame_id: u64) -> Option<u32> {
        let key = index.pack();
        if self.leaves.contains_key(&key) {
            return None;
        }
        let mut corners = [0u32; 8];
        for (c, corner) in corners.iter_mut().enumerate() {
            let d = (
                (c & 1) as i32,
                ((c >> 1) & 1) as i32,
                ((c >> 2) & 1) as i32,
            );
            *corner = self.vertex_id(index.offset(d.0, d.1, d.2));
        }
        let id = self.leaf_records.len() as u32;
        let h = self.leaf_size;
        self.leaf_records.push(VoxelRecord {
            index,
            center: Vector3::new(
                (index.x as f64 + 0.5) * h,
                (index.y as f64 + 0.5) * h,
                (index.z as f64 + 0.5) * h,
            ),
            corners,
            first_seen_frame: frame_id,
        });
        self.leaves.insert(key, id);
        self.aabb_min = GridIndex::new(
            self.aabb_min.x.min(index.x),
            self.aabb_min.y.min(index.y),
            self.aabb_min.z.min(index.z),
        );
        self.aabb_max = GridIndex::new(
            self.aabb_max.x.max(index.x),
            self.aabb_max.y.max(index.y),
            self.aabb_max.z.max(index.z),
        );
        Some(id)
    }

    /// Restores a leaf from a checkpoint record.
    pub(crate) fn restore_leaf(&mut self, index: GridIndex, first_seen_frame: u64) {
        self.allocate_index(index, first_seen_frame);
    }

    /// Restores an initialized vertex value from a checkpoint record.
    pub(crate) fn restore_vertex(&mut self, index: GridIndex, value: f64) {
        let id = self.vertex_id(index);
        let rec = &mut self.vertex_records[id as usize];
        if rec.slot == UNINITIALIZED {
            rec.slot = self.vertex_values.len() as u32;
            self.vertex_values.push(value);
            self.slot_vertex.push(id);
        } else {
            self.vertex_values[rec.slot as usize] = value;
        }
    }

    /// Allocates a leaf for every voxel containing a backprojected
    /// valid-depth pixel of the frame. Idempotent; returns the indices of
    /// voxels created by this call.
    pub fn allocate_voxels(&mut self, frame: &RgbdFrame) -> Vec<GridIndex> {
        let mut created = Vec::new();
        let k = &frame.intrinsics;
        for row in 0..k.height {
            for col in 0..k.width {
                let Some(d) = frame.depth.valid(row, col) else { continue };
                let p = backproject((row as f64, col as f64), d, k, &frame.pose)
                    .expect("valid depth");
                let idx = GridIndex::of_point([p.x, p.y, p.z], self.leaf_size);
                if self.allocate_index(idx, frame.frame_id).is_some() {
                    created.push(idx);
                }
            }
        }
        created
    }

    /// Initializes uninitialized vertices visible in the frame: the value
    /// is the measured depth at the vertex's projection minus the vertex's
    /// camera-frame depth. Already-initialized vertices are never
    /// overwritten. Returns the number of vertices initialized.
    pub fn init_vertex_sdf(&mut self, frame: &RgbdFrame) -> usize {
        let k = &frame.intrinsics;
        let h = self.leaf_size;
        let mut count = 0;
        for id in 0..self.vertex_records.len() {
            if self.vertex_records[id].slot != UNINITIALIZED {
                continue;
            }
            let idx = self.vertex_records[id].index;
            let pos = Vector3::new(idx.x as f64 * h, idx.y as f64 * h, idx.z as f64 * h);
            let Some((row, col, z)) = project(pos, k, &frame.pose) else { continue };
            let (r, c) = (row.round(), col.round());
            if !k.contains(r, c) {
                continue;
            }
            let Some(measured) = frame.depth.valid(r as u32, c as u32) else { continue };
            let value = measured - z;
            let rec = &mut self.vertex_records[id];
            rec.slot = self.vertex_values.len() as u32;
            self.vertex_values.push(value);
            self.slot_vertex.push(id as u32);
            count += 1;
        }
        count
    }

    /// Trilinearly interpolated coarse SDF at a point, or `None` outside
    /// every leaf. Uninitialized corner vertices are excluded and the
    /// remaining weights renormalized; with no initialized corner the
    /// value is 0 with an empty gradient.
    pub fn coarse_sdf_eval(&self, p: Vector3<f64>) -> Option<CoarseSdfEval> {
        let leaf = self.leaf_at(p)?;
        Some(self.coarse_sdf_in_leaf(p, leaf))
    }

    /// Same as [`coarse_sdf_eval`](Self::coarse_sdf_eval) for a point known
    /// to lie in `leaf` (as returned by the ray sampler).
    pub fn coarse_sdf_in_leaf(&self, p: Vector3<f64>, leaf: u32) -> CoarseSdfEval {
        let rec = &self.leaf_records[leaf as usize];
        let h = self.leaf_size;
        let fx = (p.x / h - rec.index.x as f64).clamp(0.0, 1.0);
        let fy = (p.y / h - rec.index.y as f64).clamp(0.0, 1.0);
        let fz = (p.z / h - rec.index.z as f64).clamp(0.0, 1.0);
        let mut grads = [(0u32, 0.0f64); 8];
        let mut len = 0;
        let mut wsum = 0.0;
        let mut acc = 0.0;
        for (c, &vid) in rec.corners.iter().enumerate() {
            let wx = if c & 1 == 1 { fx } else { 1.0 - fx };
            let wy = if (c >> 1) & 1 == 1 { fy } else { 1.0 - fy };
            let wz = if (c >> 2) & 1 == 1 { fz } else { 1.0 - fz };
            let w = wx * wy * wz;
            let slot = self.vertex_records[vid as usize].slot;
            if slot != UNINITIALIZED {
                grads[len] = (slot, w);
                len += 1;
                wsum += w;
                acc += w * self.vertex_values[slot as usize];
            }
        }
        if wsum <= 1e-12 {
            return CoarseSdfEval { value: 0.0, grads: [(0, 0.0); 8], len: 0, leaf };
        }
        let inv = 1.0 / wsum;
        for g in grads.iter_mut().take(len) {
            g.1 *= inv;
        }
        CoarseSdfEval { value: acc * inv, grads, len, leaf }
    }

    /// Plain coarse SDF value, `None` outside the octree.
    pub fn coarse_sdf(&self, p: Vector3<f64>) -> Option<f64> {
        self.coarse_sdf_eval(p).map(|e| e.value)
    }

    /// Ray / leaf-cell intersection intervals between `near` and `far`,
    /// in increasing `t` order: `(leaf, t_enter, t_exit)` per traversed
    /// leaf cell.
    pub fn ray_leaf_intervals(
        &self,
        ray: &Ray,
        near: f64,
        far: f64,
    ) -> Vec<(u32, f64, f64)> {
        let Some((lo, hi)) = self.bounds() else { return Vec::new() };
        let o = ray.origin;
        let d = ray.direction;
        // Clip [near, far] to the octree bounding box.
        let mut t0 = near;
        let mut t1 = far;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a] < lo[a] || o[a] > hi[a] {
                    return Vec::new();
                }
            } else {
                let ta = (lo[a] - o[a]) / d[a];
                let tb = (hi[a] - o[a]) / d[a];
                let (tmin, tmax) = if ta < tb { (ta, tb) } else { (tb, ta) };
                t0 = t0.max(tmin);
                t1 = t1.min(tmax);
            }
        }
        if t0 >= t1 {
            return Vec::new();
        }
        // Amanatides-Woo traversal over the voxel lattice.
        let h = self.leaf_size;
        let start = o + d * (t0 + 1e-12);
        let mut cell = GridIndex::of_point([start.x, start.y, start.z], h);
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        let mut step = [0i32; 3];
        for a in 0..3 {
            if d[a] > 1e-15 {
                step[a] = 1;
                let boundary = (cell.to_array()[a] as f64 + 1.0) * h;
                t_max[a] = (boundary - o[a]) / d[a];
                t_delta[a] = h / d[a];
            } else if d[a] < -1e-15 {
                step[a] = -1;
                let boundary = cell.to_array()[a] as f64 * h;
                t_max[a] = (boundary - o[a]) / d[a];
                t_delta[a] = -h / d[a];
            }
        }
        let mut intervals = Vec::new();
        let mut t_cur = t0;
        loop {
            let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            let t_next = t_max[axis].min(t1);
            if t_next > t_cur {
                if let Some(&leaf) = self.leaves.get(&cell.pack()) {
                    intervals.push((leaf, t_cur, t_next));
                }
            }
            if t_max[axis] >= t1 {
                break;
            }
            t_cur = t_max[axis];
            t_max[axis] += t_delta[axis];
            match axis {
                0 => cell.x += step[0],
                1 => cell.y += step[1],
                _ => cell.z += step[2],
            }
            let arr = cell.to_array();
            let (mn, mx) = (self.aabb_min, self.aabb_max);
            if arr[0] < mn.x - 1
                || arr[1] < mn.y - 1
                || arr[2] < mn.z - 1
                || arr[0] > mx.x + 1
                || arr[1] > mx.y + 1
                || arr[2] > mx.z + 1
            {
                break;
            }
        }
        intervals
    }

    /// Stratified samples over the union of ray-leaf intersection
    /// intervals clipped to `[near, far]`. Samples are sorted by `t`,
    /// strictly increasing, and each lies inside an allocated leaf.
    /// Returns `None` when the ray misses every leaf.
    pub fn ray_voxel_samples(
        &self,
        ray: &Ray,
        n_samples: usize,
        near: f64,
        far: f64,
        rng: &mut impl Rng,
    ) -> Option<Vec<RaySample>> {
        assert!(n_samples >= 1);
        let intervals = self.ray_leaf_intervals(ray, near, far);
        let total: f64 = intervals.iter().map(|&(_, a, b)| b - a).sum();
        if intervals.is_empty() || total <= 1e-12 {
            return None;
        }
        let mut samples = Vec::with_capacity(n_samples);
        let mut acc = 0.0;
        let mut k = 0usize;
        for i in 0..n_samples {
            let u = (i as f64 + rng.gen::<f64>()) / n_samples as f64;
            let s = u * total;
            while k + 1 < intervals.len() && acc + (intervals[k].2 - intervals[k].1) < s {
                acc += intervals[k].2 - intervals[k].1;
                k += 1;
            }
            let (leaf, a, b) = intervals[k];
            let len = b - a;
            let inside = (s - acc).clamp(len * 1e-9, len * (1.0 - 1e-9));
            let mut t = a + inside;
            if let Some(last) = samples.last() {
                let last: &RaySample = last;
                if t <= last.t {
                    t = last.t + 1e-12;
                }
            }
            samples.push(RaySample { point: ray.origin + ray.direction * t, t, leaf });
        }
        Some(samples)
    }

    /// Set of voxel indices (packed) containing backprojected valid-depth
    /// pixels sampled at `stride`. Pure geometric binning: the indices are
    /// reported whether or not the voxel is currently allocated.
    pub fn frame_voxel_set(&self, frame: &RgbdFrame, stride: u32) -> PackedSet {
        assert!(stride >= 1);
        let mut set = PackedSet::default();
        let k = &frame.intrinsics;
        let mut row = 0;
        while row < k.height {
            let mut col = 0;
            while col < k.width {
                if let Some(d) = frame.depth.valid(row, col) {
                    let p = backproject((row as f64, col as f64), d, k, &frame.pose)
                        .expect("valid depth");
                    set.insert(GridIndex::of_point([p.x, p.y, p.z], self.leaf_size).pack());
                }
                col += stride;
            }
            row += stride;
        }
        set
    }
}
