//! Multiresolution feature grid backed by one shared hash table addressed
//! by several hash functions, one per warp kind.
//!
//! The table stores `F` features per (level, row); a row is selected by
//! hashing the integer cell-corner coordinates of the warped query point.
//! Each warp kind gets its own fixed set of random large primes so lookups
//! from different warps land in decorrelated rows of the same table.

use crate::index::GridIndex;
use crate::texture::TextureClass;
use crate::warp::{affine_warp, scaling_warp};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One corner contribution of a trilinear feature lookup: `base` is the
/// flat table offset of the corner's F-feature block, `weight` its
/// interpolation weight.
#[derive(Debug, Clone, Copy)]
pub struct FootprintEntry {
    pub base: u32,
    pub weight: f64,
}

/// Feature grid with `levels.len()` resolutions, `f` features per level,
/// a table of `t` rows per level, and one hash function per warp slot.
#[derive(Debug, Clone)]
pub struct MultiHashGrid {
    levels: Vec<f64>,
    f: usize,
    t: usize,
    primes: Vec<[u64; 3]>,
    offsets: Vec<[u64; 3]>,
    /// Level-major storage: `((level * t) + row) * f + j`.
    pub table: Vec<f64>,
}

/// Fixed-length feature vector over all warp slots, zero-padded where a
/// warp is absent; the identity slot is always occupied.
#[derive(Debug, Clone, Default)]
pub struct ExtendedFeature {
    /// `(M+2) * L * F` values in slot-major order
    /// `[identity | scaling | affine_0 | ... | affine_{M-1}]`.
    pub values: Vec<f64>,
    /// Occupancy per slot.
    pub occupied: Vec<bool>,
    /// Interpolation footprints of the occupied slots, `L * 8` entries
    /// each, for backpropagation.
    pub footprints: Vec<(usize, Vec<FootprintEntry>)>,
    /// Recycled footprint buffers.
    spare: Vec<Vec<FootprintEntry>>,
}

/// Geometric progression of cell sizes from `coarsest` down to `finest`.
pub fn geometric_levels(coarsest: f64, finest: f64, l: usize) -> Vec<f64> {
    assert!(l >= 1 && coarsest > finest && finest > 0.0);
    if l == 1 {
        return vec![coarsest];
    }
    let ratio = (coarsest / finest).powf(1.0 / (l as f64 - 1.0));
    (0..l).map(|i| coarsest / ratio.powi(i as i32)).collect()
}

fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = mod_pow(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 0..s - 1 {
            x = mod_mul(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn mod_mul(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn mod_pow(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mod_mul(acc, base, m);
        }
        base = mod_mul(base, base, m);
        exp >>= 1;
    }
    acc
}

fn random_prime_32(rng: &mut impl Rng) -> u64 {
    loop {
        let c = rng.gen_range((1u64 << 31)..(1u64 << 32)) | 1;
        if is_prime_u64(c) {
            return c;
        }
    }
}

impl MultiHashGrid {
    /// Builds a grid with hash parameters drawn once from `seed`.
    pub fn new(levels: Vec<f64>, f: usize, t: usize, num_slots: usize, seed: u64) -> Self {
        assert!(t.is_power_of_two(), "table length must be a power of two");
        assert!(
            levels.windows(2).all(|w| w[1] < w[0]),
            "level cell sizes must strictly decrease"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut primes = Vec::with_capacity(num_slots);
        let mut offsets = Vec::with_capacity(num_slots);
        for _ in 0..num_slots {
            primes.push([
                random_prime_32(&mut rng),
                random_prime_32(&mut rng),
                random_prime_32(&mut rng),
            ]);
            offsets.push([
                random_prime_32(&mut rng),
                random_prime_32(&mut rng),
                random_prime_32(&mut rng),
            ]);
        }
        let table = vec![0.0; levels.len() * t * f];
        MultiHashGrid { levels, f, t, primes, offsets, table }
    }

    /// Builds a grid with explicit hash parameters (tests, checkpoints).
    pub fn with_hash_params(
        levels: Vec<f64>,
        f: usize,
        t: usize,
        primes: Vec<[u64; 3]>,
        offsets: Vec<[u64; 3]>,
    ) -> Self {
        assert!(t.is_power_of_two());
        assert_eq!(primes.len(), offsets.len());
        let table = vec![0.0; levels.len() * t * f];
        MultiHashGrid { levels, f, t, primes, offsets, table }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn features_per_level(&self) -> usize {
        self.f
    }

    pub fn table_len(&self) -> usize {
        self.t
    }

    pub fn num_slots(&self) -> usize {
        self.primes.len()
    }

    pub fn level_sizes(&self) -> &[f64] {
        &self.levels
    }

    pub fn hash_params(&self) -> (&[[u64; 3]], &[[u64; 3]]) {
        (&self.primes, &self.offsets)
    }

    /// Output width of one slot's feature vector.
    pub fn slot_width(&self) -> usize {
        self.levels.len() * self.f
    }

    /// Fills the table with uniform values in `±scale`.
    pub fn init_table(&mut self, rng: &mut impl Rng, scale: f64) {
        for v in self.table.iter_mut() {
            *v = (rng.gen::<f64>() * 2.0 - 1.0) * scale;
        }
    }

    /// Hash of an integer cell corner under hash function `slot`,
    /// in `[0, t)`.
    #[inline]
    pub fn hash_vertex(&self, v: GridIndex, slot: usize) -> usize {
        let pi = &self.primes[slot];
        let dl = &self.offsets[slot];
        let mut acc = 0u64;
        for (k, &c) in v.to_array().iter().enumerate() {
            acc ^= (c as i64 as u64).wrapping_mul(pi[k]).wrapping_add(dl[k]);
        }
        (acc & (self.t as u64 - 1)) as usize
    }

    /// Trilinear feature lookup at a (already warped) point under hash
    /// `slot`. Writes `L*F` features into `out` and appends `L*8`
    /// footprint entries.
    pub fn interpolate_into(
        &self,
        x: Vector3<f64>,
        slot: usize,
        out: &mut [f64],
        footprint: &mut Vec<FootprintEntry>,
    ) {
        debug_assert_eq!(out.len(), self.slot_width());
        let f = self.f;
        for (level, &cell) in self.levels.iter().enumerate() {
            let ux = x.x / cell;
            let uy = x.y / cell;
            let uz = x.z / cell;
            let bx = ux.floor();
            let by = uy.floor();
            let bz = uz.floor();
            let fx = ux - bx;
            let fy = uy - by;
            let fz = uz - bz;
            let base_idx = GridIndex::new(bx as i32, by as i32, bz as i32);
            let out_level = &mut out[level * f..(level + 1) * f];
            out_level.fill(0.0);
            for corner in 0..8usize {
                let dx = (corner & 1) as i32;
                let dy = ((corner >> 1) & 1) as i32;
                let dz = ((corner >> 2) & 1) as i32;
                let wx = if dx == 1 { fx } else { 1.0 - fx };
                let wy = if dy == 1 { fy } else { 1.0 - fy };
                let wz = if dz == 1 { fz } else { 1.0 - fz };
                let w = wx * wy * wz;
                let row = self.hash_vertex(base_idx.offset(dx, dy, dz), slot);
                let flat = ((level * self.t) + row) * f;
                let feats = &self.table[flat..flat + f];
                for (o, &v) in out_level.iter_mut().zip(feats) {
                    *o += w * v;
                }
                footprint.push(FootprintEntry { base: flat as u32, weight: w });
            }
        }
    }

    /// Allocating convenience wrapper around
    /// [`interpolate_into`](Self::interpolate_into).
    pub fn interpolate_features(
        &self,
        x: Vector3<f64>,
        slot: usize,
    ) -> (Vec<f64>, Vec<FootprintEntry>) {
        let mut out = vec![0.0; self.slot_width()];
        let mut fp = Vec::with_capacity(self.levels.len() * 8);
        self.interpolate_into(x, slot, &mut out, &mut fp);
        (out, fp)
    }

    /// Accumulates `weight * upstream` onto the table entries named by a
    /// footprint. `upstream` is the gradient of the loss with respect to
    /// the `L*F` interpolated features; `grad` is a table-shaped buffer.
    pub fn scatter_gradients(
        &self,
        footprint: &[FootprintEntry],
        upstream: &[f64],
        grad: &mut [f64],
    ) {
        debug_assert_eq!(footprint.len(), self.levels.len() * 8);
        debug_assert_eq!(upstream.len(), self.slot_width());
        debug_assert_eq!(grad.len(), self.table.len());
        let f = self.f;
        for (level, chunk) in footprint.chunks_exact(8).enumerate() {
            let up = &upstream[level * f..(level + 1) * f];
            for e in chunk {
                let dst = &mut grad[e.base as usize..e.base as usize + f];
                for (g, &u) in dst.iter_mut().zip(up) {
                    *g += e.weight * u;
                }
            }
        }
    }

    /// Assembles the fixed-length extended feature vector for a sample
    /// point in a voxel of a given texture class, reusing the buffers of
    /// `out`. The identity slot is always filled; the scaling slot is
    /// filled for weak-textured voxels; one affine slot per tracked
    /// direction is filled for rich-textured voxels; every other slot is
    /// zero.
    pub fn assemble_extended_features_into(
        &self,
        x: Vector3<f64>,
        voxel_center: Vector3<f64>,
        dirs: &[Vector3<f64>],
        class: &TextureClass,
        compression: f64,
        out: &mut ExtendedFeature,
    ) {
        let slots = self.num_slots();
        let width = self.slot_width();
        out.values.clear();
        out.values.resize(slots * width, 0.0);
        out.occupied.clear();
        out.occupied.resize(slots, false);
        // Recycle footprint vectors to keep the hot path allocation-free.
        out.spare.extend(out.footprints.drain(..).map(|(_, mut fp)| {
            fp.clear();
            fp
        }));

        let mut fill = |slot: usize, point: Vector3<f64>, out: &mut ExtendedFeature| {
            let mut fp = out.spare.pop().unwrap_or_default();
            self.interpolate_into(point, slot, &mut out.values[slot * width..(slot + 1) * width], &mut fp);
            out.footprints.push((slot, fp));
            out.occupied[slot] = true;
        };

        fill(SLOT_IDENTITY, x, out);

        match class {
            TextureClass::Weak => {
                fill(SLOT_SCALING, scaling_warp(x, compression), out);
            }
            TextureClass::RichWithLowFreq { slot_mask } => {
                for (m, dir) in dirs.iter().enumerate() {
                    if slot_mask & (1 << m) == 0 {
                        continue;
                    }
                    let slot = SLOT_AFFINE_BASE + m;
                    if slot >= slots {
                        break;
                    }
                    let warped = affine_warp(x, voxel_center, *dir, compression)
                        .expect("canonicalized direction is never degenerate");
                    fill(slot, warped, out);
                }
            }
            TextureClass::UnstructuredRich => {}
        }
    }

    /// Allocating wrapper around
    /// [`assemble_extended_features_into`](Self::assemble_extended_features_into).
    pub fn assemble_extended_features(
        &self,
        x: Vector3<f64>,
        voxel_center: Vector3<f64>,
        dirs: &[Vector3<f64>],
        class: &TextureClass,
        compression: f64,
    ) -> ExtendedFeature {
        let mut out = ExtendedFeature::default();
        self.assemble_extended_features_into(x, voxel_center, dirs, class, compression, &mut out);
        out
    }
}

/// Slot layout of the extended feature vector.
pub const SLOT_IDENTITY: usize = 0;
pub const SLOT_SCALING: usize = 1;
pub const SLOT_AFFINE_BASE: usize = 2;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_grid() -> MultiHashGrid {
        MultiHashGrid::new(geometric_levels(0.2, 0.025, 4), 2, 1 << 10, 4, 42)
    }

    #[test]
    fn geometric_levels_endpoints() {
        let l = geometric_levels(0.2, 0.025, 4);
        assert_eq!(l.len(), 4);
        assert_relative_eq!(l[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(l[3], 0.025, epsilon = 1e-12);
        assert!(l.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn generated_hash_params_are_prime_and_large() {
        let g = test_grid();
        let (primes, offsets) = g.hash_params();
        for row in primes.iter().chain(offsets.iter()) {
            for &p in row {
                assert!(p >= 1 << 31 && p < 1 << 32);
                assert!(is_prime_u64(p), "{p} is not prime");
            }
        }
    }

    #[test]
    fn hash_of_zero_vertex_with_zero_offsets() {
        let g = MultiHashGrid::with_hash_params(
            vec![0.2, 0.1],
            2,
            1 << 8,
            vec![[2147483659, 2147483693, 2147483713]],
            vec![[0, 0, 0]],
        );
        assert_eq!(g.hash_vertex(GridIndex::new(0, 0, 0), 0), 0);
    }

    #[test]
    fn hash_is_deterministic_and_slot_dependent() {
        let g = test_grid();
        let v = GridIndex::new(3, -7, 11);
        assert_eq!(g.hash_vertex(v, 0), g.hash_vertex(v, 0));
        let mut any_differ = false;
        for i in 0..100 {
            let v = GridIndex::new(i, 2 * i - 50, -i * 3);
            if g.hash_vertex(v, 0) != g.hash_vertex(v, 1) {
                any_differ = true;
                break;
            }
        }
        assert!(any_differ, "two hash functions should disagree somewhere");
    }

    #[test]
    fn interpolation_exact_on_grid_vertices() {
        let mut g = test_grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        g.init_table(&mut rng, 0.5);
        // A point exactly on a vertex of every level: the origin.
        let (feats, _) = g.interpolate_features(Vector3::zeros(), 0);
        for (level, _) in g.level_sizes().iter().enumerate() {
            let row = g.hash_vertex(GridIndex::new(0, 0, 0), 0);
            let flat = ((level * g.table_len()) + row) * g.features_per_level();
            for j in 0..g.features_per_level() {
                assert_relative_eq!(feats[level * 2 + j], g.table[flat + j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_of_constant_table_is_constant() {
        let mut g = test_grid();
        for v in g.table.iter_mut() {
            *v = 0.37;
        }
        let (feats, _) = g.interpolate_features(Vector3::new(0.123, -0.456, 0.789), 2);
        for v in feats {
            assert_relative_eq!(v, 0.37, epsilon = 1e-12);
        }
    }

    #[test]
    fn interpolation_matches_direct_trilinear_formula() {
        let mut g = test_grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        g.init_table(&mut rng, 1.0);
        use rand::Rng;
        for _ in 0..100 {
            let x = Vector3::new(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            );
            let slot = rng.gen_range(0..g.num_slots());
            let (feats, _) = g.interpolate_features(x, slot);
            for (level, &cell) in g.level_sizes().to_vec().iter().enumerate() {
                let u = [x.x / cell, x.y / cell, x.z / cell];
                let b = [u[0].floor(), u[1].floor(), u[2].floor()];
                let fr = [u[0] - b[0], u[1] - b[1], u[2] - b[2]];
                for j in 0..g.features_per_level() {
                    let mut expect = 0.0;
                    for corner in 0..8usize {
                        let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                        let mut w = 1.0;
                        for a in 0..3 {
                            w *= if d[a] == 1 { fr[a] } else { 1.0 - fr[a] };
                        }
                        let row = g.hash_vertex(
                            GridIndex::new(
                                b[0] as i32 + d[0] as i32,
                                b[1] as i32 + d[1] as i32,
                                b[2] as i32 + d[2] as i32,
                            ),
                            slot,
                        );
                        expect += w * g.table[((level * g.table_len()) + row)
                            * g.features_per_level()
                            + j];
                    }
                    assert_relative_eq!(feats[level * 2 + j], expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn scatter_puts_all_gradient_on_a_vertex_sample() {
        let g = test_grid();
        let (_, fp) = g.interpolate_features(Vector3::zeros(), 0);
        let upstream = vec![1.0; g.slot_width()];
        let mut grad = vec![0.0; g.table.len()];
        g.scatter_gradients(&fp, &upstream, &mut grad);
        // At a lattice point of every level the base corner carries weight
        // 1, the rest 0 (wherever hashes collide, weights still sum to 1).
        let total: f64 = grad.iter().sum();
        assert_relative_eq!(total, g.num_levels() as f64 * g.features_per_level() as f64, epsilon = 1e-12);
    }

    #[test]
    fn scatter_is_linear_over_samples() {
        let mut g = test_grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        g.init_table(&mut rng, 1.0);
        let a = Vector3::new(0.03, 0.11, -0.2);
        let b = Vector3::new(-0.4, 0.02, 0.3);
        let up = vec![0.5; g.slot_width()];
        let (_, fa) = g.interpolate_features(a, 1);
        let (_, fb) = g.interpolate_features(b, 1);
        let mut g1 = vec![0.0; g.table.len()];
        g.scatter_gradients(&fa, &up, &mut g1);
        g.scatter_gradients(&fb, &up, &mut g1);
        let mut g2 = vec![0.0; g.table.len()];
        g.scatter_gradients(&fa, &up, &mut g2);
        let mut g3 = vec![0.0; g.table.len()];
        g.scatter_gradients(&fb, &up, &mut g3);
        for i in 0..g1.len() {
            assert_relative_eq!(g1[i], g2[i] + g3[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn scatter_matches_central_differences() {
        let mut g = test_grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        g.init_table(&mut rng, 1.0);
        let x = Vector3::new(0.07, -0.13, 0.19);
        let upstream: Vec<f64> = (0..g.slot_width()).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let (_, fp) = g.interpolate_features(x, 0);
        let mut grad = vec![0.0; g.table.len()];
        g.scatter_gradients(&fp, &upstream, &mut grad);
        // loss = dot(upstream, features); check d loss / d entry by FD on
        // every touched entry.
        let h = 1e-6;
        let loss = |g: &MultiHashGrid| {
            let (f, _) = g.interpolate_features(x, 0);
            f.iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>()
        };
        let touched: Vec<usize> = fp
            .iter()
            .flat_map(|e| (0..g.features_per_level()).map(move |j| e.base as usize + j))
            .collect();
        for idx in touched {
            let mut gp = g.clone();
            gp.table[idx] += h;
            let mut gm = g.clone();
            gm.table[idx] -= h;
            let fd = (loss(&gp) - loss(&gm)) / (2.0 * h);
            assert!(
                (fd - grad[idx]).abs() <= 1e-4 * fd.abs().max(1.0),
                "entry {idx}: fd={fd} analytic={}",
                grad[idx]
            );
        }
        // Entries outside the footprint get exactly zero.
        let in_fp: std::collections::HashSet<usize> = fp
            .iter()
            .flat_map(|e| (0..g.features_per_level()).map(move |j| e.base as usize + j))
            .collect();
        for (i, &v) in grad.iter().enumerate() {
            if !in_fp.contains(&i) {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn extended_features_zero_pad_by_class() {
        let mut g = test_grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        g.init_table(&mut rng, 1.0);
        let x = Vector3::new(0.11, 0.05, 0.09);
        let center = Vector3::new(0.1, 0.1, 0.1);
        let dirs = [Vector3::new(1.0, 0.0, 0.0)];
        let width = g.slot_width();

        let unstructured =
            g.assemble_extended_features(x, center, &[], &TextureClass::UnstructuredRich, 0.1);
        assert_eq!(unstructured.values.len(), 4 * width);
        assert!(unstructured.occupied[SLOT_IDENTITY]);
        assert!(unstructured.values[..width].iter().any(|v| *v != 0.0));
        assert!(unstructured.values[width..].iter().all(|v| *v == 0.0));

        let weak = g.assemble_extended_features(x, center, &[], &TextureClass::Weak, 0.1);
        assert!(weak.occupied[SLOT_SCALING]);
        assert!(weak.values[width..2 * width].iter().any(|v| *v != 0.0));
        assert!(weak.values[2 * width..].iter().all(|v| *v == 0.0));

        let rich = g.assemble_extended_features(
            x,
            center,
            &dirs,
            &TextureClass::RichWithLowFreq { slot_mask: 0b01 },
            0.1,
        );
        assert!(rich.occupied[SLOT_AFFINE_BASE]);
        assert!(!rich.occupied[SLOT_SCALING]);
        assert!(rich.values[width..2 * width].iter().all(|v| *v == 0.0));
        assert!(rich.values[2 * width..3 * width].iter().any(|v| *v != 0.0));
        assert!(rich.values[3 * width..].iter().all(|v| *v == 0.0));
        assert_eq!(rich.values.len(), 4 * width);
    }
}
