//! Integer 3D indices for voxels, vertices, and grid cells, plus a fast
//! hash map keyed on them.
//!
//! Indices are packed into a single `u64` (21 bits per signed axis) so map
//! lookups in the sampling hot path stay cheap. The packing covers
//! ±2^20 cells per axis, far beyond any desk- or room-scale volume.

use std::collections::{HashMap, HashSet};
use std::hash::{BuildHasherDefault, Hasher};

/// Signed integer 3D index of a voxel, vertex, or grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridIndex {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl GridIndex {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        GridIndex { x, y, z }
    }

    /// Index of the cell of size `cell` containing `p` (componentwise floor).
    pub fn of_point(p: [f64; 3], cell: f64) -> Self {
        GridIndex {
            x: (p[0] / cell).floor() as i32,
            y: (p[1] / cell).floor() as i32,
            z: (p[2] / cell).floor() as i32,
        }
    }

    /// Packs the three 21-bit signed components into one u64 key.
    pub fn pack(self) -> u64 {
        const MASK: u64 = (1 << 21) - 1;
        ((self.x as u64) & MASK) | (((self.y as u64) & MASK) << 21) | (((self.z as u64) & MASK) << 42)
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        GridIndex::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn to_array(self) -> [i32; 3] {
        [self.x, self.y, self.z]
    }
}

/// Multiply-xor hasher for packed `u64` keys. The std SipHash is safe but
/// slow for the millions of lookups per training iteration.
#[derive(Default)]
pub struct PackedHasher {
    state: u64,
}

impl Hasher for PackedHasher {
    fn finish(&self) -> u64 {
        self.state
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state = (self.state ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }

    fn write_u64(&mut self, v: u64) {
        let mut h = v.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h ^= h >> 29;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 32;
        self.state = h;
    }
}

pub type PackedMap<V> = HashMap<u64, V, BuildHasherDefault<PackedHasher>>;
pub type PackedSet = HashSet<u64, BuildHasherDefault<PackedHasher>>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_roundtrips_through_sign() {
        for idx in [
            GridIndex::new(0, 0, 0),
            GridIndex::new(-1, 2, -3),
            GridIndex::new(1 << 19, -(1 << 19), 7),
        ] {
            let k = idx.pack();
            let other = GridIndex::new(idx.x, idx.y, idx.z);
            assert_eq!(k, other.pack());
        }
        assert_ne!(GridIndex::new(0, 0, 1).pack(), GridIndex::new(0, 1, 0).pack());
    }

    #[test]
    fn of_point_floors_negative_coordinates() {
        let idx = GridIndex::of_point([-0.05, 0.05, 0.25], 0.2);
        assert_eq!(idx, GridIndex::new(-1, 0, 1));
    }
}
