//! Synthetic room scenes with analytic geometry: exact depth from
//! ray/box intersection, procedural wall textures, and closed-form
//! signed distance to the scene surface for geometry metrics.
//!
//! The room is an axis-aligned box viewed from inside (y is up);
//! optional axis-aligned slabs stand inside it. Textures are defined in
//! the 2D parameterization of each face, so stripe directions are exact
//! and line detection has clean ground truth.

use crate::camera::{pixel_ray, CameraIntrinsics, ColorImage, DepthImage, Pose, RgbdFrame};
use nalgebra::{Matrix3, Vector3};
use std::fmt::Write as _;

/// Procedural texture in a face's 2D (u, v) parameterization, meters.
#[derive(Debug, Clone, PartialEq)]
pub enum WallTexture {
    Uniform([f32; 3]),
    /// Stripes whose color varies along `u` when `vary_u`, else along
    /// `v`; band edges (the low-frequency direction) run along the other
    /// axis.
    Stripes { vary_u: bool, period: f64, colors: [[f32; 3]; 2] },
    Checker { period: f64, colors: [[f32; 3]; 2] },
    /// Blocky value noise with cells of `scale` meters.
    Noise { seed: u64, scale: f64, colors: [[f32; 3]; 2] },
}

impl WallTexture {
    pub fn color_at(&self, u: f64, v: f64) -> [f32; 3] {
        match self {
            WallTexture::Uniform(c) => *c,
            WallTexture::Stripes { vary_u, period, colors } => {
                let coord = if *vary_u { u } else { v };
                let k = (coord / period).floor() as i64;
                colors[(k.rem_euclid(2)) as usize]
            }
            WallTexture::Checker { period, colors } => {
                let ku = (u / period).floor() as i64;
                let kv = (v / period).floor() as i64;
                colors[((ku + kv).rem_euclid(2)) as usize]
            }
            WallTexture::Noise { seed, scale, colors } => {
                let ku = (u / scale).floor() as i64;
                let kv = (v / scale).floor() as i64;
                let t = hash01(*seed, ku, kv);
                [
                    colors[0][0] + (colors[1][0] - colors[0][0]) * t,
                    colors[0][1] + (colors[1][1] - colors[0][1]) * t,
                    colors[0][2] + (colors[1][2] - colors[0][2]) * t,
                ]
            }
        }
    }
}

fn hash01(seed: u64, a: i64, b: i64) -> f32 {
    let mut h = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((a as u64).wrapping_mul(0xd1342543de82ef95))
        .wrapping_add((b as u64).wrapping_mul(0xaf251af3b0f025b5));
    h ^= h >> 29;
    h = h.wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= h >> 32;
    (h >> 40) as f32 / (1u64 << 24) as f32
}

/// A textured axis-aligned box standing inside the room.
#[derive(Debug, Clone, PartialEq)]
pub struct Slab {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub texture: WallTexture,
}

/// A textured rectangle overriding part of one wall.
#[derive(Debug, Clone, PartialEq)]
pub struct Poster {
    /// Wall index (0..6): -x, +x, -y, +y, -z, +z.
    pub wall: usize,
    /// Center and half extent in the wall's (u, v) coordinates, meters.
    pub center: (f64, f64),
    pub half_size: (f64, f64),
    pub texture: WallTexture,
}

/// Axis-aligned room with per-wall textures and optional interior slabs.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub room_min: Vector3<f64>,
    pub room_max: Vector3<f64>,
    /// -x, +x, -y, +y, -z, +z.
    pub walls: [WallTexture; 6],
    pub slabs: Vec<Slab>,
    pub posters: Vec<Poster>,
}

/// Which surface a ray hit.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceHit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub color: [f32; 3],
}

impl SyntheticScene {
    pub fn contains(&self, p: Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] > self.room_min[a] && p[a] < self.room_max[a])
    }

    /// Signed distance to the scene surface: positive in free interior
    /// space, zero on walls and slab faces, negative inside walls/slabs.
    pub fn sdf(&self, p: Vector3<f64>) -> f64 {
        // Distance to the room boundary from inside (negative outside).
        let mut room = f64::INFINITY;
        for a in 0..3 {
            room = room.min(p[a] - self.room_min[a]).min(self.room_max[a] - p[a]);
        }
        let mut s = room;
        for slab in &self.slabs {
            s = s.min(box_sdf(p, slab.min, slab.max));
        }
        s
    }

    /// (u, v) parameterization of wall `w` at a point on it.
    fn wall_uv(&self, wall: usize, p: Vector3<f64>) -> (f64, f64) {
        match wall {
            0 | 1 => (p.z, p.y), // x walls: u along z, v along y
            2 | 3 => (p.x, p.z), // y walls (floor/ceiling)
            _ => (p.x, p.y),     // z walls: u along x, v along y
        }
    }

    fn wall_color(&self, wall: usize, p: Vector3<f64>) -> [f32; 3] {
        let (u, v) = self.wall_uv(wall, p);
        for poster in &self.posters {
            if poster.wall == wall
                && (u - poster.center.0).abs() <= poster.half_size.0
                && (v - poster.center.1).abs() <= poster.half_size.1
            {
                return poster.texture.color_at(u, v);
            }
        }
        self.walls[wall].color_at(u, v)
    }

    /// Exact nearest surface hit of a ray starting inside the room.
    pub fn cast_ray(&self, origin: Vector3<f64>, dir: Vector3<f64>) -> Option<SurfaceHit> {
        let mut best: Option<(f64, usize, bool, usize)> = None; // (t, wall/slab, is_slab, slab idx)
        // Room walls: exit of the interior.
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                continue;
            }
            let (bound, wall) = if dir[a] > 0.0 {
                (self.room_max[a], 2 * a + 1)
            } else {
                (self.room_min[a], 2 * a)
            };
            let t = (bound - origin[a]) / dir[a];
            if t > 1e-9 && best.map_or(true, |b| t < b.0) {
                best = Some((t, wall, false, 0));
            }
        }
        // Slab entry faces.
        for (si, slab) in self.slabs.iter().enumerate() {
            if let Some((t, face)) = ray_box_entry(origin, dir, slab.min, slab.max) {
                if t > 1e-9 && best.map_or(true, |b| t < b.0) {
                    best = Some((t, face, true, si));
                }
            }
        }
        let (t, face, is_slab, si) = best?;
        let point = origin + dir * t;
        let color = if is_slab {
            let slab = &self.slabs[si];
            let (u, v) = match face / 2 {
                0 => (point.z, point.y),
                1 => (point.x, point.z),
                _ => (point.x, point.y),
            };
            slab.texture.color_at(u, v)
        } else {
            self.wall_color(face, point)
        };
        Some(SurfaceHit { t, point, color })
    }

    /// Points sampled on the scene surface at roughly `density` points
    /// per square meter (deterministic grid).
    pub fn surface_points(&self, density: f64) -> Vec<Vector3<f64>> {
        let step = (1.0 / density.sqrt()).max(1e-4);
        let mut points = Vec::new();
        let (lo, hi) = (self.room_min, self.room_max);
        let mut emit_rect =
            |origin: Vector3<f64>, du: Vector3<f64>, dv: Vector3<f64>, lu: f64, lv: f64| {
                let nu = (lu / step).ceil() as usize;
                let nv = (lv / step).ceil() as usize;
                for i in 0..nu {
                    for j in 0..nv {
                        let u = (i as f64 + 0.5) * lu / nu as f64;
                        let v = (j as f64 + 0.5) * lv / nv as f64;
                        points.push(origin + du * u + dv * v);
                    }
                }
            };
        let ex = Vector3::new(1.0, 0.0, 0.0);
        let ey = Vector3::new(0.0, 1.0, 0.0);
        let ez = Vector3::new(0.0, 0.0, 1.0);
        let size = hi - lo;
        // 6 room walls.
        emit_rect(Vector3::new(lo.x, lo.y, lo.z), ez, ey, size.z, size.y);
        emit_rect(Vector3::new(hi.x, lo.y, lo.z), ez, ey, size.z, size.y);
        emit_rect(Vector3::new(lo.x, lo.y, lo.z), ex, ez, size.x, size.z);
        emit_rect(Vector3::new(lo.x, hi.y, lo.z), ex, ez, size.x, size.z);
        emit_rect(Vector3::new(lo.x, lo.y, lo.z), ex, ey, size.x, size.y);
        emit_rect(Vector3::new(lo.x, lo.y, hi.z), ex, ey, size.x, size.y);
        for slab in &self.slabs {
            let s = slab.max - slab.min;
            emit_rect(slab.min, ez, ey, s.z, s.y);
            emit_rect(Vector3::new(slab.max.x, slab.min.y, slab.min.z), ez, ey, s.z, s.y);
            emit_rect(slab.min, ex, ez, s.x, s.z);
            emit_rect(Vector3::new(slab.min.x, slab.max.y, slab.min.z), ex, ez, s.x, s.z);
            emit_rect(slab.min, ex, ey, s.x, s.y);
            emit_rect(Vector3::new(slab.min.x, slab.min.y, slab.max.z), ex, ey, s.x, s.y);
        }
        points
    }
}

fn box_sdf(p: Vector3<f64>, lo: Vector3<f64>, hi: Vector3<f64>) -> f64 {
    let c = (lo + hi) * 0.5;
    let half = (hi - lo) * 0.5;
    let q = Vector3::new(
        (p.x - c.x).abs() - half.x,
        (p.y - c.y).abs() - half.y,
        (p.z - c.z).abs() - half.z,
    );
    let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
    let inside = q.x.max(q.y).max(q.z).min(0.0);
    outside + inside
}

/// First intersection of a ray with a box from outside; returns
/// `(t, face)` with face in 0..6 (-x,+x,-y,+y,-z,+z).
fn ray_box_entry(
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    lo: Vector3<f64>,
    hi: Vector3<f64>,
) -> Option<(f64, usize)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut face = 0usize;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (ta, tb, f_enter) = if inv >= 0.0 {
            ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv, 2 * a)
        } else {
            ((hi[a] - origin[a]) * inv, (lo[a] - origin[a]) * inv, 2 * a + 1)
        };
        if ta > t0 {
            t0 = ta;
            face = f_enter;
        }
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    (t0 > 0.0).then_some((t0, face))
}

/// Camera pose at `eye` looking at `target` with world +y up and the
/// image rows growing downward.
pub fn look_at_pose(eye: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let f = (target - eye).normalize();
    let up = Vector3::new(0.0, 1.0, 0.0);
    let mut x = f.cross(&up);
    if x.norm() < 1e-9 {
        x = Vector3::new(1.0, 0.0, 0.0);
    }
    let x = x.normalize();
    let y = f.cross(&x).normalize() * -1.0;
    // Columns are the camera axes in world coordinates; y points down in
    // the image, so y ~= -up for level cameras.
    let y = -y;
    let rot = Matrix3::from_columns(&[x, y, f]);
    Pose::orthonormalized(rot, eye)
}

/// Inward-looking orbit: the camera circles the room center and looks
/// outward past it at the walls, sweeping all four of them.
pub fn orbit_trajectory(
    scene: &SyntheticScene,
    n_frames: usize,
    radius: f64,
    height: f64,
) -> Vec<Pose> {
    let c = (scene.room_min + scene.room_max) * 0.5;
    (0..n_frames)
        .map(|i| {
            let phi = i as f64 / n_frames as f64 * std::f64::consts::TAU;
            let eye = Vector3::new(
                c.x + radius * phi.cos(),
                scene.room_min.y + height,
                c.z + radius * phi.sin(),
            );
            // Look outward: away from the center through the camera.
            let out = Vector3::new(phi.cos(), 0.0, phi.sin());
            look_at_pose(eye, eye + out)
        })
        .collect()
}

/// Renders the exact RGB-D frames of a trajectory. Every pose must lie
/// inside the room (`Err` carries the offending frame index).
pub fn generate_synthetic(
    scene: &SyntheticScene,
    trajectory: &[Pose],
    intrinsics: CameraIntrinsics,
) -> Result<Vec<RgbdFrame>, usize> {
    let mut frames = Vec::with_capacity(trajectory.len());
    for (i, pose) in trajectory.iter().enumerate() {
        if !scene.contains(pose.translation) {
            return Err(i);
        }
        let mut color = ColorImage::filled(intrinsics.width, intrinsics.height, [0.0; 3]);
        let mut depth = DepthImage::filled(intrinsics.width, intrinsics.height, 0.0);
        let frame_stub = RgbdFrame::new(
            i as u64,
            ColorImage::filled(intrinsics.width, intrinsics.height, [0.0; 3]),
            DepthImage::filled(intrinsics.width, intrinsics.height, 0.0),
            *pose,
            intrinsics,
        );
        let axis = pose.optical_axis();
        for row in 0..intrinsics.height {
            for col in 0..intrinsics.width {
                let ray = pixel_ray(&frame_stub, (row, col));
                if let Some(hit) = scene.cast_ray(ray.origin, ray.direction) {
                    color.set(row, col, hit.color);
                    depth.set(row, col, (hit.t * ray.direction.dot(&axis)) as f32);
                }
            }
        }
        frames.push(RgbdFrame::new(i as u64, color, depth, *pose, intrinsics));
    }
    Ok(frames)
}

/// Built-in scenes used by the evaluation harness and CLI.
pub mod recipes {
    use super::*;

    /// 4 m square room: two striped walls facing two uniform walls.
    pub fn striped_room() -> SyntheticScene {
        SyntheticScene {
            room_min: Vector3::new(-2.0, 0.0, -2.0),
            room_max: Vector3::new(2.0, 2.5, 2.0),
            walls: [
                // -x: horizontal stripes (color varies along y = v, so
                // the low-frequency direction runs along z).
                WallTexture::Stripes {
                    vary_u: false,
                    period: 0.25,
                    colors: [[0.95, 0.92, 0.88], [0.12, 0.1, 0.1]],
                },
                // +x: uniform.
                WallTexture::Uniform([0.75, 0.73, 0.7]),
                // floor / ceiling: uniform.
                WallTexture::Uniform([0.5, 0.45, 0.4]),
                WallTexture::Uniform([0.9, 0.9, 0.92]),
                // -z: vertical stripes (color varies along x = u).
                WallTexture::Stripes {
                    vary_u: true,
                    period: 0.25,
                    colors: [[0.2, 0.4, 0.8], [0.9, 0.85, 0.2]],
                },
                // +z: uniform.
                WallTexture::Uniform([0.65, 0.7, 0.72]),
            ],
            slabs: Vec::new(),
            posters: Vec::new(),
        }
    }

    /// The striped room with one high-detail noise poster on the +z wall.
    pub fn poster_room() -> SyntheticScene {
        let mut scene = striped_room();
        scene.posters.push(Poster {
            wall: 5,
            center: (0.0, 1.25),
            half_size: (0.5, 0.5),
            texture: WallTexture::Noise {
                seed: 7,
                scale: 0.04,
                colors: [[0.05, 0.05, 0.1], [0.95, 0.9, 0.85]],
            },
        });
        scene
    }

    /// Room with a thin free-standing slab (thinner than the default
    /// truncation distance).
    pub fn thin_slab_room() -> SyntheticScene {
        let mut scene = SyntheticScene {
            room_min: Vector3::new(-2.0, 0.0, -2.0),
            room_max: Vector3::new(2.0, 2.5, 2.0),
            walls: [
                WallTexture::Uniform([0.8, 0.78, 0.75]),
                WallTexture::Uniform([0.7, 0.72, 0.75]),
                WallTexture::Uniform([0.5, 0.45, 0.4]),
                WallTexture::Uniform([0.9, 0.9, 0.92]),
                WallTexture::Uniform([0.6, 0.65, 0.7]),
                WallTexture::Uniform([0.75, 0.7, 0.68]),
            ],
            slabs: Vec::new(),
            posters: Vec::new(),
        };
        scene.slabs.push(Slab {
            min: Vector3::new(-0.6, 0.6, -0.015),
            max: Vector3::new(0.6, 1.8, 0.015),
            texture: WallTexture::Checker {
                period: 0.15,
                colors: [[0.85, 0.3, 0.2], [0.2, 0.3, 0.85]],
            },
        });
        scene
    }
}

/// Serializes a scene as text so datasets can carry their analytic
/// geometry (parsed back by [`parse_scene`]).
pub fn scene_to_text(scene: &SyntheticScene) -> String {
    let mut s = String::new();
    let v = |v: Vector3<f64>| format!("{:e} {:e} {:e}", v.x, v.y, v.z);
    let _ = writeln!(s, "room {} {}", v(scene.room_min), v(scene.room_max));
    let tex = |t: &WallTexture| -> String {
        let c = |c: [f32; 3]| format!("{:e} {:e} {:e}", c[0], c[1], c[2]);
        match t {
            WallTexture::Uniform(col) => format!("uniform {}", c(*col)),
            WallTexture::Stripes { vary_u, period, colors } => {
                format!("stripes {} {:e} {} {}", vary_u, period, c(colors[0]), c(colors[1]))
            }
            WallTexture::Checker { period, colors } => {
                format!("checker {:e} {} {}", period, c(colors[0]), c(colors[1]))
            }
            WallTexture::Noise { seed, scale, colors } => {
                format!("noise {} {:e} {} {}", seed, scale, c(colors[0]), c(colors[1]))
            }
        }
    };
    for (i, w) in scene.walls.iter().enumerate() {
        let _ = writeln!(s, "wall {} {}", i, tex(w));
    }
    for slab in &scene.slabs {
        let _ = writeln!(s, "slab {} {} {}", v(slab.min), v(slab.max), tex(&slab.texture));
    }
    for p in &scene.posters {
        let _ = writeln!(
            s,
            "poster {} {:e} {:e} {:e} {:e} {}",
            p.wall, p.center.0, p.center.1, p.half_size.0, p.half_size.1, tex(&p.texture)
        );
    }
    s
}

/// Parses [`scene_to_text`] output.
pub fn parse_scene(text: &str) -> Result<SyntheticScene, String> {
    let mut room = None;
    let mut walls: Vec<Option<WallTexture>> = vec![None; 6];
    let mut slabs = Vec::new();
    let mut posters = Vec::new();
    let parse_tex = |tokens: &[&str]| -> Result<WallTexture, String> {
        let f = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
        let c3 = |t: &[&str]| -> Result<[f32; 3], String> {
            Ok([f(t[0])? as f32, f(t[1])? as f32, f(t[2])? as f32])
        };
        match tokens.first().copied() {
            Some("uniform") => Ok(WallTexture::Uniform(c3(&tokens[1..4])?)),
            Some("stripes") => Ok(WallTexture::Stripes {
                vary_u: tokens[1].parse().map_err(|_| "bad bool")?,
                period: f(tokens[2])?,
                colors: [c3(&tokens[3..6])?, c3(&tokens[6..9])?],
            }),
            Some("checker") => Ok(WallTexture::Checker {
                period: f(tokens[1])?,
                colors: [c3(&tokens[2..5])?, c3(&tokens[5..8])?],
            }),
            Some("noise") => Ok(WallTexture::Noise {
                seed: tokens[1].parse().map_err(|_| "bad seed")?,
                scale: f(tokens[2])?,
                colors: [c3(&tokens[3..6])?, c3(&tokens[6..9])?],
            }),
            other => Err(format!("unknown texture {other:?}")),
        }
    };
    for line in text.lines() {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.is_empty() {
            continue;
        }
        let f = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
        match t[0] {
            "room" => {
                room = Some((
                    Vector3::new(f(t[1])?, f(t[2])?, f(t[3])?),
                    Vector3::new(f(t[4])?, f(t[5])?, f(t[6])?),
                ));
            }
            "wall" => {
                let i: usize = t[1].parse().map_err(|_| "bad wall index")?;
                walls[i] = Some(parse_tex(&t[2..])?);
            }
            "slab" => {
                slabs.push(Slab {
                    min: Vector3::new(f(t[1])?, f(t[2])?, f(t[3])?),
                    max: Vector3::new(f(t[4])?, f(t[5])?, f(t[6])?),
                    texture: parse_tex(&t[7..])?,
                });
            }
            "poster" => {
                posters.push(Poster {
                    wall: t[1].parse().map_err(|_| "bad wall")?,
                    center: (f(t[2])?, f(t[3])?),
                    half_size: (f(t[4])?, f(t[5])?),
                    texture: parse_tex(&t[6..])?,
                });
            }
            other => return Err(format!("unknown record '{other}'")),
        }
    }
    let (room_min, room_max) = room.ok_or("missing room record")?;
    let walls: Vec<WallTexture> = walls
        .into_iter()
        .enumerate()
        .map(|(i, w)| w.ok_or(format!("missing wall {i}")))
        .collect::<Result<_, _>>()?;
    Ok(SyntheticScene {
        room_min,
        room_max,
        walls: walls.try_into().unwrap(),
        slabs,
        posters,
    })
}
