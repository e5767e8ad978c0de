//! Per-iteration training: ray batching, the two-pass forward/backward
//! schedule, and the optimizer step.
//!
//! Pass 1 renders every ray and records the per-ray quantities the batch
//! losses need (rendered color/depth, supervision-set sizes). The batch
//! losses and their per-ray upstream gradients are then formed once, and
//! pass 2 re-evaluates each ray with tapes and pushes gradients onto the
//! parameter groups.
//!
//! Rays are split into a fixed number of blocks (`gradient_blocks`,
//! independent of the worker count); each block accumulates into its own
//! gradient buffer in ray order and the buffers are folded sequentially
//! in block order. Floating-point accumulation order is therefore fixed,
//! making training bit-reproducible for any thread count.

use crate::camera::{pixel_ray, RgbdFrame};
use crate::config::MapConfig;
use crate::field::{FieldGradients, NeuralField, SampleTape};
use crate::nn::{adam_step, AdamParams, AdamState};
use crate::octree::{RaySample, SparseVoxelOctree};
use crate::render::{
    alpha, alpha_ds, build_supervision_mask, loss_rgb_l1, render_ray, s3im, total_loss,
    LossBreakdown, LossWeights, RayRender, SampleRegion,
};
use crate::texture::TextureField;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

/// One ray with frozen samples and ground truth.
#[derive(Debug, Clone)]
pub struct RayWork {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    /// Converts distance along the ray to camera-frame z depth.
    pub z_factor: f64,
    pub gt_color: [f64; 3],
    /// 0 = no measurement.
    pub gt_depth: f64,
    pub samples: Vec<RaySample>,
}

/// A batch of rays with frozen samples; the loss is a deterministic
/// function of (batch, parameters), which the gradient checks rely on.
#[derive(Debug, Clone, Default)]
pub struct FixedBatch {
    pub rays: Vec<RayWork>,
}

/// Per-ray forward results needed by the batch losses.
#[derive(Debug, Clone)]
struct RayForward {
    render: Option<RayRender>,
    fs_count: u32,
    tr_count: u32,
    /// Per-ray mean of (s - tr)^2 over free-space samples.
    fs_mean: f64,
    /// Per-ray mean of (s - s_gt)^2 over truncation samples.
    tr_mean: f64,
}

/// Per-ray upstream gradients for pass 2.
#[derive(Debug, Clone, Copy, Default)]
struct RayUpstream {
    d_color: [f64; 3],
    d_depth: f64,
    /// Scale of the free-space SDF term: d L / d s = fs_scale * 2 (s - tr).
    fs_scale: f64,
    /// Scale of the truncation term: d L / d s = tr_scale * 2 (s - s_gt).
    tr_scale: f64,
}

/// Optimizer state over the five parameter groups.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub weights: LossWeights,
    hp: AdamParams,
    lr_features: f64,
    lr_mlp: f64,
    lr_vertex: f64,
    adam_geom: AdamState,
    adam_tex: AdamState,
    adam_sdf_mlp: AdamState,
    adam_color_mlp: AdamState,
    adam_vertex: AdamState,
    pub samples_per_ray: usize,
    pub near: f64,
    pub far: f64,
    pub pixels_per_iteration: usize,
    gradient_blocks: usize,
    seed: u64,
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: &MapConfig, field: &NeuralField) -> Self {
        Trainer {
            weights: LossWeights::from(cfg),
            hp: AdamParams { beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.adam_eps },
            lr_features: cfg.lr_features,
            lr_mlp: cfg.lr_mlp,
            lr_vertex: cfg.lr_vertex_sdf,
            adam_geom: AdamState::new(field.geom_grid.table.len()),
            adam_tex: AdamState::new(field.tex_grid.table.len()),
            adam_sdf_mlp: AdamState::new(field.sdf_mlp.param_count()),
            adam_color_mlp: AdamState::new(field.color_mlp.param_count()),
            adam_vertex: AdamState::new(0),
            samples_per_ray: cfg.samples_per_ray,
            near: cfg.near,
            far: cfg.far,
            pixels_per_iteration: cfg.pixels_per_iteration,
            gradient_blocks: cfg.gradient_blocks,
            seed: cfg.seed,
            step: 0,
        }
    }

    /// Draws `pixels_per_iteration` rays uniformly across the given frames
    /// and freezes stratified samples along each. Rays that miss every
    /// leaf keep an empty sample list and are excluded from all losses.
    pub fn sample_batch(
        &self,
        frames: &[Arc<RgbdFrame>],
        octree: &SparseVoxelOctree,
    ) -> FixedBatch {
        assert!(!frames.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.step.wrapping_mul(0x9e3779b97f4a7c15));
        let mut rays = Vec::with_capacity(self.pixels_per_iteration);
        for i in 0..self.pixels_per_iteration {
            let f = &frames[rng.gen_range(0..frames.len())];
            let row = rng.gen_range(0..f.intrinsics.height);
            let col = rng.gen_range(0..f.intrinsics.width);
            let ray = pixel_ray(f, (row, col));
            let mut jitter = ChaCha8Rng::seed_from_u64(
                self.seed ^ self.step.rotate_left(17) ^ (i as u64).wrapping_mul(0xd1342543de82ef95),
            );
            let samples = octree
                .ray_voxel_samples(&ray, self.samples_per_ray, self.near, self.far, &mut jitter)
                .unwrap_or_default();
            let [r, g, b] = f.color.get(row, col);
            rays.push(RayWork {
                origin: ray.origin,
                direction: ray.direction,
                z_factor: ray.direction.dot(&f.pose.optical_axis()),
                gt_color: [r as f64, g as f64, b as f64],
                gt_depth: f.depth.get(row, col),
                samples,
            });
        }
        FixedBatch { rays }
    }

    /// One optimization step over the given frames; returns the loss
    /// breakdown before the parameter update.
    pub fn training_iteration(
        &mut self,
        frames: &[Arc<RgbdFrame>],
        field: &mut NeuralField,
        octree: &mut SparseVoxelOctree,
        texture: &TextureField,
    ) -> LossBreakdown {
        let batch = self.sample_batch(frames, octree);
        let s3im_seed = self.seed ^ self.step.rotate_left(40) ^ 0x5331;
        let (losses, grads) = batch_loss_and_grads(
            field,
            octree,
            texture,
            &batch,
            &self.weights,
            s3im_seed,
            self.gradient_blocks,
        );
        self.apply(field, octree, &grads);
        self.step += 1;
        losses
    }

    /// Applies one Adam step per parameter group.
    pub fn apply(
        &mut self,
        field: &mut NeuralField,
        octree: &mut SparseVoxelOctree,
        grads: &FieldGradients,
    ) {
        adam_step(&mut field.geom_grid.table, &grads.geom_table, &mut self.adam_geom, self.lr_features, self.hp);
        adam_step(&mut field.tex_grid.table, &grads.tex_table, &mut self.adam_tex, self.lr_features, self.hp);
        adam_step(&mut field.sdf_mlp.params, &grads.sdf_mlp, &mut self.adam_sdf_mlp, self.lr_mlp, self.hp);
        adam_step(&mut field.color_mlp.params, &grads.color_mlp, &mut self.adam_color_mlp, self.lr_mlp, self.hp);
        self.adam_vertex.ensure_len(grads.vertex.len());
        adam_step(octree.vertex_values_mut(), &grads.vertex, &mut self.adam_vertex, self.lr_vertex, self.hp);
    }
}

/// Scratch owned by one block worker.
#[derive(Default)]
struct RayScratch {
    tapes: Vec<SampleTape>,
    alphas: Vec<f64>,
    s: Vec<f64>,
    colors: Vec<[f64; 3]>,
    z: Vec<f64>,
    dirs: Vec<Vector3<f64>>,
}

/// Forward-evaluates one ray's samples; fills scratch arrays (and tapes
/// when `keep_tapes`).
fn forward_ray(
    ray: &RayWork,
    field: &NeuralField,
    octree: &SparseVoxelOctree,
    texture: &TextureField,
    scratch: &mut RayScratch,
    keep_tapes: bool,
) {
    let n = ray.samples.len();
    scratch.s.clear();
    scratch.colors.clear();
    scratch.z.clear();
    scratch.alphas.clear();
    if keep_tapes && scratch.tapes.len() < n {
        scratch.tapes.resize_with(n, SampleTape::default);
    }
    let mut solo_tape = SampleTape::default();
    for (j, sample) in ray.samples.iter().enumerate() {
        let tape = if keep_tapes { &mut scratch.tapes[j] } else { &mut solo_tape };
        let s = field.eval_sdf(sample.point, sample.leaf, octree, tape);
        let state = texture.state(sample.leaf);
        scratch.dirs.clear();
        scratch.dirs.extend(state.dirs.dirs.iter().map(|(d, _)| *d));
        let center = octree.leaf_record(sample.leaf).center;
        let c = field.eval_color(sample.point, center, &scratch.dirs, state.class, tape);
        scratch.s.push(s);
        scratch.colors.push(c);
        scratch.z.push(sample.t * ray.z_factor);
    }
    let _ = &solo_tape;
}

fn ray_forward_summary(ray: &RayWork, scratch: &RayScratch, w: &LossWeights) -> RayForward {
    if ray.samples.is_empty() {
        return RayForward { render: None, fs_count: 0, tr_count: 0, fs_mean: 0.0, tr_mean: 0.0 };
    }
    let render = render_ray(&scratch.s, &scratch.colors, &scratch.z, w.beta);
    let mut fs_count = 0u32;
    let mut tr_count = 0u32;
    let mut fs_sum = 0.0;
    let mut tr_sum = 0.0;
    if let Some(mask) =
        build_supervision_mask(&scratch.z, &scratch.s, ray.gt_depth, w.beta, w.surface_aware)
    {
        for (j, region) in mask.regions.iter().enumerate() {
            match region {
                SampleRegion::FreeSpace => {
                    fs_count += 1;
                    fs_sum += (scratch.s[j] - w.tr).powi(2);
                }
                SampleRegion::Truncation => {
                    tr_count += 1;
                    tr_sum += (scratch.s[j] - mask.s_gt[j]).powi(2);
                }
                _ => {}
            }
        }
    }
    RayForward {
        render,
        fs_count,
        tr_count,
        fs_mean: if fs_count > 0 { fs_sum / fs_count as f64 } else { 0.0 },
        tr_mean: if tr_count > 0 { tr_sum / tr_count as f64 } else { 0.0 },
    }
}

/// Splits `n` items into `blocks` contiguous ranges (the last may be
/// short). The count is configuration, not worker count, so the gradient
/// reduction order never depends on parallelism.
fn block_ranges(n: usize, blocks: usize) -> Vec<std::ops::Range<usize>> {
    let size = n.div_ceil(blocks.max(1)).max(1);
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

/// Loss and exact gradients of the total loss over a frozen batch.
pub fn batch_loss_and_grads(
    field: &NeuralField,
    octree: &SparseVoxelOctree,
    texture: &TextureField,
    batch: &FixedBatch,
    w: &LossWeights,
    s3im_seed: u64,
    gradient_blocks: usize,
) -> (LossBreakdown, FieldGradients) {
    let n = batch.rays.len();
    let ranges = block_ranges(n, gradient_blocks);

    // Pass 1: forward-only, per-ray summaries (parallel over blocks).
    let forwards: Vec<Vec<RayForward>> = ranges
        .par_iter()
        .map(|range| {
            let mut scratch = RayScratch::default();
            batch.rays[range.clone()]
                .iter()
                .map(|ray| {
                    forward_ray(ray, field, octree, texture, &mut scratch, false);
                    ray_forward_summary(ray, &scratch, w)
                })
                .collect()
        })
        .collect();
    let forwards: Vec<RayForward> = forwards.into_iter().flatten().collect();

    // Batch losses and per-ray upstream gradients, in ray order.
    let mut rgb_indices = Vec::new();
    let mut rendered_colors = Vec::new();
    let mut gt_colors = Vec::new();
    let mut n_depth = 0usize;
    let mut depth_sum = 0.0;
    let mut n_fs = 0usize;
    let mut fs_sum = 0.0;
    let mut n_tr = 0usize;
    let mut tr_sum = 0.0;
    for (i, f) in forwards.iter().enumerate() {
        if let Some(r) = &f.render {
            rgb_indices.push(i);
            rendered_colors.push(r.color);
            gt_colors.push(batch.rays[i].gt_color);
            if batch.rays[i].gt_depth > 0.0 {
                n_depth += 1;
                depth_sum += (r.depth - batch.rays[i].gt_depth).abs();
            }
        }
        if f.fs_count > 0 {
            n_fs += 1;
            fs_sum += f.fs_mean;
        }
        if f.tr_count > 0 {
            n_tr += 1;
            tr_sum += f.tr_mean;
        }
    }
    let l_rgb_l1 = loss_rgb_l1(&rendered_colors, &gt_colors);
    let mut s3im_rng = ChaCha8Rng::seed_from_u64(s3im_seed);
    let s3im_result = s3im(&rendered_colors, &gt_colors, w.s3im_patch, w.s3im_groups, &mut s3im_rng);
    let l_s3im = s3im_result.as_ref().map(|r| r.loss).unwrap_or(0.0);
    let l_rgb = l_rgb_l1 + w.s3im_weight * l_s3im;
    let l_depth = if n_depth > 0 { depth_sum / n_depth as f64 } else { 0.0 };
    let l_fs = if n_fs > 0 { fs_sum / n_fs as f64 } else { 0.0 };
    let l_sdf = if n_tr > 0 { tr_sum / n_tr as f64 } else { 0.0 };
    let losses = LossBreakdown {
        sdf: l_sdf,
        freespace: l_fs,
        depth: l_depth,
        rgb: l_rgb,
        total: total_loss(l_sdf, l_fs, l_depth, l_rgb, w),
    };

    let mut upstream = vec![RayUpstream::default(); n];
    for (k, &i) in rgb_indices.iter().enumerate() {
        let r = forwards[i].render.as_ref().unwrap();
        let diff = [
            r.color[0] - batch.rays[i].gt_color[0],
            r.color[1] - batch.rays[i].gt_color[1],
            r.color[2] - batch.rays[i].gt_color[2],
        ];
        let norm = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
        let l1_scale = if norm > 1e-12 {
            1.0 / (norm * rgb_indices.len() as f64)
        } else {
            0.0
        };
        for ch in 0..3 {
            let mut d = diff[ch] * l1_scale;
            if let Some(s3) = &s3im_result {
                d += w.s3im_weight * s3.grad[k][ch];
            }
            upstream[i].d_color[ch] = w.alpha_rgb * d;
        }
        if batch.rays[i].gt_depth > 0.0 && n_depth > 0 {
            let sign = (r.depth - batch.rays[i].gt_depth).signum();
            let sign = if r.depth == batch.rays[i].gt_depth { 0.0 } else { sign };
            upstream[i].d_depth = w.alpha_d * sign / n_depth as f64;
        }
    }
    for (i, f) in forwards.iter().enumerate() {
        if f.fs_count > 0 && n_fs > 0 {
            upstream[i].fs_scale = w.alpha_fs / (f.fs_count as f64 * n_fs as f64);
        }
        if f.tr_count > 0 && n_tr > 0 {
            upstream[i].tr_scale = w.alpha_sdf / (f.tr_count as f64 * n_tr as f64);
        }
    }

    // Pass 2: tape forward + backward per block, then ordered fold.
    let num_vertex = octree.vertex_values().len();
    let block_grads: Vec<FieldGradients> = ranges
        .par_iter()
        .map(|range| {
            let mut grads = FieldGradients::zeros(field, num_vertex);
            let mut scratch = RayScratch::default();
            for i in range.clone() {
                let ray = &batch.rays[i];
                if ray.samples.is_empty() {
                    continue;
                }
                let up = &upstream[i];
                forward_ray(ray, field, octree, texture, &mut scratch, true);
                backward_ray(ray, up, &forwards[i], field, w, &mut scratch, &mut grads);
            }
            grads
        })
        .collect();
    let mut grads = FieldGradients::zeros(field, num_vertex);
    for bg in &block_grads {
        grads.add_assign(bg);
    }
    (losses, grads)
}

/// Forward-only total loss of a frozen batch (finite-difference oracle
/// support; must agree with `batch_loss_and_grads`).
pub fn batch_loss(
    field: &NeuralField,
    octree: &SparseVoxelOctree,
    texture: &TextureField,
    batch: &FixedBatch,
    w: &LossWeights,
    s3im_seed: u64,
) -> f64 {
    let (losses, _) = batch_loss_and_grads(field, octree, texture, batch, w, s3im_seed, 1);
    losses.total
}

fn backward_ray(
    ray: &RayWork,
    up: &RayUpstream,
    forward: &RayForward,
    field: &NeuralField,
    w: &LossWeights,
    scratch: &mut RayScratch,
    grads: &mut FieldGradients,
) {
    let n = ray.samples.len();
    scratch.alphas.clear();
    for j in 0..n {
        scratch.alphas.push(alpha(scratch.s[j], w.beta));
    }
    let mask = build_supervision_mask(&scratch.z, &scratch.s, ray.gt_depth, w.beta, w.surface_aware);
    let render = &forward.render;
    for j in 0..n {
        let mut d_s = 0.0;
        let mut d_c = [0.0; 3];
        if let Some(r) = render {
            // Renderer backward: C = sum(a c)/sum(a), D = sum(a z)/sum(a).
            let inv = 1.0 / r.alpha_sum;
            let mut d_alpha = 0.0;
            for ch in 0..3 {
                if up.d_color[ch] != 0.0 {
                    d_alpha += up.d_color[ch] * (scratch.colors[j][ch] - r.color[ch]) * inv;
                    d_c[ch] = up.d_color[ch] * scratch.alphas[j] * inv;
                }
            }
            if up.d_depth != 0.0 {
                d_alpha += up.d_depth * (scratch.z[j] - r.depth) * inv;
            }
            if d_alpha != 0.0 {
                d_s += d_alpha * alpha_ds(scratch.s[j], w.beta);
            }
        }
        if let Some(m) = &mask {
            match m.regions[j] {
                SampleRegion::FreeSpace => {
                    d_s += up.fs_scale * 2.0 * (scratch.s[j] - w.tr);
                }
                SampleRegion::Truncation => {
                    d_s += up.tr_scale * 2.0 * (scratch.s[j] - m.s_gt[j]);
                }
                SampleRegion::Dropped | SampleRegion::Unsupervised => {}
            }
        }
        if d_s != 0.0 || d_c != [0.0; 3] {
            field.backward_sample(&mut scratch.tapes[j], d_s, d_c, grads);
        }
    }
}
