//! The trainable scene model: coarse vertex SDF prior plus residual-SDF
//! and color decoders over the feature grids.
//!
//! The SDF at a point is the trilinearly interpolated vertex prior plus a
//! small MLP over identity-warp geometry features; color is a small MLP
//! over the extended (multi-warp) texture features. Forward evaluations
//! record a [`SampleTape`] so the exact reverse-mode gradient can be
//! pushed back onto every parameter class: MLP weights, both feature
//! tables, and the vertex SDF values themselves.

use crate::config::{MapConfig, WarpMode};
use crate::grid::{ExtendedFeature, FootprintEntry, MultiHashGrid};
use crate::nn::{Mlp, MlpTape, OutputActivation};
use crate::octree::{CoarseSdfEval, SparseVoxelOctree};
use crate::texture::TextureClass;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GEOM_HASH_SALT: u64 = 0x67656f6d; // distinct hash params per grid
const TEX_HASH_SALT: u64 = 0x74657874;
const INIT_SALT: u64 = 0x696e6974;

/// Identifies one of the optimizable parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    GeomTable,
    TexTable,
    SdfMlp,
    ColorMlp,
    VertexSdf,
}

pub const PARAM_GROUPS: [ParamGroup; 5] = [
    ParamGroup::GeomTable,
    ParamGroup::TexTable,
    ParamGroup::SdfMlp,
    ParamGroup::ColorMlp,
    ParamGroup::VertexSdf,
];

/// The complete trainable scene model (vertex SDF values live in the
/// octree and are optimized alongside).
#[derive(Debug, Clone)]
pub struct NeuralField {
    pub geom_grid: MultiHashGrid,
    pub tex_grid: MultiHashGrid,
    pub sdf_mlp: Mlp,
    pub color_mlp: Mlp,
    pub compression: f64,
    pub warp_mode: WarpMode,
}

/// Gradient buffers matching the field's parameter groups.
#[derive(Debug, Clone)]
pub struct FieldGradients {
    pub geom_table: Vec<f64>,
    pub tex_table: Vec<f64>,
    pub sdf_mlp: Vec<f64>,
    pub color_mlp: Vec<f64>,
    pub vertex: Vec<f64>,
}

impl FieldGradients {
    pub fn zeros(field: &NeuralField, num_vertex_params: usize) -> Self {
        FieldGradients {
            geom_table: vec![0.0; field.geom_grid.table.len()],
            tex_table: vec![0.0; field.tex_grid.table.len()],
            sdf_mlp: vec![0.0; field.sdf_mlp.param_count()],
            color_mlp: vec![0.0; field.color_mlp.param_count()],
            vertex: vec![0.0; num_vertex_params],
        }
    }

    pub fn clear(&mut self) {
        for v in [
            &mut self.geom_table,
            &mut self.tex_table,
            &mut self.sdf_mlp,
            &mut self.color_mlp,
            &mut self.vertex,
        ] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Elementwise accumulate; used for the deterministic block reduction.
    pub fn add_assign(&mut self, other: &FieldGradients) {
        fn add(a: &mut [f64], b: &[f64]) {
            debug_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        add(&mut self.geom_table, &other.geom_table);
        add(&mut self.tex_table, &other.tex_table);
        add(&mut self.sdf_mlp, &other.sdf_mlp);
        add(&mut self.color_mlp, &other.color_mlp);
        add(&mut self.vertex, &other.vertex);
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        match g {
            ParamGroup::GeomTable => &self.geom_table,
            ParamGroup::TexTable => &self.tex_table,
            ParamGroup::SdfMlp => &self.sdf_mlp,
            ParamGroup::ColorMlp => &self.color_mlp,
            ParamGroup::VertexSdf => &self.vertex,
        }
    }
}

/// Everything recorded during one sample's forward pass that backward
/// needs; buffers are reused across samples.
#[derive(Debug, Clone, Default)]
pub struct SampleTape {
    pub geom_feats: Vec<f64>,
    pub geom_fp: Vec<FootprintEntry>,
    pub coarse: Option<CoarseSdfEval>,
    sdf_tape: MlpTape,
    pub s: f64,
    pub ext: ExtendedFeature,
    color_tape: MlpTape,
    pub color: [f64; 3],
    // backward scratch
    d_geom_feats: Vec<f64>,
    d_ext: Vec<f64>,
}

impl NeuralField {
    /// Builds an uninitialized field with the layout implied by the
    /// config; call [`init_parameters`](Self::init_parameters) before use.
    pub fn from_config(cfg: &MapConfig) -> Self {
        let geom_grid = MultiHashGrid::new(
            cfg.geom_levels(),
            cfg.grid_features,
            cfg.table_len(),
            1,
            cfg.seed ^ GEOM_HASH_SALT,
        );
        let tex_grid = MultiHashGrid::new(
            cfg.texture_levels(),
            cfg.grid_features,
            cfg.table_len(),
            cfg.max_dirs + 2,
            cfg.seed ^ TEX_HASH_SALT,
        );
        let sdf_mlp = Mlp::new(vec![geom_grid.slot_width(), 32, 32, 1], OutputActivation::None);
        let color_mlp = Mlp::new(
            vec![tex_grid.slot_width() * tex_grid.num_slots(), 32, 32, 3],
            OutputActivation::Sigmoid,
        );
        NeuralField {
            geom_grid,
            tex_grid,
            sdf_mlp,
            color_mlp,
            compression: cfg.compression,
            warp_mode: cfg.warp_mode,
        }
    }

    /// Deterministic parameter init: Xavier-uniform MLPs with zeroed
    /// output layers, feature tables uniform in ±1e-4.
    pub fn init_parameters(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT);
        self.sdf_mlp.init_xavier(&mut rng);
        self.color_mlp.init_xavier(&mut rng);
        self.geom_grid.init_table(&mut rng, 1e-4);
        self.tex_grid.init_table(&mut rng, 1e-4);
    }

    /// The class actually used for feature assembly: the uniform ablation
    /// collapses every voxel to identity-only lookups.
    pub fn effective_class(&self, class: TextureClass) -> TextureClass {
        match self.warp_mode {
            WarpMode::Quasi => class,
            WarpMode::Uniform => TextureClass::UnstructuredRich,
        }
    }

    /// Forward SDF at a point inside `leaf`, with tape.
    pub fn eval_sdf(
        &self,
        x: Vector3<f64>,
        leaf: u32,
        octree: &SparseVoxelOctree,
        tape: &mut SampleTape,
    ) -> f64 {
        let coarse = octree.coarse_sdf_in_leaf(x, leaf);
        tape.geom_feats.resize(self.geom_grid.slot_width(), 0.0);
        tape.geom_fp.clear();
        self.geom_grid.interpolate_into(x, 0, &mut tape.geom_feats, &mut tape.geom_fp);
        let out = self.sdf_mlp.forward_tape(&tape.geom_feats, &mut tape.sdf_tape);
        tape.s = coarse.value + out[0];
        tape.coarse = Some(coarse);
        tape.s
    }

    /// Forward color at a point, with tape. `dirs`/`class` come from the
    /// containing voxel's texture state.
    pub fn eval_color(
        &self,
        x: Vector3<f64>,
        voxel_center: Vector3<f64>,
        dirs: &[Vector3<f64>],
        class: TextureClass,
        tape: &mut SampleTape,
    ) -> [f64; 3] {
        let class = self.effective_class(class);
        self.tex_grid.assemble_extended_features_into(
            x,
            voxel_center,
            dirs,
            &class,
            self.compression,
            &mut tape.ext,
        );
        let out = self.color_mlp.forward_tape(&tape.ext.values, &mut tape.color_tape);
        tape.color = [out[0], out[1], out[2]];
        tape.color
    }

    /// Reverse pass for one sample: pushes `d_s` (gradient w.r.t. the
    /// predicted SDF) and `d_color` onto all parameter groups. Must be
    /// called with the tape of the matching forward evaluation.
    pub fn backward_sample(
        &self,
        tape: &mut SampleTape,
        d_s: f64,
        d_color: [f64; 3],
        grads: &mut FieldGradients,
    ) {
        if d_s != 0.0 {
            let coarse = tape.coarse.as_ref().expect("eval_sdf before backward");
            for &(slot, w) in &coarse.grads[..coarse.len] {
                grads.vertex[slot as usize] += d_s * w;
            }
            tape.d_geom_feats.resize(self.geom_grid.slot_width(), 0.0);
            self.sdf_mlp.backward_tape(
                &mut tape.sdf_tape,
                &[d_s],
                &mut grads.sdf_mlp,
                Some(&mut tape.d_geom_feats),
            );
            self.geom_grid
                .scatter_gradients(&tape.geom_fp, &tape.d_geom_feats, &mut grads.geom_table);
        }
        if d_color != [0.0; 3] {
            tape.d_ext.resize(self.color_mlp.input_dim(), 0.0);
            self.color_mlp.backward_tape(
                &mut tape.color_tape,
                &d_color,
                &mut grads.color_mlp,
                Some(&mut tape.d_ext),
            );
            let width = self.tex_grid.slot_width();
            for (slot, fp) in &tape.ext.footprints {
                self.tex_grid.scatter_gradients(
                    fp,
                    &tape.d_ext[slot * width..(slot + 1) * width],
                    &mut grads.tex_table,
                );
            }
        }
    }
}

/// Residual-form SDF prediction at a point; `None` outside the octree.
pub fn predict_sdf(
    x: Vector3<f64>,
    octree: &SparseVoxelOctree,
    field: &NeuralField,
) -> Option<f64> {
    let leaf = octree.leaf_at(x)?;
    let mut tape = SampleTape::default();
    Some(field.eval_sdf(x, leaf, octree, &mut tape))
}

/// Color prediction at a point in a voxel with the given texture state;
/// components lie in (0, 1).
pub fn predict_color(
    x: Vector3<f64>,
    voxel_center: Vector3<f64>,
    dirs: &[Vector3<f64>],
    class: TextureClass,
    field: &NeuralField,
) -> [f64; 3] {
    let mut tape = SampleTape::default();
    field.eval_color(x, voxel_center, dirs, class, &mut tape)
}
