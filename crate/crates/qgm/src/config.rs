//! Flat `key = value` configuration covering every tunable constant of
//! the pipeline.
//!
//! Unknown keys are rejected so typos fail loudly. `MapConfig::to_text`
//! writes every key with its current value, which doubles as the format
//! documentation; the same text is embedded in checkpoints so `render`
//! and `eval` reconstruct the exact model layout.

use crate::QgmError;

/// Keyframe selection policies (the non-default ones exist for the
/// ablation harness).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPolicy {
    /// Greedy coverage weighted by the per-voxel score floor(cnt^2 * g, 1).
    GradientAided,
    /// Greedy coverage with unit voxel scores.
    Coverage,
    /// Uniformly random among stored keyframes.
    Random,
}

/// Texture grid operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpMode {
    /// Per-class space warps (the full method).
    Quasi,
    /// Identity lookups only (uniform-grid ablation).
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapConfig {
    // Octree
    pub leaf_voxel_size: f64,
    pub near: f64,
    pub far: f64,
    pub samples_per_ray: usize,

    // Feature grids
    pub grid_levels: usize,
    pub grid_features: usize,
    pub table_size_log2: u32,
    /// Finest geometry cell = leaf_voxel_size / geom_finest_divisor.
    pub geom_finest_divisor: f64,
    /// Texture finest cell = geometry finest / texture_scale_difference.
    pub texture_scale_difference: f64,

    // Texture pattern
    pub max_dirs: usize,
    pub compression: f64,
    pub tr_plane: f64,
    pub tr_near: f64,
    pub tr_weak: f64,
    pub texture_update_interval: u64,
    pub min_segment_length_px: f64,
    pub detector_threshold: f64,
    pub warp_mode: WarpMode,

    // Keyframe policy
    pub keyframe_overlap_threshold: f64,
    pub keyframe_max_interval: u64,
    pub keyframe_stride: u32,
    pub select_k: usize,
    pub include_current_frame: bool,
    pub selection_policy: SelectionPolicy,
    pub adaptive_pruning: bool,

    // Training
    pub iterations_per_frame: usize,
    pub pixels_per_iteration: usize,
    pub lr_features: f64,
    pub lr_mlp: f64,
    pub lr_vertex_sdf: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub gradient_blocks: usize,

    // Losses
    pub alpha_sdf: f64,
    pub alpha_fs: f64,
    pub alpha_d: f64,
    pub alpha_rgb: f64,
    /// Truncation distance beta, meters.
    pub truncation: f64,
    /// Free-space SDF target, meters.
    pub tr_freespace: f64,
    pub s3im_weight: f64,
    pub s3im_patch: usize,
    pub s3im_groups: usize,
    /// Second-sign-change rule for the SDF loss.
    pub surface_aware: bool,

    // Run control
    pub seed: u64,
    /// Log a PSNR checkpoint every this many training iterations
    /// (0 disables curve logging).
    pub curve_interval: u64,
    /// Downscale factor for curve-logging renders.
    pub curve_downscale: u32,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            leaf_voxel_size: 0.2,
            near: 0.01,
            far: 8.0,
            samples_per_ray: 16,
            grid_levels: 4,
            grid_features: 2,
            table_size_log2: 15,
            geom_finest_divisor: 8.0,
            texture_scale_difference: 3.0,
            max_dirs: 2,
            compression: 0.1,
            tr_plane: 0.01,
            tr_near: 0.95,
            tr_weak: 0.2,
            texture_update_interval: 10,
            min_segment_length_px: 20.0,
            detector_threshold: 0.05,
            warp_mode: WarpMode::Quasi,
            keyframe_overlap_threshold: 0.85,
            keyframe_max_interval: 10,
            keyframe_stride: 4,
            select_k: 2,
            include_current_frame: true,
            selection_policy: SelectionPolicy::GradientAided,
            adaptive_pruning: true,
            iterations_per_frame: 2,
            pixels_per_iteration: 8192,
            lr_features: 1e-2,
            lr_mlp: 1e-3,
            lr_vertex_sdf: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-15,
            gradient_blocks: 16,
            alpha_sdf: 1000.0,
            alpha_fs: 10.0,
            alpha_d: 0.1,
            alpha_rgb: 1.0,
            truncation: 0.05,
            tr_freespace: 0.05,
            s3im_weight: 1.0,
            s3im_patch: 8,
            s3im_groups: 4,
            surface_aware: true,
            seed: 0,
            curve_interval: 0,
            curve_downscale: 2,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident : $kind:ident),* $(,)?) => {
        impl MapConfig {
            /// Serializes every key; the output parses back to an equal
            /// config.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(
                    s.push_str(concat!(stringify!($key), " = "));
                    s.push_str(&config_keys!(@fmt $kind, self.$key));
                    s.push('\n');
                )*
                s
            }

            fn set_key(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $(stringify!($key) => config_keys!(@parse $kind, self.$key, value),)*
                    _ => return Err(format!("unknown key '{key}'")),
                }
                Ok(())
            }
        }
    };
    (@fmt f64, $v:expr) => { format!("{:e}", $v) };
    (@fmt usize, $v:expr) => { format!("{}", $v) };
    (@fmt u64, $v:expr) => { format!("{}", $v) };
    (@fmt u32, $v:expr) => { format!("{}", $v) };
    (@fmt bool, $v:expr) => { format!("{}", $v) };
    (@fmt policy, $v:expr) => {
        match $v {
            SelectionPolicy::GradientAided => "gradient".to_string(),
            SelectionPolicy::Coverage => "coverage".to_string(),
            SelectionPolicy::Random => "random".to_string(),
        }
    };
    (@fmt warpmode, $v:expr) => {
        match $v {
            WarpMode::Quasi => "quasi".to_string(),
            WarpMode::Uniform => "uniform".to_string(),
        }
    };
    (@parse f64, $field:expr, $value:expr) => {
        $field = $value.parse::<f64>().map_err(|e| e.to_string())?
    };
    (@parse usize, $field:expr, $value:expr) => {
        $field = $value.parse::<usize>().map_err(|e| e.to_string())?
    };
    (@parse u64, $field:expr, $value:expr) => {
        $field = $value.parse::<u64>().map_err(|e| e.to_string())?
    };
    (@parse u32, $field:expr, $value:expr) => {
        $field = $value.parse::<u32>().map_err(|e| e.to_string())?
    };
    (@parse bool, $field:expr, $value:expr) => {
        $field = $value.parse::<bool>().map_err(|e| e.to_string())?
    };
    (@parse policy, $field:expr, $value:expr) => {
        $field = match $value {
            "gradient" => SelectionPolicy::GradientAided,
            "coverage" => SelectionPolicy::Coverage,
            "random" => SelectionPolicy::Random,
            other => return Err(format!("unknown selection policy '{other}'")),
        }
    };
    (@parse warpmode, $field:expr, $value:expr) => {
        $field = match $value {
            "quasi" => WarpMode::Quasi,
            "uniform" => WarpMode::Uniform,
            other => return Err(format!("unknown warp mode '{other}'")),
        }
    };
}

config_keys! {
    leaf_voxel_size: f64,
    near: f64,
    far: f64,
    samples_per_ray: usize,
    grid_levels: usize,
    grid_features: usize,
    table_size_log2: u32,
    geom_finest_divisor: f64,
    texture_scale_difference: f64,
    max_dirs: usize,
    compression: f64,
    tr_plane: f64,
    tr_near: f64,
    tr_weak: f64,
    texture_update_interval: u64,
    min_segment_length_px: f64,
    detector_threshold: f64,
    warp_mode: warpmode,
    keyframe_overlap_threshold: f64,
    keyframe_max_interval: u64,
    keyframe_stride: u32,
    select_k: usize,
    include_current_frame: bool,
    selection_policy: policy,
    adaptive_pruning: bool,
    iterations_per_frame: usize,
    pixels_per_iteration: usize,
    lr_features: f64,
    lr_mlp: f64,
    lr_vertex_sdf: f64,
    beta1: f64,
    beta2: f64,
    adam_eps: f64,
    gradient_blocks: usize,
    alpha_sdf: f64,
    alpha_fs: f64,
    alpha_d: f64,
    alpha_rgb: f64,
    truncation: f64,
    tr_freespace: f64,
    s3im_weight: f64,
    s3im_patch: usize,
    s3im_groups: usize,
    surface_aware: bool,
    seed: u64,
    curve_interval: u64,
    curve_downscale: u32,
}

impl MapConfig {
    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, unknown keys are errors. Keys not mentioned keep their
    /// defaults.
    pub fn parse(text: &str) -> Result<Self, QgmError> {
        let mut cfg = MapConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(QgmError::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            cfg.set_key(key.trim(), value.trim())
                .map_err(|e| QgmError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), QgmError> {
        let checks: [(&str, bool); 8] = [
            ("leaf_voxel_size > 0", self.leaf_voxel_size > 0.0),
            ("0 < compression < 1", self.compression > 0.0 && self.compression < 1.0),
            ("samples_per_ray >= 1", self.samples_per_ray >= 1),
            ("select_k >= 1", self.select_k >= 1),
            ("max_dirs in 1..=8", (1..=8).contains(&self.max_dirs)),
            ("truncation > 0", self.truncation > 0.0),
            ("tr_freespace > 0", self.tr_freespace > 0.0),
            ("gradient_blocks >= 1", self.gradient_blocks >= 1),
        ];
        for (what, ok) in checks {
            if !ok {
                return Err(QgmError::Config(format!("constraint violated: {what}")));
            }
        }
        Ok(())
    }

    /// Table length of the feature grids.
    pub fn table_len(&self) -> usize {
        1 << self.table_size_log2
    }

    /// Geometry grid cell sizes, coarsest to finest.
    pub fn geom_levels(&self) -> Vec<f64> {
        crate::grid::geometric_levels(
            self.leaf_voxel_size,
            self.leaf_voxel_size / self.geom_finest_divisor,
            self.grid_levels,
        )
    }

    /// Texture grid cell sizes; the finest is `texture_scale_difference`
    /// finer than geometry's.
    pub fn texture_levels(&self) -> Vec<f64> {
        crate::grid::geometric_levels(
            self.leaf_voxel_size,
            self.leaf_voxel_size / (self.geom_finest_divisor * self.texture_scale_difference),
            self.grid_levels,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips_through_text() {
        let mut cfg = MapConfig::default();
        cfg.alpha_sdf = 512.5;
        cfg.selection_policy = SelectionPolicy::Coverage;
        cfg.warp_mode = WarpMode::Uniform;
        cfg.seed = 1234567;
        let text = cfg.to_text();
        let parsed = MapConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(MapConfig::parse("no_such_key = 5").is_err());
        assert!(MapConfig::parse("seed = notanumber").is_err());
        assert!(MapConfig::parse("compression = 1.5").is_err());
    }

    #[test]
    fn accepts_comments_and_blanks() {
        let cfg = MapConfig::parse("# comment\n\nseed = 9 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn paper_defaults_present() {
        let cfg = MapConfig::default();
        assert_eq!(cfg.max_dirs, 2);
        assert_eq!(cfg.compression, 0.1);
        assert_eq!(cfg.tr_plane, 0.01);
        assert_eq!(cfg.tr_near, 0.95);
        assert_eq!(cfg.tr_weak, 0.2);
        assert_eq!(cfg.iterations_per_frame, 2);
        assert_eq!(cfg.pixels_per_iteration, 8192);
        assert_eq!(cfg.texture_update_interval, 10);
        assert_eq!(cfg.texture_scale_difference, 3.0);
    }
}
