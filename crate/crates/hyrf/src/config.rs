//! Run configuration: a flat key-value text format with `[section]` headers,
//! every hyperparameter defaulted, and `section.key=value` overrides from the
//! command line.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::HashGridConfig;
use crate::render::RasterOptions;
use crate::train::TrainConfig;

/// Hash-table budget presets keyed off the scene class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneClass {
    Synthetic,
    Standard,
    Large,
}

impl SceneClass {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "synthetic" => SceneClass::Synthetic,
            "standard" => SceneClass::Standard,
            "large" => SceneClass::Large,
            other => {
                return Err(Error::invalid(format!(
                    "unknown scene_class '{other}' (synthetic|standard|large)"
                )))
            }
        })
    }

    /// Radiance-field hash cap; the geometry field gets half of it.
    pub fn log2_max_entries(&self) -> u32 {
        match self {
            SceneClass::Synthetic => 17,
            SceneClass::Standard => 18,
            SceneClass::Large => 21,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AabbSource {
    /// Min/max of the camera positions (standard scenes).
    Cameras,
    /// Fixed symmetric box (synthetic scenes).
    Fixed,
    /// 1st/99th percentile of the initial points (large scenes).
    PointsPercentile,
}

impl AabbSource {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "cameras" => AabbSource::Cameras,
            "fixed" => AabbSource::Fixed,
            "points_percentile" => AabbSource::PointsPercentile,
            other => {
                return Err(Error::invalid(format!(
                    "unknown aabb_source '{other}' (cameras|fixed|points_percentile)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub scene_class: SceneClass,
    pub aabb_source: AabbSource,
    pub aabb_fixed_half: f64,
    pub aabb_pad: f64,
    pub s_max_fraction: f64,
    pub bg_radius: f64,
    pub tau_transmittance: f64,
    pub cull_tolerance: f64,
    pub pe_frequencies: usize,
    pub near: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            scene_class: SceneClass::Standard,
            aabb_source: AabbSource::Cameras,
            aabb_fixed_half: 1.3,
            aabb_pad: 0.05,
            s_max_fraction: 0.01,
            bg_radius: 100.0,
            tau_transmittance: 0.2,
            cull_tolerance: 0.15,
            pe_frequencies: 4,
            near: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HashSection {
    pub n_levels: usize,
    pub features_per_entry: usize,
    pub base_resolution: usize,
    pub finest_resolution: usize,
    /// 0 derives the cap from the scene class.
    pub log2_max_entries: u32,
}

impl Default for HashSection {
    fn default() -> Self {
        Self {
            n_levels: 16,
            features_per_entry: 2,
            base_resolution: 16,
            finest_resolution: 2048,
            log2_max_entries: 0,
        }
    }
}

impl HashSection {
    pub fn grid_config(&self, class: SceneClass) -> HashGridConfig {
        let log2 = if self.log2_max_entries == 0 {
            class.log2_max_entries()
        } else {
            self.log2_max_entries
        };
        HashGridConfig {
            n_levels: self.n_levels,
            features_per_entry: self.features_per_entry,
            log2_max_entries: log2,
            base_resolution: self.base_resolution,
            growth_factor: HashGridConfig::growth_for(
                self.base_resolution,
                self.finest_resolution,
                self.n_levels,
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderSection {
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for DecoderSection {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            hidden_layers: 2,
        }
    }
}

impl DecoderSection {
    pub fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_width; self.hidden_layers]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CodecConfig {
    pub rvq_stages: usize,
    pub rvq_codewords: usize,
    pub rvq_iters: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            rvq_stages: 6,
            rvq_codewords: 64,
            rvq_iters: 12,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub hash: HashSection,
    pub decoder: DecoderSection,
    pub train: TrainConfig,
    pub render: RasterOptions,
    pub codec: CodecConfig,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            hash: HashSection::default(),
            decoder: DecoderSection::default(),
            train: TrainConfig::default(),
            render: RasterOptions::default(),
            codec: CodecConfig::default(),
            threads: 1,
        }
    }
}

/// Raw parsed key-value view, keyed "section.key".
#[derive(Debug, Default, Clone)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str, path_label: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') || line.len() < 3 {
                    return Err(Error::Parse {
                        path: path_label.to_string(),
                        line: i + 1,
                        msg: format!("malformed section header '{line}'"),
                    });
                }
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(Error::Parse {
                    path: path_label.to_string(),
                    line: i + 1,
                    msg: format!("expected 'key = value', found '{line}'"),
                });
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if key.is_empty() || section.is_empty() {
                return Err(Error::Parse {
                    path: path_label.to_string(),
                    line: i + 1,
                    msg: "keys must live under a [section]".into(),
                });
            }
            entries.insert(format!("{section}.{key}"), value.to_string());
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, dotted_key: &str, value: &str) -> Result<()> {
        if !dotted_key.contains('.') {
            return Err(Error::invalid(format!(
                "override key '{dotted_key}' must be section.key"
            )));
        }
        self.entries
            .insert(dotted_key.to_string(), value.to_string());
        Ok(())
    }
}

macro_rules! take {
    ($kv:ident, $remaining:ident, $key:expr, $target:expr, $parse:expr) => {
        if let Some(v) = $kv.entries.get($key) {
            $remaining.remove($key);
            #[allow(clippy::redundant_closure_call)]
            {
                $target = $parse(v.as_str())
                    .map_err(|e: Error| Error::invalid(format!("{}: {e}", $key)))?;
            }
        }
    };
}

fn p_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::invalid(format!("'{s}' is not a number")))
}
fn p_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::invalid(format!("'{s}' is not a nonnegative integer")))
}
fn p_u64(s: &str) -> Result<u64> {
    s.parse()
        .map_err(|_| Error::invalid(format!("'{s}' is not a nonnegative integer")))
}
fn p_u32(s: &str) -> Result<u32> {
    s.parse()
        .map_err(|_| Error::invalid(format!("'{s}' is not a nonnegative integer")))
}

impl RunConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut remaining: std::collections::BTreeSet<String> =
            kv.entries.keys().cloned().collect();

        take!(
            kv,
            remaining,
            "scene.scene_class",
            cfg.scene.scene_class,
            SceneClass::parse
        );
        take!(
            kv,
            remaining,
            "scene.aabb_source",
            cfg.scene.aabb_source,
            AabbSource::parse
        );
        take!(
            kv,
            remaining,
            "scene.aabb_fixed_half",
            cfg.scene.aabb_fixed_half,
            p_f64
        );
        take!(kv, remaining, "scene.aabb_pad", cfg.scene.aabb_pad, p_f64);
        take!(
            kv,
            remaining,
            "scene.s_max_fraction",
            cfg.scene.s_max_fraction,
            p_f64
        );
        take!(kv, remaining, "scene.bg_radius", cfg.scene.bg_radius, p_f64);
        take!(
            kv,
            remaining,
            "scene.tau_transmittance",
            cfg.scene.tau_transmittance,
            p_f64
        );
        take!(
            kv,
            remaining,
            "scene.cull_tolerance",
            cfg.scene.cull_tolerance,
            p_f64
        );
        take!(
            kv,
            remaining,
            "scene.pe_frequencies",
            cfg.scene.pe_frequencies,
            p_usize
        );
        take!(kv, remaining, "scene.near", cfg.scene.near, p_f64);

        take!(kv, remaining, "hash.n_levels", cfg.hash.n_levels, p_usize);
        take!(
            kv,
            remaining,
            "hash.features_per_entry",
            cfg.hash.features_per_entry,
            p_usize
        );
        take!(
            kv,
            remaining,
            "hash.base_resolution",
            cfg.hash.base_resolution,
            p_usize
        );
        take!(
            kv,
            remaining,
            "hash.finest_resolution",
            cfg.hash.finest_resolution,
            p_usize
        );
        take!(
            kv,
            remaining,
            "hash.log2_max_entries",
            cfg.hash.log2_max_entries,
            p_u32
        );

        take!(
            kv,
            remaining,
            "decoder.hidden_width",
            cfg.decoder.hidden_width,
            p_usize
        );
        take!(
            kv,
            remaining,
            "decoder.hidden_layers",
            cfg.decoder.hidden_layers,
            p_usize
        );

        take!(
            kv,
            remaining,
            "train.iterations",
            cfg.train.iterations,
            p_u64
        );
        take!(
            kv,
            remaining,
            "train.lambda_ssim",
            cfg.train.lambda_ssim,
            p_f64
        );
        take!(
            kv,
            remaining,
            "train.lr_position_init",
            cfg.train.lr_position_init,
            p_f64
        );
        take!(
            kv,
            remaining,
            "train.lr_position_final",
            cfg.train.lr_position_final,
            p_f64
        );
        take!(
            kv,
            remaining,
            "train.lr_explicit",
            cfg.train.lr_explicit,
            p_f64
        );
        take!(kv, remaining, "train.lr_hash", cfg.train.lr_hash, p_f64);
        take!(
            kv,
            remaining,
            "train.lr_decoder",
            cfg.train.lr_decoder,
            p_f64
        );
        take!(
            kv,
            remaining,
            "train.densify_start",
            cfg.train.densify_start,
            p_u64
        );
        take!(
            kv,
            remaining,
            "train.densify_end",
            cfg.train.densify_end,
            p_u64
        );
        take!(
            kv,
            remaining,
            "train.densify_interval",
            cfg.train.densify_interval,
            p_u64
        );
        take!(
            kv,
            remaining,
            "train.densify_grad_threshold",
            cfg.train.densify_grad_threshold,
            p_f64
        );
        take!(
            kv,
            remaining,
            "train.densify_split_fraction",
            cfg.train.densify_split_fraction,
            p_f64
        );
        take!(
            kv,
            remaining,
            "train.opacity_reset_interval",
            cfg.train.opacity_reset_interval,
            p_u64
        );
        take!(
            kv,
            remaining,
            "train.opacity_reset_target",
            cfg.train.opacity_reset_target,
            p_f64
        );
        take!(
            kv,
            remaining,
            "train.prune_opacity",
            cfg.train.prune_opacity,
            p_f64
        );
        take!(
            kv,
            remaining,
            "train.ssim_window",
            cfg.train.ssim.window,
            p_usize
        );
        take!(
            kv,
            remaining,
            "train.log_interval",
            cfg.train.log_interval,
            p_u64
        );
        take!(
            kv,
            remaining,
            "train.checkpoint_interval",
            cfg.train.checkpoint_interval,
            p_u64
        );
        take!(kv, remaining, "train.seed", cfg.train.seed, p_u64);
        take!(kv, remaining, "train.threads", cfg.threads, p_usize);

        take!(
            kv,
            remaining,
            "render.alpha_clip",
            cfg.render.alpha_clip,
            p_f64
        );
        take!(
            kv,
            remaining,
            "render.termination",
            cfg.render.termination,
            p_f64
        );
        take!(
            kv,
            remaining,
            "render.prefilter_cutoff",
            cfg.render.prefilter_cutoff,
            p_f64
        );

        take!(
            kv,
            remaining,
            "codec.rvq_stages",
            cfg.codec.rvq_stages,
            p_usize
        );
        take!(
            kv,
            remaining,
            "codec.rvq_codewords",
            cfg.codec.rvq_codewords,
            p_usize
        );
        take!(
            kv,
            remaining,
            "codec.rvq_iters",
            cfg.codec.rvq_iters,
            p_usize
        );
        take!(kv, remaining, "codec.seed", cfg.codec.seed, p_u64);

        if let Some(unknown) = remaining.into_iter().next() {
            return Err(Error::invalid(format!("unknown config key '{unknown}'")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
        let mut kv = KvFile::parse(&text, &path.display().to_string())?;
        for (k, v) in overrides {
            kv.set(k, v)?;
        }
        Self::from_kv(&kv)
    }

    pub fn from_overrides(overrides: &[(String, String)]) -> Result<Self> {
        let mut kv = KvFile::default();
        for (k, v) in overrides {
            kv.set(k, v)?;
        }
        Self::from_kv(&kv)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.train.lambda_ssim) {
            return Err(Error::invalid("train.lambda_ssim must be in [0,1]"));
        }
        for (name, v) in [
            ("train.lr_position_init", self.train.lr_position_init),
            ("train.lr_explicit", self.train.lr_explicit),
            ("train.lr_hash", self.train.lr_hash),
            ("train.lr_decoder", self.train.lr_decoder),
        ] {
            if v <= 0.0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.scene.near <= 0.0 {
            return Err(Error::invalid("scene.near must be positive"));
        }
        if self.scene.bg_radius <= 0.0 {
            return Err(Error::invalid("scene.bg_radius must be positive"));
        }
        Ok(())
    }
}
