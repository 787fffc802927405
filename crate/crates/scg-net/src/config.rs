//! Flat `key = value` configuration files: UTF-8, `#` comments, unknown
//! keys are errors. One file configures the model, the training run and
//! the scene generator; `SCG_SEED` in the environment overrides the seed.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::OptimizerKind;
use crate::scene::{default_palette, SceneSpec};

/// Training-run settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    /// Epochs between metric evaluations.
    pub eval_every: usize,
    pub use_dl_loss: bool,
    pub use_kl_loss: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 4,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            train_scenes: 400,
            eval_scenes: 64,
            eval_every: 5,
            use_dl_loss: true,
            use_kl_loss: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.train_scenes == 0 || self.eval_scenes == 0 {
            return Err(Error::Config("scene counts must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything one run needs. The single `seed` key feeds the model
/// initialization, the data order, the latent noise and the scene corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct FullConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scene: SceneSpec,
}

impl Default for FullConfig {
    fn default() -> Self {
        FullConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            scene: SceneSpec::default(),
        }
    }
}

impl FullConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.scene.validate()?;
        if self.model.classes != self.scene.classes {
            return Err(Error::Config("model and scene class counts differ".into()));
        }
        if self.model.patch_size != self.scene.image_size {
            return Err(Error::Config("patch_size and scene image size differ".into()));
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.scene.seed = seed;
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

/// Parses configuration text; any unknown key is an error.
pub fn parse_config(text: &str) -> Result<FullConfig> {
    let mut cfg = FullConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected 'key = value'", lineno + 1)));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "seed" => cfg.set_seed(parse_num(key, value)?),
            "patch_size" => {
                cfg.model.patch_size = parse_num(key, value)?;
                cfg.scene.image_size = cfg.model.patch_size;
            }
            "classes" => {
                cfg.model.classes = parse_num(key, value)?;
                cfg.scene.classes = cfg.model.classes;
                cfg.scene.palette = default_palette(cfg.model.classes);
            }
            "backbone_widths" => {
                cfg.model.backbone_widths = value
                    .split(',')
                    .map(|p| parse_num(key, p.trim()))
                    .collect::<Result<_>>()?;
            }
            "node_h" => cfg.model.node_h = parse_num(key, value)?,
            "node_w" => cfg.model.node_w = parse_num(key, value)?,
            "gcn_hidden" => cfg.model.gcn_hidden = parse_num(key, value)?,
            "use_gcn" => cfg.model.use_gcn = parse_bool(key, value)?,
            "use_residual" => cfg.model.use_residual = parse_bool(key, value)?,
            "epochs" => cfg.train.epochs = parse_num(key, value)?,
            "batch_size" => cfg.train.batch_size = parse_num(key, value)?,
            "learning_rate" => cfg.train.learning_rate = parse_num(key, value)?,
            "optimizer" => {
                cfg.train.optimizer = OptimizerKind::parse(value)
                    .ok_or_else(|| Error::Config(format!("optimizer: unknown kind '{value}'")))?;
            }
            "momentum" => cfg.train.momentum = parse_num(key, value)?,
            "train_scenes" => cfg.train.train_scenes = parse_num(key, value)?,
            "eval_scenes" => cfg.train.eval_scenes = parse_num(key, value)?,
            "eval_every" => cfg.train.eval_every = parse_num(key, value)?,
            "use_dl_loss" => cfg.train.use_dl_loss = parse_bool(key, value)?,
            "use_kl_loss" => cfg.train.use_kl_loss = parse_bool(key, value)?,
            "noise_level" => cfg.scene.noise_level = parse_num(key, value)?,
            "shapes_min" => cfg.scene.shapes_min = parse_num(key, value)?,
            "shapes_max" => cfg.scene.shapes_max = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}' (line {})", lineno + 1))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical serialization; `parse_config` of the output reproduces the
/// configuration exactly. Used for the checkpoint echo.
pub fn canonical_text(cfg: &FullConfig) -> String {
    let widths: Vec<String> = cfg.model.backbone_widths.iter().map(|w| w.to_string()).collect();
    format!(
        "seed = {}\n\
         patch_size = {}\n\
         classes = {}\n\
         backbone_widths = {}\n\
         node_h = {}\n\
         node_w = {}\n\
         gcn_hidden = {}\n\
         use_gcn = {}\n\
         use_residual = {}\n\
         epochs = {}\n\
         batch_size = {}\n\
         learning_rate = {}\n\
         optimizer = {}\n\
         momentum = {}\n\
         train_scenes = {}\n\
         eval_scenes = {}\n\
         eval_every = {}\n\
         use_dl_loss = {}\n\
         use_kl_loss = {}\n\
         noise_level = {}\n\
         shapes_min = {}\n\
         shapes_max = {}\n",
        cfg.train.seed,
        cfg.model.patch_size,
        cfg.model.classes,
        widths.join(","),
        cfg.model.node_h,
        cfg.model.node_w,
        cfg.model.gcn_hidden,
        cfg.model.use_gcn,
        cfg.model.use_residual,
        cfg.train.epochs,
        cfg.train.batch_size,
        cfg.train.learning_rate,
        cfg.train.optimizer.as_str(),
        cfg.train.momentum,
        cfg.train.train_scenes,
        cfg.train.eval_scenes,
        cfg.train.eval_every,
        cfg.train.use_dl_loss,
        cfg.train.use_kl_loss,
        cfg.scene.noise_level,
        cfg.scene.shapes_min,
        cfg.scene.shapes_max,
    )
}

/// Seed override from the `SCG_SEED` environment variable, when set.
pub fn seed_override_from_env() -> Result<Option<u64>> {
    match std::env::var("SCG_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("SCG_SEED: cannot parse '{v}'"))),
        Err(_) => Ok(None),
    }
}

/// Loads a configuration file and applies the environment seed override.
pub fn load_config(path: &Path) -> Result<FullConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = seed_override_from_env()? {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, FullConfig::default());
    }

    #[test]
    fn comments_and_spacing_are_tolerated() {
        let cfg = parse_config(
            "# a comment\n\
             seed=7   # trailing comment\n\
             \n\
             epochs =  3\n",
        )
        .unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.model.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn unknown_key_is_an_error() {
        match parse_config("learning_rte = 0.1\n") {
            Err(Error::Config(msg)) => assert!(msg.contains("learning_rte"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn canonical_roundtrip() {
        let mut cfg = FullConfig::default();
        cfg.set_seed(123);
        cfg.model.backbone_widths = vec![8, 16, 32];
        cfg.model.node_h = 4;
        cfg.model.node_w = 4;
        cfg.train.learning_rate = 0.0025;
        cfg.train.optimizer = OptimizerKind::SgdMomentum;
        cfg.scene.noise_level = 0.1;
        let text = canonical_text(&cfg);
        let reparsed = parse_config(&text).unwrap();
        assert_eq!(reparsed, cfg);
        assert_eq!(canonical_text(&reparsed), text);
    }

    #[test]
    fn class_count_flows_to_scene_palette() {
        let cfg = parse_config("classes = 6\n").unwrap();
        assert_eq!(cfg.scene.palette.len(), 6);
        assert_eq!(cfg.model.classes, 6);
    }

    #[test]
    fn inconsistent_values_caught_by_validation() {
        assert!(parse_config("batch_size = 0\n").is_err());
        assert!(parse_config("node_h = 100\n").is_err());
        assert!(parse_config("optimizer = sgb\n").is_err());
    }

    #[test]
    fn env_seed_override_applies() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed = 1\n").unwrap();
        std::env::set_var("SCG_SEED", "99");
        let cfg = load_config(&path);
        std::env::remove_var("SCG_SEED");
        let cfg = cfg.unwrap();
        assert_eq!(cfg.train.seed, 99);
        assert_eq!(cfg.scene.seed, 99);
    }
}
