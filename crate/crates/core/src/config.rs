//! Run configuration: a TOML document with `[model]`, `[objective]` and
//! `[train]` sections. Every field has a default, so an empty file is valid.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::AggregationWindow;
use crate::error::{Error, Result};
use crate::objectives::{ContrastiveObjective, FusionMode, ObjectiveConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Lightgcn,
    SimgclLite,
    HfgclB,
    HfgclH,
    HfgclS,
    Hfgcl,
    WoHigh,
    WoGcn,
    WoView,
    WoCl,
}

impl VariantName {
    pub const ALL: [VariantName; 10] = [
        VariantName::Lightgcn,
        VariantName::SimgclLite,
        VariantName::HfgclB,
        VariantName::HfgclH,
        VariantName::HfgclS,
        VariantName::Hfgcl,
        VariantName::WoHigh,
        VariantName::WoGcn,
        VariantName::WoView,
        VariantName::WoCl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantName::Lightgcn => "lightgcn",
            VariantName::SimgclLite => "simgcl_lite",
            VariantName::HfgclB => "hfgcl_b",
            VariantName::HfgclH => "hfgcl_h",
            VariantName::HfgclS => "hfgcl_s",
            VariantName::Hfgcl => "hfgcl",
            VariantName::WoHigh => "wo_high",
            VariantName::WoGcn => "wo_gcn",
            VariantName::WoView => "wo_view",
            VariantName::WoCl => "wo_cl",
        }
    }
}

impl std::fmt::Display for VariantName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantName::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Contrastive objective and readout window of each named variant.
///
/// | variant       | objective        | window    |
/// |---------------|------------------|-----------|
/// | `lightgcn`    | none             | `0..=L`   |
/// | `simgcl_lite` | noisy views      | `0..=L`   |
/// | `hfgcl_b`     | user-item        | `0..=L`   |
/// | `hfgcl_h`     | user-item        | `h..=L`   |
/// | `hfgcl_s`     | user-item + self | `h..=L`   |
/// | `hfgcl`       | fusion           | `h..=L`   |
/// | `wo_high`     | fusion           | `0..=L`   |
/// | `wo_gcn`      | fusion           | `0..=0`   |
/// | `wo_view`     | self only        | `h..=L`   |
/// | `wo_cl`       | none             | `h..=L`   |
pub fn make_variant(
    name: VariantName,
    layers: usize,
    high_order_start: usize,
) -> Result<(ContrastiveObjective, AggregationWindow)> {
    use ContrastiveObjective as O;
    let full = AggregationWindow::full(layers);
    let high = || AggregationWindow::high_order(high_order_start, layers);
    Ok(match name {
        VariantName::Lightgcn => (O::None, full),
        VariantName::SimgclLite => (O::NoisyViews, full),
        VariantName::HfgclB => (O::UserItem, full),
        VariantName::HfgclH => (O::UserItem, high()?),
        VariantName::HfgclS => (O::UserItemSelf, high()?),
        VariantName::Hfgcl => (O::Fusion, high()?),
        VariantName::WoHigh => (O::Fusion, full),
        VariantName::WoGcn => (O::Fusion, AggregationWindow::initial()),
        VariantName::WoView => (O::SelfOnly, high()?),
        VariantName::WoCl => (O::None, high()?),
    })
}

/// Which readout the BPR term scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecReadout {
    /// Same window as the contrastive term.
    #[default]
    Contrast,
    /// Always `0..=L`.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub dim: usize,
    pub layers: usize,
    pub high_order_start: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 3,
            high_order_start: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSettings {
    pub tau: f64,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rec_readout: RecReadout,
    pub fusion_mode: FusionMode,
    /// Score contrastive pairs by cosine rather than raw dot product.
    pub normalize_views: bool,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        Self {
            tau: 0.24,
            alpha: 0.5,
            lambda1: 0.5,
            lambda2: 1e-4,
            rec_readout: RecReadout::Contrast,
            fusion_mode: FusionMode::WindowMean,
            normalize_views: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Perturbation radius of the `simgcl_lite` baseline.
    pub noise_eps: f64,
    /// Cutoff of the validation Recall@K used for early stopping.
    pub eval_k: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 2048,
            max_epochs: 200,
            patience: 10,
            noise_eps: 0.1,
            eval_k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: VariantName,
    pub seed: u64,
    pub model: EncoderSettings,
    pub objective: ObjectiveSettings,
    pub train: TrainSettings,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: VariantName::Hfgcl,
            seed: 2024,
            model: EncoderSettings::default(),
            objective: ObjectiveSettings::default(),
            train: TrainSettings::default(),
        }
    }
}

impl ModelConfig {
    pub fn for_variant(variant: VariantName) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    /// Settings used for every variant on the desk benchmark
    /// ([`crate::synth::desk_dataset`]).
    pub fn desk(variant: VariantName, seed: u64) -> Self {
        let mut cfg = Self::for_variant(variant);
        cfg.seed = seed;
        cfg.objective.lambda1 = 0.1;
        cfg.objective.tau = 0.2;
        cfg.train.lr = 0.005;
        cfg.train.batch_size = 128;
        cfg.train.max_epochs = 60;
        cfg.train.patience = 6;
        cfg
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Ingest {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Applies a `section.key=value` (or top-level `key=value`) override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("override `{key}`: {e}"));
        macro_rules! parse {
            () => {
                value.parse().map_err(|e| bad(&e))?
            };
        }
        let quoted = || toml::Value::String(value.to_string());
        match key {
            "variant" => self.variant = value.parse()?,
            "seed" => self.seed = parse!(),
            "model.dim" | "dim" => self.model.dim = parse!(),
            "model.layers" | "layers" => self.model.layers = parse!(),
            "model.high_order_start" | "h" => self.model.high_order_start = parse!(),
            "objective.tau" | "tau" => self.objective.tau = parse!(),
            "objective.alpha" | "alpha" => self.objective.alpha = parse!(),
            "objective.lambda1" | "lambda1" => self.objective.lambda1 = parse!(),
            "objective.lambda2" | "lambda2" => self.objective.lambda2 = parse!(),
            "objective.rec_readout" => self.objective.rec_readout = quoted().try_into().map_err(|e| bad(&e))?,
            "objective.fusion_mode" => self.objective.fusion_mode = quoted().try_into().map_err(|e| bad(&e))?,
            "objective.normalize_views" | "normalize_views" => self.objective.normalize_views = parse!(),
            "train.lr" | "lr" => self.train.lr = parse!(),
            "train.batch_size" | "batch_size" => self.train.batch_size = parse!(),
            "train.max_epochs" | "max_epochs" => self.train.max_epochs = parse!(),
            "train.patience" | "patience" => self.train.patience = parse!(),
            "train.noise_eps" | "noise_eps" => self.train.noise_eps = parse!(),
            "train.eval_k" | "eval_k" => self.train.eval_k = parse!(),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Resolves the variant into a concrete objective description.
    pub fn objective_config(&self) -> Result<ObjectiveConfig> {
        let (objective, window) = make_variant(self.variant, self.model.layers, self.model.high_order_start)?;
        let rec_window = match self.objective.rec_readout {
            RecReadout::Contrast => window,
            RecReadout::Full => AggregationWindow::full(self.model.layers),
        };
        Ok(ObjectiveConfig {
            objective,
            tau: self.objective.tau,
            alpha: self.objective.alpha,
            lambda1: self.objective.lambda1,
            lambda2: self.objective.lambda2,
            window,
            rec_window,
            fusion_mode: self.objective.fusion_mode,
            normalize_views: self.objective.normalize_views,
        })
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let m = &self.model;
        let t = &self.train;
        if m.dim == 0 {
            problems.push("model.dim must be >= 1".to_string());
        }
        if m.high_order_start > m.layers {
            problems.push(format!(
                "model.high_order_start ({}) must not exceed model.layers ({})",
                m.high_order_start, m.layers
            ));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            problems.push(format!("train.lr must be > 0, got {}", t.lr));
        }
        if t.batch_size == 0 {
            problems.push("train.batch_size must be >= 1".into());
        }
        if t.max_epochs == 0 {
            problems.push("train.max_epochs must be >= 1".into());
        }
        if !(t.noise_eps >= 0.0 && t.noise_eps.is_finite()) {
            problems.push(format!("train.noise_eps must be >= 0, got {}", t.noise_eps));
        }
        if t.eval_k == 0 {
            problems.push("train.eval_k must be >= 1".into());
        }
        if m.high_order_start <= m.layers {
            let obj = self.objective_config()?;
            if let Err(Error::Config(msg)) = obj.validate(m.layers) {
                problems.extend(msg.split("; ").map(|s| format!("objective: {s}")));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
