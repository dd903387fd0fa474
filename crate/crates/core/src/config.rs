//! Run configuration: one JSON file naming the data, the model and the
//! training recipe.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::frontend::{FrontEndConfig, FrontEndKind, Pooling};
use crate::model::ModelConfig;
use crate::signal::{generate_synthetic, synthesize, Dataset, LoadOptions, Split, SynthSpec};
use crate::train::TrainConfig;

pub const RESOLVED_CONFIG: &str = "resolved-config.json";

fn one_second() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Training manifest.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub valid_manifest: Option<PathBuf>,
    #[serde(default)]
    pub test_manifest: Option<PathBuf>,
    /// Generate a synthetic dataset instead of reading manifests.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    /// Clips are cut into units of this length; one unit is one sequence.
    #[serde(default = "one_second")]
    pub chunk_seconds: f64,
}

impl DataConfig {
    pub fn synthetic(spec: SynthSpec) -> Self {
        DataConfig {
            manifest: None,
            valid_manifest: None,
            test_manifest: None,
            synth: Some(spec),
            chunk_seconds: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub frontend: FrontEndConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

/// Loaded datasets for one run.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Option<Dataset>,
    pub test: Option<Dataset>,
}

impl Splits {
    pub fn get(&self, split: Split) -> Option<&Dataset> {
        match split {
            Split::Train => Some(&self.train),
            Split::Valid => self.valid.as_ref(),
            Split::Test => self.test.as_ref(),
        }
    }
}

/// The desk-scale model: bank-of-filterbanks front end with two banks of
/// 16 filters and a two-layer backbone of width 16.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        frontend: FrontEndConfig {
            kind: FrontEndKind::BankOfFilterbanks,
            n_filterbanks: 2,
            pooling: Pooling::Max,
            alpha: 100.0,
            embed_dim: 16,
            hidden_width: 64,
            filters_per_bank: 16,
            kernel_length: 32,
            router_widths: vec![64, 64, 64],
            patch_length: 400,
        },
        backbone: BackboneConfig {
            layers: 2,
            model_dim: 16,
            heads: 2,
            ff_dim: 64,
            n_classes: 0,
            max_len: 40,
            dropout: 0.0,
            project_input: false,
        },
    }
}

/// Group synthesized clips into per-split datasets without touching disk.
pub fn synth_splits(spec: &SynthSpec, options: LoadOptions) -> Result<Splits> {
    let classes: Vec<String> = spec.families.iter().map(|f| f.name.clone()).collect();
    let mut parts: [Vec<_>; 3] = Default::default();
    for c in synthesize(spec)? {
        let mut label = vec![0.0f32; classes.len()];
        label[c.family] = 1.0;
        let slot = match c.split {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        };
        parts[slot].push((c.clip, label));
    }
    let [train, valid, test] = parts;
    let build = |split, clips: Vec<_>| -> Result<Option<Dataset>> {
        if clips.is_empty() {
            return Ok(None);
        }
        Dataset::from_clips(classes.clone(), split, clips, options).map(Some)
    };
    Ok(Splits {
        train: build(Split::Train, train)?.ok_or_else(|| Error::validation("data.synth", "no training clips"))?,
        valid: build(Split::Valid, valid)?,
        test: build(Split::Test, test)?,
    })
}

impl RunConfig {
    /// Desk-scale run on `data`.
    pub fn desk(data: DataConfig, out_dir: impl Into<PathBuf>) -> Self {
        let model = desk_model();
        RunConfig {
            data,
            frontend: model.frontend,
            backbone: model.backbone,
            train: TrainConfig::default(),
            out_dir: out_dir.into(),
        }
    }

    /// Read a config; relative data paths are taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.data.manifest,
            &mut cfg.data.valid_manifest,
            &mut cfg.data.test_manifest,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.manifest, &self.data.synth) {
            (Some(_), Some(_)) => return Err(Error::validation("data", "give either manifest or synth, not both")),
            (None, None) => return Err(Error::validation("data", "one of manifest or synth is required")),
            (None, Some(spec)) => spec.validate()?,
            (Some(_), None) => {}
        }
        if !(self.data.chunk_seconds > 0.0) {
            return Err(Error::validation("data.chunk_seconds", "must be positive"));
        }
        self.frontend.normalized().validate()?;
        self.train.validate()?;
        if self.backbone.n_classes != 0 {
            self.backbone.validate()?;
        }
        let tokens = self.load_options().tokens();
        if tokens > self.backbone.max_len {
            return Err(Error::validation(
                "backbone.max_len",
                format!("{tokens} tokens per unit exceed max_len {}", self.backbone.max_len),
            ));
        }
        Ok(())
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            patch_length: self.frontend.patch_length,
            chunk_seconds: self.data.chunk_seconds,
        }
    }

    /// Load every configured split. Synthetic data is written under
    /// `write_dir` when given, otherwise kept in memory.
    pub fn load_data(&self, write_dir: Option<&Path>) -> Result<Splits> {
        let options = self.load_options();
        let load = |p: &Option<PathBuf>| -> Result<Option<Dataset>> {
            p.as_ref().map(|p| Dataset::load(p, options)).transpose()
        };
        match (&self.data.synth, write_dir) {
            (Some(spec), None) => synth_splits(spec, options),
            (Some(spec), Some(dir)) => {
                let out = generate_synthetic(spec, dir)?;
                Ok(Splits {
                    train: Dataset::load(&out.train, options)?,
                    valid: load(&out.valid)?,
                    test: load(&out.test)?,
                })
            }
            (None, _) => {
                let train = load(&self.data.manifest)?
                    .ok_or_else(|| Error::validation("data.manifest", "missing training manifest"))?;
                Ok(Splits {
                    train,
                    valid: load(&self.data.valid_manifest)?,
                    test: load(&self.data.test_manifest)?,
                })
            }
        }
    }

    /// Fill the class count from the data's class list.
    pub fn resolve(&mut self, classes: &[String]) -> Result<()> {
        let c = classes.len();
        match self.backbone.n_classes {
            0 => self.backbone.n_classes = c,
            n if n != c => {
                return Err(Error::validation(
                    "backbone.n_classes",
                    format!("{n} does not match the {c} classes in the data"),
                ))
            }
            _ => {}
        }
        self.frontend = self.frontend.normalized();
        self.backbone.validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            frontend: self.frontend.clone(),
            backbone: self.backbone.clone(),
        }
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_one_data_source() {
        let mut cfg = RunConfig::desk(DataConfig::synthetic(SynthSpec::four_family(0)), "out");
        assert!(cfg.validate().is_ok());
        cfg.data.manifest = Some("train.json".into());
        assert!(matches!(cfg.validate(), Err(Error::Validation { field, .. }) if field == "data"));
        cfg.data.synth = None;
        assert!(cfg.validate().is_ok());
        cfg.data.manifest = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected_and_defaults_fill_in() {
        let ok = r#"{"data": {"manifest": "m.json"}, "out_dir": "o"}"#;
        let cfg: RunConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        let bad = r#"{"data": {"manifest": "m.json"}, "out_dir": "o", "train": {"epoch": 3}}"#;
        assert!(serde_json::from_str::<RunConfig>(bad).is_err());
    }

    #[test]
    fn resolve_fills_and_checks_class_count() {
        let mut cfg = RunConfig::desk(DataConfig::synthetic(SynthSpec::four_family(0)), "out");
        let classes: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        cfg.resolve(&classes).unwrap();
        assert_eq!(cfg.backbone.n_classes, 3);
        assert!(cfg.resolve(&classes[..2]).is_err());
    }

    #[test]
    fn too_many_tokens_for_max_len() {
        let mut cfg = RunConfig::desk(DataConfig::synthetic(SynthSpec::four_family(0)), "out");
        cfg.data.chunk_seconds = 2.0;
        assert!(matches!(cfg.validate(), Err(Error::Validation { field, .. }) if field == "backbone.max_len"));
    }
}
