//! Run configuration: a TOML file with one section per stage. Command-line
//! flags override file values, and every stage seed is derived from the one
//! run seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterTrainConfig, TransformKind};
use crate::data::{SyntheticSpec, TokenSpec};
use crate::encoder::{EncoderTrainConfig, Objective};
use crate::error::{Error, Result};
use crate::filter::RecallMode;

/// Input paths that replace the default artifact locations under `out`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Candidate embeddings for `build-index`.
    pub embeddings: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub adapter: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// Query embeddings for `train-adapter`, `calibrate` and `search`.
    pub queries: Option<PathBuf>,
    /// Sparse features and encoder checkpoint for `embed`.
    pub features: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub objective: Objective,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dim: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderTrainConfig::default();
        Self {
            objective: d.objective,
            tau: d.tau,
            batch_size: d.batch_size,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            dim: d.dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterSection {
    pub kind: TransformKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub initial_scale: f64,
}

impl Default for AdapterSection {
    fn default() -> Self {
        let d = AdapterTrainConfig::default();
        Self {
            kind: d.kind,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: d.epochs,
            negatives_per_positive: d.negatives_per_positive,
            initial_scale: d.initial_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub k: usize,
    pub target_recall: f64,
    pub recall_mode: RecallMode,
    pub mrr_k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            k: 50,
            target_recall: 0.95,
            recall_mode: RecallMode::Micro,
            mrr_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub paths: Paths,
    pub synthetic: SyntheticSpec,
    pub tokens: TokenSpec,
    pub encoder: EncoderSection,
    pub adapter: AdapterSection,
    pub retrieval: RetrievalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            paths: Paths::default(),
            synthetic: SyntheticSpec::default(),
            tokens: TokenSpec::default(),
            encoder: EncoderSection::default(),
            adapter: AdapterSection::default(),
            retrieval: RetrievalSection::default(),
        }
    }
}

/// Values given on the command line; `None` keeps the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub kind: Option<TransformKind>,
    pub k: Option<usize>,
    pub target_recall: Option<f64>,
    pub out: Option<PathBuf>,
}

/// Mixes a stage name into the run seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut z = stage
        .bytes()
        .fold(seed ^ 0x9E37_79B9_7F4A_7C15, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads `path` (or defaults), applies `overrides`, validates.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(k) = o.kind {
            self.adapter.kind = k;
        }
        if let Some(k) = o.k {
            self.retrieval.k = k;
        }
        if let Some(r) = o.target_recall {
            self.retrieval.target_recall = r;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.synthetic.seed = derive_seed(self.seed, "synthetic");
        self.tokens.seed = derive_seed(self.seed, "tokens");
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.retrieval;
        if r.k == 0 || r.mrr_k == 0 {
            return Err(Error::Config("retrieval.k and retrieval.mrr_k must be positive".into()));
        }
        if !(r.target_recall > 0.0 && r.target_recall <= 1.0) {
            return Err(Error::Config(format!("target recall {} outside (0, 1]", r.target_recall)));
        }
        if self.encoder.tau <= 0.0 || self.encoder.learning_rate <= 0.0 || self.adapter.learning_rate <= 0.0 {
            return Err(Error::Config("temperatures and learning rates must be positive".into()));
        }
        self.synthetic.validate().map_err(|e| Error::Config(format!("synthetic: {e}")))
    }

    pub fn encoder_config(&self) -> EncoderTrainConfig {
        let e = &self.encoder;
        EncoderTrainConfig {
            objective: e.objective,
            tau: e.tau,
            batch_size: e.batch_size,
            epochs: e.epochs,
            learning_rate: e.learning_rate,
            seed: derive_seed(self.seed, "encoder"),
            dim: e.dim,
        }
    }

    pub fn adapter_config(&self, kind: TransformKind) -> AdapterTrainConfig {
        let a = &self.adapter;
        AdapterTrainConfig {
            kind,
            learning_rate: a.learning_rate,
            batch_size: a.batch_size,
            epochs: a.epochs,
            seed: derive_seed(self.seed, "adapter"),
            negatives_per_positive: a.negatives_per_positive,
            initial_scale: a.initial_scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["bogus = 1", "[adapter]\nkindd = \"power\"", "[synthetic]\nseed = 3", "[paths]\nindx = \"a\""] {
            let err = RunConfig::from_toml(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}");
        }
    }

    #[test]
    fn flags_override_file() {
        let path = tempfile::NamedTempFile::new().unwrap();
        fs::write(path.path(), "seed = 4\n[retrieval]\nk = 20\n[adapter]\nkind = \"sqrt\"\n").unwrap();
        let cfg = RunConfig::resolve(Some(path.path()), &Overrides::default()).unwrap();
        assert_eq!((cfg.seed, cfg.retrieval.k, cfg.adapter.kind), (4, 20, TransformKind::Sqrt));
        let o = Overrides { seed: Some(9), k: Some(7), kind: Some(TransformKind::Linear), ..Default::default() };
        let cfg = RunConfig::resolve(Some(path.path()), &o).unwrap();
        assert_eq!((cfg.seed, cfg.retrieval.k, cfg.adapter.kind), (9, 7, TransformKind::Linear));
        assert_eq!(cfg.synthetic.seed, derive_seed(9, "synthetic"));
        let bad = Overrides { target_recall: Some(1.5), ..Default::default() };
        assert!(RunConfig::resolve(None, &bad).is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        assert_ne!(derive_seed(0, "encoder"), derive_seed(0, "adapter"));
        assert_ne!(derive_seed(0, "encoder"), derive_seed(1, "encoder"));
        assert_eq!(derive_seed(5, "tokens"), derive_seed(5, "tokens"));
    }
}
