//! The declarative run configuration (TOML).

use std::path::{Path, PathBuf};

use argmine::augment::AugmenterConfig;
use argmine::corpus::{IacFormat, IbmFormat, SplitRatios, SynthConfig};
use argmine::diagnostics::{TsneConfig, Variant, DEFAULT_MAX_POINTS, PROFILE_FRACTIONS};
use argmine::encoder::EncoderConfig;
use argmine::head::{HeadConfig, SizePreset};
use argmine::train::{GridSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Every random stream derives from this value; nested `seed` fields are
    /// overwritten with it when the config is resolved.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    pub synthetic: SynthConfig,
    pub augment: AugmentSection,
    pub encoder: EncoderConfig,
    pub head: HeadSection,
    pub train: TrainConfig,
    pub grid: GridSpec,
    pub evaluate: EvaluateSection,
    pub diagnostics: DiagnosticsSection,
    pub profile: ProfileSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            corpus: CorpusSection::default(),
            synthetic: SynthConfig::default(),
            augment: AugmentSection::default(),
            encoder: EncoderConfig::default(),
            head: HeadSection::default(),
            train: TrainConfig::default(),
            grid: GridSpec::default(),
            evaluate: EvaluateSection::default(),
            diagnostics: DiagnosticsSection::default(),
            profile: ProfileSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IacSource {
    pub path: PathBuf,
    #[serde(default)]
    pub format: IacFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbmSource {
    pub path: PathBuf,
    #[serde(default)]
    pub format: IbmFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub iac: Option<IacSource>,
    pub ibm: Option<IbmSource>,
    /// Directory of `article<ID>.txt` + labels files.
    pub propaganda_dir: Option<PathBuf>,
    /// Record files (JSON lines) to include as-is, e.g. synthetic corpora.
    pub records: Vec<PathBuf>,
    pub split: SplitRatios,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection { iac: None, ibm: None, propaganda_dir: None, records: Vec::new(), split: SplitRatios::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub methods: AugmenterConfig,
    /// Tab-separated `word<TAB>synonym` table; the bundled table when unset.
    pub synonyms: Option<PathBuf>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection { methods: AugmenterConfig::default(), synonyms: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSection {
    pub preset: SizePreset,
    /// Overrides the preset's width.
    pub hidden_width: Option<usize>,
}

impl Default for HeadSection {
    fn default() -> Self {
        HeadSection { preset: SizePreset::Small, hidden_width: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Monte Carlo trials for the random baseline.
    pub baseline_trials: usize,
    /// Also print gains against the bundled reference table.
    pub compare: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { baseline_trials: 1000, compare: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub layers: Vec<String>,
    pub max_points: usize,
    pub tsne: TsneConfig,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            layers: vec!["encoder_out".into(), "shared".into(), "task_specific".into()],
            max_points: DEFAULT_MAX_POINTS,
            tsne: TsneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    pub fractions: Vec<f64>,
    pub variants: Vec<Variant>,
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection { fractions: PROFILE_FRACTIONS.to_vec(), variants: vec![Variant::MultiTask, Variant::SingleTask] }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let src = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&src).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Pushes the top-level seed into every component and validates.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let seed = self.seed;
        self.synthetic.seed = seed;
        self.augment.methods.seed = seed;
        self.encoder.seed = seed;
        self.train.seed = seed;
        self.diagnostics.tsne.seed = seed;
        self.encoder.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.head_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.augment.methods.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(self)
    }

    pub fn head_config(&self) -> HeadConfig {
        let mut head = HeadConfig::with_preset(self.encoder.embedding_dim, self.head.preset);
        if let Some(w) = self.head.hidden_width {
            head.hidden_width = w;
        }
        head.dropout_rate = self.train.dropout_rate;
        head
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
