//! Run configuration: JSON file, `--set` overrides, path resolution.

use std::path::{Path, PathBuf};

use psp_core::eventlog::{ColumnMapping, Schema, TimeUnit};
use psp_core::features::SPLIT_RATIOS;
use psp_core::mcsampler::{DecoderDropout, SampleConfig};
use psp_core::setting::{DecoderRouting, HyperparameterSetting, OptimizerKind, TimeNoise};
use psp_core::synthlog::{ProcessSpec, DEFAULT_REWORK};
use psp_core::trainer::TrainConfig;
use psp_core::CoreError;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "PSP_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub setting: SettingSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub eval: EvalSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("run"),
            dataset: DatasetSection::default(),
            setting: SettingSection::default(),
            train: TrainSection::default(),
            sample: SampleSection::default(),
            eval: EvalSection::default(),
            synth: SynthSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Input log; `<out_dir>/log.csv` when unset.
    pub csv: Option<PathBuf>,
    /// Column mapping; the layout written by `synth` when unset.
    pub mapping: Option<ColumnMapping>,
    /// Preprocessed bundle; `<out_dir>/dataset` when unset.
    pub bundle: Option<PathBuf>,
    pub report_unit: TimeUnit,
    /// Decoder window length.
    pub window: usize,
    pub split: (f64, f64, f64),
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            csv: None,
            mapping: None,
            bundle: None,
            report_unit: TimeUnit::Days,
            window: 5,
            split: SPLIT_RATIOS,
        }
    }
}

/// A preset with optional per-field overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettingSection {
    pub id: u8,
    pub hidden_size: Option<usize>,
    pub layers: Option<usize>,
    pub optimizer: Option<OptimizerKind>,
    pub time_noise: Option<TimeNoise>,
    pub decoder_routing: Option<DecoderRouting>,
}

impl Default for SettingSection {
    fn default() -> Self {
        Self {
            id: 2,
            hidden_size: None,
            layers: None,
            optimizer: None,
            time_noise: None,
            decoder_routing: None,
        }
    }
}

impl SettingSection {
    pub fn resolve(&self) -> psp_core::Result<HyperparameterSetting> {
        let mut s = HyperparameterSetting::preset(self.id)?;
        if let Some(h) = self.hidden_size {
            s.hidden_size = h;
        }
        if let Some(l) = self.layers {
            s.encoder_layers = l;
            s.decoder_layers = l;
        }
        if let Some(o) = self.optimizer {
            s.optimizer = o;
        }
        if let Some(t) = self.time_noise {
            s.time_noise = t;
        }
        if let Some(r) = self.decoder_routing {
            s.decoder_routing = r;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// 200 for setting 1, 100 otherwise, when unset.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub tf_start: f64,
    pub tf_decay_start: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub t_mc: usize,
    pub clip_norm: f64,
    pub gradnorm: bool,
    pub gradnorm_alpha: f64,
    pub gradnorm_lr: f64,
    pub checkpoint_every: usize,
    /// Continue from the checkpoint in the output directory.
    pub resume: bool,
    /// Stop after this many epochs (the schedule still spans `epochs`).
    pub stop_after: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::new(HyperparameterSetting::default(), 1, 128, 1e-4, 0);
        Self {
            epochs: None,
            batch_size: base.batch_size,
            lr: base.lr,
            tf_start: base.tf_start,
            tf_decay_start: base.tf_decay_start,
            dropout: base.dropout,
            weight_decay: base.weight_decay,
            t_mc: base.t_mc,
            clip_norm: base.clip_norm,
            gradnorm: base.gradnorm,
            gradnorm_alpha: base.gradnorm_alpha,
            gradnorm_lr: base.gradnorm_lr,
            checkpoint_every: base.checkpoint_every,
            resume: false,
            stop_after: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub t: usize,
    pub m: Option<usize>,
    pub p: f64,
    pub decoder_dropout: DecoderDropout,
    /// Only the first this many test prefixes; all when unset.
    pub max_prefixes: Option<usize>,
    /// Checkpoint to load; `<out_dir>/train/model.uedl` when unset.
    pub checkpoint: Option<PathBuf>,
}

impl Default for SampleSection {
    fn default() -> Self {
        let base = SampleConfig::default();
        Self {
            t: base.t,
            m: base.m,
            p: base.p,
            decoder_dropout: base.decoder_dropout,
            max_prefixes: None,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub svg: bool,
    /// Per-prefix records read by `report`; `<out_dir>/eval/records.json` when unset.
    pub records: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { svg: true, records: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_cases: usize,
    /// Probability of another repair round in the default process.
    pub rework: f64,
    /// Full process description; replaces the default process when set.
    pub spec: Option<ProcessSpec>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n_cases: 9896,
            rework: DEFAULT_REWORK,
            spec: None,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `key=value`
    /// overrides and the output-directory variable.
    pub fn load(path: Option<&Path>, sets: &[String], env_out: Option<String>) -> psp_core::Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CoreError::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text)?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for s in sets {
            apply_set(&mut value, s)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value)?;
        if let Some(dir) = env_out.filter(|d| !d.is_empty()) {
            cfg.out_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    /// Fills every unset input path from the output directory.
    pub fn resolve_paths(&mut self) {
        let out = self.out_dir.clone();
        self.dataset.csv.get_or_insert_with(|| out.join("log.csv"));
        self.dataset.bundle.get_or_insert_with(|| out.join("dataset"));
        self.sample.checkpoint.get_or_insert_with(|| out.join("train").join("model.uedl"));
        self.eval.records.get_or_insert_with(|| out.join("eval").join("records.json"));
        if self.dataset.mapping.is_none() {
            self.dataset.mapping = Some(ColumnMapping::canonical(&Schema::default()));
        }
        if self.train.epochs.is_none() {
            self.train.epochs = Some(if self.setting.id == 1 { 200 } else { 100 });
        }
    }

    pub fn train_config(&self) -> psp_core::Result<TrainConfig> {
        let t = &self.train;
        let epochs = t.epochs.ok_or_else(|| CoreError::Config("train.epochs is unresolved".into()))?;
        let mut c = TrainConfig::new(self.setting.resolve()?, epochs, t.batch_size, t.lr, self.seed);
        c.window = self.dataset.window;
        c.tf_start = t.tf_start;
        c.tf_decay_start = t.tf_decay_start;
        c.dropout = t.dropout;
        c.weight_decay = t.weight_decay;
        c.t_mc = t.t_mc;
        c.clip_norm = t.clip_norm;
        c.gradnorm = t.gradnorm;
        c.gradnorm_alpha = t.gradnorm_alpha;
        c.gradnorm_lr = t.gradnorm_lr;
        c.checkpoint_every = t.checkpoint_every;
        c.validate()?;
        Ok(c)
    }

    pub fn sample_config(&self) -> psp_core::Result<SampleConfig> {
        let s = &self.sample;
        let c = SampleConfig {
            t: s.t,
            m: s.m,
            p: s.p,
            decoder_dropout: s.decoder_dropout,
            seed: self.seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn process_spec(&self) -> psp_core::Result<ProcessSpec> {
        let spec = match &self.synth.spec {
            Some(s) => s.clone(),
            None => ProcessSpec::repair_with_rework(self.synth.rework, self.synth.n_cases, self.seed),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Sets a dotted `key=value` path in `root`. The value is read as JSON and
/// falls back to a plain string.
pub fn apply_set(root: &mut Value, assignment: &str) -> psp_core::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CoreError::Config(format!("--set expects key=value, got {assignment:?}")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set")
            }
            _ => return Err(CoreError::Config(format!("{key:?}: {part:?} is not inside a section"))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Err(CoreError::Config(format!("empty key in {assignment:?}")))
}
