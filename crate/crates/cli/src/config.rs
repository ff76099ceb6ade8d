//! Run configuration: TOML files plus `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use specprint::evaluation::{EvalOptions, OOD_OVERLAPS, OOD_SEG_LENS};
use specprint::pipeline::FeatureConfig;
use specprint::seed::derive_seed;
use specprint::synth::{demo_profiles, generate_traces, SynthProfile};
use specprint::trace::{parse_traces, PacketTrace};
use specprint::training::{SplitSpec, TrainConfig};
use specprint::vit::VitConfig;
use specprint::Precision;

use crate::InputError;

pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Trace CSV. When absent, traces are synthesized from `synth`.
    pub traces: Option<PathBuf>,
    pub synth_packets: usize,
    /// Synthetic device profiles; empty means the built-in four-tone set.
    pub synth: Vec<SynthProfile>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            traces: None,
            synth_packets: 16050,
            synth: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossEvalConfig {
    pub seg_lens: Vec<usize>,
    pub overlaps: Vec<f64>,
    /// Segments per device and cell; 0 keeps all.
    pub max_segments: usize,
}

impl Default for CrossEvalConfig {
    fn default() -> Self {
        Self {
            seg_lens: OOD_SEG_LENS.to_vec(),
            overlaps: OOD_OVERLAPS.to_vec(),
            max_segments: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; every module seed is derived from it.
    pub seed: u64,
    pub precision: Precision,
    pub init_seed: u64,
    pub data: DataConfig,
    pub features: FeatureConfig,
    pub model: VitConfig,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub crosseval: CrossEvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::default(),
            init_seed: 0,
            data: DataConfig::default(),
            features: FeatureConfig {
                max_segments: 200,
                ood_packets: 6000,
                ..FeatureConfig::default()
            },
            model: VitConfig::default(),
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            crosseval: CrossEvalConfig::default(),
        }
    }
}

/// Seeds are kept below 2⁶³ so the resolved config stays valid TOML.
fn module_seed(global: u64, module: &str) -> u64 {
    derive_seed(global, module, 0) & (i64::MAX as u64)
}

impl RunConfig {
    /// Derives module seeds from the global seed, fills synthetic profiles
    /// and validates every section.
    pub fn resolve(mut self, base_dir: &Path) -> Result<Self> {
        if self.seed > i64::MAX as u64 {
            return Err(InputError(format!("seed {} exceeds 2^63 - 1", self.seed)).into());
        }
        self.split.seed = module_seed(self.seed, "split");
        self.train.seed = module_seed(self.seed, "train");
        self.eval.seed = module_seed(self.seed, "evaluation");
        self.init_seed = module_seed(self.seed, "vit.init");
        if let Some(p) = &self.data.traces {
            if p.is_relative() {
                self.data.traces = Some(base_dir.join(p));
            }
        } else if self.data.synth.is_empty() {
            self.data.synth = demo_profiles(self.seed)
                .into_iter()
                .map(|mut p| {
                    p.seed &= i64::MAX as u64;
                    p
                })
                .collect();
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let input = |e: specprint::Error| anyhow::Error::new(e);
        self.features.validate().map_err(input)?;
        self.model.validate().map_err(input)?;
        self.split.validate().map_err(input)?;
        self.train.validate().map_err(input)?;
        if self.model.image_size != self.features.image_size {
            return Err(InputError(format!(
                "model.image_size {} differs from features.image_size {}",
                self.model.image_size, self.features.image_size
            ))
            .into());
        }
        for p in &self.data.synth {
            p.validate().map_err(input)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing config")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let p = dir.join(CONFIG_FILE);
        fs::write(&p, self.to_toml()?).with_context(|| format!("writing {}", p.display()))
    }

    /// Reads a resolved config from a run directory.
    pub fn read_run(dir: &Path) -> Result<Self> {
        let p = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&p)
            .map_err(|e| InputError(format!("{}: {e} (is this a run directory?)", p.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| InputError(format!("{}: {e}", p.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Traces from the configured file, or synthesized.
    pub fn load_traces(&self) -> Result<Vec<PacketTrace>> {
        match &self.data.traces {
            Some(p) => read_trace_file(p),
            None => Ok(generate_traces(&self.data.synth, self.data.synth_packets)?),
        }
    }

    /// The model config with the class count taken from the data.
    pub fn model_for(&self, num_classes: usize) -> VitConfig {
        VitConfig {
            num_classes,
            ..self.model
        }
    }
}

pub fn read_trace_file(path: &Path) -> Result<Vec<PacketTrace>> {
    let f = fs::File::open(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
    parse_traces(std::io::BufReader::new(f)).map_err(|e| match e {
        specprint::Error::Parse { .. } | specprint::Error::Validation(_) => {
            InputError(format!("{}: {e}", path.display())).into()
        }
        other => anyhow::Error::new(other).context(path.display().to_string()),
    })
}

/// Sets `dotted.key = value` in a TOML table. The value is parsed as a TOML
/// literal, falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| InputError(format!("--set expects key=value, got '{assignment}'")))?;
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for part in path {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| InputError(format!("--set {key}: '{part}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Loads `path` (or defaults), applies overrides and flag values, resolves.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let (mut table, base) = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| InputError(format!("{}: {e}", p.display())))?;
            let t: toml::Table = text
                .parse()
                .map_err(|e| InputError(format!("{}: {e}", p.display())))?;
            (t, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (toml::Table::new(), PathBuf::new()),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(s) = seed {
        table.insert("seed".into(), toml::Value::Integer(s.try_into().map_err(|_| InputError(format!("seed {s} exceeds 2^63 - 1")))?));
    }
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| InputError(format!("config: {e}")))?;
    cfg.resolve(&base)
}
