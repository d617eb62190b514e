//! Run settings: command-line flags layered over an optional TOML file over
//! preset defaults. The resolved settings are written next to every run's
//! outputs in the same TOML format, so any run can be repeated with
//! `--config <out>/run.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use trans_blstm::config::{BlstmMode, BlstmWidth, DecoderMode, ModelConfig, Preset, SumPoint};

pub const RUN_FILE: &str = "run.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetArg {
    Toy,
    Small,
    Base,
    Large,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Toy => Preset::Toy,
            PresetArg::Small => Preset::Small,
            PresetArg::Base => Preset::Base,
            PresetArg::Large => Preset::Large,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlstmArg {
    /// Plain transformer blocks
    None,
    /// TRANS-BLSTM-1: BLSTM replaces the feed-forward sublayer
    Replace,
    /// TRANS-BLSTM-2: parallel BLSTM summed before the final layer norm
    Parallel,
    /// BLSTM layers only, no attention
    Pure,
}

impl From<BlstmArg> for BlstmMode {
    fn from(b: BlstmArg) -> Self {
        match b {
            BlstmArg::None => BlstmMode::None,
            BlstmArg::Replace => BlstmMode::ReplaceFfn,
            BlstmArg::Parallel => BlstmMode::ParallelSum,
            BlstmArg::Pure => BlstmMode::PureBlstm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthArg {
    /// H units per direction, projected from 2H back to H
    Full,
    /// H/2 units per direction, no projection
    Half,
}

impl From<WidthArg> for BlstmWidth {
    fn from(w: WidthArg) -> Self {
        match w {
            WidthArg::Full => BlstmWidth::Full,
            WidthArg::Half => BlstmWidth::Half,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderArg {
    Linear,
    /// Two BLSTM layers before the output map
    Blstm2,
}

impl From<DecoderArg> for DecoderMode {
    fn from(d: DecoderArg) -> Self {
        match d {
            DecoderArg::Linear => DecoderMode::Linear,
            DecoderArg::Blstm2 => DecoderMode::Blstm2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SumPointArg {
    /// Into the block's final residual sum
    Output,
    /// Into the attention sublayer's residual sum
    Attention,
}

impl From<SumPointArg> for SumPoint {
    fn from(s: SumPointArg) -> Self {
        match s {
            SumPointArg::Output => SumPoint::Output,
            SumPointArg::Attention => SumPoint::Attention,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    Classify,
    Span,
}

/// Every setting a run can take from a file. Unset fields fall back to the
/// preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub command: Option<String>,
    pub preset: Option<PresetArg>,
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub ff_width: Option<usize>,
    pub blstm: Option<BlstmArg>,
    pub blstm_hidden: Option<WidthArg>,
    pub sum_point: Option<SumPointArg>,
    pub decoder: Option<DecoderArg>,
    pub vocab_size: Option<usize>,
    pub max_positions: Option<usize>,
    pub dropout: Option<f64>,
    pub max_len: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub steps: Option<u64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub task: Option<TaskArg>,
    pub classes: Option<usize>,
    pub examples: Option<usize>,
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).context("cannot serialize run settings")?;
        fs::write(dir.join(RUN_FILE), text)?;
        Ok(())
    }
}

/// Architecture flags shared by every model-building subcommand.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Size preset [default: toy]
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Encoder layers N [default: preset: toy 2, small 4, base 12, large 24]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Hidden size H [default: preset: toy 16, small 128, base 768, large 1024]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Attention heads [default: preset: toy 2, small 4, base 12, large 16]
    #[arg(long)]
    pub heads: Option<usize>,
    /// Feed-forward width [default: 4 x hidden]
    #[arg(long)]
    pub ff_width: Option<usize>,
    /// BLSTM fusion mode [default: none]
    #[arg(long, value_enum)]
    pub blstm: Option<BlstmArg>,
    /// BLSTM units per direction [default: full]
    #[arg(long, value_enum)]
    pub blstm_hidden: Option<WidthArg>,
    /// Residual sum that receives the parallel BLSTM output [default: output]
    #[arg(long, value_enum)]
    pub sum_point: Option<SumPointArg>,
    /// Task decoder [default: linear]
    #[arg(long, value_enum)]
    pub decoder: Option<DecoderArg>,
    /// Vocabulary size V [default: vocab file size, else preset: toy 100, small 2000, base/large 30000]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Position table size P [default: preset: toy 32, small 128, base/large 256]
    #[arg(long)]
    pub max_positions: Option<usize>,
    /// Dropout rate [default: 0.1]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// TOML file of settings; flags take precedence over it [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ModelArgs {
    /// Flags merged over the config file (flags win).
    pub fn layered(&self) -> Result<RunFile> {
        let file = match &self.config {
            Some(path) => RunFile::read(path)?,
            None => RunFile::default(),
        };
        Ok(RunFile {
            preset: self.preset.or(file.preset),
            layers: self.layers.or(file.layers),
            hidden: self.hidden.or(file.hidden),
            heads: self.heads.or(file.heads),
            ff_width: self.ff_width.or(file.ff_width),
            blstm: self.blstm.or(file.blstm),
            blstm_hidden: self.blstm_hidden.or(file.blstm_hidden),
            sum_point: self.sum_point.or(file.sum_point),
            decoder: self.decoder.or(file.decoder),
            vocab_size: self.vocab_size.or(file.vocab_size),
            max_positions: self.max_positions.or(file.max_positions),
            dropout: self.dropout.or(file.dropout),
            ..file
        })
    }
}

pub fn preset_of(layered: &RunFile) -> Preset {
    layered.preset.unwrap_or(PresetArg::Toy).into()
}

/// Resolves the architecture: explicit values over the preset. A vocab
/// file's size fills in `vocab_size` when it was not given explicitly.
pub fn resolve_model(layered: &RunFile, vocab_len: Option<usize>) -> Result<ModelConfig> {
    let mut c = ModelConfig::preset(preset_of(layered));
    if let Some(v) = layered.layers {
        c.num_layers = v;
    }
    if let Some(v) = layered.hidden {
        c.hidden = v;
        c.ff_width = 4 * v;
    }
    if let Some(v) = layered.heads {
        c.num_heads = v;
    }
    if let Some(v) = layered.ff_width {
        c.ff_width = v;
    }
    if let Some(v) = layered.blstm {
        c.blstm_mode = v.into();
    }
    if let Some(v) = layered.blstm_hidden {
        c.blstm_width = v.into();
    }
    if let Some(v) = layered.sum_point {
        c.sum_point = v.into();
    }
    if let Some(v) = layered.decoder {
        c.decoder_mode = v.into();
    }
    match (layered.vocab_size, vocab_len) {
        (Some(v), Some(len)) if len > v => {
            bail!("vocab file has {len} tokens but --vocab-size is {v}")
        }
        (Some(v), _) => c.vocab_size = v,
        (None, Some(len)) => c.vocab_size = len,
        (None, None) => {}
    }
    if let Some(v) = layered.max_positions {
        c.max_positions = v;
    }
    if let Some(v) = layered.dropout {
        c.dropout = v;
    }
    c.validate()?;
    Ok(c)
}

/// Writes the resolved architecture back into a run file.
pub fn record_model(run: &mut RunFile, c: &ModelConfig) {
    run.layers = Some(c.num_layers);
    run.hidden = Some(c.hidden);
    run.heads = Some(c.num_heads);
    run.ff_width = Some(c.ff_width);
    run.blstm = Some(match c.blstm_mode {
        BlstmMode::None => BlstmArg::None,
        BlstmMode::ReplaceFfn => BlstmArg::Replace,
        BlstmMode::ParallelSum => BlstmArg::Parallel,
        BlstmMode::PureBlstm => BlstmArg::Pure,
    });
    run.blstm_hidden = Some(match c.blstm_width {
        BlstmWidth::Full => WidthArg::Full,
        BlstmWidth::Half => WidthArg::Half,
    });
    run.sum_point = Some(match c.sum_point {
        SumPoint::Output => SumPointArg::Output,
        SumPoint::Attention => SumPointArg::Attention,
    });
    run.decoder = Some(match c.decoder_mode {
        DecoderMode::Linear => DecoderArg::Linear,
        DecoderMode::Blstm2 => DecoderArg::Blstm2,
    });
    run.vocab_size = Some(c.vocab_size);
    run.max_positions = Some(c.max_positions);
    run.dropout = Some(c.dropout);
}

/// Desk-scale presets use shorter sequences, smaller batches and a larger
/// rate than the reference settings (256, 256, 1e-4).
pub struct PretrainDefaults {
    pub max_len: usize,
    pub batch: usize,
    pub lr: f64,
    pub steps: u64,
}

pub fn pretrain_defaults(p: Preset) -> PretrainDefaults {
    match p {
        Preset::Toy => PretrainDefaults {
            max_len: 32,
            batch: 32,
            lr: 1e-2,
            steps: 2_000,
        },
        Preset::Small => PretrainDefaults {
            max_len: 128,
            batch: 32,
            lr: 1e-3,
            steps: 5_000,
        },
        Preset::Base | Preset::Large => PretrainDefaults {
            max_len: 256,
            batch: 256,
            lr: 1e-4,
            steps: 100_000,
        },
    }
}
