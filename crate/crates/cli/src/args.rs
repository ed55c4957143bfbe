use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "cloudformer", version, about = "Predict VM performance degradation from host metrics")]
pub struct Cli {
    /// Worker threads (0 = one per core); outputs do not depend on it
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// TOML file of flag values; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a labelled synthetic dataset
    Synth(SynthArgs),
    /// Check a dataset directory and list every violation
    Validate(ValidateArgs),
    /// Draw an application-level train/test split
    Split(SplitArgs),
    /// Train one CloudFormer variant and save a checkpoint
    Train(TrainArgs),
    /// Fit and score the baseline methods on one split
    Baselines(BaselinesArgs),
    /// Compare the full model with its single-branch variants over seeds
    Ablate(MatrixArgs),
    /// Evaluate methods over seeds and write the report files
    Eval(MatrixArgs),
    /// Re-emit the report files from a saved report.json
    Report(ReportArgs),
    /// Repeat a run recorded in a manifest
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Validate(_) => "validate",
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Baselines(_) => "baselines",
            Command::Ablate(_) => "ablate",
            Command::Eval(_) => "eval",
            Command::Report(_) => "report",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaChoice {
    /// 12 base metrics, 24 columns
    Desk,
    /// 103 base metrics, 206 columns
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 11)]
    pub apps: usize,
    #[arg(long, default_value_t = 64)]
    pub runs_per_app: usize,
    #[arg(long, default_value_t = 6.0 / 11.0)]
    pub static_only_frac: f64,
    #[arg(long, default_value_t = 16)]
    pub t_min: usize,
    #[arg(long, default_value_t = 64)]
    pub t_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SchemaChoice::Desk)]
    pub schema: SchemaChoice,
    /// Relative noise of every metric
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    /// Dataset directory
    #[arg(long, env = "CF_DATA_DIR", hide_env_values = true)]
    pub data: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long, env = "CF_DATA_DIR", hide_env_values = true)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output split file (JSON)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// d = 16, one block per branch
    Desk,
    /// d = 64, four blocks per branch, dropout 0.4
    Large,
    /// d = 8, one block per branch
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantChoice {
    Full,
    Temporal,
    System,
}

/// Model and optimizer settings shared by the training commands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Peak learning rate
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    /// Final learning rate of the cosine decay
    #[arg(long, default_value_t = 1e-5)]
    pub floor_lr: f64,
    /// Fraction of steps spent in linear warm-up
    #[arg(long, default_value_t = 0.05)]
    pub warmup_frac: f64,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 30)]
    pub patience: usize,
    /// Fraction of training runs held out for early stopping
    #[arg(long, default_value_t = 0.15)]
    pub val_frac: f64,
    /// Global gradient-norm clip (0 disables)
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    /// Dropout rate [default: the preset's]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Disable the per-metric identity embeddings of the system branch
    #[arg(long, default_value_t = false)]
    pub no_identity: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, env = "CF_DATA_DIR", hide_env_values = true)]
    pub data: PathBuf,
    /// Split file; drawn from --seed when omitted
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantChoice::Full)]
    pub variant: VariantChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output checkpoint file
    #[arg(long)]
    pub out: PathBuf,
    /// Training log file (JSON)
    #[arg(long)]
    pub log: Option<PathBuf>,
}

/// Baseline settings shared by the evaluation commands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct BaselineArgs {
    /// Random-search candidates per tree method
    #[arg(long, default_value_t = 50)]
    pub budget: usize,
    /// Cross-validation folds (grouped by application)
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, default_value_t = 32)]
    pub lstm_hidden: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselinesArgs {
    #[arg(long, env = "CF_DATA_DIR", hide_env_values = true)]
    pub data: PathBuf,
    /// Split file; drawn from --seed when omitted
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Comma-separated subset of lr,glr,dt,rf,lstm
    #[arg(long, default_value = "lr,glr,dt,rf,lstm")]
    pub methods: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub baseline: BaselineArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output report file (JSON)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MatrixArgs {
    #[arg(long, env = "CF_DATA_DIR", hide_env_values = true)]
    pub data: PathBuf,
    /// Inclusive range a..b or comma list
    #[arg(long, default_value = "0..5")]
    pub seeds: Seeds,
    /// Comma-separated methods [default: lr,glr,dt,rf,lstm,cf_full for eval; cf_full,cf_temporal,cf_system for ablate]
    #[arg(long)]
    pub methods: Option<String>,
    #[command(flatten)]
    pub baseline: BaselineArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output report directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// A report.json written by eval, ablate or baselines
    #[arg(long)]
    pub input: PathBuf,
    /// Output report directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded location
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Seed list written as an inclusive range `a..b`, a comma list, or one seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds(pub Vec<u64>);

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let bad = |p: &str| format!("invalid seed {p:?}");
        if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad(a))?;
            let b: u64 = b.trim_start_matches('=').trim().parse().map_err(|_| bad(b))?;
            if a > b {
                return Err(format!("empty seed range {s}"));
            }
            return Ok(Seeds((a..=b).collect()));
        }
        let seeds = s
            .split(',')
            .map(|p| p.trim().parse::<u64>().map_err(|_| bad(p)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Seeds(seeds))
    }
}

impl fmt::Display for Seeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_syntax() {
        assert_eq!("0..5".parse::<Seeds>().unwrap().0, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!("3".parse::<Seeds>().unwrap().0, vec![3]);
        assert_eq!("1, 4".parse::<Seeds>().unwrap().0, vec![1, 4]);
        assert!("5..2".parse::<Seeds>().is_err());
        assert!("x".parse::<Seeds>().is_err());
    }
}
