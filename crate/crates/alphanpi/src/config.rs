//! Run configuration: a flat JSON file whose keys follow the hyperparameter
//! notation (`P`, `H`, `S`, `n_simu`, `tau_1`, ...), with per-environment
//! defaults filled in for anything unspecified.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::env::hanoi::HanoiEnv;
use crate::env::sorting::{SortEnv, SortMode};
use crate::env::{AnyEnv, ProgramSpec};
use crate::mcts::SearchConfig;
use crate::training::ScoreRule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Sorting,
    SortingRecursive,
    SortingFlat,
    Hanoi,
}

impl EnvKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvKind::Sorting => "sorting",
            EnvKind::SortingRecursive => "sorting_recursive",
            EnvKind::SortingFlat => "sorting_flat",
            EnvKind::Hanoi => "hanoi",
        }
    }
}

/// On-disk configuration; every field optional except `environment`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub environment: Option<EnvKind>,
    pub seed: Option<u64>,
    pub output_dir: Option<String>,

    #[serde(rename = "P")]
    pub program_embedding: Option<usize>,
    #[serde(rename = "H")]
    pub lstm_hidden: Option<usize>,
    #[serde(rename = "S")]
    pub encoding_dim: Option<usize>,
    pub encoder_hidden: Option<usize>,

    pub delta_curr: Option<f64>,
    pub gamma: Option<f64>,
    pub n_simu: Option<usize>,
    pub n_simu_exploit: Option<usize>,
    pub n_batches: Option<usize>,
    pub n_ep: Option<usize>,
    pub n_val: Option<usize>,
    pub c_level: Option<f64>,
    pub c_puct: Option<f64>,
    pub batch_size: Option<usize>,
    pub n_buf: Option<usize>,
    pub p_buf: Option<f64>,
    pub lr: Option<f64>,
    pub r_pen_recur: Option<f64>,
    pub tau_1: Option<f64>,
    pub tau_2: Option<f64>,
    pub tau_3: Option<f64>,
    pub beta: Option<f64>,
    pub eps_d: Option<f64>,
    pub alpha_d: Option<f64>,

    pub max_depth: Option<usize>,
    pub max_iterations: Option<u64>,
    pub teacher_forcing: Option<bool>,
    pub workers: Option<usize>,
    pub checkpoint_every: Option<u64>,
    pub curriculum_score: Option<ScoreRule>,

    pub list_length_min: Option<usize>,
    pub list_length_max: Option<usize>,
    pub validation_length: Option<usize>,
    pub test_lengths: Option<Vec<usize>>,
    pub n_disks_train: Option<usize>,
    pub test_disk_counts: Option<Vec<usize>>,

    /// Optional declared program table, validated against the environment.
    pub programs: Option<Vec<ProgramSpec>>,
}

/// Fully-resolved configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub environment: EnvKind,
    pub seed: u64,
    pub output_dir: PathBuf,

    pub program_embedding: usize,
    pub lstm_hidden: usize,
    pub encoding_dim: usize,
    pub encoder_hidden: usize,
    pub lr: f64,

    pub search: SearchConfig,

    pub n_episodes: usize,
    pub n_validation: usize,
    pub n_batches: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub p_buffer_positive: f64,
    pub recursion_penalty: f64,
    pub teacher_forcing: bool,
    pub beta: f64,
    pub tau_curriculum: f64,
    pub delta_curriculum: f64,
    pub curriculum_rule: ScoreRule,

    pub max_iterations: u64,
    pub workers: usize,
    pub checkpoint_every: u64,

    pub list_length: (usize, usize),
    /// Problem size for validation episodes; `None` keeps the training size.
    pub validation_size: Option<usize>,
    pub test_sizes: Vec<usize>,
    pub n_disks_train: usize,

    pub declared_programs: Option<Vec<ProgramSpec>>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        Self::from_raw(raw)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let environment = raw
            .environment
            .ok_or_else(|| Error::Config("missing required key: environment".to_string()))?;
        let is_hanoi = environment == EnvKind::Hanoi;

        // Exploration noise and budget are higher for the Tower of Hanoi.
        let n_simu = raw.n_simu.unwrap_or(if is_hanoi { 1500 } else { 200 });
        let eps_d = raw.eps_d.unwrap_or(if is_hanoi { 0.5 } else { 0.25 });
        let alpha_d = raw.alpha_d.unwrap_or(if is_hanoi { 0.5 } else { 0.03 });
        if n_simu < 2 {
            return Err(Error::Config("n_simu must be at least 2".to_string()));
        }

        let recursion_penalty = raw.r_pen_recur.unwrap_or(0.9);
        let search = SearchConfig {
            c_puct: raw.c_puct.unwrap_or(0.5),
            c_level: raw.c_level.unwrap_or(3.0),
            epsilon_dirichlet: eps_d,
            alpha_dirichlet: alpha_d,
            tau_q: raw.tau_1.unwrap_or(1.0),
            tau_policy: raw.tau_2.unwrap_or(1.3),
            gamma: raw.gamma.unwrap_or(0.97),
            n_simulations: n_simu,
            n_simulations_exploit: raw.n_simu_exploit.unwrap_or(5),
            max_depth: raw.max_depth,
            teacher_forcing: false,
            recursion_penalty,
        };

        let (len_min, len_max) = match environment {
            EnvKind::Sorting => (2, 7),
            EnvKind::SortingRecursive | EnvKind::SortingFlat => (2, 4),
            EnvKind::Hanoi => (1, 1), // unused
        };
        let list_length = (
            raw.list_length_min.unwrap_or(len_min),
            raw.list_length_max.unwrap_or(len_max),
        );
        if list_length.0 < 1 || list_length.0 > list_length.1 {
            return Err(Error::Config(format!(
                "invalid list length range {:?}",
                list_length
            )));
        }
        let validation_size = match environment {
            EnvKind::Hanoi => raw.validation_length,
            _ => Some(raw.validation_length.unwrap_or(7)),
        };
        let test_sizes = raw
            .test_lengths
            .or(raw.test_disk_counts)
            .unwrap_or_else(|| match environment {
                EnvKind::Hanoi => vec![2, 5, 10, 12],
                EnvKind::SortingFlat => vec![3, 4, 5, 6],
                _ => vec![10, 20, 60, 100],
            });
        if test_sizes.contains(&0) {
            return Err(Error::Config("problem sizes must be positive".to_string()));
        }

        Ok(Self {
            environment,
            seed: raw.seed.unwrap_or(0),
            output_dir: PathBuf::from(raw.output_dir.unwrap_or_else(|| "out".to_string())),
            program_embedding: raw.program_embedding.unwrap_or(256),
            lstm_hidden: raw.lstm_hidden.unwrap_or(128),
            encoding_dim: raw.encoding_dim.unwrap_or(32),
            encoder_hidden: raw.encoder_hidden.unwrap_or(100),
            lr: raw.lr.unwrap_or(1e-4),
            search,
            n_episodes: raw.n_ep.unwrap_or(20),
            n_validation: raw.n_val.unwrap_or(25),
            n_batches: raw.n_batches.unwrap_or(2),
            batch_size: raw.batch_size.unwrap_or(256),
            buffer_capacity: raw.n_buf.unwrap_or(2000),
            p_buffer_positive: raw.p_buf.unwrap_or(0.5),
            recursion_penalty,
            teacher_forcing: raw.teacher_forcing.unwrap_or(true),
            beta: raw.beta.unwrap_or(0.99),
            tau_curriculum: raw.tau_3.unwrap_or(2.0),
            delta_curriculum: raw.delta_curr.unwrap_or(0.97),
            curriculum_rule: raw.curriculum_score.unwrap_or(ScoreRule::Inverse),
            max_iterations: raw.max_iterations.unwrap_or(1000),
            workers: raw.workers.unwrap_or(1).max(1),
            checkpoint_every: raw.checkpoint_every.unwrap_or(50),
            list_length,
            validation_size,
            test_sizes,
            n_disks_train: raw.n_disks_train.unwrap_or(2),
            declared_programs: raw.programs,
        })
    }

    /// Builds the configured environment and validates any declared program
    /// table against its built-in library.
    pub fn build_env(&self) -> Result<AnyEnv> {
        let env = match self.environment {
            EnvKind::Sorting => {
                AnyEnv::Sorting(SortEnv::new(SortMode::Iterative, self.list_length))
            }
            EnvKind::SortingRecursive => {
                AnyEnv::Sorting(SortEnv::new(SortMode::Recursive, self.list_length))
            }
            EnvKind::SortingFlat => AnyEnv::Sorting(SortEnv::new(SortMode::Flat, self.list_length)),
            EnvKind::Hanoi => AnyEnv::Hanoi(HanoiEnv::new(self.n_disks_train)),
        };
        if let Some(declared) = &self.declared_programs {
            use crate::env::Environment;
            env.library().validate_against(declared)?;
        }
        Ok(env)
    }
}
