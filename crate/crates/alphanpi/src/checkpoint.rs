//! Checkpointing: named parameter tensors plus everything needed to resume a
//! run exactly (optimizer moments, curriculum, replay buffer, success
//! counts, iteration). Episode RNG streams derive from (seed, iteration), so
//! no separate generator state is stored.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::{Environment, ProgramSpec};
use crate::net::{NetDims, NpiParams};
use crate::training::{CurriculumState, ReplayBuffer, Trainer};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorBlob {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major values.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    /// Program table the parameters were trained against; action indices are
    /// only meaningful for this table.
    pub programs: Vec<ProgramSpec>,
    pub dims: NetDims,
    pub iteration: u64,
    pub tensors: Vec<TensorBlob>,
    pub adam: crate::nn::AdamState,
    pub curriculum: CurriculumState,
    pub buffer: ReplayBuffer,
    pub success_count: Vec<u64>,
}

impl Checkpoint {
    pub fn from_trainer<E: Environment + Clone + Send + Sync>(trainer: &Trainer<E>) -> Self {
        let params = &trainer.params;
        let tensors = params
            .named_tensors()
            .into_iter()
            .map(|(name, shape, values)| TensorBlob {
                name,
                shape,
                values: values.to_vec(),
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            config: trainer.config.clone(),
            programs: trainer.env.library().programs.clone(),
            dims: params.dims,
            iteration: trainer.iteration,
            tensors,
            adam: params.adam.clone(),
            curriculum: trainer.curriculum.clone(),
            buffer: trainer.buffer.clone(),
            success_count: trainer.success_count.clone(),
        }
    }

    /// Rebuilds the parameter set from the named tensors.
    pub fn to_params(&self) -> Result<NpiParams> {
        let mut params = NpiParams::zeros(self.dims, self.adam.lr);
        let expected = params.named_tensors();
        if expected.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "tensor count mismatch: file has {}, model needs {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape, _), blob) in expected.iter().zip(self.tensors.iter()) {
            if *name != blob.name {
                return Err(Error::Checkpoint(format!(
                    "tensor name mismatch: expected {name}, found {}",
                    blob.name
                )));
            }
            if *shape != blob.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} shape mismatch: expected {shape:?}, found {:?}",
                    blob.shape
                )));
            }
            if blob.values.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has {} values for shape {shape:?}",
                    blob.values.len()
                )));
            }
        }
        params.load_named_tensors(&self.tensors)?;
        params.adam = self.adam.clone();
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = std::fs::File::create(path)?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer(&mut writer, self)?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let ckpt: Checkpoint = serde_json::from_reader(reader)
            .map_err(|e| Error::Checkpoint(format!("cannot parse checkpoint: {e}")))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Restores a trainer mid-run; the environment is rebuilt from the
    /// stored config and validated against the stored program table.
    pub fn resume(&self) -> Result<Trainer<crate::env::AnyEnv>> {
        let env = self.config.build_env()?;
        env.library().validate_against(&self.programs)?;
        let params = self.to_params()?;
        Ok(Trainer {
            env,
            params,
            curriculum: self.curriculum.clone(),
            buffer: self.buffer.clone(),
            config: self.config.clone(),
            success_count: self.success_count.clone(),
            iteration: self.iteration,
        })
    }
}
