//! Binary checkpoints: config text, named parameter tensors, optimizer
//! moments, and training state. Round trips are bit-identical.

use std::fs;
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::harness::optim::{Adam, AdamConfig, Moments};
use crate::harness::train::TrainState;
use crate::model::CanModel;

const MAGIC: &[u8; 4] = b"CANC";
const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub optimizer: Option<(u64, Vec<Moments>)>,
    pub state: TrainState,
}

pub fn save_checkpoint(
    path: &Path,
    model: &CanModel,
    optimizer: Option<&Adam>,
    state: &TrainState,
) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    let config_text = model.config.serialize();
    bytes.extend_from_slice(&(config_text.len() as u64).to_le_bytes());
    bytes.extend_from_slice(config_text.as_bytes());
    let params = model.parameters();
    bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, tensor) in &params {
        bytes.extend_from_slice(&(name.len() as u64).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(tensor.shape().len() as u64).to_le_bytes());
        for &dim in tensor.shape() {
            bytes.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in tensor.to_vec() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    match optimizer {
        Some(adam) => {
            if adam.moments.len() != params.len() {
                return Err(Error::Config(
                    "optimizer moments do not match the parameter list".into(),
                ));
            }
            bytes.push(1);
            bytes.extend_from_slice(&adam.step_count.to_le_bytes());
            for moments in &adam.moments {
                for v in moments.m.iter().chain(&moments.v) {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        None => bytes.push(0),
    }
    bytes.extend_from_slice(&(state.epoch as u64).to_le_bytes());
    bytes.extend_from_slice(&state.best_val_wa.to_le_bytes());
    bytes.extend_from_slice(&(state.patience_used as u64).to_le_bytes());
    bytes.extend_from_slice(&state.seed.to_le_bytes());
    fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    cursor: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.cursor + n > self.bytes.len() {
            return Err(Error::Parse {
                line: 0,
                message: format!("{}: checkpoint truncated", self.path),
            });
        }
        let slice = &self.bytes[self.cursor..self.cursor + n];
        self.cursor += n;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        (0..count).map(|_| self.f64()).collect()
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Parse {
            line: 0,
            message: format!("{}: non-UTF-8 text block", self.path),
        })
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        cursor: 0,
        path: path.display().to_string(),
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse {
            line: 0,
            message: format!("{}: bad magic", path.display()),
        });
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Parse {
            line: 0,
            message: format!(
                "{}: unsupported checkpoint version {version}",
                path.display()
            ),
        });
    }
    let config = ModelConfig::parse(&r.string()?)?;
    let tensor_count = r.u64()? as usize;
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name = r.string()?;
        let rank = r.u64()? as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<_>>()?;
        let len = shape.iter().product();
        tensors.push((name, shape, r.f64_vec(len)?));
    }
    let optimizer = match r.take(1)?[0] {
        0 => None,
        1 => {
            let step_count = r.u64()?;
            let mut moments = Vec::with_capacity(tensor_count);
            for (_, _, values) in &tensors {
                moments.push(Moments {
                    m: r.f64_vec(values.len())?,
                    v: r.f64_vec(values.len())?,
                });
            }
            Some((step_count, moments))
        }
        other => {
            return Err(Error::Parse {
                line: 0,
                message: format!("{}: bad optimizer marker {other}", path.display()),
            })
        }
    };
    let state = TrainState {
        epoch: r.u64()? as usize,
        best_val_wa: r.f64()?,
        patience_used: r.u64()? as usize,
        seed: r.u64()?,
    };
    if r.cursor != bytes.len() {
        return Err(Error::Parse {
            line: 0,
            message: format!(
                "{}: {} trailing bytes",
                path.display(),
                bytes.len() - r.cursor
            ),
        });
    }
    Ok(Checkpoint {
        config,
        tensors,
        optimizer,
        state,
    })
}

/// Rebuilds the model and overwrites every parameter from the checkpoint.
pub fn restore_model(checkpoint: &Checkpoint) -> Result<CanModel> {
    let model = CanModel::init(&checkpoint.config, checkpoint.state.seed)?;
    let params = model.parameters();
    if params.len() != checkpoint.tensors.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors but the model has {}",
            checkpoint.tensors.len(),
            params.len()
        )));
    }
    for ((name, tensor), (saved_name, shape, values)) in params.iter().zip(&checkpoint.tensors) {
        if name != saved_name {
            return Err(Error::Config(format!(
                "checkpoint tensor '{saved_name}' does not match expected '{name}'"
            )));
        }
        if tensor.shape() != shape.as_slice() {
            return Err(Error::Config(format!(
                "checkpoint tensor '{name}' has shape {shape:?}, expected {:?}",
                tensor.shape()
            )));
        }
        tensor.set_values(values.clone())?;
    }
    Ok(model)
}

/// Rebuilds the optimizer state saved alongside the model, if any.
pub fn restore_optimizer(checkpoint: &Checkpoint, model: &CanModel) -> Result<Option<Adam>> {
    let Some((step_count, moments)) = &checkpoint.optimizer else {
        return Ok(None);
    };
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: checkpoint.config.learning_rate,
            clip_norm: checkpoint.config.clip_norm,
            ..AdamConfig::default()
        },
        &model.parameters(),
    );
    if moments.len() != adam.moments.len() {
        return Err(Error::Config(
            "checkpoint moments do not match the parameter list".into(),
        ));
    }
    adam.step_count = *step_count;
    adam.moments = moments.clone();
    Ok(Some(adam))
}
