//! JSON checkpoint: configuration, normalization statistics and both
//! networks' parameters as flat row-major arrays in registration order.

use std::path::Path;

use ndarray::Array2;
use polecast_core::featurize::NormStats;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tape::ParamStore;
use crate::train::Model;

pub const FORMAT: &str = "neuralcast-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    norm_stats: Option<NormStats>,
    base: Vec<Tensor>,
    correction: Vec<Tensor>,
}

fn tensors(store: &ParamStore<f32>) -> Vec<Tensor> {
    store
        .iter()
        .map(|(name, v)| Tensor {
            name: name.to_string(),
            shape: [v.nrows(), v.ncols()],
            data: v.iter().copied().collect(),
        })
        .collect()
}

fn restore(store: &mut ParamStore<f32>, saved: Vec<Tensor>) -> Result<()> {
    if saved.len() != store.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {}", store.len(), saved.len())));
    }
    for (id, t) in store.ids().collect::<Vec<_>>().into_iter().zip(saved) {
        let expected = store.get(id).dim();
        if store.name(id) != t.name || expected != (t.shape[0], t.shape[1]) {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match {} {:?}",
                t.name,
                t.shape,
                store.name(id),
                expected
            )));
        }
        *store.get_mut(id) = Array2::from_shape_vec(expected, t.data)
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", t.name)))?;
    }
    Ok(())
}

pub fn to_json(model: &Model<f32>) -> String {
    let ckpt = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        config: model.cfg,
        norm_stats: model.norm_stats,
        base: tensors(&model.base_params),
        correction: tensors(&model.correction_params),
    };
    serde_json::to_string(&ckpt).expect("checkpoint serializes")
}

pub fn from_json(text: &str) -> Result<Model<f32>> {
    let ckpt: Checkpoint = serde_json::from_str(text)?;
    if ckpt.format != FORMAT || ckpt.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version)));
    }
    let mut model = Model::<f32>::new(ckpt.config)?;
    model.norm_stats = ckpt.norm_stats;
    restore(&mut model.base_params, ckpt.base)?;
    restore(&mut model.correction_params, ckpt.correction)?;
    Ok(model)
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model<f32>> {
    from_json(&std::fs::read_to_string(path)?)
}
