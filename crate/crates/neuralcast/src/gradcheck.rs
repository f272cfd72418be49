//! Analytic gradients against central finite differences.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{init_rng, HybridNet, ModelConfig};
use crate::tape::{ParamId, ParamStore, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradScope {
    /// Coordinates drawn from every parameter.
    Full,
    /// Coordinates drawn from the output head only.
    HeadOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub param: String,
    pub index: [usize; 2],
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords: Vec<CoordCheck>,
}

/// Magnitude below which both gradients count as zero.
const ABS_FLOOR: f64 = 1e-10;

pub fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ABS_FLOOR { 0.0 } else { (a - n).abs() / scale }
}

/// Checks `n_coords` random coordinates of a freshly initialized network
/// (in `f64`) on a random input and target. The zero-initialized head is
/// replaced by random values so gradients reach every layer.
pub fn grad_check(cfg: &ModelConfig, eps: f64, tol: f64, n_coords: usize, scope: GradScope, seed: u64) -> Result<GradCheckReport> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut store = ParamStore::<f64>::new();
    let d_in = cfg.d_in_base();
    let net = HybridNet::new(cfg, d_in, &mut store, "net", &mut init_rng(seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e4d);
    for id in [net.head.w, net.head.b] {
        store.get_mut(id).mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let x = Array2::from_shape_simple_fn((cfg.seq_len, d_in), || rng.random_range(-1.0..1.0));
    let target = Array2::from_shape_simple_fn((cfg.target_len, 1), || rng.random_range(-1.0..1.0));

    let loss = |store: &ParamStore<f64>| {
        let mut t = Tape::new(store);
        let xv = t.leaf(x.clone());
        let y = net.forward(&mut t, xv, None);
        let l = t.mse(y, target.clone());
        t.value(l)[(0, 0)]
    };
    let analytic = {
        let mut t = Tape::new(&store);
        let xv = t.leaf(x.clone());
        let y = net.forward(&mut t, xv, None);
        let l = t.mse(y, target.clone());
        t.backward(l)
    };

    let candidates: Vec<ParamId> = match scope {
        GradScope::Full => store.ids().collect(),
        GradScope::HeadOnly => vec![net.head.w, net.head.b],
    };
    let flat: Vec<(ParamId, [usize; 2])> = candidates
        .iter()
        .flat_map(|&id| {
            let (r, c) = store.get(id).dim();
            (0..r).flat_map(move |i| (0..c).map(move |j| (id, [i, j])))
        })
        .collect();
    let picks = sample(&mut rng, flat.len(), n_coords.min(flat.len()));

    let mut coords = Vec::with_capacity(picks.len());
    for k in picks.iter() {
        let (id, [i, j]) = flat[k];
        let mut plus = store.clone();
        plus.get_mut(id)[(i, j)] += eps;
        let mut minus = store.clone();
        minus.get_mut(id)[(i, j)] -= eps;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
        let a = analytic[id.0][(i, j)];
        coords.push(CoordCheck {
            param: store.name(id).to_string(),
            index: [i, j],
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric),
        });
    }
    let max_rel_err = coords.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    let offending: Vec<String> = coords
        .iter()
        .filter(|c| c.rel_err >= tol)
        .map(|c| format!("{}[{},{}]: analytic {:.6e}, numeric {:.6e}", c.param, c.index[0], c.index[1], c.analytic, c.numeric))
        .collect();
    if !offending.is_empty() {
        return Err(Error::GradMismatch { worst: max_rel_err, offending });
    }
    Ok(GradCheckReport { max_rel_err, coords })
}
