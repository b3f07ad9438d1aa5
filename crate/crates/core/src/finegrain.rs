//! Moving trained weights one scale down.
//!
//! A coarse-graining layer maps data as `C = V . U^T`, so for weights `W` at
//! the coarse scale `<W, C(x)> = <U V^T W, x>`. Fine-graining builds
//! `W' = U V^T W` as an MPS on twice as many sites: every core is expanded by
//! `V^T` into a pair of sites and split by SVD, then the disentanglers are
//! applied on the pairs `(2i+1, 2i+2 mod N)`.

use crate::coarsegrain::{apply_pair_gates, ScaleCache};
use crate::error::{Error, Result};
use crate::mps::Mps;
use crate::tensor::{gemm, matrix_qr, svd_split, DenseTensor, Truncation};
use crate::trainer::{cost, train, train_from, SweepStats, TrainConfig};
use crate::wavelet::WaveletMeraLayer;

/// Weights moved one scale finer, plus the discarded weight of every SVD
/// truncation made on the way.
#[derive(Clone, Debug)]
pub struct FineGrained {
    pub weights: Mps,
    pub truncation_error: f64,
}

/// `W' = U V^T W` on `2 N'` sites.
pub fn fine_grain_weights(w: &Mps, layer: &WaveletMeraLayer, trunc: Truncation) -> Result<FineGrained> {
    let n_coarse = w.len();
    if layer.n_sites_in != 2 * n_coarse {
        return Err(Error::dim(format!(
            "layer expects {} fine sites, weights have {n_coarse} coarse sites",
            layer.n_sites_in
        )));
    }
    if w.site_dims().iter().any(|&d| d != 2) {
        return Err(Error::dim("fine-graining needs site dimension 2"));
    }
    let (expanded, err_expand) = expand_isometries(w, layer, trunc)?;
    let (weights, err_gates) = apply_pair_gates(&expanded, &layer.fine_gate(), trunc)?;
    Ok(FineGrained {
        weights,
        truncation_error: err_expand + err_gates,
    })
}

/// Applies `V^T` to every core, left to right with the center carried along
/// so each split truncates at the orthogonality center.
fn expand_isometries(w: &Mps, layer: &WaveletMeraLayer, trunc: Truncation) -> Result<(Mps, f64)> {
    let n = w.len();
    let w = w.canonicalize(0)?;
    let v = layer.isometry.data();
    let mut cores = Vec::with_capacity(2 * n);
    let mut carry: Option<(Vec<f64>, usize)> = None;
    let mut err = 0.0;
    for i in 0..n {
        let a = w.core(i);
        let (l0, r) = (a.shape()[0], a.shape()[2]);
        let (core, l) = match carry.take() {
            Some((rmat, k)) => (gemm(&rmat, a.data(), k, l0, 2 * r), k),
            None => (a.data().to_vec(), l0),
        };
        // t[l, a, b, r] = sum_c V[c, 2a + b] core[l, c, r]
        let mut t = DenseTensor::zeros(&[l, 2, 2, r]);
        for li in 0..l {
            for p in 0..4 {
                for ri in 0..r {
                    let val = v[p] * core[(li * 2) * r + ri] + v[4 + p] * core[(li * 2 + 1) * r + ri];
                    t.data_mut()[(li * 4 + p) * r + ri] = val;
                }
            }
        }
        let svd = svd_split(&t, &[0, 1], trunc)?;
        err += svd.truncation_error;
        let k = svd.rank();
        let mut right = svd.right_factor;
        for (idx, x) in right.data_mut().iter_mut().enumerate() {
            *x *= svd.singular_values[idx / (2 * r)];
        }
        cores.push(svd.left_factor);
        if i + 1 < n {
            let (q, rr, k2) = matrix_qr(right.data(), k * 2, r);
            cores.push(DenseTensor::new(vec![k, 2, k2], q)?);
            carry = Some((rr, k2));
        } else {
            cores.push(right);
        }
    }
    Ok((Mps::from_cores(cores)?, err))
}

/// Telemetry for one scale of a multi-scale schedule.
#[derive(Clone, Debug)]
pub struct ScaleRun {
    pub scale: usize,
    /// Weights after training at this scale.
    pub weights: Mps,
    pub stats: Vec<SweepStats>,
    /// Discarded weight when projecting onto this scale (0 for the start).
    pub projection_error: f64,
    /// Training cost at this scale right after projection, before training.
    pub cost_after_projection: Option<f64>,
    /// Training cost at the scale above right before projection.
    pub cost_before_projection: Option<f64>,
}

/// Trains at scale `start`, then repeatedly fine-grains one layer and
/// retrains, down to scale `end`. `config` gives the training settings for
/// each scale; projections use that scale's `(delta_weights, chi_max)` unless
/// `projection` overrides it. Runs are returned coarsest first.
pub fn multiscale_schedule(
    cache: &ScaleCache,
    config: impl Fn(usize) -> TrainConfig,
    start: usize,
    end: usize,
    projection: Option<Truncation>,
) -> Result<(Mps, Vec<ScaleRun>)> {
    if end > start {
        return Err(Error::arg(format!("end scale {end} is coarser than start scale {start}")));
    }
    let top = cache.scale(start)?;
    let cfg = config(start);
    let (mut w, stats) = train(top, &cfg)?;
    let mut runs = vec![ScaleRun {
        scale: start,
        weights: w.clone(),
        stats,
        projection_error: 0.0,
        cost_after_projection: None,
        cost_before_projection: None,
    }];
    for s in (end..start).rev() {
        let coarse = cache.scale(s + 1)?;
        let fine = cache.scale(s)?;
        let cfg = config(s);
        let trunc = match projection {
            Some(t) => t,
            None => cfg.truncation()?,
        };
        let before = cost(&w, coarse, config(s + 1).lambda)?;
        let projected = fine_grain_weights(&w, &cache.layer(s + 1)?, trunc)?;
        let after = cost(&projected.weights, fine, cfg.lambda)?;
        let (w_new, stats) = train_from(&projected.weights, fine, &cfg)?;
        w = w_new;
        runs.push(ScaleRun {
            scale: s,
            weights: w.clone(),
            stats,
            projection_error: projected.truncation_error,
            cost_after_projection: Some(after),
            cost_before_projection: Some(before),
        });
    }
    Ok((w, runs))
}
