//! Two-site sweep training of the weight MPS.
//!
//! The cost is `C(W) = (1/2n) sum_j (f_W(x_j) - y_j)^2 + lambda ||W||^2` with
//! `f_W(x) = <W, x>`. At each bond the weights outside the two-site window are
//! held fixed, so `C` restricted to the bond tensor `B` is a quadratic
//!
//! ```text
//! C(B) = 1/2 B^T A B - b^T B + const,   A = P^T P / n + 2 lambda I,   b = P^T y / n
//! ```
//!
//! where row `j` of `P` is sample `j` projected into the window. This holds
//! because the weights are kept in mixed-canonical form with the center inside
//! the window, which makes `||W|| = ||B||`. The quadratic is minimized with
//! conjugate gradient and the result is split back by truncated SVD.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarsegrain::ScaleData;
use crate::error::{Error, Result};
use crate::mps::{transfer, transfer_right, BondTensor, Mps};
use crate::tensor::{gemm, gemm_nt, gemm_tn, DenseTensor, Truncation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Labels are +-1; the metric is the fraction with `sign(f) == sign(y)`.
    Classification,
    /// The metric is the mean absolute deviation `<|f - y|>`.
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub task: Task,
    pub n_sweeps: usize,
    pub delta_weights: f64,
    pub chi_max: usize,
    pub lambda: f64,
    pub cg_max_iters: usize,
    pub cg_tol: f64,
    pub init_bond: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Classification,
            n_sweeps: 5,
            delta_weights: 1e-14,
            chi_max: 32,
            lambda: 0.0,
            cg_max_iters: 20,
            cg_tol: 1e-10,
            init_bond: 2,
            init_scale: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sweeps == 0 {
            return Err(Error::arg("n_sweeps must be >= 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::arg(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.cg_tol >= 0.0) {
            return Err(Error::arg(format!("cg_tol must be >= 0, got {}", self.cg_tol)));
        }
        if self.init_bond == 0 {
            return Err(Error::arg("init_bond must be >= 1"));
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(Error::arg(format!("init_scale must be > 0, got {}", self.init_scale)));
        }
        self.truncation().map(|_| ())
    }

    pub fn truncation(&self) -> Result<Truncation> {
        Truncation::new(self.delta_weights, self.chi_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Bonds `0 .. N-2`, center moving from site 0 to site N-1.
    Right,
    /// Bonds `N-2 .. 0`, center moving from site N-1 to site 0.
    Left,
}

/// What happened at one bond during a sweep. All costs are the full
/// training cost of the current weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BondUpdate {
    pub bond: usize,
    pub cost_before: f64,
    pub cost_after_solve: f64,
    pub cost_after_split: f64,
    pub truncation_error: f64,
    /// Upper bound on `cost_after_split - cost_after_solve`.
    pub slack_bound: f64,
    pub cg_iterations: usize,
}

/// Telemetry for one full back-and-forth sweep (or one directional sweep
/// when returned by [`sweep`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub sweep_index: usize,
    pub cost: f64,
    pub max_bond: usize,
    pub train_metric: f64,
    pub truncation_error: f64,
    /// Seconds. Not serialized so metrics files stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
    #[serde(skip)]
    pub bonds: Vec<BondUpdate>,
}

/// Per-sample partial contractions of the data with the weights outside the
/// active two-site window.
///
/// `left_stacks[i][s]` contracts sites `0 .. i` of sample `s` with the
/// weights and has shape `(W bond, x bond)` at the left edge of site `i`.
/// `right_stacks[i][s]` contracts sites `i .. N`, shaped the same way at the
/// left edge of site `i`. Entries that are stale for the current window are
/// `None`.
#[derive(Clone, Debug)]
pub struct Environment {
    window: usize,
    n_sites: usize,
    left_stacks: Vec<Option<Vec<Vec<f64>>>>,
    right_stacks: Vec<Option<Vec<Vec<f64>>>>,
}

/// Samples projected into a two-site window: an `n x dim` row-major matrix
/// where `dim` is the number of entries of the bond tensor.
#[derive(Clone, Debug)]
pub struct Projections {
    rows: Vec<f64>,
    n: usize,
    dim: usize,
}

impl Environment {
    /// Builds the stacks needed for the window at bond `window`.
    pub fn new(w: &Mps, data: &ScaleData, window: usize) -> Result<Self> {
        let n_sites = w.len();
        if n_sites < 2 {
            return Err(Error::dim("two-site training needs at least 2 sites"));
        }
        if window + 1 >= n_sites {
            return Err(Error::arg(format!("window {window} out of range for {n_sites} sites")));
        }
        check_data(w, data)?;
        let mut env = Environment {
            window,
            n_sites,
            left_stacks: vec![None; n_sites + 1],
            right_stacks: vec![None; n_sites + 1],
        };
        env.left_stacks[0] = Some(vec![vec![1.0]; data.len()]);
        env.right_stacks[n_sites] = Some(vec![vec![1.0]; data.len()]);
        for i in 0..window {
            env.push_left(w, data, i);
        }
        for i in (window + 2..n_sites).rev() {
            env.push_right(w, data, i);
        }
        Ok(env)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn left_stack(&self, site: usize, sample: usize) -> Option<&[f64]> {
        self.left_stacks.get(site)?.as_ref().map(|v| v[sample].as_slice())
    }

    pub fn right_stack(&self, site: usize, sample: usize) -> Option<&[f64]> {
        self.right_stacks.get(site)?.as_ref().map(|v| v[sample].as_slice())
    }

    /// `left_stacks[i + 1]` from `left_stacks[i]` and core `i`.
    fn push_left(&mut self, w: &Mps, data: &ScaleData, i: usize) {
        let prev = self.left_stacks[i].as_ref().expect("left stack available");
        let a = w.core(i);
        let next: Vec<Vec<f64>> = prev
            .par_iter()
            .zip(data.samples.par_iter())
            .map(|(env, x)| {
                let b = x.core(i);
                transfer(env, a.shape()[0], b.shape()[0], a, b)
            })
            .collect();
        self.left_stacks[i + 1] = Some(next);
    }

    /// `right_stacks[i]` from `right_stacks[i + 1]` and core `i`.
    fn push_right(&mut self, w: &Mps, data: &ScaleData, i: usize) {
        let prev = self.right_stacks[i + 1].as_ref().expect("right stack available");
        let a = w.core(i);
        let next: Vec<Vec<f64>> = prev
            .par_iter()
            .zip(data.samples.par_iter())
            .map(|(env, x)| transfer_right(env, a, x.core(i)))
            .collect();
        self.right_stacks[i] = Some(next);
    }

    /// Moves the window one bond after the cores of the current window have
    /// been replaced in `w`.
    pub fn advance(&mut self, w: &Mps, data: &ScaleData, direction: Direction) -> Result<()> {
        let j = self.window;
        match direction {
            Direction::Right => {
                if j + 2 >= self.n_sites {
                    return Err(Error::State("window already at the right edge".into()));
                }
                self.right_stacks[j + 2] = None;
                self.push_left(w, data, j);
                self.window = j + 1;
            }
            Direction::Left => {
                if j == 0 {
                    return Err(Error::State("window already at the left edge".into()));
                }
                self.left_stacks[j] = None;
                self.push_right(w, data, j + 1);
                self.window = j - 1;
            }
        }
        Ok(())
    }

    /// Projects every sample into the current window. `b` supplies the
    /// window's bond and site extents.
    pub fn projections(&self, data: &ScaleData, b: &BondTensor) -> Result<Projections> {
        let j = self.window;
        if b.site_index != j {
            return Err(Error::State(format!(
                "bond tensor at {} but environment window at {j}",
                b.site_index
            )));
        }
        let s = b.value.shape();
        let (l, d1, d2, r) = (s[0], s[1], s[2], s[3]);
        let dim = l * d1 * d2 * r;
        let left = self.left_stacks[j]
            .as_ref()
            .ok_or_else(|| Error::State(format!("left stack {j} is stale")))?;
        let right = self.right_stacks[j + 2]
            .as_ref()
            .ok_or_else(|| Error::State(format!("right stack {} is stale", j + 2)))?;
        let n = data.len();
        let mut rows = vec![0.0; n * dim];
        rows.par_chunks_mut(dim)
            .zip(data.samples.par_iter())
            .zip(left.par_iter().zip(right.par_iter()))
            .try_for_each(|((row, x), (le, re))| -> Result<()> {
                let (xa, xb) = (x.core(j), x.core(j + 1));
                let (sa, sb) = (xa.shape(), xb.shape());
                let (xl, xm, xr) = (sa[0], sa[2], sb[2]);
                if le.len() != l * xl || re.len() != r * xr || sa[1] != d1 || sb[1] != d2 {
                    return Err(Error::State("environment does not match bond tensor".into()));
                }
                let t1 = gemm(le, xa.data(), l, xl, d1 * xm);
                let t2 = gemm(&t1, xb.data(), l * d1, xm, d2 * xr);
                row.copy_from_slice(&gemm_nt(&t2, re, l * d1 * d2, xr, r));
                Ok(())
            })?;
        Ok(Projections { rows, n, dim })
    }
}

impl Projections {
    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.dim..(j + 1) * self.dim]
    }

    /// Model outputs `f_j = <B, P_j>`.
    pub fn outputs(&self, b: &[f64]) -> Vec<f64> {
        gemm(&self.rows, b, self.n, self.dim, 1)
    }

    pub fn cost(&self, b: &[f64], labels: &[f64], lambda: f64) -> f64 {
        let f = self.outputs(b);
        cost_from_outputs(&f, labels) + lambda * dot(b, b)
    }

    /// `-dC/dB = (1/n) P^T (y - f) - 2 lambda B`.
    pub fn descent_direction(&self, b: &[f64], labels: &[f64], lambda: f64) -> Vec<f64> {
        let f = self.outputs(b);
        let resid: Vec<f64> = labels.iter().zip(&f).map(|(y, f)| y - f).collect();
        let mut g = gemm_tn(&self.rows, &resid, self.n, self.dim, 1);
        let inv_n = 1.0 / self.n as f64;
        for (gi, bi) in g.iter_mut().zip(b) {
            *gi = *gi * inv_n - 2.0 * lambda * bi;
        }
        g
    }

    /// `A v` with `A = P^T P / n + 2 lambda I`, in one pass over the rows.
    /// Blocks of rows are summed in a fixed order.
    fn apply_normal(&self, v: &[f64], lambda: f64) -> Vec<f64> {
        const BLOCK: usize = 32;
        let dim = self.dim;
        let partials: Vec<Vec<f64>> = self
            .rows
            .par_chunks(BLOCK * dim)
            .map(|block| {
                let mut acc = vec![0.0; dim];
                for row in block.chunks_exact(dim) {
                    let t = dot(row, v);
                    acc.iter_mut().zip(row).for_each(|(a, r)| *a += t * r);
                }
                acc
            })
            .collect();
        let inv_n = 1.0 / self.n as f64;
        let mut out: Vec<f64> = v.iter().map(|vi| 2.0 * lambda * vi).collect();
        let mut sum = vec![0.0; dim];
        for part in &partials {
            sum.iter_mut().zip(part).for_each(|(s, p)| *s += p);
        }
        out.iter_mut().zip(&sum).for_each(|(o, s)| *o += s * inv_n);
        out
    }

    fn mean_norm_sqr(&self) -> f64 {
        dot(&self.rows, &self.rows) / self.n as f64
    }

    /// Diagonal of `A`, used as a Jacobi preconditioner.
    fn normal_diagonal(&self, lambda: f64) -> Vec<f64> {
        let mut diag = vec![2.0 * lambda; self.dim];
        let inv_n = 1.0 / self.n as f64;
        for row in self.rows.chunks_exact(self.dim) {
            for (d, v) in diag.iter_mut().zip(row) {
                *d += v * v * inv_n;
            }
        }
        diag
    }

    /// Jacobi-preconditioned conjugate gradient on `A x = P^T y / n` starting
    /// from `x0`. Stops when `||A x - b|| <= tol ||b||` or after `max_iters`
    /// iterations. Returns the iterate and the number of iterations taken.
    pub fn conjugate_gradient(
        &self,
        labels: &[f64],
        x0: &[f64],
        lambda: f64,
        max_iters: usize,
        tol: f64,
    ) -> Result<(Vec<f64>, usize)> {
        let mut rhs = gemm_tn(&self.rows, labels, self.n, self.dim, 1);
        let inv_n = 1.0 / self.n as f64;
        rhs.iter_mut().for_each(|v| *v *= inv_n);
        let threshold = tol * dot(&rhs, &rhs).sqrt();
        let inv_diag: Vec<f64> = self
            .normal_diagonal(lambda)
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        let precondition = |r: &[f64]| -> Vec<f64> { r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect() };

        let mut x = x0.to_vec();
        let ax = self.apply_normal(&x, lambda);
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let rr = dot(&r, &r);
        if !rr.is_finite() {
            return Err(Error::Numeric("non-finite residual in local solve".into()));
        }
        if rr.sqrt() <= threshold {
            return Ok((x, 0));
        }
        let mut z = precondition(&r);
        let mut rz = dot(&r, &z);
        let mut d = z.clone();
        let mut iters = 0;
        while iters < max_iters {
            let ad = self.apply_normal(&d, lambda);
            let dad = dot(&d, &ad);
            if !(dad > 0.0) {
                break;
            }
            let alpha = rz / dad;
            x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += alpha * di);
            r.iter_mut().zip(&ad).for_each(|(ri, ai)| *ri -= alpha * ai);
            iters += 1;
            let rr = dot(&r, &r);
            if !rr.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(
                    "conjugate gradient diverged; consider increasing lambda".into(),
                ));
            }
            if rr.sqrt() <= threshold {
                break;
            }
            z = precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            d.iter_mut().zip(&z).for_each(|(di, zi)| *di = zi + beta * *di);
            rz = rz_new;
        }
        Ok((x, iters))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_data(w: &Mps, data: &ScaleData) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("training data is empty".into()));
    }
    let dims = w.site_dims();
    for (s, x) in data.samples.iter().enumerate() {
        if x.site_dims() != dims {
            return Err(Error::dim(format!(
                "sample {s} has site dims {:?}, weights have {:?}",
                x.site_dims(),
                dims
            )));
        }
    }
    Ok(())
}

fn cost_from_outputs(f: &[f64], labels: &[f64]) -> f64 {
    let sse: f64 = f.iter().zip(labels).map(|(f, y)| (f - y) * (f - y)).sum();
    sse / (2.0 * f.len() as f64)
}

/// `+1` for `x >= 0`, `-1` otherwise.
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Accuracy or mean absolute deviation from precomputed outputs.
pub fn metric_from_outputs(f: &[f64], labels: &[f64], task: Task) -> Result<f64> {
    if f.is_empty() || f.len() != labels.len() {
        return Err(Error::Data("metric needs matching, nonempty outputs and labels".into()));
    }
    let n = f.len() as f64;
    Ok(match task {
        Task::Classification => {
            f.iter().zip(labels).filter(|(f, y)| sign(**f) == sign(**y)).count() as f64 / n
        }
        Task::Regression => f.iter().zip(labels).map(|(f, y)| (f - y).abs()).sum::<f64>() / n,
    })
}

/// `f_W(x) = <W, x>`.
pub fn model_output(w: &Mps, x: &Mps) -> Result<f64> {
    w.inner(x)
}

pub fn predict(w: &Mps, data: &ScaleData) -> Result<Vec<f64>> {
    data.samples.par_iter().map(|x| w.inner(x)).collect()
}

pub fn cost(w: &Mps, data: &ScaleData, lambda: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("cost over empty data".into()));
    }
    let f = predict(w, data)?;
    Ok(cost_from_outputs(&f, &data.labels) + lambda * w.norm_sqr())
}

pub fn evaluate(w: &Mps, data: &ScaleData, task: Task) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("evaluation over empty data".into()));
    }
    metric_from_outputs(&predict(w, data)?, &data.labels, task)
}

/// `-dC/dB` for the bond tensor `b` at the environment's window. The weights
/// outside the window must be in canonical form around it.
pub fn local_gradient(env: &Environment, b: &BondTensor, data: &ScaleData, lambda: f64) -> Result<BondTensor> {
    let p = env.projections(data, b)?;
    let g = p.descent_direction(b.value.data(), &data.labels, lambda);
    BondTensor::new(DenseTensor::new(b.value.shape().to_vec(), g)?, b.site_index)
}

/// Minimizes the cost over the bond tensor with conjugate gradient from `b0`.
/// The result never has a higher cost than `b0`.
pub fn solve_local(
    b0: &BondTensor,
    env: &Environment,
    data: &ScaleData,
    lambda: f64,
    cg_max_iters: usize,
    cg_tol: f64,
) -> Result<BondTensor> {
    let p = env.projections(data, b0)?;
    let (x, _) = solve_projected(&p, &data.labels, b0.value.data(), lambda, cg_max_iters, cg_tol)?;
    BondTensor::new(DenseTensor::new(b0.value.shape().to_vec(), x)?, b0.site_index)
}

fn solve_projected(
    p: &Projections,
    labels: &[f64],
    b0: &[f64],
    lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, usize)> {
    let (x, iters) = p.conjugate_gradient(labels, b0, lambda, max_iters, tol)?;
    if p.cost(&x, labels, lambda) > p.cost(b0, labels, lambda) {
        return Ok((b0.to_vec(), iters));
    }
    Ok((x, iters))
}

/// One directional sweep over every bond. `w` must be canonical with its
/// center at the starting edge (site 0 for [`Direction::Right`], site N-1
/// for [`Direction::Left`]); the result is centered at the other edge.
pub fn sweep(w: &Mps, data: &ScaleData, cfg: &TrainConfig, direction: Direction) -> Result<(Mps, SweepStats)> {
    let start = Instant::now();
    cfg.validate()?;
    let n = w.len();
    if n < 2 {
        return Err(Error::dim("two-site sweeps need at least 2 sites"));
    }
    let edge = match direction {
        Direction::Right => 0,
        Direction::Left => n - 1,
    };
    if w.ortho_center() != Some(edge) {
        return Err(Error::State(format!(
            "sweep needs the orthogonality center at site {edge}, found {:?}",
            w.ortho_center()
        )));
    }
    let trunc = cfg.truncation()?;
    let bonds: Vec<usize> = match direction {
        Direction::Right => (0..n - 1).collect(),
        Direction::Left => (0..n - 1).rev().collect(),
    };
    let mut w = w.clone();
    let mut env = Environment::new(&w, data, bonds[0])?;
    let labels = &data.labels;
    let mut updates = Vec::with_capacity(bonds.len());
    let mut last_outputs = Vec::new();
    let mut last_cost = 0.0;
    for (step, &j) in bonds.iter().enumerate() {
        let b0 = w.merge_bond(j)?;
        let p = env.projections(data, &b0)?;
        let cost_before = p.cost(b0.value.data(), labels, cfg.lambda);
        let (x, iters) = solve_projected(&p, labels, b0.value.data(), cfg.lambda, cfg.cg_max_iters, cfg.cg_tol)?;
        let cost_after_solve = p.cost(&x, labels, cfg.lambda);
        let grad = p.descent_direction(&x, labels, cfg.lambda);
        let grad_norm = dot(&grad, &grad).sqrt();

        let new_center = match direction {
            Direction::Right => j + 1,
            Direction::Left => j,
        };
        let b = BondTensor::new(DenseTensor::new(b0.value.shape().to_vec(), x)?, j)?;
        let err = w.split_bond_in_place(&b, trunc, new_center)?;
        let merged = w.merge_bond(j)?;
        last_outputs = p.outputs(merged.value.data());
        last_cost = cost_from_outputs(&last_outputs, labels) + cfg.lambda * merged.value.norm_sqr();
        let curvature = p.mean_norm_sqr() + 2.0 * cfg.lambda;
        updates.push(BondUpdate {
            bond: j,
            cost_before,
            cost_after_solve,
            cost_after_split: last_cost,
            truncation_error: err,
            slack_bound: 0.5 * curvature * err + grad_norm * err.sqrt(),
            cg_iterations: iters,
        });
        if step + 1 < bonds.len() {
            env.advance(&w, data, direction)?;
        }
    }
    let train_metric = metric_from_outputs(&last_outputs, labels, cfg.task)?;
    let stats = SweepStats {
        sweep_index: 0,
        cost: last_cost,
        max_bond: w.max_bond(),
        train_metric,
        truncation_error: updates.iter().map(|u| u.truncation_error).sum(),
        wall_time: start.elapsed().as_secs_f64(),
        bonds: updates,
    };
    Ok((w, stats))
}

/// Random weights with bond `init_bond`, entries `N(0, 1) * init_scale`,
/// canonicalized at site 0.
pub fn init_weights(site_dims: &[usize], cfg: &TrainConfig) -> Result<Mps> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = Mps::random(site_dims, cfg.init_bond, cfg.init_scale, &mut rng).canonicalize(0)?;
    // keep the norm representable for long chains
    let norm = w.norm_sqr().sqrt();
    if norm < 1e-100 {
        return Ok(w.scaled(cfg.init_scale / norm.max(f64::MIN_POSITIVE)));
    }
    Ok(w)
}

/// Trains from a fresh random initialization.
pub fn train(data: &ScaleData, cfg: &TrainConfig) -> Result<(Mps, Vec<SweepStats>)> {
    let first = data
        .samples
        .first()
        .ok_or_else(|| Error::Data("training data is empty".into()))?;
    let w = init_weights(&first.site_dims(), cfg)?;
    train_from(&w, data, cfg)
}

/// Runs `cfg.n_sweeps` back-and-forth sweeps starting from `w`. Returns one
/// [`SweepStats`] per back-and-forth sweep.
pub fn train_from(w: &Mps, data: &ScaleData, cfg: &TrainConfig) -> Result<(Mps, Vec<SweepStats>)> {
    cfg.validate()?;
    check_data(w, data)?;
    let mut w = w.canonicalize(0)?;
    let mut stats = Vec::with_capacity(cfg.n_sweeps);
    for k in 0..cfg.n_sweeps {
        let (w1, right) = sweep(&w, data, cfg, Direction::Right)?;
        let (w2, left) = sweep(&w1, data, cfg, Direction::Left)?;
        w = w2;
        let mut bonds = right.bonds;
        bonds.extend(left.bonds);
        stats.push(SweepStats {
            sweep_index: k,
            cost: left.cost,
            max_bond: w.max_bond(),
            train_metric: left.train_metric,
            truncation_error: right.truncation_error + left.truncation_error,
            wall_time: right.wall_time + left.wall_time,
            bonds,
        });
    }
    Ok((w, stats))
}
