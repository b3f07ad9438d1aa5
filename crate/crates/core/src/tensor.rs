//! Dense real tensors: contraction, reshaping, and truncated SVD.
//!
//! Data is stored row-major (last index fastest). That order is also the
//! on-disk order, so the binary encoding is portable across machines.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::binio::{self, OffsetReader};
use crate::error::{Error, Result};

/// Shape-tagged multi-dimensional array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Truncation policy for SVD splits: singular values strictly below `delta`
/// are dropped, and at most `chi_max` are kept. At least one is always kept.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub delta: f64,
    pub chi_max: usize,
}

impl Truncation {
    pub fn new(delta: f64, chi_max: usize) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::arg(format!("truncation delta must be >= 0, got {delta}")));
        }
        if chi_max == 0 {
            return Err(Error::arg("chi_max must be >= 1"));
        }
        Ok(Truncation { delta, chi_max })
    }

    /// Keeps every singular value.
    pub fn exact() -> Self {
        Truncation {
            delta: 0.0,
            chi_max: usize::MAX,
        }
    }
}

/// Result of [`svd_split`].
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Shape: left extents followed by the kept rank.
    pub left_factor: DenseTensor,
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// Shape: kept rank followed by right extents.
    pub right_factor: DenseTensor,
    /// Sum of squares of the discarded singular values.
    pub truncation_error: f64,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        let n = shape.iter().product();
        DenseTensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        DenseTensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn vector(v: &[f64]) -> Self {
        assert!(!v.is_empty());
        DenseTensor {
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }

    /// Builds a matrix from rows of equal length.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("matrix rows must be nonempty and of equal length"));
        }
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        DenseTensor::new(vec![r, c], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = DenseTensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Fills a tensor by calling `f` with each multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = DenseTensor::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            increment(&mut idx, shape);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.shape)
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| {
                assert!(i < e, "index {i} out of range for extent {e}");
                acc * e + i
            })
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.scale(s);
        self
    }

    pub fn dot(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "dot of shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(DenseTensor {
            shape,
            data: self.data,
        })
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rank();
        if perm.len() != r {
            return Err(Error::arg(format!("permutation {perm:?} for rank {r}")));
        }
        let mut seen = vec![false; r];
        for &p in perm {
            if p >= r || seen[p] {
                return Err(Error::arg(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let src_strides = self.strides();
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; r];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            out.push(self.data[src]);
            // odometer increment, tracking the source offset
            for ax in (0..r).rev() {
                idx[ax] += 1;
                src += strides[ax];
                if idx[ax] < new_shape[ax] {
                    break;
                }
                src -= strides[ax] * new_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(DenseTensor {
            shape: new_shape,
            data: out,
        })
    }

    /// Contracts `self` with `other` over the given axis pairs.
    ///
    /// The result's axes are the uncontracted axes of `self` followed by the
    /// uncontracted axes of `other`, each in their original order.
    pub fn contract(&self, other: &DenseTensor, pairs: &[(usize, usize)]) -> Result<Self> {
        let (ra, rb) = (self.rank(), other.rank());
        let mut used_a = vec![false; ra];
        let mut used_b = vec![false; rb];
        for &(ia, ib) in pairs {
            if ia >= ra || ib >= rb {
                return Err(Error::arg(format!(
                    "axis pair ({ia}, {ib}) out of range for ranks ({ra}, {rb})"
                )));
            }
            if used_a[ia] || used_b[ib] {
                return Err(Error::arg(format!("axis paired twice in {pairs:?}")));
            }
            used_a[ia] = true;
            used_b[ib] = true;
            if self.shape[ia] != other.shape[ib] {
                return Err(Error::dim(format!(
                    "contracted extents differ: axis {ia} has {}, axis {ib} has {}",
                    self.shape[ia], other.shape[ib]
                )));
            }
        }
        let free_a: Vec<usize> = (0..ra).filter(|&i| !used_a[i]).collect();
        let free_b: Vec<usize> = (0..rb).filter(|&i| !used_b[i]).collect();

        let perm_a: Vec<usize> = free_a.iter().copied().chain(pairs.iter().map(|p| p.0)).collect();
        let perm_b: Vec<usize> = pairs.iter().map(|p| p.1).chain(free_b.iter().copied()).collect();
        let a = self.permute(&perm_a)?;
        let b = other.permute(&perm_b)?;

        let m: usize = free_a.iter().map(|&i| self.shape[i]).product();
        let n: usize = free_b.iter().map(|&i| other.shape[i]).product();
        let k: usize = pairs.iter().map(|p| self.shape[p.0]).product();
        let data = gemm(&a.data, &b.data, m, k, n);

        let shape = free_a
            .iter()
            .map(|&i| self.shape[i])
            .chain(free_b.iter().map(|&i| other.shape[i]))
            .collect();
        DenseTensor::new(shape, data)
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Self {
        assert_eq!(self.rank(), 2, "transpose needs a matrix");
        self.permute(&[1, 0]).expect("valid permutation")
    }

    /// Writes rank (u32), extents (u64 each), then data (f64 each), little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u32(w, self.shape.len() as u32)?;
        for &e in &self.shape {
            binio::write_u64(w, e as u64)?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut OffsetReader<R>) -> Result<Self> {
        let start = r.offset();
        let rank = r.read_u32("tensor rank")? as usize;
        if rank > 64 {
            return Err(Error::format(start, format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: u64 = 1;
        for _ in 0..rank {
            let at = r.offset();
            let e = r.read_u64("tensor extent")?;
            if e == 0 {
                return Err(Error::format(at, "zero tensor extent"));
            }
            n = n
                .checked_mul(e)
                .filter(|&n| n <= (1u64 << 40))
                .ok_or_else(|| Error::format(at, "tensor too large"))?;
            shape.push(e as usize);
        }
        let mut bytes = vec![0u8; n as usize * 8];
        r.read_exact_ctx(&mut bytes, "tensor data")?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(DenseTensor { shape, data })
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for ax in (0..shape.len()).rev() {
        idx[ax] += 1;
        if idx[ax] < shape[ax] {
            return;
        }
        idx[ax] = 0;
    }
}

/// Row-major `(m x k) * (k x n)` product.
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    gemm_into(a, b, &mut c, m, k, n, 0.0);
    c
}

/// `c = a * b + beta * c`, all row-major.
pub(crate) fn gemm_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, beta: f64) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slice lengths are checked above against the row-major strides
    // passed to dgemm, so every access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `a^T * b` with `a` row-major `k x m` and `b` row-major `k x n`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 {
        return c;
    }
    // SAFETY: `a` is read as its transpose via swapped strides; lengths are
    // checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// `a * b^T` with `a` row-major `m x k` and `b` row-major `n x k`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 {
        return c;
    }
    // SAFETY: `b` is read as its transpose via swapped strides; lengths are
    // checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// Splits `t` into `left * diag(s) * right` across the bipartition given by
/// `left_axes` (in the order given) versus the remaining axes (in original
/// order), truncating per `trunc`.
pub fn svd_split(t: &DenseTensor, left_axes: &[usize], trunc: Truncation) -> Result<SvdResult> {
    let r = t.rank();
    if left_axes.is_empty() || left_axes.len() >= r {
        return Err(Error::arg(format!(
            "left axes {left_axes:?} must be a nonempty proper subset of {r} axes"
        )));
    }
    let mut is_left = vec![false; r];
    for &a in left_axes {
        if a >= r || is_left[a] {
            return Err(Error::arg(format!("invalid left axes {left_axes:?}")));
        }
        is_left[a] = true;
    }
    if !(trunc.delta >= 0.0) || trunc.chi_max == 0 {
        return Err(Error::arg("truncation needs delta >= 0 and chi_max >= 1"));
    }
    let right_axes: Vec<usize> = (0..r).filter(|&a| !is_left[a]).collect();
    let perm: Vec<usize> = left_axes.iter().chain(&right_axes).copied().collect();
    let left_shape: Vec<usize> = left_axes.iter().map(|&a| t.shape[a]).collect();
    let right_shape: Vec<usize> = right_axes.iter().map(|&a| t.shape[a]).collect();
    let m: usize = left_shape.iter().product();
    let n: usize = right_shape.iter().product();

    let p = t.permute(&perm)?;
    let (u, s, vt) = matrix_svd(&p.data, m, n)?;
    let full = s.len();

    let mut keep = s.iter().take_while(|&&x| x >= trunc.delta).count();
    keep = keep.min(trunc.chi_max).max(1);
    let truncation_error = s[keep..].iter().fold(0.0, |acc, x| acc + x * x);

    let mut left = Vec::with_capacity(m * keep);
    for i in 0..m {
        left.extend_from_slice(&u[i * full..i * full + keep]);
    }
    let right = vt[..keep * n].to_vec();

    let mut lshape = left_shape;
    lshape.push(keep);
    let mut rshape = vec![keep];
    rshape.extend(right_shape);
    Ok(SvdResult {
        left_factor: DenseTensor::new(lshape, left)?,
        singular_values: s[..keep].to_vec(),
        right_factor: DenseTensor::new(rshape, right)?,
        truncation_error,
    })
}

/// Thin SVD of a row-major `m x n` matrix. Returns `(u, s, vt)` with `u` of
/// shape `m x k`, `vt` of shape `k x n` (row-major), `k = min(m, n)`, and `s`
/// sorted non-increasing. Columns of `u` and rows of `vt` are orthonormal even
/// when the matrix is rank deficient.
pub(crate) fn matrix_svd(a: &[f64], m: usize, n: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    assert_eq!(a.len(), m * n);
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("SVD input contains non-finite values".into()));
    }
    if m >= n {
        return jacobi_svd(a, m, n);
    }
    // A^T = U' S V'^T  =>  A = V' S U'^T
    let mut at = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            at[j * m + i] = a[i * n + j];
        }
    }
    let (ub, s, vtb) = jacobi_svd(&at, n, m)?;
    let k = m;
    // u = V' = vtb^T (m x k); vt = U'^T (k x n)
    let mut u = vec![0.0; m * k];
    for r in 0..k {
        for c in 0..m {
            u[c * k + r] = vtb[r * m + c];
        }
    }
    let mut vt = vec![0.0; k * n];
    for r in 0..n {
        for c in 0..k {
            vt[c * n + r] = ub[r * k + c];
        }
    }
    Ok((u, s, vt))
}

/// One-sided (Hestenes) Jacobi SVD for `m >= n`.
fn jacobi_svd(a: &[f64], m: usize, n: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    const TOL: f64 = 1e-15;
    const MAX_SWEEPS: usize = 80;
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[i * n + j]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let dot = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(y).map(|(p, q)| p * q).sum() };
    let rotate = |x: &mut [f64], y: &mut [f64], c: f64, s: f64| {
        for (p, q) in x.iter_mut().zip(y.iter_mut()) {
            let (xp, yq) = (*p, *q);
            *p = c * xp - s * yq;
            *q = s * xp + c * yq;
        }
    };
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        converged = true;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta) = (norms[p], norms[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (lo, hi) = cols.split_at_mut(q);
                let (cp, cq) = (&mut lo[p], &mut hi[0]);
                let gamma = dot(cp, cq);
                if gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(cp, cq, c, s);
                norms[p] = dot(cp, cp);
                norms[q] = dot(cq, cq);
                let (vlo, vhi) = v.split_at_mut(q);
                rotate(&mut vlo[p], &mut vhi[0], c, s);
            }
        }
    }
    if !converged {
        return Err(Error::Numeric("Jacobi SVD did not converge".into()));
    }

    let sigma: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &j in &order {
        let candidate = (sigma[j] > 0.0).then(|| cols[j].iter().map(|x| x / sigma[j]).collect::<Vec<f64>>());
        let accepted = candidate.filter(|u| ucols.iter().all(|w| dot(u, w).abs() <= 1e-13));
        let u = match accepted {
            Some(u) => u,
            None => complete_basis(&ucols, m),
        };
        ucols.push(u);
    }

    let mut u = vec![0.0; m * n];
    let mut vt = vec![0.0; n * n];
    let mut s = Vec::with_capacity(n);
    for (new, &old) in order.iter().enumerate() {
        s.push(sigma[old]);
        for i in 0..m {
            u[i * n + new] = ucols[new][i];
        }
        vt[new * n..(new + 1) * n].copy_from_slice(&v[old]);
    }
    Ok((u, s, vt))
}

/// A unit vector orthogonal to every vector in `basis` (which must have
/// fewer than `m` elements).
fn complete_basis(basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..m {
        let mut x = vec![0.0; m];
        x[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let d: f64 = x.iter().zip(b).map(|(p, q)| p * q).sum();
                x.iter_mut().zip(b).for_each(|(p, q)| *p -= d * q);
            }
        }
        let nrm = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        if best.as_ref().is_none_or(|(bn, _)| nrm > *bn) {
            best = Some((nrm, x));
        }
        if nrm > 0.5 {
            break;
        }
    }
    let (nrm, mut x) = best.expect("m >= 1");
    x.iter_mut().for_each(|p| *p /= nrm);
    x
}

/// Thin QR of a row-major `m x n` matrix: `(q, r, k)` with `q` of shape
/// `m x k` having orthonormal columns and `r` of shape `k x n`.
pub(crate) fn matrix_qr(a: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let mat = DMatrix::from_row_slice(m, n, a);
    let qr = mat.qr();
    let q = qr.q();
    let r = qr.r();
    let k = m.min(n);
    let mut q_out = vec![0.0; m * k];
    let mut r_out = vec![0.0; k * n];
    for i in 0..m {
        for j in 0..k {
            q_out[i * k + j] = q[(i, j)];
        }
    }
    for i in 0..k {
        for j in 0..n {
            r_out[i * n + j] = r[(i, j)];
        }
    }
    (q_out, r_out, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Nested-loop reference: enumerate every output and contracted index.
    fn naive_contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> DenseTensor {
        let free_a: Vec<usize> = (0..a.rank()).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
        let free_b: Vec<usize> = (0..b.rank()).filter(|i| !pairs.iter().any(|p| p.1 == *i)).collect();
        let out_shape: Vec<usize> = free_a
            .iter()
            .map(|&i| a.shape()[i])
            .chain(free_b.iter().map(|&i| b.shape()[i]))
            .collect();
        let sum_shape: Vec<usize> = pairs.iter().map(|p| a.shape()[p.0]).collect();
        let n_sum: usize = sum_shape.iter().product();
        DenseTensor::from_fn(&out_shape, |out| {
            let mut acc = 0.0;
            let mut sidx = vec![0usize; sum_shape.len()];
            for _ in 0..n_sum {
                let mut ia = vec![0usize; a.rank()];
                let mut ib = vec![0usize; b.rank()];
                for (k, &ax) in free_a.iter().enumerate() {
                    ia[ax] = out[k];
                }
                for (k, &ax) in free_b.iter().enumerate() {
                    ib[ax] = out[free_a.len() + k];
                }
                for (k, p) in pairs.iter().enumerate() {
                    ia[p.0] = sidx[k];
                    ib[p.1] = sidx[k];
                }
                acc += a.get(&ia) * b.get(&ib);
                increment(&mut sidx, &sum_shape);
            }
            acc
        })
    }

    #[test]
    fn identity_contraction() {
        let i2 = DenseTensor::identity(2);
        let v = DenseTensor::vector(&[3.0, 7.0]);
        let out = i2.contract(&v, &[(1, 0)]).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn outer_product_and_matvec() {
        let a = DenseTensor::vector(&[1.0, 2.0]);
        let b = DenseTensor::vector(&[1.0, 1.0]);
        let outer = a.contract(&b, &[]).unwrap();
        assert_eq!(outer.shape(), &[2, 2]);
        assert_eq!(outer.data(), naive_contract(&a, &b, &[]).data());
        assert_eq!(outer.data(), &[1.0, 1.0, 2.0, 2.0]);

        let m = DenseTensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let x = DenseTensor::vector(&[1.0, 1.0]);
        let y = m.contract(&x, &[(1, 0)]).unwrap();
        assert_eq!(y.data(), naive_contract(&m, &x, &[(1, 0)]).data());
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn contraction_errors() {
        let a = DenseTensor::zeros(&[2, 3]);
        let b = DenseTensor::zeros(&[2, 3]);
        assert!(matches!(a.contract(&b, &[(0, 1)]), Err(Error::Dimension(_))));
        assert!(matches!(a.contract(&b, &[(0, 0), (0, 1)]), Err(Error::Argument(_))));
        assert!(matches!(a.contract(&b, &[(2, 0)]), Err(Error::Argument(_))));
    }

    #[test]
    fn full_contraction_gives_scalar() {
        let a = DenseTensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let s = a.contract(&a, &[(0, 0), (1, 1)]).unwrap();
        assert_eq!(s.rank(), 0);
        assert_eq!(s.data(), &[30.0]);
    }

    #[test]
    fn contraction_matches_naive_on_random_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..60 {
            let ra = rng.random_range(1..=5usize);
            let rb = rng.random_range(1..=5usize);
            let mut sa: Vec<usize> = (0..ra).map(|_| rng.random_range(1..=4)).collect();
            let sb: Vec<usize> = (0..rb).map(|_| rng.random_range(1..=4)).collect();
            let npairs = rng.random_range(0..=ra.min(rb).min(3));
            let mut axes_b: Vec<usize> = (0..rb).collect();
            let mut axes_a: Vec<usize> = (0..ra).collect();
            let mut pairs = Vec::new();
            for _ in 0..npairs {
                let ia = axes_a.remove(rng.random_range(0..axes_a.len()));
                let ib = axes_b.remove(rng.random_range(0..axes_b.len()));
                sa[ia] = sb[ib];
                pairs.push((ia, ib));
            }
            let a = random(&sa, &mut rng);
            let b = random(&sb, &mut rng);
            let got = a.contract(&b, &pairs).unwrap();
            let want = naive_contract(&a, &b, &pairs);
            assert_eq!(got.shape(), want.shape(), "case {case}");
            let scale = want.data().iter().map(|x| x.abs()).fold(1.0, f64::max);
            assert!(got.max_abs_diff(&want) <= 1e-12 * scale, "case {case}");
        }
    }

    #[test]
    fn permute_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random(&[2, 3, 4], &mut rng);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), t.get(&[1, 2, 3]));
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back, t);
        assert!(t.permute(&[0, 0, 1]).is_err());
    }

    fn reconstruct(s: &SvdResult) -> DenseTensor {
        let mut left = s.left_factor.clone();
        let k = s.rank();
        for (i, v) in left.data_mut().iter_mut().enumerate() {
            *v *= s.singular_values[i % k];
        }
        let r = left.rank() - 1;
        left.contract(&s.right_factor, &[(r, 0)]).unwrap()
    }

    #[test]
    fn svd_rank_one() {
        let u = DenseTensor::vector(&[1.0, 2.0, 2.0]);
        let v = DenseTensor::vector(&[3.0, 4.0]);
        let t = u.contract(&v, &[]).unwrap();
        let s = svd_split(&t, &[0], Truncation::exact()).unwrap();
        assert!((s.singular_values[0] - 15.0).abs() < 1e-12);
        assert!(s.singular_values[1..].iter().all(|&x| x < 1e-12));
        let s = svd_split(&t, &[0], Truncation::new(1e-10, 8).unwrap()).unwrap();
        assert_eq!(s.rank(), 1);
    }

    #[test]
    fn svd_identity() {
        let s = svd_split(&DenseTensor::identity(2), &[0], Truncation::exact()).unwrap();
        assert_eq!(s.singular_values.len(), 2);
        assert!((s.singular_values[0] - 1.0).abs() < 1e-15);
        assert!((s.singular_values[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn svd_random_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random(&[4, 4], &mut rng);
        let s = svd_split(&t, &[0], Truncation::new(0.0, 4).unwrap()).unwrap();
        assert!(reconstruct(&s).max_abs_diff(&t) < 1e-12);
        let u = &s.left_factor;
        let utu = u.contract(u, &[(0, 0)]).unwrap();
        assert!(utu.max_abs_diff(&DenseTensor::identity(4)) < 1e-12);
        let v = &s.right_factor;
        let vvt = v.contract(v, &[(1, 1)]).unwrap();
        assert!(vvt.max_abs_diff(&DenseTensor::identity(4)) < 1e-12);
        assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_truncation_error_matches_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let t = random(&[3, 2, 4, 2], &mut rng);
            let s = svd_split(&t, &[0, 2], Truncation::new(0.0, 3).unwrap()).unwrap();
            assert_eq!(s.rank(), 3);
            let rec = reconstruct(&s).permute(&[0, 2, 1, 3]).unwrap();
            let mut resid = 0.0;
            for (a, b) in rec.data().iter().zip(t.data()) {
                resid += (a - b) * (a - b);
            }
            assert!((resid - s.truncation_error).abs() <= 1e-8 * s.truncation_error.max(1e-300) + 1e-13);
        }
    }

    #[test]
    fn svd_delta_threshold_is_absolute_and_keeps_one() {
        let t = DenseTensor::matrix(&[&[3.0, 0.0], &[0.0, 1e-3]]).unwrap();
        let s = svd_split(&t, &[0], Truncation::new(1e-2, 10).unwrap()).unwrap();
        assert_eq!(s.rank(), 1);
        assert!((s.truncation_error - 1e-6).abs() < 1e-18);
        let s = svd_split(&t, &[0], Truncation::new(10.0, 10).unwrap()).unwrap();
        assert_eq!(s.rank(), 1);
        assert!((s.singular_values[0] - 3.0).abs() < 1e-14);
    }

    fn check_factorization(a: &[f64], m: usize, n: usize) {
        let (u, s, vt) = matrix_svd(a, m, n).unwrap();
        let k = m.min(n);
        assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&x| x >= 0.0));
        let utu = gemm_tn(&u, &u, m, k, k);
        let vvt = gemm_nt(&vt, &vt, k, n, k);
        for i in 0..k {
            for j in 0..k {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((utu[i * k + j] - e).abs() < 1e-12, "U not orthonormal");
                assert!((vvt[i * k + j] - e).abs() < 1e-12, "V not orthonormal");
            }
        }
        let mut us = u.clone();
        for (i, x) in us.iter_mut().enumerate() {
            *x *= s[i % k];
        }
        let rec = gemm(&us, &vt, m, k, n);
        let scale = a.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
        for (x, y) in rec.iter().zip(a) {
            assert!((x - y).abs() < 1e-12 * scale);
        }
        // independent route for the spectrum
        let mut want: Vec<f64> = DMatrix::from_row_slice(m, n, a).singular_values().iter().copied().collect();
        want.sort_by(|p, q| q.total_cmp(p));
        for (x, y) in s.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn svd_handles_rank_deficient_and_wide_matrices() {
        // vec(I) vec(I)^T: rank one, two zero rows
        let mut a = vec![0.0; 16];
        for &(i, j) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
            a[i * 4 + j] = 1.0;
        }
        check_factorization(&a, 4, 4);
        let (_, s, _) = matrix_svd(&a, 4, 4).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-15 && s[1] == 0.0);
        check_factorization(&[0.0; 6], 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (m, n) in [(1, 5), (5, 1), (3, 7), (7, 3), (16, 16), (12, 40)] {
            let r = random(&[m, n], &mut rng);
            check_factorization(r.data(), m, n);
        }
        // rank 2 in a 6 x 6
        let x = random(&[6, 2], &mut rng);
        let y = random(&[2, 6], &mut rng);
        let low = gemm(x.data(), y.data(), 6, 2, 6);
        check_factorization(&low, 6, 6);
    }

    #[test]
    fn qr_is_orthonormal_for_tall_and_wide() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for (m, n) in [(6, 3), (3, 6), (4, 4), (8, 1)] {
            let a = random(&[m, n], &mut rng);
            let (q, r, k) = matrix_qr(a.data(), m, n);
            let qtq = gemm_tn(&q, &q, m, k, k);
            for i in 0..k {
                for j in 0..k {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((qtq[i * k + j] - e).abs() < 1e-13);
                }
            }
            let rec = gemm(&q, &r, m, k, n);
            for (x, y) in rec.iter().zip(a.data()) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn svd_rejects_bad_axes() {
        let t = DenseTensor::zeros(&[2, 2]);
        assert!(matches!(svd_split(&t, &[], Truncation::exact()), Err(Error::Argument(_))));
        assert!(matches!(svd_split(&t, &[0, 1], Truncation::exact()), Err(Error::Argument(_))));
    }

    #[test]
    fn binary_roundtrip_is_little_endian() {
        let t = DenseTensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], &2u32.to_le_bytes());
        assert_eq!(&buf[4..12], &1u64.to_le_bytes());
        assert_eq!(&buf[20..28], &1.5f64.to_le_bytes());
        let back = DenseTensor::read_from(&mut OffsetReader::new(&buf[..])).unwrap();
        assert_eq!(back, t);
        let err = DenseTensor::read_from(&mut OffsetReader::new(&buf[..25])).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 20, .. }));
    }
}
