//! Matrix product states with open boundaries.
//!
//! Cores are order-3 tensors laid out as `(left bond, site, right bond)`.
//! The first core's left bond and the last core's right bond have extent 1.
//!
//! Orthogonality is tracked lazily: `ortho_center` is `Some(c)` only when
//! every core left of `c` is left-orthogonal and every core right of `c` is
//! right-orthogonal. Operations that may break this clear the marker instead
//! of re-canonicalizing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::binio::{self, OffsetReader};
use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_tn, matrix_qr, svd_split, DenseTensor, Truncation};

/// Magic bytes at the start of a model file.
pub const MODEL_MAGIC: &[u8; 9] = b"WMERA-MPS";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Mps {
    cores: Vec<DenseTensor>,
    ortho_center: Option<usize>,
}

/// Two adjacent cores merged over their shared bond, layout
/// `(left bond, site j, site j+1, right bond)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BondTensor {
    pub value: DenseTensor,
    pub site_index: usize,
}

impl BondTensor {
    pub fn new(value: DenseTensor, site_index: usize) -> Result<Self> {
        if value.rank() != 4 {
            return Err(Error::dim(format!(
                "bond tensor must have rank 4, got shape {:?}",
                value.shape()
            )));
        }
        Ok(BondTensor { value, site_index })
    }
}

impl Mps {
    /// Validates bond structure and wraps the cores. The result carries no
    /// orthogonality center.
    pub fn from_cores(cores: Vec<DenseTensor>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::arg("an MPS needs at least one core"));
        }
        for (i, c) in cores.iter().enumerate() {
            if c.rank() != 3 {
                return Err(Error::dim(format!("core {i} has shape {:?}, expected rank 3", c.shape())));
            }
        }
        if cores[0].shape()[0] != 1 || cores[cores.len() - 1].shape()[2] != 1 {
            return Err(Error::dim("boundary bonds must have extent 1"));
        }
        for i in 1..cores.len() {
            if cores[i - 1].shape()[2] != cores[i].shape()[0] {
                return Err(Error::dim(format!(
                    "bond between sites {} and {i} disagrees: {} vs {}",
                    i - 1,
                    cores[i - 1].shape()[2],
                    cores[i].shape()[0]
                )));
            }
        }
        Ok(Mps {
            cores,
            ortho_center: None,
        })
    }

    /// Bond-dimension-1 MPS whose full contraction is the tensor product of
    /// `site_vectors`.
    pub fn product_state(site_vectors: &[Vec<f64>]) -> Result<Self> {
        if site_vectors.is_empty() {
            return Err(Error::arg("product state needs at least one site"));
        }
        let mut cores = Vec::with_capacity(site_vectors.len());
        for (i, v) in site_vectors.iter().enumerate() {
            if v.is_empty() || v.iter().all(|&x| x == 0.0) {
                return Err(Error::arg(format!("site vector {i} is empty or zero")));
            }
            cores.push(DenseTensor::new(vec![1, v.len(), 1], v.clone())?);
        }
        Ok(Mps {
            cores,
            ortho_center: None,
        })
    }

    /// Random MPS with i.i.d. normal entries times `scale`. Interior bonds
    /// have extent `bond`.
    pub fn random<R: Rng + ?Sized>(site_dims: &[usize], bond: usize, scale: f64, rng: &mut R) -> Self {
        assert!(!site_dims.is_empty() && bond >= 1);
        let n = site_dims.len();
        let cores = site_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let l = if i == 0 { 1 } else { bond };
                let r = if i == n - 1 { 1 } else { bond };
                DenseTensor::from_fn(&[l, d, r], |_| scale * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        Mps {
            cores,
            ortho_center: None,
        }
    }

    pub fn len(&self) -> usize {
        self.cores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cores.is_empty()
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn core(&self, i: usize) -> &DenseTensor {
        &self.cores[i]
    }

    pub fn into_cores(self) -> Vec<DenseTensor> {
        self.cores
    }

    pub fn site_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    /// Extents of the `len - 1` internal bonds.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.cores[..self.cores.len() - 1].iter().map(|c| c.shape()[2]).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn ortho_center(&self) -> Option<usize> {
        self.ortho_center
    }

    /// Multiplies the represented tensor by `s` (applied to the center core
    /// when there is one, so the gauge is kept).
    pub fn scaled(mut self, s: f64) -> Self {
        let i = self.ortho_center.unwrap_or(0);
        self.cores[i].scale(s);
        self
    }

    /// Full contraction `<self, other>` computed left to right.
    pub fn inner(&self, other: &Mps) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::dim(format!(
                "inner product of MPS with {} and {} sites",
                self.len(),
                other.len()
            )));
        }
        let mut env = vec![1.0];
        let (mut wa, mut wb) = (1usize, 1usize);
        for (i, (a, b)) in self.cores.iter().zip(&other.cores).enumerate() {
            let (sa, sb) = (a.shape(), b.shape());
            if sa[1] != sb[1] {
                return Err(Error::dim(format!("site {i} dims differ: {} vs {}", sa[1], sb[1])));
            }
            env = transfer(&env, wa, wb, a, b);
            wa = sa[2];
            wb = sb[2];
        }
        Ok(env[0])
    }

    pub fn norm_sqr(&self) -> f64 {
        if let Some(c) = self.ortho_center {
            return self.cores[c].norm_sqr();
        }
        self.inner(self).expect("same structure")
    }

    /// Expands to a dense tensor with one axis per site. Exponential in the
    /// length; intended for small chains and checks.
    pub fn to_dense(&self) -> DenseTensor {
        let mut acc = self.cores[0].clone();
        for c in &self.cores[1..] {
            let r = acc.rank();
            acc = acc.contract(c, &[(r - 1, 0)]).expect("consistent bonds");
        }
        let dims = self.site_dims();
        acc.reshape(dims).expect("boundary bonds are 1")
    }

    /// Returns an equivalent MPS in mixed-canonical form centered at `center`.
    pub fn canonicalize(&self, center: usize) -> Result<Mps> {
        if center >= self.len() {
            return Err(Error::arg(format!(
                "center {center} out of range for {} sites",
                self.len()
            )));
        }
        let mut out = self.clone();
        out.canonicalize_in_place(center);
        Ok(out)
    }

    pub(crate) fn canonicalize_in_place(&mut self, center: usize) {
        let (lo, hi) = match self.ortho_center {
            Some(c) => (c, c),
            None => (0, self.len() - 1),
        };
        for i in lo..center {
            self.left_orthogonalize(i);
        }
        for i in ((center + 1)..=hi).rev() {
            self.right_orthogonalize(i);
        }
        self.ortho_center = Some(center);
    }

    /// QR of core `i`; R is pushed into core `i + 1`.
    fn left_orthogonalize(&mut self, i: usize) {
        let s = self.cores[i].shape().to_vec();
        let (q, r, k) = matrix_qr(self.cores[i].data(), s[0] * s[1], s[2]);
        self.cores[i] = DenseTensor::new(vec![s[0], s[1], k], q).expect("qr shape");
        let next = &self.cores[i + 1];
        let ns = next.shape().to_vec();
        let data = gemm(&r, next.data(), k, s[2], ns[1] * ns[2]);
        self.cores[i + 1] = DenseTensor::new(vec![k, ns[1], ns[2]], data).expect("qr shape");
    }

    /// LQ of core `i` (via QR of the transpose); L is pushed into core `i - 1`.
    fn right_orthogonalize(&mut self, i: usize) {
        let s = self.cores[i].shape().to_vec();
        let t = self.cores[i]
            .clone()
            .reshape(vec![s[0], s[1] * s[2]])
            .expect("reshape")
            .transpose();
        let (q, r, k) = matrix_qr(t.data(), s[1] * s[2], s[0]);
        // core = Q^T reshaped (k, d, r)
        let qt = DenseTensor::new(vec![s[1] * s[2], k], q).expect("qr shape").transpose();
        self.cores[i] = qt.reshape(vec![k, s[1], s[2]]).expect("reshape");
        // prev[l', s, l] * R^T[l, k]  ==  prev * (R)^T ; R is (k x s0)
        let prev = &self.cores[i - 1];
        let ps = prev.shape().to_vec();
        let rt = DenseTensor::new(vec![k, s[0]], r).expect("qr shape").transpose();
        let data = gemm(prev.data(), rt.data(), ps[0] * ps[1], s[0], k);
        self.cores[i - 1] = DenseTensor::new(vec![ps[0], ps[1], k], data).expect("qr shape");
    }

    pub fn is_left_orthogonal(&self, i: usize, tol: f64) -> bool {
        let s = self.cores[i].shape();
        let g = gemm_tn(self.cores[i].data(), self.cores[i].data(), s[0] * s[1], s[2], s[2]);
        is_identity(&g, s[2], tol)
    }

    pub fn is_right_orthogonal(&self, i: usize, tol: f64) -> bool {
        let s = self.cores[i].shape();
        let m = s[1] * s[2];
        let g = crate::tensor::gemm_nt(self.cores[i].data(), self.cores[i].data(), s[0], m, s[0]);
        is_identity(&g, s[0], tol)
    }

    /// Checks the gauge claimed by `ortho_center`. Vacuously true without one.
    pub fn check_gauge(&self, tol: f64) -> bool {
        match self.ortho_center {
            None => true,
            Some(c) => {
                (0..c).all(|i| self.is_left_orthogonal(i, tol))
                    && (c + 1..self.len()).all(|i| self.is_right_orthogonal(i, tol))
            }
        }
    }

    /// Contracts cores `j` and `j + 1` over their shared bond.
    ///
    /// Splitting the result back with a truncation is only optimal when the
    /// orthogonality center sits at `j` or `j + 1`.
    pub fn merge_bond(&self, j: usize) -> Result<BondTensor> {
        if j + 1 >= self.len() {
            return Err(Error::arg(format!("bond {j} out of range for {} sites", self.len())));
        }
        let (a, b) = (&self.cores[j], &self.cores[j + 1]);
        let (sa, sb) = (a.shape(), b.shape());
        let data = gemm(a.data(), b.data(), sa[0] * sa[1], sa[2], sb[1] * sb[2]);
        let value = DenseTensor::new(vec![sa[0], sa[1], sb[1], sb[2]], data)?;
        Ok(BondTensor { value, site_index: j })
    }

    /// Replaces cores `j`, `j + 1` by a truncated SVD of `b`, absorbing the
    /// singular values into the core at `new_center`. Returns the new MPS and
    /// the discarded weight.
    pub fn split_bond(&self, b: &BondTensor, trunc: Truncation, new_center: usize) -> Result<(Mps, f64)> {
        let mut out = self.clone();
        let err = out.split_bond_in_place(b, trunc, new_center)?;
        Ok((out, err))
    }

    pub(crate) fn split_bond_in_place(&mut self, b: &BondTensor, trunc: Truncation, new_center: usize) -> Result<f64> {
        let j = b.site_index;
        if j + 1 >= self.len() {
            return Err(Error::arg(format!("bond {j} out of range for {} sites", self.len())));
        }
        if new_center != j && new_center != j + 1 {
            return Err(Error::arg(format!("new center {new_center} must be {j} or {}", j + 1)));
        }
        let bs = b.value.shape();
        let (l, d1) = (self.cores[j].shape()[0], self.cores[j].shape()[1]);
        let (d2, r) = (self.cores[j + 1].shape()[1], self.cores[j + 1].shape()[2]);
        if bs != [l, d1, d2, r] {
            return Err(Error::dim(format!(
                "bond tensor shape {bs:?} does not fit sites {j}, {} ({:?})",
                j + 1,
                [l, d1, d2, r]
            )));
        }
        let svd = svd_split(&b.value, &[0, 1], trunc)?;
        let k = svd.rank();
        let mut left = svd.left_factor;
        let mut right = svd.right_factor;
        if new_center == j {
            for (i, v) in left.data_mut().iter_mut().enumerate() {
                *v *= svd.singular_values[i % k];
            }
        } else {
            let cols = d2 * r;
            for (i, v) in right.data_mut().iter_mut().enumerate() {
                *v *= svd.singular_values[i / cols];
            }
        }
        let was_centered = matches!(self.ortho_center, Some(c) if c == j || c == j + 1);
        self.cores[j] = left;
        self.cores[j + 1] = right;
        self.ortho_center = was_centered.then_some(new_center);
        Ok(svd.truncation_error)
    }

    /// Writes the model file: magic, version (u32), site count (u64), then
    /// each core in the tensor binary format.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        binio::write_u32(w, MODEL_VERSION)?;
        binio::write_u64(w, self.len() as u64)?;
        for c in &self.cores {
            c.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut OffsetReader<R>) -> Result<Self> {
        let mut magic = [0u8; 9];
        r.read_exact_ctx(&mut magic, "model magic")?;
        if &magic != MODEL_MAGIC {
            return Err(Error::format(0, "not a WMERA-MPS model file"));
        }
        let at = r.offset();
        let version = r.read_u32("model version")?;
        if version != MODEL_VERSION {
            return Err(Error::format(at, format!("unsupported model version {version}")));
        }
        Self::read_body(r)
    }

    /// Site count followed by cores; shared with the cache shard format.
    pub(crate) fn read_body<R: Read>(r: &mut OffsetReader<R>) -> Result<Self> {
        let at = r.offset();
        let n = r.read_u64("site count")?;
        if n == 0 || n > (1 << 24) {
            return Err(Error::format(at, format!("implausible site count {n}")));
        }
        let mut cores = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let at = r.offset();
            let c = DenseTensor::read_from(r)?;
            if c.rank() != 3 {
                return Err(Error::format(at, format!("core has rank {}, expected 3", c.rank())));
            }
            cores.push(c);
        }
        let at = r.offset();
        Mps::from_cores(cores).map_err(|e| Error::format(at, e.to_string()))
    }

    pub(crate) fn write_body<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u64(w, self.len() as u64)?;
        for c in &self.cores {
            c.write_to(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = OffsetReader::new(BufReader::new(File::open(path)?));
        let m = Self::read_from(&mut r)?;
        r.at_eof()?;
        Ok(m)
    }

    pub(crate) fn set_core(&mut self, i: usize, c: DenseTensor) {
        self.cores[i] = c;
        self.ortho_center = None;
    }

    pub(crate) fn set_ortho_center(&mut self, c: Option<usize>) {
        self.ortho_center = c;
    }
}

/// One step of the left-to-right zipper: `env` is `wa x wb`, result is
/// `a.right x b.right`.
pub(crate) fn transfer(env: &[f64], wa: usize, wb: usize, a: &DenseTensor, b: &DenseTensor) -> Vec<f64> {
    let (sa, sb) = (a.shape(), b.shape());
    debug_assert_eq!(sa[0], wa);
    debug_assert_eq!(sb[0], wb);
    // t[(b, s), a'] = sum_a env[a, b] A[a, s, a']
    let t = gemm_tn(env, a.data(), wa, wb, sa[1] * sa[2]);
    // e'[a', b'] = sum_{b, s} t[(b, s), a'] B[(b, s), b']
    gemm_tn(&t, b.data(), wb * sa[1], sa[2], sb[2])
}

/// One step of the right-to-left zipper: `env` is `a.right x b.right`,
/// result is `a.left x b.left`.
pub(crate) fn transfer_right(env: &[f64], a: &DenseTensor, b: &DenseTensor) -> Vec<f64> {
    let (sa, sb) = (a.shape(), b.shape());
    // t[(a, s), b'] = sum_a' A[(a, s), a'] env[a', b']
    let t = gemm(a.data(), env, sa[0] * sa[1], sa[2], sb[2]);
    // e'[a, b] = sum_{s, b'} t[a, (s, b')] B[b, (s, b')]
    crate::tensor::gemm_nt(&t, b.data(), sa[0], sa[1] * sb[2], sb[0])
}

fn is_identity(g: &[f64], n: usize, tol: f64) -> bool {
    (0..n).all(|i| (0..n).all(|j| (g[i * n + j] - if i == j { 1.0 } else { 0.0 }).abs() <= tol))
}
