//! Applying wavelet-MERA layers to MPS-encoded samples, and the per-scale
//! cache of coarse-grained datasets.
//!
//! Gates are applied tensor by tensor, TEBD style: each two-site gate is
//! contracted into the merged pair and split back with a truncated SVD. The
//! disentangler straddling the chain ends (periodic boundary) is applied
//! exactly as a bond-`r` operator string, `r` being its operator Schmidt rank,
//! and the whole chain is then recompressed in the same left-to-right pass
//! that applies the interior gates.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::{self, OffsetReader};
use crate::error::{Error, Result};
use crate::mps::{BondTensor, Mps};
use crate::tensor::{gemm, matrix_svd, svd_split, DenseTensor, Truncation};
use crate::wavelet::{build_daub4_layer, WaveletMeraLayer};

/// Truncation used when compressing coarse-grained data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Compression {
    pub delta_data: f64,
    pub chi_data: usize,
}

impl Default for Compression {
    fn default() -> Self {
        Compression {
            delta_data: 1e-12,
            chi_data: 16,
        }
    }
}

impl Compression {
    pub fn exact() -> Self {
        Compression {
            delta_data: 0.0,
            chi_data: usize::MAX,
        }
    }

    pub fn truncation(&self) -> Result<Truncation> {
        Truncation::new(self.delta_data, self.chi_data)
    }
}

fn check_qubit_chain(m: &Mps, what: &str) -> Result<()> {
    if m.site_dims().iter().any(|&d| d != 2) {
        return Err(Error::dim(format!("{what} needs site dimension 2 everywhere")));
    }
    Ok(())
}

/// Applies `gate` (4x4 over the pair basis `2a + b`) to a merged pair.
fn gate_bond(b: &mut DenseTensor, gate: &DenseTensor) {
    let s = b.shape().to_vec();
    let (l, r) = (s[0], s[3]);
    let g = gate.data();
    let data = b.data_mut();
    let mut v = [0.0f64; 4];
    for li in 0..l {
        for ri in 0..r {
            for (p, vp) in v.iter_mut().enumerate() {
                *vp = data[(li * 4 + p) * r + ri];
            }
            for q in 0..4 {
                data[(li * 4 + q) * r + ri] = (0..4).map(|p| g[q * 4 + p] * v[p]).sum();
            }
        }
    }
}

/// Applies the gate acting on `(last site, first site)` exactly, threading
/// its operator Schmidt index through every bond.
fn apply_wraparound_gate(m: &Mps, gate: &DenseTensor) -> Result<Mps> {
    let n = m.len();
    // M[(a', a), (b', b)] = G[2a' + b', 2a + b]; a is the last site.
    let g = gate.data();
    let mut mat = vec![0.0; 16];
    for ap in 0..2 {
        for a in 0..2 {
            for bp in 0..2 {
                for b in 0..2 {
                    mat[(ap * 2 + a) * 4 + bp * 2 + b] = g[(2 * ap + bp) * 4 + 2 * a + b];
                }
            }
        }
    }
    let (x, s, yt) = matrix_svd(&mat, 4, 4)?;
    let cutoff = 1e-13 * s[0];
    let rank = s.iter().take_while(|&&v| v > cutoff).count().max(1);

    let mut cores = Vec::with_capacity(n);
    // first site: [1, b', (r, k)] = sum_b Y_k[b', b] A0[0, b, r]
    let a0 = m.core(0);
    let r0 = a0.shape()[2];
    let mut c0 = DenseTensor::zeros(&[1, 2, r0 * rank]);
    for bp in 0..2 {
        for r in 0..r0 {
            for k in 0..rank {
                let v: f64 = (0..2).map(|b| yt[k * 4 + bp * 2 + b] * a0.get(&[0, b, r])).sum();
                c0.set(&[0, bp, r * rank + k], v);
            }
        }
    }
    cores.push(c0);
    for j in 1..n - 1 {
        let a = m.core(j);
        let sh = a.shape();
        let mut c = DenseTensor::zeros(&[sh[0] * rank, sh[1], sh[2] * rank]);
        for l in 0..sh[0] {
            for sp in 0..sh[1] {
                for r in 0..sh[2] {
                    let v = a.get(&[l, sp, r]);
                    for k in 0..rank {
                        c.set(&[l * rank + k, sp, r * rank + k], v);
                    }
                }
            }
        }
        cores.push(c);
    }
    // last site: [(l, k), a', 1] = s_k sum_a X_k[a', a] A[l, a, 0]
    let al = m.core(n - 1);
    let ll = al.shape()[0];
    let mut cl = DenseTensor::zeros(&[ll * rank, 2, 1]);
    for l in 0..ll {
        for k in 0..rank {
            for ap in 0..2 {
                let v: f64 = (0..2).map(|a| x[(ap * 2 + a) * 4 + k] * al.get(&[l, a, 0])).sum();
                cl.set(&[l * rank + k, ap, 0], s[k] * v);
            }
        }
    }
    cores.push(cl);
    Mps::from_cores(cores)
}

/// SVD of a single core across its right bond; `S V^T` goes into the next
/// core and the center moves right.
fn compress_right_bond(m: &mut Mps, j: usize, trunc: Truncation) -> Result<f64> {
    let a = m.core(j);
    let svd = svd_split(a, &[0, 1], trunc)?;
    let k = svd.rank();
    let mut sv = svd.right_factor;
    let cols = sv.shape()[1];
    for (i, v) in sv.data_mut().iter_mut().enumerate() {
        *v *= svd.singular_values[i / cols];
    }
    let next = m.core(j + 1);
    let ns = next.shape().to_vec();
    let data = gemm(sv.data(), next.data(), k, cols, ns[1] * ns[2]);
    m.set_core(j, svd.left_factor);
    m.set_core(j + 1, DenseTensor::new(vec![k, ns[1], ns[2]], data)?);
    m.set_ortho_center(Some(j + 1));
    Ok(svd.truncation_error)
}

/// Applies `gate` on every pair `(2i+1, 2i+2 mod N)` and recompresses.
/// Returns the new MPS and the summed discarded weight.
pub fn apply_pair_gates(m: &Mps, gate: &DenseTensor, trunc: Truncation) -> Result<(Mps, f64)> {
    let n = m.len();
    if n < 4 || n % 2 != 0 {
        return Err(Error::dim(format!("gate layer needs an even length >= 4, got {n}")));
    }
    check_qubit_chain(m, "gate layer")?;
    if gate.shape() != [4, 4] {
        return Err(Error::dim("two-site gate must be 4x4"));
    }
    let mut w = apply_wraparound_gate(m, gate)?;
    w.canonicalize_in_place(0);
    let mut err = 0.0;
    let mut j = 0;
    while j + 1 < n {
        if j % 2 == 1 {
            let mut b = w.merge_bond(j)?;
            gate_bond(&mut b.value, gate);
            err += w.split_bond_in_place(&BondTensor::new(b.value, j)?, trunc, j + 1)?;
        } else {
            err += compress_right_bond(&mut w, j, trunc)?;
        }
        j += 1;
    }
    Ok((w, err))
}

/// Disentangler half of a coarse-graining layer (`U^T` on the odd pairs).
pub fn apply_disentanglers(m: &Mps, layer: &WaveletMeraLayer, compression: Compression) -> Result<Mps> {
    if m.len() != layer.n_sites_in {
        return Err(Error::dim(format!(
            "layer expects {} sites, sample has {}",
            layer.n_sites_in,
            m.len()
        )));
    }
    Ok(apply_pair_gates(m, &layer.coarse_gate(), compression.truncation()?)?.0)
}

/// Isometry half of a coarse-graining layer: `V` maps each pair
/// `(2i, 2i+1)` onto coarse site `i`. Bond extents are unchanged.
pub fn apply_isometries(m: &Mps, layer: &WaveletMeraLayer) -> Result<Mps> {
    let n = m.len();
    if n % 2 != 0 {
        return Err(Error::dim(format!("isometries need an even length, got {n}")));
    }
    check_qubit_chain(m, "isometry layer")?;
    let v = layer.isometry.data();
    let mut cores = Vec::with_capacity(n / 2);
    for i in 0..n / 2 {
        let b = m.merge_bond(2 * i)?.value;
        let s = b.shape();
        let (l, r) = (s[0], s[3]);
        let mut c = DenseTensor::zeros(&[l, 2, r]);
        for li in 0..l {
            for ri in 0..r {
                for cc in 0..2 {
                    let val: f64 = (0..4).map(|p| v[cc * 4 + p] * b.data()[(li * 4 + p) * r + ri]).sum();
                    c.set(&[li, cc, ri], val);
                }
            }
        }
        cores.push(c);
    }
    Mps::from_cores(cores)
}

/// One full coarse-graining layer.
pub fn apply_layer(m: &Mps, layer: &WaveletMeraLayer, compression: Compression) -> Result<Mps> {
    let d = apply_disentanglers(m, layer, compression)?;
    apply_isometries(&d, layer)
}

fn check_depth(n: usize, n_layers: usize) -> Result<()> {
    if n_layers == 0 {
        return Ok(());
    }
    let f = 1usize
        .checked_shl(n_layers as u32)
        .ok_or_else(|| Error::arg("too many layers"))?;
    if n % f != 0 || n / f < 2 {
        return Err(Error::arg(format!(
            "{n} sites cannot be halved {n_layers} times down to a width >= 2"
        )));
    }
    Ok(())
}

/// Daubechies-4 layers for an input of width `n`, finest first.
pub fn daub4_layers(n: usize, n_layers: usize) -> Result<Vec<WaveletMeraLayer>> {
    check_depth(n, n_layers)?;
    (0..n_layers).map(|l| build_daub4_layer(n >> l)).collect()
}

/// Coarse-grains through `n_layers` Daubechies-4 layers. Element `L` of the
/// result is the sample after `L` layers; element 0 is the input.
pub fn coarse_grain_sample(m: &Mps, n_layers: usize, compression: Compression) -> Result<Vec<Mps>> {
    let layers = daub4_layers(m.len(), n_layers)?;
    coarse_grain_with(m, &layers, compression)
}

pub fn coarse_grain_with(m: &Mps, layers: &[WaveletMeraLayer], compression: Compression) -> Result<Vec<Mps>> {
    let mut out = Vec::with_capacity(layers.len() + 1);
    out.push(m.clone());
    for layer in layers {
        let next = apply_layer(out.last().expect("nonempty"), layer, compression)?;
        out.push(next);
    }
    Ok(out)
}

/// Linear-order transfer of a layer: entry `(i, j)` is the amplitude of the
/// coarse state with a single `|1>` at site `i`, for the input that is `|0>`
/// everywhere except `|0> + |1>` at site `j`.
pub fn single_particle_response(layer: &WaveletMeraLayer, n: usize) -> Result<DenseTensor> {
    if n != layer.n_sites_in {
        return Err(Error::dim(format!("layer width {} but n = {n}", layer.n_sites_in)));
    }
    let half = n / 2;
    let basis = |hot: usize, v: [f64; 2], len: usize| -> Result<Mps> {
        let vs: Vec<Vec<f64>> = (0..len)
            .map(|k| if k == hot { v.to_vec() } else { vec![1.0, 0.0] })
            .collect();
        Mps::product_state(&vs)
    };
    let probes: Vec<Mps> = (0..half).map(|i| basis(i, [0.0, 1.0], half)).collect::<Result<_>>()?;
    let mut out = DenseTensor::zeros(&[half, n]);
    for j in 0..n {
        let input = basis(j, [1.0, 1.0], n)?;
        let coarse = apply_layer(&input, layer, Compression::exact())?;
        for (i, p) in probes.iter().enumerate() {
            out.set(&[i, j], p.inner(&coarse)?);
        }
    }
    Ok(out)
}

/// Samples and labels at one scale.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScaleData {
    pub samples: Vec<Mps>,
    pub labels: Vec<f64>,
}

impl ScaleData {
    pub fn new(samples: Vec<Mps>, labels: Vec<f64>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::dim(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        Ok(ScaleData { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_sites(&self) -> Option<usize> {
        self.samples.first().map(Mps::len)
    }
}

/// Every coarse-grained scale of one dataset split. Scale `L` holds the
/// samples after `L` layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleCache {
    pub scales: Vec<ScaleData>,
    pub compression: Compression,
    pub provenance: String,
}

const SHARD_SIZE: usize = 256;
pub const CACHE_MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct CacheManifest {
    pub format: String,
    pub version: u32,
    pub provenance: String,
    pub compression: Compression,
    pub n_samples: usize,
    pub scales: Vec<ScaleEntry>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ScaleEntry {
    pub scale: usize,
    pub n_sites: usize,
    pub site_dim: usize,
    pub shards: Vec<ShardEntry>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ShardEntry {
    pub file: String,
    pub count: usize,
    pub sha256: String,
}

impl ScaleCache {
    /// Coarse-grains every sample through `layers`, in parallel across
    /// samples. Output order matches input order.
    pub fn build(
        scale0: ScaleData,
        layers: &[WaveletMeraLayer],
        compression: Compression,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let per_sample: Vec<Vec<Mps>> = scale0
            .samples
            .par_iter()
            .map(|m| coarse_grain_with(m, layers, compression))
            .collect::<Result<_>>()?;
        let mut scales: Vec<ScaleData> = (0..=layers.len())
            .map(|_| ScaleData {
                samples: Vec::with_capacity(per_sample.len()),
                labels: scale0.labels.clone(),
            })
            .collect();
        for chain in per_sample {
            for (l, m) in chain.into_iter().enumerate() {
                scales[l].samples.push(m);
            }
        }
        Ok(ScaleCache {
            scales,
            compression,
            provenance: provenance.into(),
        })
    }

    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.scales.iter().map(|s| s.n_sites().unwrap_or(0)).collect()
    }

    pub fn scale(&self, l: usize) -> Result<&ScaleData> {
        self.scales
            .get(l)
            .ok_or_else(|| Error::State(format!("scale {l} is not cached ({} scales)", self.scales.len())))
    }

    /// The Daubechies-4 layer mapping scale `l - 1` onto scale `l`.
    pub fn layer(&self, l: usize) -> Result<WaveletMeraLayer> {
        if l == 0 {
            return Err(Error::arg("scale 0 has no layer below it"));
        }
        let w = self
            .scale(l - 1)?
            .n_sites()
            .ok_or_else(|| Error::State("empty cache".into()))?;
        build_daub4_layer(w)
    }

    pub fn save(&self, dir: &Path) -> Result<CacheManifest> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (l, sd) in self.scales.iter().enumerate() {
            let mut shards = Vec::new();
            for (k, chunk) in sd
                .samples
                .chunks(SHARD_SIZE)
                .zip(sd.labels.chunks(SHARD_SIZE))
                .enumerate()
            {
                let mut buf = Vec::new();
                binio::write_u64(&mut buf, chunk.0.len() as u64)?;
                for (m, y) in chunk.0.iter().zip(chunk.1) {
                    binio::write_f64(&mut buf, *y)?;
                    m.write_body(&mut buf)?;
                }
                let file = format!("scale{l:02}_shard{k:04}.bin");
                let mut w = BufWriter::new(File::create(dir.join(&file))?);
                w.write_all(&buf)?;
                w.flush()?;
                shards.push(ShardEntry {
                    file,
                    count: chunk.0.len(),
                    sha256: hex::encode(Sha256::digest(&buf)),
                });
            }
            entries.push(ScaleEntry {
                scale: l,
                n_sites: sd.n_sites().unwrap_or(0),
                site_dim: 2,
                shards,
            });
        }
        let manifest = CacheManifest {
            format: "wmera-scale-cache".into(),
            version: 1,
            provenance: self.provenance.clone(),
            compression: self.compression,
            n_samples: self.scales.first().map_or(0, ScaleData::len),
            scales: entries,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(dir.join(CACHE_MANIFEST), text + "\n")?;
        Ok(manifest)
    }

    pub fn read_manifest(dir: &Path) -> Result<CacheManifest> {
        let path = dir.join(CACHE_MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::State(format!("cannot read cache manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Loads a cache, verifying shard checksums and label consistency.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Self::read_manifest(dir)?;
        let mut scales = Vec::with_capacity(manifest.scales.len());
        for entry in &manifest.scales {
            let mut sd = ScaleData::default();
            for shard in &entry.shards {
                let path = dir.join(&shard.file);
                let bytes = fs::read(&path)
                    .map_err(|e| Error::State(format!("missing cache shard {}: {e}", path.display())))?;
                let digest = hex::encode(Sha256::digest(&bytes));
                if digest != shard.sha256 {
                    return Err(Error::Data(format!(
                        "checksum mismatch for {}: expected {}, found {digest}",
                        path.display(),
                        shard.sha256
                    )));
                }
                let mut r = OffsetReader::new(BufReader::new(&bytes[..]));
                let count = r.read_u64("shard sample count")? as usize;
                if count != shard.count {
                    return Err(Error::format(0, format!("shard holds {count} samples, manifest says {}", shard.count)));
                }
                for _ in 0..count {
                    sd.labels.push(r.read_f64("label")?);
                    let m = Mps::read_body(&mut r)?;
                    if m.len() != entry.n_sites {
                        return Err(Error::Data(format!(
                            "{}: sample has {} sites, scale {} expects {}",
                            path.display(),
                            m.len(),
                            entry.scale,
                            entry.n_sites
                        )));
                    }
                    sd.samples.push(m);
                }
                r.at_eof()?;
            }
            scales.push(sd);
        }
        if let Some(first) = scales.first() {
            if scales.iter().any(|s| s.labels != first.labels) {
                return Err(Error::Data("labels differ between cached scales".into()));
            }
        }
        Ok(ScaleCache {
            scales,
            compression: manifest.compression,
            provenance: manifest.provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::build_haar_layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense reference: apply a 4x4 gate to sites `(p, q)` of a `2^n` vector
    /// (site 0 most significant).
    fn dense_gate(psi: &[f64], n: usize, p: usize, q: usize, g: &DenseTensor) -> Vec<f64> {
        let mut out = vec![0.0; psi.len()];
        let bit = |idx: usize, s: usize| (idx >> (n - 1 - s)) & 1;
        for (idx, &amp) in psi.iter().enumerate() {
            if amp == 0.0 {
                continue;
            }
            let (a, b) = (bit(idx, p), bit(idx, q));
            let base = idx & !(1 << (n - 1 - p)) & !(1 << (n - 1 - q));
            for a2 in 0..2 {
                for b2 in 0..2 {
                    let j = base | (a2 << (n - 1 - p)) | (b2 << (n - 1 - q));
                    out[j] += g.get(&[2 * a2 + b2, 2 * a + b]) * amp;
                }
            }
        }
        out
    }

    fn dense_layer(psi: &[f64], n: usize, layer: &WaveletMeraLayer) -> Vec<f64> {
        let g = layer.coarse_gate();
        let mut v = psi.to_vec();
        for i in 0..n / 2 {
            v = dense_gate(&v, n, 2 * i + 1, (2 * i + 2) % n, &g);
        }
        let half = n / 2;
        let mut out = vec![0.0; 1 << half];
        for (idx, &amp) in v.iter().enumerate() {
            let mut cidx = vec![(0usize, 1.0f64)];
            for i in 0..half {
                let a = (idx >> (n - 1 - 2 * i)) & 1;
                let b = (idx >> (n - 2 - 2 * i)) & 1;
                let mut next = Vec::new();
                for &(c, w) in &cidx {
                    for cc in 0..2 {
                        let vw = layer.isometry.get(&[cc, 2 * a + b]);
                        if vw != 0.0 {
                            next.push((c * 2 + cc, w * vw));
                        }
                    }
                }
                cidx = next;
            }
            for (c, w) in cidx {
                out[c] += w * amp;
            }
        }
        out
    }

    fn random_product(n: usize, rng: &mut ChaCha8Rng) -> Mps {
        let vs: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.random_range(0.0..1.0)]).collect();
        Mps::product_state(&vs).unwrap()
    }

    #[test]
    fn haar_disentanglers_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mps::random(&[2; 8], 2, 1.0, &mut rng);
        let layer = build_haar_layer(8).unwrap();
        let out = apply_disentanglers(&m, &layer, Compression::exact()).unwrap();
        let (a, b) = (m.to_dense(), out.to_dense());
        let scale = a.data().iter().fold(1.0f64, |s, x| s.max(x.abs()));
        assert!(a.max_abs_diff(&b) <= 1e-14 * scale, "{} {}", a.max_abs_diff(&b), scale);
        let tight = Compression { delta_data: 1e-12, chi_data: 64 };
        assert_eq!(apply_disentanglers(&m, &layer, tight).unwrap().max_bond(), 2);
    }

    #[test]
    fn product_state_bond_growth_matches_schmidt_ranks() {
        // Each cut is crossed by the wrap-around gate plus, at odd cuts, one
        // interior gate, so ranks are bounded by 2 and 4 respectively.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = build_daub4_layer(4).unwrap();
        let m = random_product(4, &mut rng);
        let trunc = Compression { delta_data: 1e-12, chi_data: 64 };
        let out = apply_disentanglers(&m, &layer, trunc).unwrap();
        let dense = out.to_dense();
        for cut in 1..4 {
            let rows = 1 << cut;
            let (_, s, _) = matrix_svd(dense.data(), rows, 16 / rows).unwrap();
            let rank = s.iter().filter(|&&x| x >= 1e-12).count();
            assert_eq!(out.bond_dims()[cut - 1], rank, "cut {cut}");
            let bound = if cut % 2 == 1 { 2 } else { 4 };
            assert!(rank <= bound, "cut {cut}");
        }
        let exact = apply_disentanglers(&m, &layer, Compression::exact()).unwrap();
        assert!(exact.max_bond() <= 4);
    }

    #[test]
    fn disentanglers_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = build_daub4_layer(4).unwrap();
        let m = random_product(4, &mut rng);
        let got = apply_disentanglers(&m, &layer, Compression::exact()).unwrap().to_dense();
        let mut want = m.to_dense().into_data();
        let g = layer.coarse_gate();
        for (p, q) in [(1, 2), (3, 0)] {
            want = dense_gate(&want, 4, p, q, &g);
        }
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn isometries_preserve_vacuum_and_bonds() {
        let layer = build_daub4_layer(8).unwrap();
        let vac = Mps::product_state(&vec![vec![1.0, 0.0]; 8]).unwrap();
        let out = apply_isometries(&vac, &layer).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out.to_dense().data()[0], 1.0);
        assert!(out.to_dense().data()[1..].iter().all(|&x| x == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mps::random(&[2; 8], 3, 1.0, &mut rng);
        let out = apply_isometries(&m, &layer).unwrap();
        let b = m.bond_dims();
        assert_eq!(out.bond_dims(), vec![b[1], b[3], b[5]]);
        let odd = Mps::random(&[2; 5], 2, 1.0, &mut rng);
        assert!(apply_isometries(&odd, &layer).is_err());
    }

    #[test]
    fn layer_matches_dense_oracle_for_random_mps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [4usize, 8] {
            let layer = build_daub4_layer(n).unwrap();
            for _ in 0..5 {
                let m = Mps::random(&vec![2; n], 2, 1.0, &mut rng);
                let got = apply_layer(&m, &layer, Compression::exact()).unwrap().to_dense();
                let want = dense_layer(m.to_dense().data(), n, &layer);
                let scale = want.iter().fold(1.0f64, |s, x| s.max(x.abs()));
                for (a, b) in got.data().iter().zip(&want) {
                    assert!((a - b).abs() <= 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn single_particle_response_reproduces_stencils() {
        for (layer, n) in [(build_daub4_layer(8).unwrap(), 8), (build_haar_layer(8).unwrap(), 8)] {
            let resp = single_particle_response(&layer, n).unwrap();
            let d = layer.stencil().d;
            for i in 0..n / 2 {
                let mut row_sq = 0.0;
                for j in 0..n {
                    let offset = (j + n + 1 - 2 * i) % n;
                    let want = if offset < 4 { d[offset] } else { 0.0 };
                    assert!((resp.get(&[i, j]) - want).abs() < 1e-12, "({i}, {j}) {} {want}", resp.get(&[i, j]));
                    row_sq += resp.get(&[i, j]).powi(2);
                }
                assert!((row_sq - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coarse_grain_sample_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_product(16, &mut rng);
        let out = coarse_grain_sample(&m, 0, Compression::default()).unwrap();
        assert_eq!(out, vec![m.clone()]);
        let out = coarse_grain_sample(&m, 2, Compression::default()).unwrap();
        assert_eq!(out.iter().map(Mps::len).collect::<Vec<_>>(), vec![16, 8, 4]);
        assert!(matches!(coarse_grain_sample(&m, 4, Compression::default()), Err(Error::Argument(_))));
        let m12 = random_product(12, &mut rng);
        assert!(coarse_grain_sample(&m12, 3, Compression::default()).is_err());
    }

    #[test]
    fn cache_roundtrip_and_tamper_detection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<Mps> = (0..5).map(|_| random_product(8, &mut rng)).collect();
        let labels = vec![1.0, -1.0, 1.0, 1.0, -1.0];
        let layers = daub4_layers(8, 2).unwrap();
        let cache = ScaleCache::build(
            ScaleData::new(samples, labels.clone()).unwrap(),
            &layers,
            Compression::default(),
            "test",
        )
        .unwrap();
        assert_eq!(cache.widths(), vec![8, 4, 2]);
        assert!(cache.scales.iter().all(|s| s.labels == labels));
        let dir = tempfile::tempdir().unwrap();
        cache.save(dir.path()).unwrap();
        let back = ScaleCache::load(dir.path()).unwrap();
        assert_eq!(back, cache);
        assert!(matches!(back.scale(3), Err(Error::State(_))));

        let shard = dir.path().join("scale01_shard0000.bin");
        let mut bytes = fs::read(&shard).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&shard, bytes).unwrap();
        let err = ScaleCache::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum mismatch"), "{err}");
    }
}
