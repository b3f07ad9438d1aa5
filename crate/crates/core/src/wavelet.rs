//! Haar steps on raw signals and the two-angle MERA layers that encode
//! Haar and Daubechies-4 coarse-graining.
//!
//! A layer holds a 4x4 disentangler `U` and a 2x4 isometry `V`. Two-site
//! operators use the pair basis `|ab>` with index `2a + b`, `a` being the
//! left site of the pair.
//!
//! Coarse-graining applies `U^T` to the site pairs `(2i+1, 2i+2 mod N)` and
//! then `V` to the pairs `(2i, 2i+1)`, producing coarse site `i`. With this
//! wiring, a single excitation `x_j |1>` at fine site `j` lands on coarse site
//! `i` with weight `D[j - (2i - 1) mod N]`, where `D` is
//! [`daub4_from_angles`]; that is, coarse site `i` sees the stencil over
//! fine sites `2i-1 .. 2i+2`.

use std::f64::consts::{FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Angles that reproduce the Daubechies-4 magnitudes.
pub const DAUB4_THETA_U: f64 = PI / 6.0;
pub const DAUB4_THETA_V: f64 = PI / 12.0;

/// Wrap-around handling for the disentangler straddling the chain ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletMeraLayer {
    pub theta_u: f64,
    pub theta_v: f64,
    /// `U`, 4x4.
    pub disentangler: DenseTensor,
    /// `V`, 2x4 (coarse x fine pair).
    pub isometry: DenseTensor,
    pub n_sites_in: usize,
    pub boundary: Boundary,
}

/// Four-tap stencil `(D1, D2, D3, D4)` realized by a layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Daub4Coefficients {
    pub d: [f64; 4],
}

impl Daub4Coefficients {
    /// Textbook Daubechies-4 low-pass coefficients.
    pub fn textbook() -> Self {
        let s3 = 3f64.sqrt();
        let n = 4.0 * 2f64.sqrt();
        Daub4Coefficients {
            d: [(1.0 + s3) / n, (3.0 + s3) / n, (3.0 - s3) / n, (1.0 - s3) / n],
        }
    }

    pub fn norm(&self) -> f64 {
        self.d.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// One Haar averaging step: `out[i] = (x[2i] + x[2i+1]) / sqrt(2)`.
pub fn haar_step(signal: &[f64]) -> Result<Vec<f64>> {
    if signal.len() % 2 != 0 {
        return Err(Error::arg(format!("Haar step needs even length, got {}", signal.len())));
    }
    Ok(signal
        .chunks_exact(2)
        .map(|p| (p[0] + p[1]) / std::f64::consts::SQRT_2)
        .collect())
}

/// The stencil produced by a layer with the given angles.
pub fn daub4_from_angles(theta_u: f64, theta_v: f64) -> Daub4Coefficients {
    let (su, cu) = theta_u.sin_cos();
    let (sv, cv) = theta_v.sin_cos();
    Daub4Coefficients {
        d: [-su * cv, cu * cv, cu * sv, su * sv],
    }
}

pub fn disentangler(theta_u: f64) -> DenseTensor {
    let (s, c) = theta_u.sin_cos();
    DenseTensor::matrix(&[
        &[1.0, 0.0, 0.0, 0.0],
        &[0.0, c, s, 0.0],
        &[0.0, -s, c, 0.0],
        &[0.0, 0.0, 0.0, 1.0],
    ])
    .expect("4x4")
}

pub fn isometry(theta_v: f64) -> DenseTensor {
    let (s, c) = theta_v.sin_cos();
    DenseTensor::matrix(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, s, c, 0.0]]).expect("2x4")
}

impl WaveletMeraLayer {
    pub fn new(theta_u: f64, theta_v: f64, n_sites_in: usize) -> Result<Self> {
        if n_sites_in < 4 || n_sites_in % 2 != 0 {
            return Err(Error::arg(format!(
                "a layer needs an even input width >= 4, got {n_sites_in}"
            )));
        }
        Ok(WaveletMeraLayer {
            theta_u,
            theta_v,
            disentangler: disentangler(theta_u),
            isometry: isometry(theta_v),
            n_sites_in,
            boundary: Boundary::Periodic,
        })
    }

    pub fn n_sites_out(&self) -> usize {
        self.n_sites_in / 2
    }

    pub fn stencil(&self) -> Daub4Coefficients {
        daub4_from_angles(self.theta_u, self.theta_v)
    }

    /// Two-site gate applied to data when coarse-graining (`U^T`).
    pub fn coarse_gate(&self) -> DenseTensor {
        self.disentangler.transpose()
    }

    /// Two-site gate applied to weights when fine-graining (`U`).
    pub fn fine_gate(&self) -> DenseTensor {
        self.disentangler.clone()
    }

    /// Max deviation of `U^T U`, `U U^T` from `I4` and of `V V^T` from `I2`.
    pub fn constraint_violation(&self) -> f64 {
        let u = &self.disentangler;
        let v = &self.isometry;
        let utu = u.contract(u, &[(0, 0)]).expect("4x4");
        let uut = u.contract(u, &[(1, 1)]).expect("4x4");
        let vvt = v.contract(v, &[(1, 1)]).expect("2x2");
        let i4 = DenseTensor::identity(4);
        utu.max_abs_diff(&i4)
            .max(uut.max_abs_diff(&i4))
            .max(vvt.max_abs_diff(&DenseTensor::identity(2)))
    }
}

/// Daubechies-4 layer at `theta_u = pi/6`, `theta_v = pi/12`.
pub fn build_daub4_layer(n_sites_in: usize) -> Result<WaveletMeraLayer> {
    WaveletMeraLayer::new(DAUB4_THETA_U, DAUB4_THETA_V, n_sites_in)
}

/// Haar layer: identity disentangler and an isometry averaging each pair
/// with weights `(1/sqrt2, 1/sqrt2)`.
pub fn build_haar_layer(n_sites_in: usize) -> Result<WaveletMeraLayer> {
    WaveletMeraLayer::new(0.0, FRAC_PI_4, n_sites_in)
}
