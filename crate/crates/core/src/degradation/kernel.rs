//! Degradation descriptions and Gaussian blur kernels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_KERNEL_SIZE: usize = 21;
pub const MAX_NOISE_SIGMA: f64 = 25.0;
pub const MIN_BLUR_WIDTH: f64 = 0.2;
pub const MAX_EIGENVALUE: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlurKind {
    /// Covariance `sigma^2 * I`.
    Isotropic { sigma: f64 },
    /// Covariance `R(theta) diag(lambda1, lambda2) R(theta)^T`.
    Anisotropic { lambda1: f64, lambda2: f64, theta: f64 },
}

/// Generative description of one degradation: blur, downscale, noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub blur: BlurKind,
    pub kernel_size: usize,
    pub scale: usize,
    /// Standard deviation of additive noise on the `[0, 255]` scale.
    pub noise_sigma: f64,
}

/// Upper bound of the isotropic blur width for a scale factor.
pub fn max_isotropic_sigma(scale: usize) -> f64 {
    match scale {
        2 => 2.0,
        3 => 3.0,
        _ => 4.0,
    }
}

impl DegradationSpec {
    pub fn isotropic(sigma: f64, scale: usize, noise_sigma: f64) -> Self {
        DegradationSpec {
            blur: BlurKind::Isotropic { sigma },
            kernel_size: DEFAULT_KERNEL_SIZE,
            scale,
            noise_sigma,
        }
    }

    pub fn anisotropic(lambda1: f64, lambda2: f64, theta: f64, scale: usize, noise_sigma: f64) -> Self {
        DegradationSpec {
            blur: BlurKind::Anisotropic { lambda1, lambda2, theta },
            kernel_size: DEFAULT_KERNEL_SIZE,
            scale,
            noise_sigma,
        }
    }

    /// Checks every field against the supported ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel size must be odd, got {}", self.kernel_size));
        }
        if !(0.0..=MAX_NOISE_SIGMA).contains(&self.noise_sigma) {
            return bad(format!("noise sigma {} outside [0, 25]", self.noise_sigma));
        }
        match self.blur {
            BlurKind::Isotropic { sigma } => {
                let hi = max_isotropic_sigma(self.scale);
                if !(MIN_BLUR_WIDTH..=hi).contains(&sigma) {
                    return bad(format!("sigma {sigma} outside [0.2, {hi}] for x{}", self.scale));
                }
            }
            BlurKind::Anisotropic { lambda1, lambda2, theta } => {
                for l in [lambda1, lambda2] {
                    if !(MIN_BLUR_WIDTH..=MAX_EIGENVALUE).contains(&l) {
                        return bad(format!("eigenvalue {l} outside [0.2, 4]"));
                    }
                }
                if !(0.0..PI).contains(&theta) {
                    return bad(format!("angle {theta} outside [0, pi)"));
                }
            }
        }
        Ok(())
    }

    /// Blur covariance as `[s_xx, s_xy, s_yy]`.
    pub fn covariance(&self) -> [f64; 3] {
        match self.blur {
            BlurKind::Isotropic { sigma } => [sigma * sigma, 0.0, sigma * sigma],
            BlurKind::Anisotropic { lambda1, lambda2, theta } => {
                let (s, c) = theta.sin_cos();
                [
                    c * c * lambda1 + s * s * lambda2,
                    c * s * (lambda1 - lambda2),
                    s * s * lambda1 + c * c * lambda2,
                ]
            }
        }
    }

    /// Parses `sigma=S[,noise=N]` or `lambda1=A,lambda2=B,theta=T[,noise=N]`.
    /// The result is validated.
    pub fn parse(text: &str, scale: usize) -> Result<Self> {
        let bad = |m: String| Error::Parameter(format!("degradation spec `{text}`: {m}"));
        let (mut sigma, mut l1, mut l2, mut theta, mut noise) = (None, None, None, None, 0.0);
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{part}`")))?;
            let value: f64 = value.trim().parse().map_err(|_| bad(format!("`{value}` is not a number")))?;
            match key.trim() {
                "sigma" => sigma = Some(value),
                "lambda1" => l1 = Some(value),
                "lambda2" => l2 = Some(value),
                "theta" => theta = Some(value),
                "noise" => noise = value,
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let spec = match (sigma, l1, l2, theta) {
            (Some(s), None, None, None) => Self::isotropic(s, scale, noise),
            (None, Some(a), Some(b), Some(t)) => Self::anisotropic(a, b, t, scale, noise),
            _ => return Err(bad("give either sigma or all of lambda1, lambda2, theta".into())),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl std::fmt::Display for DegradationSpec {
    /// The form accepted by [`DegradationSpec::parse`].
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.blur {
            BlurKind::Isotropic { sigma } => write!(f, "sigma={sigma}")?,
            BlurKind::Anisotropic { lambda1, lambda2, theta } => {
                write!(f, "lambda1={lambda1},lambda2={lambda2},theta={theta}")?
            }
        }
        write!(f, ",noise={}", self.noise_sigma)
    }
}

/// Gaussian density sampled on the integer grid centred at zero and
/// renormalised to unit sum. Row index is `y`, column index is `x`.
pub fn gaussian_kernel(spec: &DegradationSpec) -> Result<Tensor<f64>> {
    let n = spec.kernel_size;
    if n % 2 == 0 {
        return Err(Error::Parameter(format!("kernel size must be odd, got {n}")));
    }
    let r = (n / 2) as f64;
    let mut k = match spec.blur {
        BlurKind::Isotropic { sigma } => {
            if !(sigma > 0.0) {
                return Err(Error::Parameter(format!("blur width must be positive, got {sigma}")));
            }
            let inv = 1.0 / (2.0 * sigma * sigma);
            Tensor::from_fn(&[n, n], |i| {
                let (y, x) = ((i / n) as f64 - r, (i % n) as f64 - r);
                (-(x * x + y * y) * inv).exp()
            })
        }
        BlurKind::Anisotropic { lambda1, lambda2, .. } => {
            if !(lambda1 > 0.0 && lambda2 > 0.0) {
                return Err(Error::Parameter(format!(
                    "degenerate blur covariance (eigenvalues {lambda1}, {lambda2})"
                )));
            }
            let [sxx, sxy, syy] = spec.covariance();
            let det = sxx * syy - sxy * sxy;
            let (ixx, ixy, iyy) = (syy / det, -sxy / det, sxx / det);
            Tensor::from_fn(&[n, n], |i| {
                let (y, x) = ((i / n) as f64 - r, (i % n) as f64 - r);
                (-0.5 * (ixx * x * x + 2.0 * ixy * x * y + iyy * y * y)).exp()
            })
        }
    };
    let total = k.sum();
    for v in k.data_mut() {
        *v /= total;
    }
    Ok(k)
}

/// Normalised 1-D Gaussian; the outer product of this with itself is the
/// isotropic 2-D kernel.
pub fn gaussian_kernel_1d(sigma: f64, n: usize) -> Vec<f64> {
    let r = (n / 2) as f64;
    let g: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}
