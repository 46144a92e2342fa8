//! Weight initialization: depth-corrected Gaussian and block-orthogonal
//! schemes, both scaled by a multiplicative constant kappa.
//!
//! Gaussian entries are i.i.d. with standard deviation
//! `kappa * (1/sqrt(2))^L`, where `L` is the layer count. Orthogonal
//! initialization partitions the matrix into square blocks and fills each
//! with an independent uniformly-random orthogonal matrix scaled by kappa,
//! so every block satisfies `B^T B = kappa^2 I` and preserves vector norms
//! up to kappa. For an LSTM's `4d x 2d` parameter matrix with block size
//! `d`, that yields exactly 8 orthogonal `d x d` sub-matrices.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Errors from invalid initialization requests.
#[derive(Debug, Error)]
pub enum InitError {
    #[error("kappa must be positive, got {0}")]
    NonPositiveKappa(f64),
    #[error("layer count must be at least 1")]
    ZeroLayers,
    #[error("block size must be positive")]
    ZeroBlock,
    #[error("{rows}x{cols} is not tileable by {block}x{block} blocks")]
    NotBlockAligned {
        rows: usize,
        cols: usize,
        block: usize,
    },
}

/// The two supported schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    Gaussian,
    Orthogonal,
}

impl std::str::FromStr for InitScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(InitScheme::Gaussian),
            "orthogonal" => Ok(InitScheme::Orthogonal),
            other => Err(format!("unknown init scheme `{other}`")),
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitScheme::Gaussian => write!(f, "gaussian"),
            InitScheme::Orthogonal => write!(f, "orthogonal"),
        }
    }
}

/// Initialization request: scheme, scale, depth, and seed.
#[derive(Debug, Clone, Copy)]
pub struct InitSpec {
    pub scheme: InitScheme,
    /// Multiplicative constant applied to either scheme.
    pub kappa: f64,
    /// Layer count entering the Gaussian depth correction.
    pub num_layers: usize,
    pub seed: u64,
    /// Apply the `(1/sqrt(2))^L` correction to orthogonal blocks too.
    /// Off by default: the correction belongs to the Gaussian scheme.
    pub ortho_depth_correction: bool,
}

impl InitSpec {
    pub fn new(scheme: InitScheme, kappa: f64, num_layers: usize, seed: u64) -> Result<Self, InitError> {
        if !(kappa > 0.0) {
            return Err(InitError::NonPositiveKappa(kappa));
        }
        if num_layers == 0 {
            return Err(InitError::ZeroLayers);
        }
        Ok(Self {
            scheme,
            kappa,
            num_layers,
            seed,
            ortho_depth_correction: false,
        })
    }

    /// The depth factor `(1/sqrt(2))^L`.
    pub fn depth_correction(&self) -> f64 {
        (1.0 / 2f64.sqrt()).powi(self.num_layers as i32)
    }

    /// Target standard deviation of Gaussian entries.
    pub fn gaussian_std(&self) -> f64 {
        self.kappa * self.depth_correction()
    }

    fn orthogonal_scale(&self) -> f64 {
        if self.ortho_depth_correction {
            self.kappa * self.depth_correction()
        } else {
            self.kappa
        }
    }
}

/// Draws a `rows x cols` matrix of i.i.d. Gaussians with mean 0 and
/// standard deviation `spec.gaussian_std()`, deterministically from
/// `spec.seed`.
pub fn gaussian_init(rows: usize, cols: usize, spec: &InitSpec) -> Array2<f64> {
    let std = spec.gaussian_std();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * std
    })
}

/// Fills a `rows x cols` matrix with independent `block x block` orthogonal
/// sub-matrices, each scaled by kappa.
///
/// `rows` and `cols` must both be multiples of `block`. Each block is the
/// orthonormal factor of the QR decomposition of a square Gaussian matrix,
/// sign-corrected so the result is uniform over the orthogonal group.
pub fn orthogonal_init(
    rows: usize,
    cols: usize,
    block: usize,
    spec: &InitSpec,
) -> Result<Array2<f64>, InitError> {
    if block == 0 {
        return Err(InitError::ZeroBlock);
    }
    if rows % block != 0 || cols % block != 0 {
        return Err(InitError::NotBlockAligned { rows, cols, block });
    }
    let scale = spec.orthogonal_scale();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Array2::zeros((rows, cols));
    for br in 0..rows / block {
        for bc in 0..cols / block {
            let q = random_orthogonal(block, &mut rng);
            for r in 0..block {
                for c in 0..block {
                    out[(br * block + r, bc * block + c)] = scale * q[(r, c)];
                }
            }
        }
    }
    Ok(out)
}

/// One uniformly-random orthogonal matrix via QR of a Gaussian matrix,
/// with columns sign-flipped to match the sign of R's diagonal.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let gaussian = DMatrix::from_fn(n, n, |_, _| -> f64 { StandardNormal.sample(rng) });
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for c in 0..n {
        if r[(c, c)] < 0.0 {
            for row in 0..n {
                q[(row, c)] = -q[(row, c)];
            }
        }
    }
    q
}
