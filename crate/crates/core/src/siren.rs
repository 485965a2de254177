//! Sine-activated MLP with the latent code appended to its input.
//!
//! Every layer but the last computes `sin(omega0 * (W h + b))`; the last is
//! affine. The input is `[theta_n, phi_n, z_1 .. z_D]` where the angles are
//! normalized by [`normalize_coords`].

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Scalar, Tape, Var};
use crate::data::Direction;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"HFNF";
pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_OMEGA0: f64 = 30.0;

/// `theta_n = (theta - 180) / 180`, `phi_n = phi / 90`.
pub fn normalize_coords(d: &Direction) -> [f64; 2] {
    [(d.azimuth_deg - 180.0) / 180.0, d.elevation_deg / 90.0]
}

/// Normalized coordinates of many directions as an `N x 2` matrix.
pub fn coords_matrix(dirs: &[Direction]) -> Array2<f64> {
    let mut m = Array2::zeros((dirs.len(), 2));
    for (i, d) in dirs.iter().enumerate() {
        let [a, b] = normalize_coords(d);
        m[[i, 0]] = a;
        m[[i, 1]] = b;
    }
    m
}

/// Anything that maps (coordinates, latent) to per-frequency outputs and can
/// replay that mapping on a tape.
pub trait LatentGenerator: Sync {
    fn latent_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Parameters in a fixed order; gradients come back in the same order.
    fn params(&self) -> &[Array2<f64>];
    fn params_mut(&mut self) -> &mut [Array2<f64>];
    /// Records the mapping for `coords` (`N x 2`) and `z` (`1 x D`) using the
    /// given parameter nodes, returning the `N x K` output node.
    fn forward_on_tape<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        coords: Var<'t, T>,
        z: Var<'t, T>,
    ) -> Var<'t, T>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirenNetwork {
    /// Layer widths from input to output, e.g. `[2 + D, 2048, 2048, K]`.
    dims: Vec<usize>,
    latent_dim: usize,
    omega0: f64,
    /// `[W0, b0, W1, b1, ...]`; weights are `out x in`, biases `1 x out`.
    params: Vec<Array2<f64>>,
}

impl SirenNetwork {
    /// Builds a network with SIREN initialization: first-layer weights in
    /// `[-1/n_in, 1/n_in]`, later weights in `[-sqrt(6/n_in)/omega0, +]`,
    /// biases in the same range as their layer's weights.
    pub fn init(dims: &[usize], latent_dim: usize, omega0: f64, seed: u64) -> Result<Self> {
        validate_dims(dims, latent_dim)?;
        if !(omega0.is_finite() && omega0 > 0.0) {
            return Err(Error::Config(format!("omega0 must be positive, got {omega0}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(2 * (dims.len() - 1));
        for (i, w) in dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = init_bound(i, n_in, omega0);
            params.push(Array2::from_shape_fn((n_out, n_in), |_| rng.random_range(-bound..=bound)));
            params.push(Array2::from_shape_fn((1, n_out), |_| rng.random_range(-bound..=bound)));
        }
        Ok(Self {
            dims: dims.to_vec(),
            latent_dim,
            omega0,
            params,
        })
    }

    /// Paper-style architecture: `n_hidden` hidden layers of width `hidden`.
    pub fn with_shape(
        latent_dim: usize,
        hidden: usize,
        n_hidden: usize,
        output: usize,
        omega0: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut dims = vec![2 + latent_dim];
        dims.extend(std::iter::repeat_n(hidden, n_hidden));
        dims.push(output);
        Self::init(&dims, latent_dim, omega0, seed)
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_params(
        dims: Vec<usize>,
        latent_dim: usize,
        omega0: f64,
        params: Vec<Array2<f64>>,
    ) -> Result<Self> {
        validate_dims(&dims, latent_dim)?;
        if params.len() != 2 * (dims.len() - 1) {
            return Err(Error::Shape(format!(
                "expected {} parameter blocks, got {}",
                2 * (dims.len() - 1),
                params.len()
            )));
        }
        for (i, w) in dims.windows(2).enumerate() {
            let (wt, b) = (&params[2 * i], &params[2 * i + 1]);
            if wt.dim() != (w[1], w[0]) || b.dim() != (1, w[1]) {
                return Err(Error::Shape(format!(
                    "layer {i}: expected weight {:?} and bias {:?}, got {:?} and {:?}",
                    (w[1], w[0]),
                    (1, w[1]),
                    wt.dim(),
                    b.dim()
                )));
            }
        }
        if params.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Invariant("non-finite parameter".into()));
        }
        Ok(Self {
            dims,
            latent_dim,
            omega0,
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn weight(&self, layer: usize) -> &Array2<f64> {
        &self.params[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Array2<f64> {
        &self.params[2 * layer + 1]
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Evaluates the network at normalized coordinates (`N x 2`) for one latent code.
    pub fn forward_batch(&self, coords: ArrayView2<f64>, z: &[f64]) -> Result<Array2<f64>> {
        if coords.ncols() != 2 {
            return Err(Error::Shape(format!("coords have {} columns, need 2", coords.ncols())));
        }
        if z.len() != self.latent_dim {
            return Err(Error::Shape(format!(
                "latent has {} entries, network expects {}",
                z.len(),
                self.latent_dim
            )));
        }
        if coords.iter().chain(z).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let n = coords.nrows();
        let mut input = Array2::zeros((n, 2 + self.latent_dim));
        input.slice_mut(ndarray::s![.., ..2]).assign(&coords);
        let zrow = Array1::from(z.to_vec());
        input.slice_mut(ndarray::s![.., 2..]).assign(&zrow.broadcast((n, self.latent_dim)).unwrap());
        let mut h = input;
        let last = self.n_layers() - 1;
        for i in 0..=last {
            let mut pre = h.dot(&self.weight(i).t()) + self.bias(i);
            if i < last {
                let w0 = self.omega0;
                pre.mapv_inplace(|x| (w0 * x).sin());
            }
            h = pre;
        }
        Ok(h)
    }

    /// Output at a single direction (degrees).
    pub fn forward(&self, theta_phi: [f64; 2], z: &[f64]) -> Result<Vec<f64>> {
        let c = normalize_coords(&Direction::new(theta_phi[0], theta_phi[1]));
        let coords = Array2::from_shape_vec((1, 2), c.to_vec()).unwrap();
        Ok(self.forward_batch(coords.view(), z)?.row(0).to_vec())
    }

    /// Predicted dB magnitudes at the given directions.
    pub fn predict(&self, dirs: &[Direction], z: &[f64]) -> Result<Array2<f64>> {
        self.forward_batch(coords_matrix(dirs).view(), z)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// HFNF layout: magic, version u32, then u32 input, hidden, n_hidden,
    /// output and latent sizes, omega0 f64, then each layer's weight and bias
    /// as row-major f64.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let hidden = &self.dims[1..self.dims.len() - 1];
        if hidden.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Unsupported(
                "serialization needs equal hidden widths".into(),
            ));
        }
        let width = hidden.first().copied().unwrap_or(0);
        let mut out = Vec::with_capacity(40 + 8 * self.n_params());
        out.extend_from_slice(MODEL_MAGIC);
        for v in [
            MODEL_VERSION,
            self.dims[0] as u32,
            width as u32,
            hidden.len() as u32,
            *self.dims.last().unwrap() as u32,
            self.latent_dim as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.omega0.to_le_bytes());
        for p in &self.params {
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
            return Err(Error::BadMagic {
                offset: 0,
                expected: "HFNF",
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
            });
        }
        let mut pos = 4;
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() < pos + n {
                return Err(Error::Truncated {
                    offset: pos as u64,
                    needed: pos + n - bytes.len(),
                });
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let mut header = [0u32; 6];
        for h in header.iter_mut() {
            *h = u32::from_le_bytes(take(4)?.try_into().unwrap());
        }
        let [version, input, hidden, n_hidden, output, latent] = header.map(|v| v as usize);
        if version as u32 != MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                offset: 4,
                version: version as u32,
            });
        }
        let omega0 = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, n_hidden));
        dims.push(output);
        validate_dims(&dims, latent)?;
        let mut params = Vec::new();
        for w in dims.windows(2) {
            for (r, c) in [(w[1], w[0]), (1, w[1])] {
                let raw = take(8 * r * c)?;
                let vals = raw
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                params.push(Array2::from_shape_vec((r, c), vals).unwrap());
            }
        }
        if pos != bytes.len() {
            return Err(Error::Corrupt {
                offset: pos as u64,
                msg: format!("{} trailing bytes", bytes.len() - pos),
            });
        }
        Self::from_params(dims, latent, omega0, params)
    }
}

fn init_bound(layer: usize, n_in: usize, omega0: f64) -> f64 {
    if layer == 0 {
        1.0 / n_in as f64
    } else {
        (6.0 / n_in as f64).sqrt() / omega0
    }
}

fn validate_dims(dims: &[usize], latent_dim: usize) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    if let Some(i) = dims.iter().position(|&d| d == 0) {
        return Err(Error::Config(format!("layer width {i} is zero")));
    }
    if dims[0] != 2 + latent_dim {
        return Err(Error::Config(format!(
            "input width {} does not equal 2 + latent dim {}",
            dims[0], latent_dim
        )));
    }
    Ok(())
}

impl LatentGenerator for SirenNetwork {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    fn forward_on_tape<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        coords: Var<'t, T>,
        z: Var<'t, T>,
    ) -> Var<'t, T> {
        let omega = T::of(self.omega0);
        let last = self.n_layers() - 1;
        let (w0, b0) = (params[0], params[1]);
        let first_in = self.dims[0];
        let coord_part = coords.matmul(w0.slice_cols(0, 2).t());
        let latent_row = z.matmul(w0.slice_cols(2, first_in).t()) + b0;
        let mut h = coord_part.add_row(latent_row);
        if last > 0 {
            h = h.scale(omega).sin();
        }
        for i in 1..=last {
            h = h.matmul(params[2 * i].t()).add_row(params[2 * i + 1]);
            if i < last {
                h = h.scale(omega).sin();
            }
        }
        h
    }
}

/// Loads every parameter of `gen` onto `tape` as differentiable leaves.
pub fn params_on_tape<'t, T: Scalar, G: LatentGenerator + ?Sized>(
    gen: &G,
    tape: &'t Tape<T>,
) -> Vec<Var<'t, T>> {
    gen.params()
        .iter()
        .map(|p| tape.var(p.mapv(T::of)))
        .collect()
}
