//! Masked-MSE gradients of a latent generator: with respect to its
//! parameters, its latent input, and its parameters through a latent
//! gradient step taken from the origin.

use ndarray::Array2;
use rayon::prelude::*;

use crate::autodiff::{Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::igon::EarRows;
use crate::siren::{params_on_tape, LatentGenerator};

/// How the weight update treats the inferred latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradMode {
    /// Differentiate through the latent step, including the mixed
    /// second-derivative term.
    #[default]
    Exact,
    /// Treat the inferred latent as a constant.
    Detached,
}

impl std::str::FromStr for GradMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(GradMode::Exact),
            "detached" => Ok(GradMode::Detached),
            other => Err(Error::Config(format!("unknown gradient mode {other:?}"))),
        }
    }
}

/// Per-ear result of one objective evaluation.
#[derive(Debug, Clone)]
pub struct EarGradient {
    pub loss: f64,
    pub grads: Vec<Array2<f64>>,
    /// Latent the loss was evaluated at.
    pub z: Vec<f64>,
}

struct EarConsts<'t, T: Scalar> {
    coords: Var<'t, T>,
    target: Var<'t, T>,
    mask: Var<'t, T>,
    inv_cells: T,
}

fn load_rows<'t, T: Scalar>(tape: &'t Tape<T>, rows: &EarRows, k: usize) -> Result<EarConsts<'t, T>> {
    if rows.targets.ncols() != k {
        return Err(Error::Shape(format!(
            "targets have {} bins, generator outputs {k}",
            rows.targets.ncols()
        )));
    }
    let valid = rows.n_valid();
    if valid == 0 {
        return Err(Error::Invariant("no unmasked locations".into()));
    }
    let mask = Array2::from_shape_fn(rows.targets.dim(), |(r, _)| {
        if rows.mask[r] {
            T::one()
        } else {
            T::zero()
        }
    });
    // padded targets may hold anything; zero them so they cannot leak through
    let target = Array2::from_shape_fn(rows.targets.dim(), |(r, c)| {
        if rows.mask[r] {
            T::of(rows.targets[[r, c]])
        } else {
            T::zero()
        }
    });
    Ok(EarConsts {
        coords: tape.constant(rows.coords.mapv(T::of)),
        target: tape.constant(target),
        mask: tape.constant(mask),
        inv_cells: T::of(1.0 / (valid * k) as f64),
    })
}

fn masked_loss<'t, T: Scalar, G: LatentGenerator + ?Sized>(
    gen: &G,
    params: &[Var<'t, T>],
    c: &EarConsts<'t, T>,
    z: Var<'t, T>,
) -> Var<'t, T> {
    let pred = gen.forward_on_tape(params, c.coords, z);
    let diff = (pred - c.target) * c.mask;
    (diff * diff).sum().scale(c.inv_cells)
}

fn latent_row<T: Scalar>(z: &[f64]) -> Array2<T> {
    Array2::from_shape_fn((1, z.len()), |(_, j)| T::of(z[j]))
}

fn to_f64<T: Scalar>(a: &Array2<T>) -> Array2<f64> {
    a.mapv(|v| v.to_f64().expect("finite"))
}

fn check_finite(grads: &[Array2<f64>], what: &str) -> Result<()> {
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric(format!("non-finite {what} gradient")));
    }
    Ok(())
}

/// Loss and parameter gradients at a fixed latent.
pub fn grad_params<G: LatentGenerator + ?Sized>(gen: &G, rows: &EarRows, z: &[f64]) -> Result<(f64, Vec<Array2<f64>>)> {
    let tape = Tape::<f64>::new();
    let params = params_on_tape(gen, &tape);
    let c = load_rows(&tape, rows, gen.output_dim())?;
    check_latent(gen, z)?;
    let loss = masked_loss(gen, &params, &c, tape.constant(latent_row(z)));
    let grads: Vec<_> = tape.grad(loss, &params)?.iter().map(|g| g.value()).collect();
    check_finite(&grads, "parameter")?;
    Ok((loss.scalar(), grads))
}

/// Loss and latent gradient at `z`.
pub fn grad_latent<G: LatentGenerator + ?Sized>(gen: &G, rows: &EarRows, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (loss, g) = grad_latent_t::<f64, G>(gen, rows, z)?;
    Ok((loss, g))
}

fn grad_latent_t<T: Scalar, G: LatentGenerator + ?Sized>(gen: &G, rows: &EarRows, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_latent(gen, z)?;
    let tape = Tape::<T>::new();
    let params: Vec<_> = gen.params().iter().map(|p| tape.constant(p.mapv(T::of))).collect();
    let c = load_rows(&tape, rows, gen.output_dim())?;
    let zv = tape.var(latent_row(z));
    let loss = masked_loss(gen, &params, &c, zv);
    let g = to_f64(&tape.grad(loss, &[zv])?[0].value());
    let g: Vec<f64> = g.iter().copied().collect();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite latent gradient".into()));
    }
    Ok((loss.scalar().to_f64().unwrap(), g))
}

fn check_latent<G: LatentGenerator + ?Sized>(gen: &G, z: &[f64]) -> Result<()> {
    if z.len() != gen.latent_dim() {
        return Err(Error::Shape(format!(
            "latent has {} entries, generator expects {}",
            z.len(),
            gen.latent_dim()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite latent".into()));
    }
    Ok(())
}

/// Loss after `steps` unit gradient steps on the latent from the origin,
/// and its gradient with respect to every parameter.
///
/// In [`GradMode::Exact`] the latent steps stay on the tape, so the
/// parameter gradient includes the dependence of the inferred latent on the
/// parameters. In [`GradMode::Detached`] each step's result is a fresh leaf.
pub fn grad_params_through_latent_step<G: LatentGenerator + ?Sized>(
    gen: &G,
    rows: &EarRows,
    mode: GradMode,
    steps: usize,
) -> Result<EarGradient> {
    ear_objective::<f64, G>(gen, rows, mode, steps)
}

pub(crate) fn ear_objective<T: Scalar, G: LatentGenerator + ?Sized>(
    gen: &G,
    rows: &EarRows,
    mode: GradMode,
    steps: usize,
) -> Result<EarGradient> {
    let tape = Tape::<T>::new();
    let params = params_on_tape(gen, &tape);
    let c = load_rows(&tape, rows, gen.output_dim())?;
    let mut z = tape.var(Array2::zeros((1, gen.latent_dim())));
    for _ in 0..steps {
        let inner = masked_loss(gen, &params, &c, z);
        let g = tape.grad(inner, &[z])?[0];
        let next = z - g;
        z = match mode {
            GradMode::Exact => next,
            GradMode::Detached => tape.var(next.value()),
        };
    }
    let loss = masked_loss(gen, &params, &c, z);
    let grads: Vec<_> = tape
        .grad(loss, &params)?
        .iter()
        .map(|g| to_f64(&g.value()))
        .collect();
    check_finite(&grads, "parameter")?;
    let zval = to_f64(&z.value()).iter().copied().collect();
    let loss = loss.scalar().to_f64().unwrap();
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    Ok(EarGradient { loss, grads, z: zval })
}

/// Mean loss and mean parameter gradient over several ears. Ears are
/// evaluated independently (in parallel when a thread pool is available) and
/// reduced in input order, so the result does not depend on thread count.
pub fn batch_objective<T: Scalar, G: LatentGenerator + ?Sized>(
    gen: &G,
    ears: &[EarRows],
    mode: GradMode,
    steps: usize,
) -> Result<(f64, Vec<Array2<f64>>)> {
    if ears.is_empty() {
        return Err(Error::Invariant("empty batch".into()));
    }
    let per_ear: Vec<EarGradient> = ears
        .par_iter()
        .map(|e| ear_objective::<T, G>(gen, e, mode, steps))
        .collect::<Result<_>>()?;
    let n = per_ear.len() as f64;
    let mut grads: Vec<Array2<f64>> = gen.params().iter().map(|p| Array2::zeros(p.dim())).collect();
    let mut loss = 0.0;
    for e in &per_ear {
        loss += e.loss;
        for (acc, g) in grads.iter_mut().zip(&e.grads) {
            *acc += g;
        }
    }
    for g in &mut grads {
        g.mapv_inplace(|v| v / n);
    }
    Ok((loss / n, grads))
}

/// Latent gradient at `z` evaluated at the requested precision.
pub(crate) fn grad_latent_precision<G: LatentGenerator + ?Sized>(
    gen: &G,
    rows: &EarRows,
    z: &[f64],
    f32_math: bool,
) -> Result<(f64, Vec<f64>)> {
    if f32_math {
        grad_latent_t::<f32, G>(gen, rows, z)
    } else {
        grad_latent_t::<f64, G>(gen, rows, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Direction;
    use crate::siren::SirenNetwork;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `G(x, z) = B x + A z + b`, linear in everything.
    struct Linear {
        params: Vec<Array2<f64>>,
    }

    impl LatentGenerator for Linear {
        fn latent_dim(&self) -> usize {
            self.params[0].ncols()
        }
        fn output_dim(&self) -> usize {
            self.params[0].nrows()
        }
        fn params(&self) -> &[Array2<f64>] {
            &self.params
        }
        fn params_mut(&mut self) -> &mut [Array2<f64>] {
            &mut self.params
        }
        fn forward_on_tape<'t, T: Scalar>(&self, p: &[Var<'t, T>], coords: Var<'t, T>, z: Var<'t, T>) -> Var<'t, T> {
            coords.matmul(p[1].t()).add_row(z.matmul(p[0].t()) + p[2])
        }
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-s..s))
    }

    fn rows(rng: &mut ChaCha8Rng, n: usize, k: usize) -> EarRows {
        let dirs: Vec<_> = (0..n)
            .map(|_| Direction::new(rng.random_range(0.0..360.0), rng.random_range(-90.0..90.0)))
            .collect();
        EarRows::new(&dirs, random(rng, n, k, 1.0)).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn linear_generator_step_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, k, d) = (7, 5, 3);
        let mut gen = Linear {
            params: vec![random(&mut rng, k, d, 1.0), random(&mut rng, k, 2, 1.0), random(&mut rng, 1, k, 1.0)],
        };
        let r = rows(&mut rng, n, k);
        // zero B so G(z) = b + A z exactly
        gen.params[1].fill(0.0);
        let z = crate::igon::infer_latent(&gen, &r, 1).unwrap();
        let resid_sum = r.targets.rows().into_iter().fold(Array2::<f64>::zeros((1, k)), |acc, x| {
            acc + &(&x.insert_axis(ndarray::Axis(0)) - &gen.params[2])
        });
        let expect = resid_sum.dot(&gen.params[0]) * (2.0 / (n * k) as f64);
        for j in 0..d {
            assert!((z.0[j] - expect[[0, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_steps_and_insensitive_network_keep_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut gen = Linear {
            params: vec![random(&mut rng, 3, 2, 1.0), random(&mut rng, 3, 2, 1.0), random(&mut rng, 1, 3, 1.0)],
        };
        let r = rows(&mut rng, 4, 3);
        assert_eq!(crate::igon::infer_latent(&gen, &r, 0).unwrap().0, vec![0.0; 2]);
        gen.params[0].fill(0.0);
        assert_eq!(crate::igon::infer_latent(&gen, &r, 1).unwrap().0, vec![0.0; 2]);
    }

    #[test]
    fn latent_inference_is_translation_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = SirenNetwork::init(&[5, 6, 4], 3, 30.0, 1).unwrap();
        let r = rows(&mut rng, 6, 4);
        let z = crate::igon::infer_latent(&net, &r, 1).unwrap();
        let mut params = net.params().to_vec();
        params[3].mapv_inplace(|v| v + 2.5);
        let shifted = SirenNetwork::from_params(net.dims().to_vec(), 3, 30.0, params).unwrap();
        let mut r2 = r.clone();
        r2.targets.mapv_inplace(|v| v + 2.5);
        let z2 = crate::igon::infer_latent(&shifted, &r2, 1).unwrap();
        for (a, b) in z.0.iter().zip(&z2.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn padding_does_not_change_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = SirenNetwork::init(&[4, 5, 3], 2, 30.0, 2).unwrap();
        let r = rows(&mut rng, 5, 3);
        let mut padded = r.padded(9);
        padded.targets.slice_mut(ndarray::s![5.., ..]).fill(1e6);
        let a = grad_params_through_latent_step(&net, &r, GradMode::Exact, 1).unwrap();
        let b = grad_params_through_latent_step(&net, &padded, GradMode::Exact, 1).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        for (x, y) in a.grads.iter().zip(&b.grads) {
            assert!(x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-12));
        }
    }

    #[test]
    fn modes_agree_without_latent_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = SirenNetwork::init(&[5, 6, 6, 3], 3, 30.0, 3).unwrap();
        let mut params = net.params().to_vec();
        params[0].slice_mut(ndarray::s![.., 2..]).fill(0.0);
        let net = SirenNetwork::from_params(net.dims().to_vec(), 3, 30.0, params).unwrap();
        let r = rows(&mut rng, 6, 3);
        let a = grad_params_through_latent_step(&net, &r, GradMode::Exact, 1).unwrap();
        let b = grad_params_through_latent_step(&net, &r, GradMode::Detached, 1).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = SirenNetwork::init(&[4, 5, 3], 2, 3.0, 4).unwrap();
        let r = rows(&mut rng, 5, 3);
        let g = grad_params_through_latent_step(&net, &r, GradMode::Exact, 1).unwrap();
        let composed = |p: Vec<Array2<f64>>| {
            let n = SirenNetwork::from_params(net.dims().to_vec(), 2, 3.0, p).unwrap();
            let z = crate::igon::infer_latent(&n, &r, 1).unwrap();
            grad_params(&n, &r, &z.0).unwrap().0
        };
        let h = 1e-5;
        for (bi, block) in net.params().iter().enumerate() {
            for idx in 0..block.len() {
                let (i, j) = (idx / block.ncols(), idx % block.ncols());
                let mut up = net.params().to_vec();
                up[bi][[i, j]] += h;
                let mut dn = net.params().to_vec();
                dn[bi][[i, j]] -= h;
                let fd = (composed(up) - composed(dn)) / (2.0 * h);
                assert!(rel(fd, g.grads[bi][[i, j]]) < 1e-5, "block {bi} ({i},{j}): {fd} vs {}", g.grads[bi][[i, j]]);
            }
        }
    }

    #[test]
    fn batch_objective_is_mean_of_ears() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = SirenNetwork::init(&[4, 5, 3], 2, 30.0, 5).unwrap();
        let ears = vec![rows(&mut rng, 4, 3), rows(&mut rng, 4, 3)];
        let (loss, grads) = batch_objective::<f64, _>(&net, &ears, GradMode::Exact, 1).unwrap();
        let a = grad_params_through_latent_step(&net, &ears[0], GradMode::Exact, 1).unwrap();
        let b = grad_params_through_latent_step(&net, &ears[1], GradMode::Exact, 1).unwrap();
        assert!((loss - 0.5 * (a.loss + b.loss)).abs() < 1e-15);
        let want = (&a.grads[0] + &b.grads[0]) / 2.0;
        assert!(grads[0].iter().zip(&want).all(|(p, q)| (p - q).abs() < 1e-15));
    }
}
