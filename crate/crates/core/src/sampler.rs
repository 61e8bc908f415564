//! Blocked Gibbs sampling over the two layers.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{check_len, Error, Result};
use crate::rbm::{RbmParams, SpinDataset};
use crate::special::{level_value, HiddenLevels};

pub const DEFAULT_BURN_IN: usize = 1000;
pub const DEFAULT_THIN: usize = 100;

/// Below this field magnitude the continuous conditional is treated as uniform.
const FLAT_FIELD: f64 = 1e-8;

/// Seeded ChaCha20 stream. Identical seeds give identical sequences on every
/// platform; [`RngStream::split`] derives independent child streams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha20Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Seed of the child stream `key`; depends only on this stream's seed.
    pub fn child_seed(&self, key: u64) -> u64 {
        splitmix64(self.seed ^ splitmix64(key.wrapping_add(0x5851_F42D_4C95_7F2D)))
    }

    pub fn split(&self, key: u64) -> RngStream {
        RngStream::new(self.child_seed(key))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `P(v_i = +1) = e^xi / (e^xi + e^-xi)`.
#[inline]
pub fn prob_visible_up(xi: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * xi).exp())
}

/// Inverse CDF of the continuous hidden conditional `p(h) ∝ exp(lambda h)` on
/// `[-1, 1]`.
pub fn inverse_cdf_continuous(lambda: f64, u: f64) -> f64 {
    if lambda.abs() < FLAT_FIELD {
        return 2.0 * u - 1.0;
    }
    if lambda < 0.0 {
        return -inverse_cdf_continuous(-lambda, 1.0 - u);
    }
    // -1 + ln(1 + u (e^{2 lambda} - 1)) / lambda, rewritten around h = +1.
    let h = 1.0 + ((1.0 - u) * (-2.0 * lambda).exp_m1()).ln_1p() / lambda;
    h.clamp(-1.0, 1.0)
}

fn sample_hidden_unit<R: Rng + ?Sized>(levels: HiddenLevels, lambda: f64, rng: &mut R) -> f64 {
    match levels {
        HiddenLevels::Infinite => inverse_cdf_continuous(lambda, rng.random::<f64>()),
        HiddenLevels::Finite(s) => {
            let s = s.get();
            // Shift so the largest weight is exp(0).
            let top = if lambda >= 0.0 { 1.0 } else { -1.0 };
            let weight = |k: u32| (lambda * (level_value(s, k) - top)).exp();
            let total: f64 = (0..=s).map(weight).sum();
            let mut target = rng.random::<f64>() * total;
            for k in 0..s {
                target -= weight(k);
                if target < 0.0 {
                    return level_value(s, k);
                }
            }
            level_value(s, s)
        }
    }
}

pub(crate) fn sample_v_unchecked<R: Rng + ?Sized>(
    params: &RbmParams,
    h: ArrayView1<'_, f64>,
    rng: &mut R,
) -> Array1<f64> {
    params.xi_unchecked(h).mapv(|xi| {
        if rng.random::<f64>() < prob_visible_up(xi) {
            1.0
        } else {
            -1.0
        }
    })
}

pub(crate) fn sample_h_unchecked<R: Rng + ?Sized>(
    params: &RbmParams,
    v: ArrayView1<'_, f64>,
    rng: &mut R,
) -> Array1<f64> {
    let levels = params.levels();
    params
        .lambda_unchecked(v)
        .mapv(|lambda| sample_hidden_unit(levels, lambda, rng))
}

pub fn sample_v_given_h<R: Rng + ?Sized>(
    params: &RbmParams,
    h: ArrayView1<'_, f64>,
    rng: &mut R,
) -> Result<Array1<f64>> {
    check_len("hidden vector length", params.n_hidden(), h.len())?;
    Ok(sample_v_unchecked(params, h, rng))
}

pub fn sample_h_given_v<R: Rng + ?Sized>(
    params: &RbmParams,
    v: ArrayView1<'_, f64>,
    rng: &mut R,
) -> Result<Array1<f64>> {
    check_len("visible vector length", params.n_visible(), v.len())?;
    Ok(sample_h_unchecked(params, v, rng))
}

/// One sweep: `h ~ P(h | v)`, then `v' ~ P(v | h)`. Returns `(v', h)`.
pub fn gibbs_step<R: Rng + ?Sized>(
    params: &RbmParams,
    v: ArrayView1<'_, f64>,
    rng: &mut R,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_len("visible vector length", params.n_visible(), v.len())?;
    let h = sample_h_unchecked(params, v, rng);
    let v_next = sample_v_unchecked(params, h.view(), rng);
    Ok((v_next, h))
}

pub fn random_spins<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// Runs one chain from a uniformly random start, discards `burn_in` sweeps
/// and then keeps every `thin`-th visible state.
pub fn generate_dataset<R: Rng + ?Sized>(
    params: &RbmParams,
    n_points: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut R,
) -> Result<SpinDataset> {
    if n_points == 0 {
        return Err(Error::InvalidConfig("n_points must be at least 1".into()));
    }
    if thin == 0 {
        return Err(Error::InvalidConfig("thin must be at least 1".into()));
    }
    let nv = params.n_visible();
    let mut v = random_spins(nv, rng);
    let sweep = |v: &mut Array1<f64>, rng: &mut R| {
        let h = sample_h_unchecked(params, v.view(), rng);
        *v = sample_v_unchecked(params, h.view(), rng);
    };
    for _ in 0..burn_in {
        sweep(&mut v, rng);
    }
    let mut points = Array2::zeros((n_points, nv));
    for mut row in points.rows_mut() {
        for _ in 0..thin {
            sweep(&mut v, rng);
        }
        row.assign(&v);
    }
    SpinDataset::new(points)
}
