//! The RBM with bipolar visible units and multivalued hidden units.
//!
//! Exact quantities enumerate the `2^|V|` visible states only; each hidden
//! unit is summed (or integrated, for `s = inf`) analytically through
//! `log_phi`/`psi`, so the cost does not depend on `s`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::params::ParamBlocks;
use crate::special::{log_phi_unchecked, psi_unchecked, HiddenLevels, LogSumExp};

/// Largest visible layer for which exact enumeration is attempted.
pub const MAX_ENUMERATED_VISIBLE: usize = 24;

const CHUNK_BITS: u32 = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    visible_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
    /// `|V| x |H|`.
    couplings: Array2<f64>,
    levels: HiddenLevels,
}

impl RbmParams {
    pub fn new(
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
        couplings: Array2<f64>,
        levels: HiddenLevels,
    ) -> Result<Self> {
        let (nv, nh) = couplings.dim();
        if nv == 0 || nh == 0 {
            return Err(Error::InvalidConfig("an RBM needs at least one visible and one hidden unit".into()));
        }
        check_len("visible bias length", nv, visible_bias.len())?;
        check_len("hidden bias length", nh, hidden_bias.len())?;
        let all = visible_bias.iter().chain(hidden_bias.iter()).chain(couplings.iter());
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("RBM parameters must be finite".into()));
        }
        Ok(Self {
            visible_bias,
            hidden_bias,
            couplings: couplings.as_standard_layout().into_owned(),
            levels,
        })
    }

    pub fn zeros(n_visible: usize, n_hidden: usize, levels: HiddenLevels) -> Result<Self> {
        Self::new(
            Array1::zeros(n_visible),
            Array1::zeros(n_hidden),
            Array2::zeros((n_visible, n_hidden)),
            levels,
        )
    }

    pub fn n_visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn levels(&self) -> HiddenLevels {
        self.levels
    }

    pub fn visible_bias(&self) -> &Array1<f64> {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &Array1<f64> {
        &self.hidden_bias
    }

    pub fn couplings(&self) -> &Array2<f64> {
        &self.couplings
    }

    /// Same parameters with a different hidden sample space.
    pub fn with_levels(&self, levels: HiddenLevels) -> Self {
        Self {
            levels,
            ..self.clone()
        }
    }

    fn check_visible(&self, v: &ArrayView1<'_, f64>) -> Result<()> {
        check_len("visible vector length", self.n_visible(), v.len())
    }

    fn check_hidden(&self, h: &ArrayView1<'_, f64>) -> Result<()> {
        check_len("hidden vector length", self.n_hidden(), h.len())
    }

    fn check_capacity(&self) -> Result<()> {
        if self.n_visible() > MAX_ENUMERATED_VISIBLE {
            return Err(Error::Capacity {
                n_visible: self.n_visible(),
                max: MAX_ENUMERATED_VISIBLE,
            });
        }
        Ok(())
    }

    pub(crate) fn lambda_unchecked(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        v.dot(&self.couplings) + &self.hidden_bias
    }

    pub(crate) fn xi_unchecked(&self, h: ArrayView1<'_, f64>) -> Array1<f64> {
        self.couplings.dot(&h) + &self.visible_bias
    }

    fn log_marginal_from_lambda(&self, v: ArrayView1<'_, f64>, lambda: &Array1<f64>) -> f64 {
        let hidden: f64 = lambda.iter().map(|&l| log_phi_unchecked(self.levels, l)).sum();
        self.visible_bias.dot(&v) + hidden
    }
}

impl ParamBlocks for RbmParams {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![
            self.visible_bias.as_slice().expect("contiguous"),
            self.hidden_bias.as_slice().expect("contiguous"),
            self.couplings.as_slice().expect("standard layout"),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.visible_bias.as_slice_mut().expect("contiguous"),
            self.hidden_bias.as_slice_mut().expect("contiguous"),
            self.couplings.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Gradient of the log-likelihood, shaped like [`RbmParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGradient {
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    pub couplings: Array2<f64>,
}

impl RbmGradient {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
            couplings: Array2::zeros((n_visible, n_hidden)),
        }
    }
}

impl ParamBlocks for RbmGradient {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![
            self.visible_bias.as_slice().expect("contiguous"),
            self.hidden_bias.as_slice().expect("contiguous"),
            self.couplings.as_slice().expect("standard layout"),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.visible_bias.as_slice_mut().expect("contiguous"),
            self.hidden_bias.as_slice_mut().expect("contiguous"),
            self.couplings.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// `N` bipolar visible vectors, stored as an `N x |V|` matrix of `±1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinDataset {
    points: Array2<f64>,
}

impl SpinDataset {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidConfig("spin vectors must have at least one component".into()));
        }
        if let Some(bad) = points.iter().find(|&&x| x != 1.0 && x != -1.0) {
            return Err(Error::Domain(format!("spin entries must be -1 or +1, found {bad}")));
        }
        Ok(Self {
            points: points.as_standard_layout().into_owned(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_visible = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * n_visible);
        for row in rows {
            check_len("spin vector length", n_visible, row.len())?;
            flat.extend_from_slice(row);
        }
        let points = Array2::from_shape_vec((rows.len(), n_visible), flat)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Self::new(points)
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn n_visible(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn row(&self, index: usize) -> ArrayView1<'_, f64> {
        self.points.row(index)
    }

    /// Sub-dataset with the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.points.select(Axis(0), indices))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactMoments {
    pub mean_v: Array1<f64>,
    pub mean_h: Array1<f64>,
    pub corr_vh: Array2<f64>,
}

/// Writes the `index`-th visible state: bit `i` set means `v_i = +1`.
pub fn visible_state(index: u64, out: &mut [f64]) {
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = if (index >> i) & 1 == 1 { 1.0 } else { -1.0 };
    }
}

pub fn energy(params: &RbmParams, v: ArrayView1<'_, f64>, h: ArrayView1<'_, f64>) -> Result<f64> {
    params.check_visible(&v)?;
    params.check_hidden(&h)?;
    let coupling = v.dot(&params.couplings.dot(&h));
    Ok(-params.visible_bias.dot(&v) - params.hidden_bias.dot(&h) - coupling)
}

/// Hidden fields `lambda_j = c_j + sum_i w_ij v_i`.
pub fn lambda_of(params: &RbmParams, v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    params.check_visible(&v)?;
    Ok(params.lambda_unchecked(v))
}

/// Visible fields `xi_i = b_i + sum_j w_ij h_j`.
pub fn xi_of(params: &RbmParams, h: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    params.check_hidden(&h)?;
    Ok(params.xi_unchecked(h))
}

/// `sum_i b_i v_i + sum_j ln phi_s(lambda_j(v))`, i.e. `ln P(v) + ln Z`.
pub fn log_marginal_unnormalized(params: &RbmParams, v: ArrayView1<'_, f64>) -> Result<f64> {
    params.check_visible(&v)?;
    let lambda = params.lambda_unchecked(v);
    Ok(params.log_marginal_from_lambda(v, &lambda))
}

/// Weighted sums over one contiguous range of visible states, relative to
/// that range's maximum log weight.
struct ChunkSums {
    lse: LogSumExp,
    // Only filled when moments are requested; weights exp(lm - lse.max).
    mean_v: Array1<f64>,
    mean_h: Array1<f64>,
    corr_vh: Array2<f64>,
}

fn enumerate_chunk(params: &RbmParams, range: std::ops::Range<u64>, moments: bool) -> ChunkSums {
    let (nv, nh) = (params.n_visible(), params.n_hidden());
    let mut v = Array1::zeros(nv);
    let mut lms = Vec::with_capacity((range.end - range.start) as usize);
    let mut lambdas = Vec::new();
    let mut lse = LogSumExp::new();
    for index in range.clone() {
        visible_state(index, v.as_slice_mut().expect("contiguous"));
        let lambda = params.lambda_unchecked(v.view());
        let lm = params.log_marginal_from_lambda(v.view(), &lambda);
        lse.push(lm);
        lms.push(lm);
        if moments {
            lambdas.push(lambda);
        }
    }
    let mut sums = ChunkSums {
        lse,
        mean_v: Array1::zeros(if moments { nv } else { 0 }),
        mean_h: Array1::zeros(if moments { nh } else { 0 }),
        corr_vh: Array2::zeros(if moments { (nv, nh) } else { (0, 0) }),
    };
    if moments {
        let shift = lse.max();
        for ((index, lm), lambda) in range.zip(lms).zip(lambdas) {
            let weight = (lm - shift).exp();
            visible_state(index, v.as_slice_mut().expect("contiguous"));
            let psi = lambda.mapv(|l| psi_unchecked(params.levels, l));
            sums.mean_v.scaled_add(weight, &v);
            sums.mean_h.scaled_add(weight, &psi);
            for (i, &vi) in v.iter().enumerate() {
                sums.corr_vh.row_mut(i).scaled_add(weight * vi, &psi);
            }
        }
    }
    sums
}

/// Enumerates all visible states in fixed-size chunks (in parallel) and
/// merges them in index order, so the result is independent of scheduling.
fn enumerate(params: &RbmParams, moments: bool) -> Result<(f64, Option<ExactMoments>)> {
    params.check_capacity()?;
    let n_states = 1u64 << params.n_visible();
    let chunk = 1u64 << CHUNK_BITS;
    let ranges: Vec<_> = (0..n_states.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n_states))
        .collect();
    let chunks: Vec<ChunkSums> = if ranges.len() > 1 {
        ranges.into_par_iter().map(|r| enumerate_chunk(params, r, moments)).collect()
    } else {
        ranges.into_iter().map(|r| enumerate_chunk(params, r, moments)).collect()
    };

    let global_max = chunks.iter().map(|c| c.lse.max()).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let (nv, nh) = (params.n_visible(), params.n_hidden());
    let mut acc = ExactMoments {
        mean_v: Array1::zeros(nv),
        mean_h: Array1::zeros(nh),
        corr_vh: Array2::zeros((nv, nh)),
    };
    for c in &chunks {
        let scale = (c.lse.max() - global_max).exp();
        total += c.lse.scaled_sum() * scale;
        if moments {
            acc.mean_v.scaled_add(scale, &c.mean_v);
            acc.mean_h.scaled_add(scale, &c.mean_h);
            acc.corr_vh.scaled_add(scale, &c.corr_vh);
        }
    }
    let log_z = global_max + total.ln();
    if moments {
        acc.mean_v /= total;
        acc.mean_h /= total;
        acc.corr_vh /= total;
        Ok((log_z, Some(acc)))
    } else {
        Ok((log_z, None))
    }
}

/// Exact `ln Z_s` by enumeration over visible states.
pub fn log_partition_exact(params: &RbmParams) -> Result<f64> {
    enumerate(params, false).map(|(log_z, _)| log_z)
}

/// Model expectations `<v_i>`, `<h_j>`, `<v_i h_j>` with hidden units
/// marginalized through `psi`.
pub fn exact_moments(params: &RbmParams) -> Result<ExactMoments> {
    enumerate(params, true).map(|(_, m)| m.expect("moments requested"))
}

/// Exact log marginal probabilities of every visible state, indexed as in
/// [`visible_state`].
pub fn log_marginals_exact(params: &RbmParams) -> Result<Vec<f64>> {
    let log_z = log_partition_exact(params)?;
    let mut v = Array1::zeros(params.n_visible());
    Ok((0..1u64 << params.n_visible())
        .map(|index| {
            visible_state(index, v.as_slice_mut().expect("contiguous"));
            let lambda = params.lambda_unchecked(v.view());
            params.log_marginal_from_lambda(v.view(), &lambda) - log_z
        })
        .collect())
}

fn check_data(params: &RbmParams, data: &SpinDataset) -> Result<()> {
    check_len("dataset visible dimension", params.n_visible(), data.n_visible())
}

/// Average log marginal probability of the data.
pub fn log_likelihood(params: &RbmParams, data: &SpinDataset) -> Result<f64> {
    check_data(params, data)?;
    let log_z = log_partition_exact(params)?;
    let total: f64 = data
        .points
        .rows()
        .into_iter()
        .map(|v| {
            let lambda = params.lambda_unchecked(v);
            params.log_marginal_from_lambda(v, &lambda)
        })
        .sum();
    Ok(total / data.n_points() as f64 - log_z)
}

/// Data-side statistics: means of `v_i`, `psi(lambda_j(v))` and their products.
pub(crate) fn positive_phase(params: &RbmParams, data: ArrayView2Rows<'_>) -> RbmGradient {
    let mut grad = RbmGradient::zeros(params.n_visible(), params.n_hidden());
    let mut n = 0usize;
    for v in data {
        let psi = params.lambda_unchecked(v).mapv(|l| psi_unchecked(params.levels, l));
        grad.visible_bias += &v;
        grad.hidden_bias += &psi;
        for (i, &vi) in v.iter().enumerate() {
            grad.couplings.row_mut(i).scaled_add(vi, &psi);
        }
        n += 1;
    }
    let inv = 1.0 / n as f64;
    grad.visible_bias *= inv;
    grad.hidden_bias *= inv;
    grad.couplings *= inv;
    grad
}

pub(crate) type ArrayView2Rows<'a> = ndarray::iter::Lanes<'a, f64, ndarray::Ix1>;

/// Exact log-likelihood gradient: data moments minus exact model moments.
pub fn exact_gradient(params: &RbmParams, data: &SpinDataset) -> Result<RbmGradient> {
    check_data(params, data)?;
    let model = exact_moments(params)?;
    let mut grad = positive_phase(params, data.points.rows());
    grad.visible_bias -= &model.mean_v;
    grad.hidden_bias -= &model.mean_h;
    grad.couplings -= &model.corr_vh;
    Ok(grad)
}
