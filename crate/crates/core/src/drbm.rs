//! Discriminative RBM: `P(t = 1_k | x)` with multivalued hidden units summed
//! out analytically.
//!
//! Class score: `b_k + sum_j ln phi_s(zeta_j(k, x))` with
//! `zeta_j(k, x) = c_j + W2[j, k] + sum_i W1[i, j] x_i`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::params::ParamBlocks;
use crate::special::{log_phi_unchecked, log_sum_exp, psi_unchecked, HiddenLevels};
use crate::trainer::xavier_matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct DrbmParams {
    class_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
    /// `n x |H|`.
    input_couplings: Array2<f64>,
    /// `|H| x K`.
    class_couplings: Array2<f64>,
    levels: HiddenLevels,
}

impl DrbmParams {
    pub fn new(
        class_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
        input_couplings: Array2<f64>,
        class_couplings: Array2<f64>,
        levels: HiddenLevels,
    ) -> Result<Self> {
        let (n, nh) = input_couplings.dim();
        let k = class_bias.len();
        if k < 2 || n == 0 || nh == 0 {
            return Err(Error::InvalidConfig(
                "a DRBM needs K >= 2 classes, n >= 1 inputs and |H| >= 1 hidden units".into(),
            ));
        }
        check_len("hidden bias length", nh, hidden_bias.len())?;
        check_len("class coupling rows", nh, class_couplings.nrows())?;
        check_len("class coupling columns", k, class_couplings.ncols())?;
        let all = class_bias
            .iter()
            .chain(hidden_bias.iter())
            .chain(input_couplings.iter())
            .chain(class_couplings.iter());
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("DRBM parameters must be finite".into()));
        }
        Ok(Self {
            class_bias,
            hidden_bias,
            input_couplings: input_couplings.as_standard_layout().into_owned(),
            class_couplings: class_couplings.as_standard_layout().into_owned(),
            levels,
        })
    }

    pub fn zeros(n_inputs: usize, n_hidden: usize, n_classes: usize, levels: HiddenLevels) -> Result<Self> {
        Self::new(
            Array1::zeros(n_classes),
            Array1::zeros(n_hidden),
            Array2::zeros((n_inputs, n_hidden)),
            Array2::zeros((n_hidden, n_classes)),
            levels,
        )
    }

    /// Zero biases; each coupling block Xavier-initialized with its own fan sum.
    pub fn init_xavier<R: Rng + ?Sized>(
        n_inputs: usize,
        n_hidden: usize,
        n_classes: usize,
        levels: HiddenLevels,
        rng: &mut R,
    ) -> Result<Self> {
        let w1 = xavier_matrix(n_inputs, n_hidden, rng);
        let w2 = xavier_matrix(n_hidden, n_classes, rng);
        Self::new(Array1::zeros(n_classes), Array1::zeros(n_hidden), w1, w2, levels)
    }

    pub fn n_inputs(&self) -> usize {
        self.input_couplings.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_bias.len()
    }

    pub fn levels(&self) -> HiddenLevels {
        self.levels
    }

    pub fn class_bias(&self) -> &Array1<f64> {
        &self.class_bias
    }

    pub fn hidden_bias(&self) -> &Array1<f64> {
        &self.hidden_bias
    }

    pub fn input_couplings(&self) -> &Array2<f64> {
        &self.input_couplings
    }

    pub fn class_couplings(&self) -> &Array2<f64> {
        &self.class_couplings
    }

    pub fn with_levels(&self, levels: HiddenLevels) -> Self {
        Self {
            levels,
            ..self.clone()
        }
    }

    fn check_input(&self, x: &ArrayView1<'_, f64>) -> Result<()> {
        check_len("input vector length", self.n_inputs(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("input vector must be finite".into()));
        }
        Ok(())
    }

    fn check_inputs(&self, xs: &ArrayView2<'_, f64>) -> Result<()> {
        check_len("input vector length", self.n_inputs(), xs.ncols())?;
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("input vectors must be finite".into()));
        }
        Ok(())
    }

    /// Input part of every field, `c_j + sum_i W1[i, j] x_i`, one row per input.
    fn input_fields(&self, xs: ArrayView2<'_, f64>) -> Array2<f64> {
        xs.dot(&self.input_couplings) + &self.hidden_bias
    }

    /// Class scores for one input, given its input fields.
    fn scores_from_fields(&self, fields: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_shape_fn(self.n_classes(), |k| {
            let column = self.class_couplings.column(k);
            let hidden: f64 = fields
                .iter()
                .zip(column.iter())
                .map(|(&f, &w)| log_phi_unchecked(self.levels, f + w))
                .sum();
            self.class_bias[k] + hidden
        })
    }
}

impl ParamBlocks for DrbmParams {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![
            self.class_bias.as_slice().expect("contiguous"),
            self.hidden_bias.as_slice().expect("contiguous"),
            self.input_couplings.as_slice().expect("standard layout"),
            self.class_couplings.as_slice().expect("standard layout"),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.class_bias.as_slice_mut().expect("contiguous"),
            self.hidden_bias.as_slice_mut().expect("contiguous"),
            self.input_couplings.as_slice_mut().expect("standard layout"),
            self.class_couplings.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrbmGradient {
    pub class_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    pub input_couplings: Array2<f64>,
    pub class_couplings: Array2<f64>,
}

impl ParamBlocks for DrbmGradient {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![
            self.class_bias.as_slice().expect("contiguous"),
            self.hidden_bias.as_slice().expect("contiguous"),
            self.input_couplings.as_slice().expect("standard layout"),
            self.class_couplings.as_slice().expect("standard layout"),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.class_bias.as_slice_mut().expect("contiguous"),
            self.hidden_bias.as_slice_mut().expect("contiguous"),
            self.input_couplings.as_slice_mut().expect("standard layout"),
            self.class_couplings.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// `N` inputs (rows of an `N x n` matrix) with class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledDataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_len("label count", inputs.nrows(), labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Domain(format!("label {bad} out of range for {n_classes} classes")));
        }
        Ok(Self {
            inputs: inputs.as_standard_layout().into_owned(),
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.inputs.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.n_classes,
        )
    }

    fn check_against(&self, params: &DrbmParams) -> Result<()> {
        check_len("dataset class count", params.n_classes(), self.n_classes)?;
        check_len("dataset input dimension", params.n_inputs(), self.n_inputs())
    }
}

/// Hidden fields `zeta_j(1_k, x)` for class `k`.
pub fn zeta(params: &DrbmParams, k: usize, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if k >= params.n_classes() {
        return Err(Error::Domain(format!("class index {k} out of range for {} classes", params.n_classes())));
    }
    check_len("input vector length", params.n_inputs(), x.len())?;
    Ok(x.dot(&params.input_couplings) + &params.hidden_bias + params.class_couplings.column(k))
}

/// Log class probabilities for one input.
pub fn class_log_probs(params: &DrbmParams, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    params.check_input(&x)?;
    let fields = params.input_fields(x.insert_axis(Axis(0)));
    let scores = params.scores_from_fields(fields.row(0));
    let norm = log_sum_exp(scores.as_slice().expect("contiguous"));
    Ok(scores - norm)
}

/// Log class probabilities for every row of `xs` (`N x K`).
pub fn class_log_probs_batch(params: &DrbmParams, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    params.check_inputs(&xs)?;
    let fields = params.input_fields(xs);
    let mut out = Array2::zeros((xs.nrows(), params.n_classes()));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(fields.axis_iter(Axis(0)))
        .for_each(|(mut row, f)| {
            let scores = params.scores_from_fields(f);
            let norm = log_sum_exp(scores.as_slice().expect("contiguous"));
            row.assign(&(scores - norm));
        });
    Ok(out)
}

fn argmax_lowest(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Most probable class; ties go to the lowest index.
pub fn predict(params: &DrbmParams, x: ArrayView1<'_, f64>) -> Result<usize> {
    class_log_probs(params, x).map(|lp| argmax_lowest(lp.view()))
}

pub fn predict_batch(params: &DrbmParams, xs: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let lp = class_log_probs_batch(params, xs)?;
    Ok(lp.rows().into_iter().map(argmax_lowest).collect())
}

/// Mean log probability of the true labels.
pub fn drbm_log_likelihood(params: &DrbmParams, data: &LabeledDataset) -> Result<f64> {
    data.check_against(params)?;
    let lp = class_log_probs_batch(params, data.inputs.view())?;
    let total: f64 = data.labels.iter().enumerate().map(|(mu, &t)| lp[[mu, t]]).sum();
    Ok(total / data.len() as f64)
}

/// Exact gradient of [`drbm_log_likelihood`].
pub fn drbm_gradient(params: &DrbmParams, batch: &LabeledDataset) -> Result<DrbmGradient> {
    batch.check_against(params)?;
    params.check_inputs(&batch.inputs.view())?;
    let (n_points, nh, nk) = (batch.len(), params.n_hidden(), params.n_classes());
    let fields = params.input_fields(batch.inputs.view());

    // Per point: residual t_k - P_k (K), hidden residual psi(zeta_t) - <psi(zeta)> (|H|),
    // and psi(zeta_jk) * (t_k - P_k) (|H| x K).
    let per_point: Vec<(Array1<f64>, Array1<f64>, Array2<f64>)> = (0..n_points)
        .into_par_iter()
        .map(|mu| {
            let f = fields.row(mu);
            let scores = params.scores_from_fields(f);
            let norm = log_sum_exp(scores.as_slice().expect("contiguous"));
            let probs = scores.mapv(|sc| (sc - norm).exp());
            let label = batch.labels[mu];
            let mut residual = -&probs;
            residual[label] += 1.0;
            let psi = Array2::from_shape_fn((nh, nk), |(j, k)| {
                psi_unchecked(params.levels, f[j] + params.class_couplings[[j, k]])
            });
            let hidden = &psi.column(label) - &psi.dot(&probs);
            let class_coupling = &psi * &residual.view().insert_axis(Axis(0));
            (residual, hidden, class_coupling)
        })
        .collect();

    let inv = 1.0 / n_points as f64;
    let mut grad = DrbmGradient {
        class_bias: Array1::zeros(nk),
        hidden_bias: Array1::zeros(nh),
        input_couplings: Array2::zeros((params.n_inputs(), nh)),
        class_couplings: Array2::zeros((nh, nk)),
    };
    let mut hidden_residuals = Array2::zeros((n_points, nh));
    for (mu, (residual, hidden, class_coupling)) in per_point.iter().enumerate() {
        grad.class_bias += residual;
        grad.hidden_bias += hidden;
        grad.class_couplings += class_coupling;
        hidden_residuals.slice_mut(s![mu, ..]).assign(hidden);
    }
    grad.input_couplings = batch.inputs.t().dot(&hidden_residuals);
    grad.class_bias *= inv;
    grad.hidden_bias *= inv;
    grad.input_couplings *= inv;
    grad.class_couplings *= inv;
    Ok(grad)
}
