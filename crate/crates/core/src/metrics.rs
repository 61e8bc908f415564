use serde::{Deserialize, Serialize};

use crate::drbm::{predict_batch, DrbmParams, LabeledDataset};
use crate::error::{check_len, Error, Result};
use crate::rbm::{log_likelihood, log_marginals_exact, RbmParams, SpinDataset};

/// One row of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub config_id: String,
}

/// Per-visible-unit KL divergence from `gen` to `trained`, by exact
/// enumeration. The hidden layers of the two models may differ.
pub fn kld(gen: &RbmParams, trained: &RbmParams) -> Result<f64> {
    check_len("visible layer size", gen.n_visible(), trained.n_visible())?;
    let p = log_marginals_exact(gen)?;
    let q = log_marginals_exact(trained)?;
    let total: f64 = p.iter().zip(&q).map(|(lp, lq)| lp.exp() * (lp - lq)).sum();
    Ok(total / gen.n_visible() as f64)
}

/// Log-likelihood divided by `|V|`, the scale used for reporting curves.
pub fn log_likelihood_per_visible(params: &RbmParams, data: &SpinDataset) -> Result<f64> {
    Ok(log_likelihood(params, data)? / params.n_visible() as f64)
}

pub fn count_errors(params: &DrbmParams, data: &LabeledDataset) -> Result<usize> {
    check_len("dataset input dimension", params.n_inputs(), data.n_inputs())?;
    let predictions = predict_batch(params, data.inputs().view())?;
    Ok(predictions.iter().zip(data.labels()).filter(|(p, t)| p != t).count())
}

/// Fraction of points whose predicted class differs from the label.
pub fn misclassification_rate(params: &DrbmParams, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(count_errors(params, data)? as f64 / data.len() as f64)
}

/// Sample mean and standard error of the mean (0 for a single value).
pub fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::HiddenLevels;
    use crate::trainer::{init_generative, RbmShape};
    use crate::RngStream;
    use ndarray::Array2;

    fn shape(nh: usize, levels: HiddenLevels) -> RbmShape {
        RbmShape {
            n_visible: 5,
            n_hidden: nh,
            levels,
        }
    }

    #[test]
    fn kld_zero_at_identity_and_nonnegative() {
        let mut rng = RngStream::new(1);
        let a = init_generative(shape(3, HiddenLevels::BINARY), &mut rng).unwrap();
        assert!(kld(&a, &a).unwrap().abs() < 1e-12);
        let b = init_generative(shape(6, HiddenLevels::Infinite), &mut rng).unwrap();
        assert!(kld(&a, &b).unwrap() > 0.0);
        assert!((kld(&a, &b).unwrap() - kld(&b, &a).unwrap()).abs() > 1e-6);
    }

    #[test]
    fn kld_from_uniform_generator() {
        let mut rng = RngStream::new(2);
        let uniform = RbmParams::zeros(5, 2, HiddenLevels::BINARY).unwrap();
        let trained = init_generative(shape(4, HiddenLevels::finite(3).unwrap()), &mut rng).unwrap();
        let lq = log_marginals_exact(&trained).unwrap();
        let mean_lq = lq.iter().sum::<f64>() / lq.len() as f64;
        let expected = (-5.0 * std::f64::consts::LN_2 - mean_lq) / 5.0;
        assert!((kld(&uniform, &trained).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn kld_rejects_mismatched_layers() {
        let a = RbmParams::zeros(3, 2, HiddenLevels::BINARY).unwrap();
        let b = RbmParams::zeros(4, 2, HiddenLevels::BINARY).unwrap();
        assert!(matches!(kld(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn error_rates() {
        let zero = DrbmParams::zeros(2, 3, 4, HiddenLevels::Infinite).unwrap();
        let labels: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let data = LabeledDataset::new(Array2::zeros((12, 2)), labels, 4).unwrap();
        assert_eq!(misclassification_rate(&zero, &data).unwrap(), 0.75);

        let all_zero = LabeledDataset::new(Array2::zeros((5, 2)), vec![0; 5], 4).unwrap();
        assert_eq!(misclassification_rate(&zero, &all_zero).unwrap(), 0.0);
        let all_three = LabeledDataset::new(Array2::zeros((5, 2)), vec![3; 5], 4).unwrap();
        assert_eq!(misclassification_rate(&zero, &all_three).unwrap(), 1.0);
    }

    #[test]
    fn standard_error() {
        let (m, se) = mean_and_standard_error(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_standard_error(&[7.0]), (7.0, 0.0));
    }
}
