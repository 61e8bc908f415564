//! Initialization, contrastive divergence, Adam/AdaMax, and the epoch loop.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::params::ParamBlocks;
use crate::rbm::{positive_phase, RbmGradient, RbmParams, SpinDataset};
use crate::sampler::{sample_h_unchecked, sample_v_unchecked, RngStream};
use crate::special::HiddenLevels;

/// Standard deviation of the Gaussian used for generator biases.
pub const GENERATOR_BIAS_SD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RbmShape {
    pub n_visible: usize,
    pub n_hidden: usize,
    pub levels: HiddenLevels,
}

/// Half-width of the Xavier uniform range, `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn xavier_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let r = xavier_bound(rows, cols);
    let dist = Uniform::new_inclusive(-r, r).expect("finite bound");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

fn check_shape(shape: &RbmShape) -> Result<()> {
    if shape.n_visible == 0 || shape.n_hidden == 0 {
        return Err(Error::InvalidConfig("layer sizes must be positive".into()));
    }
    Ok(())
}

/// Random generator model: Gaussian(0, 0.1²) biases, Xavier couplings.
pub fn init_generative<R: Rng + ?Sized>(shape: RbmShape, rng: &mut R) -> Result<RbmParams> {
    check_shape(&shape)?;
    let normal = Normal::new(0.0, GENERATOR_BIAS_SD).expect("valid sd");
    let b = Array1::from_shape_fn(shape.n_visible, |_| normal.sample(rng));
    let c = Array1::from_shape_fn(shape.n_hidden, |_| normal.sample(rng));
    let w = xavier_matrix(shape.n_visible, shape.n_hidden, rng);
    RbmParams::new(b, c, w, shape.levels)
}

/// Trainee start point: zero biases, Xavier couplings.
pub fn init_trainee<R: Rng + ?Sized>(shape: RbmShape, rng: &mut R) -> Result<RbmParams> {
    check_shape(&shape)?;
    let w = xavier_matrix(shape.n_visible, shape.n_hidden, rng);
    RbmParams::new(Array1::zeros(shape.n_visible), Array1::zeros(shape.n_hidden), w, shape.levels)
}

/// CD-k estimate of the log-likelihood gradient.
///
/// Each chain starts at a data point; after `k` sweeps the hidden layer of the
/// end point is marginalized through `psi` rather than sampled.
pub fn cd_gradient<R: Rng + ?Sized>(
    params: &RbmParams,
    batch: &SpinDataset,
    k: usize,
    rng: &mut R,
) -> Result<RbmGradient> {
    if k == 0 {
        return Err(Error::InvalidConfig("CD order k must be at least 1".into()));
    }
    check_len("batch visible dimension", params.n_visible(), batch.n_visible())?;
    let mut chains = batch.points().clone();
    for mut v in chains.rows_mut() {
        let mut state = v.to_owned();
        for _ in 0..k {
            let h = sample_h_unchecked(params, state.view(), rng);
            state = sample_v_unchecked(params, h.view(), rng);
        }
        v.assign(&state);
    }
    let mut grad = positive_phase(params, batch.points().rows());
    let negative = positive_phase(params, chains.rows());
    grad.visible_bias -= &negative.visible_bias;
    grad.hidden_bias -= &negative.hidden_bias;
    grad.couplings -= &negative.couplings;
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AdaMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            step_size: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn adamax() -> Self {
        Self {
            kind: OptimizerKind::AdaMax,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.step_size > 0.0
            && self.step_size.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid optimizer hyperparameters {self:?}")))
        }
    }
}

/// Adam / AdaMax state: step counter plus per-coordinate accumulators.
///
/// Updates are gradient *ascent*: the log-likelihood is maximized.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    /// Second moment (Adam) or exponentially weighted infinity norm (AdaMax).
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new<P: ParamBlocks + ?Sized>(config: OptimizerConfig, params: &P) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = params.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        Ok(Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// Applies one update. On a non-finite gradient nothing is modified.
    pub fn step<P, G>(&mut self, params: &mut P, grad: &G) -> Result<()>
    where
        P: ParamBlocks + ?Sized,
        G: ParamBlocks + ?Sized,
    {
        let grad_blocks = grad.blocks();
        check_len("gradient block count", self.first.len(), grad_blocks.len())?;
        for (b, (g, m)) in grad_blocks.iter().zip(&self.first).enumerate() {
            check_len("gradient block length", m.len(), g.len())?;
            if let Some(index) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { block: b, index });
            }
        }
        let mut param_blocks = params.blocks_mut();
        check_len("parameter block count", self.first.len(), param_blocks.len())?;
        for (p, m) in param_blocks.iter().zip(&self.first) {
            check_len("parameter block length", m.len(), p.len())?;
        }

        self.step += 1;
        let OptimizerConfig {
            kind,
            step_size,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let first_correction = 1.0 - beta1.powi(t);
        let second_correction = 1.0 - beta2.powi(t);

        for (((p, g), m), u) in param_blocks
            .iter_mut()
            .zip(&grad_blocks)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                match kind {
                    OptimizerKind::Adam => {
                        u[i] = beta2 * u[i] + (1.0 - beta2) * gi * gi;
                        let m_hat = m[i] / first_correction;
                        let u_hat = u[i] / second_correction;
                        p[i] += step_size * m_hat / (u_hat.sqrt() + epsilon);
                    }
                    OptimizerKind::AdaMax => {
                        u[i] = (beta2 * u[i]).max(gi.abs());
                        // u == 0 means every gradient so far was zero, hence m == 0.
                        if u[i] > 0.0 {
                            p[i] += (step_size / first_correction) * m[i] / u[i];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Mini-batch size; 0 means full batch.
    pub batch_size: usize,
    pub cd_steps: usize,
    /// Supplied at run time (CLI flag or experiment seed tree), never read
    /// from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            epochs: 1000,
            batch_size: 0,
            cd_steps: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.cd_steps == 0 {
            return Err(Error::InvalidConfig("cd_steps must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    /// Optimizer steps per epoch for `n` training points.
    pub fn updates_per_epoch(&self, n: usize) -> usize {
        if self.batch_size == 0 || self.batch_size >= n {
            1
        } else {
            n.div_ceil(self.batch_size)
        }
    }
}

/// Named values reported by an observer after one epoch.
pub type Observation = Vec<(String, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub values: Observation,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    pub params: P,
    pub history: Vec<EpochRecord>,
    pub updates: u64,
}

/// Shared epoch loop: one shuffle per epoch (skipped for full batch), then
/// one optimizer step per mini-batch. The observer runs after every epoch
/// with the 1-based epoch index.
pub fn run_epochs<P, G, F, O>(
    mut params: P,
    n_points: usize,
    cfg: &TrainConfig,
    mut batch_gradient: F,
    mut observer: O,
) -> Result<TrainOutcome<P>>
where
    P: ParamBlocks,
    G: ParamBlocks,
    F: FnMut(&P, &[usize], &mut RngStream) -> Result<G>,
    O: FnMut(usize, &P) -> Result<Observation>,
{
    cfg.validate()?;
    if n_points == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = RngStream::new(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, &params)?;
    let mut order: Vec<usize> = (0..n_points).collect();
    let batch = match cfg.batch_size {
        0 => n_points,
        b => b.min(n_points),
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if batch < n_points {
            order.shuffle(&mut rng);
        }
        for indices in order.chunks(batch) {
            let grad = batch_gradient(&params, indices, &mut rng)?;
            optimizer.step(&mut params, &grad)?;
        }
        let values = observer(epoch, &params)?;
        history.push(EpochRecord { epoch, values });
    }
    Ok(TrainOutcome {
        params,
        history,
        updates: optimizer.step_count(),
    })
}

/// CD-k training of an RBM on `data`.
pub fn train<O>(model: RbmParams, data: &SpinDataset, cfg: &TrainConfig, observer: O) -> Result<TrainOutcome<RbmParams>>
where
    O: FnMut(usize, &RbmParams) -> Result<Observation>,
{
    check_len("dataset visible dimension", model.n_visible(), data.n_visible())?;
    let k = cfg.cd_steps;
    let full = data.n_points();
    run_epochs(
        model,
        data.n_points(),
        cfg,
        |params, indices, rng| {
            if indices.len() == full {
                cd_gradient(params, data, k, rng)
            } else {
                cd_gradient(params, &data.select(indices)?, k, rng)
            }
        },
        observer,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::exact_gradient;
    use ndarray::arr1;

    fn fin(s: u32) -> HiddenLevels {
        HiddenLevels::finite(s).unwrap()
    }

    struct Scalar(Vec<f64>);

    impl ParamBlocks for Scalar {
        fn blocks(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn xavier_bound_for_eight_by_four() {
        assert!((xavier_bound(8, 4) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn initializers_respect_support_and_zero_biases() {
        let shape = RbmShape {
            n_visible: 8,
            n_hidden: 4,
            levels: fin(1),
        };
        let r = xavier_bound(8, 4);
        let mut rng = RngStream::new(1);
        let gen = init_generative(shape, &mut rng).unwrap();
        assert!(gen.couplings().iter().all(|w| w.abs() <= r));
        let trainee = init_trainee(shape, &mut rng).unwrap();
        assert!(trainee.visible_bias().iter().all(|&b| b == 0.0));
        assert!(trainee.hidden_bias().iter().all(|&c| c == 0.0));
        assert!(trainee.couplings().iter().all(|w| w.abs() <= r));
        let again = init_trainee(shape, &mut RngStream::new(77)).unwrap();
        assert_eq!(again, init_trainee(shape, &mut RngStream::new(77)).unwrap());
    }

    #[test]
    fn generator_bias_spread() {
        // 99_999 visible + 1 hidden = 1e5 bias draws
        let shape = RbmShape {
            n_visible: 99_999,
            n_hidden: 1,
            levels: fin(1),
        };
        let gen = init_generative(shape, &mut RngStream::new(2)).unwrap();
        let biases: Vec<f64> = gen.visible_bias().iter().chain(gen.hidden_bias().iter()).copied().collect();
        let n = biases.len() as f64;
        let mean = biases.iter().sum::<f64>() / n;
        let sd = (biases.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        // sd of the sample sd is about sigma / sqrt(2n)
        assert!((sd - GENERATOR_BIAS_SD).abs() < 3.0 * GENERATOR_BIAS_SD / (2.0 * n).sqrt());
    }

    #[test]
    fn first_adam_step_is_signed_step_size() {
        for g in [-3.0, 0.02, 7.5] {
            let mut p = Scalar(vec![1.0]);
            let mut opt = Optimizer::new(OptimizerConfig::default(), &p).unwrap();
            opt.step(&mut p, &Scalar(vec![g])).unwrap();
            assert!((p.0[0] - 1.0 - 0.001 * g.signum()).abs() < 1e-9);
            assert_eq!(opt.step_count(), 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        for cfg in [OptimizerConfig::default(), OptimizerConfig::adamax()] {
            let mut p = Scalar(vec![0.3, -2.0]);
            let mut opt = Optimizer::new(cfg, &p).unwrap();
            for _ in 0..100 {
                opt.step(&mut p, &Scalar(vec![0.0, 0.0])).unwrap();
            }
            assert_eq!(p.0, vec![0.3, -2.0]);
            assert_eq!(opt.step_count(), 100);
        }
    }

    #[test]
    fn adamax_infinity_norm_tracks_constant_gradient() {
        let mut p = Scalar(vec![0.0]);
        let mut opt = Optimizer::new(OptimizerConfig::adamax(), &p).unwrap();
        let mut prev = 0.0;
        for t in 1..=50 {
            opt.step(&mut p, &Scalar(vec![0.4])).unwrap();
            assert_eq!(opt.second_moments()[0][0], 0.4);
            let delta = p.0[0] - prev;
            assert!(delta <= 0.001 / (1.0 - 0.9f64.powi(t)) + 1e-15);
            prev = p.0[0];
        }
    }

    #[test]
    fn adam_update_magnitude_bounded() {
        let mut p = Scalar(vec![0.0; 3]);
        let mut opt = Optimizer::new(OptimizerConfig::default(), &p).unwrap();
        let mut rng = RngStream::new(3);
        let (b1, b2): (f64, f64) = (0.9, 0.999);
        for t in 1..=200 {
            let before = p.0.clone();
            let g: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            opt.step(&mut p, &Scalar(g)).unwrap();
            // Cauchy-Schwarz on m_t against u_t.
            let ratio_sum: f64 = (0..t).map(|j| (b1 * b1 / b2).powi(j)).sum();
            let bound = 0.001 * (1.0 - b1) * ratio_sum.sqrt() / (1.0 - b2).sqrt() * (1.0 - b2.powi(t)).sqrt()
                / (1.0 - b1.powi(t));
            for (a, b) in p.0.iter().zip(&before) {
                assert!((a - b).abs() <= bound * (1.0 + 1e-9), "t={t}");
            }
            assert!(opt.second_moments()[0].iter().all(|&u| u >= 0.0));
        }
    }

    #[test]
    fn non_finite_gradient_preserves_state() {
        let mut p = Scalar(vec![1.0, 2.0]);
        let mut opt = Optimizer::new(OptimizerConfig::default(), &p).unwrap();
        opt.step(&mut p, &Scalar(vec![0.1, 0.1])).unwrap();
        let (snapshot, moments) = (p.0.clone(), opt.first_moments().to_vec());
        let err = opt.step(&mut p, &Scalar(vec![0.1, f64::NAN])).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { block: 0, index: 1 }));
        assert_eq!(p.0, snapshot);
        assert_eq!(opt.first_moments(), moments.as_slice());
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn cd_positive_phase_is_exact_data_term() {
        // With zero couplings and biases the negative phase has mean zero,
        // and the positive phase is deterministic.
        let params = RbmParams::zeros(3, 2, fin(2)).unwrap();
        let data = SpinDataset::from_rows(&[vec![1.0, -1.0, 1.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let pos = positive_phase(&params, data.points().rows());
        assert_eq!(pos.visible_bias, arr1(&[1.0, 0.0, 1.0]));
        assert!(pos.hidden_bias.iter().all(|&x| x == 0.0));
        assert!(cd_gradient(&params, &data, 0, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn cd_with_long_chains_tracks_exact_gradient() {
        let mut rng = RngStream::new(4);
        let shape = RbmShape {
            n_visible: 4,
            n_hidden: 2,
            levels: fin(2),
        };
        let params = init_generative(shape, &mut rng).unwrap();
        let data = SpinDataset::from_rows(&[
            vec![1.0, 1.0, -1.0, 1.0],
            vec![-1.0, 1.0, -1.0, -1.0],
            vec![1.0, -1.0, 1.0, 1.0],
        ])
        .unwrap();
        let exact = exact_gradient(&params, &data).unwrap().to_flat();
        let draws = 2000;
        let mut mean = vec![0.0; exact.len()];
        for _ in 0..draws {
            let g = cd_gradient(&params, &data, 20, &mut rng).unwrap().to_flat();
            for (m, x) in mean.iter_mut().zip(g) {
                *m += x / f64::from(draws);
            }
        }
        for (m, e) in mean.iter().zip(&exact) {
            // per-draw sd of each coordinate is at most 2 (|v| <= 1, |psi| < 1 each side)
            assert!((m - e).abs() < 4.0 * 2.0 / f64::from(draws).sqrt() / 3.0_f64.sqrt());
        }
    }

    #[test]
    fn epoch_loop_contract() {
        let data = SpinDataset::from_rows(&[vec![1.0, -1.0], vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let model = RbmParams::zeros(2, 2, fin(1)).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(model.clone(), &data, &cfg, |_, _| Ok(vec![])).is_err());

        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        let out = train(model.clone(), &data, &cfg, |epoch, _| {
            seen.push(epoch);
            Ok(vec![("x".into(), 1.0)])
        })
        .unwrap();
        assert_eq!(out.updates, 1);
        assert_eq!(seen, vec![1]);

        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        assert_eq!(train(model, &data, &cfg, |_, _| Ok(vec![])).unwrap().updates, 6);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let mut rng = RngStream::new(8);
        let shape = RbmShape {
            n_visible: 5,
            n_hidden: 3,
            levels: HiddenLevels::Infinite,
        };
        let gen = init_generative(shape, &mut rng).unwrap();
        let data = crate::sampler::generate_dataset(&gen, 40, 10, 2, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 25,
            batch_size: 16,
            seed: 99,
            ..TrainConfig::default()
        };
        let a = train(gen.clone(), &data, &cfg, |_, _| Ok(vec![])).unwrap().params;
        let b = train(gen, &data, &cfg, |_, _| Ok(vec![])).unwrap().params;
        assert_eq!(a.to_flat(), b.to_flat());
    }
}
