use approx::assert_abs_diff_eq;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

use mvrbm::data_io::{model_from_str, model_to_string, IdxTensor, Model};
use mvrbm::drbm::{class_log_probs, DrbmParams};
use mvrbm::metrics::kld;
use mvrbm::rbm::log_marginals_exact;
use mvrbm::special::{log_phi, psi};
use mvrbm::{HiddenLevels, RbmParams, RngStream};

fn levels() -> impl Strategy<Value = HiddenLevels> {
    prop_oneof![
        (1u32..=12).prop_map(|s| HiddenLevels::finite(s).unwrap()),
        Just(HiddenLevels::Infinite),
    ]
}

fn rbm(nv: usize, nh: usize) -> impl Strategy<Value = RbmParams> {
    (
        prop::collection::vec(-2.0..2.0f64, nv),
        prop::collection::vec(-2.0..2.0f64, nh),
        prop::collection::vec(-1.5..1.5f64, nv * nh),
        levels(),
    )
        .prop_map(move |(b, c, w, l)| {
            RbmParams::new(Array1::from(b), Array1::from(c), Array2::from_shape_vec((nv, nh), w).unwrap(), l).unwrap()
        })
}

proptest! {
    #[test]
    fn psi_is_odd_bounded_and_increasing(l in levels(), x in -60.0..60.0f64, dx in 1e-3..1.0f64) {
        let p = psi(l, x).unwrap();
        prop_assert!(p.abs() <= 1.0);
        prop_assert_eq!(psi(l, -x).unwrap(), -p);
        prop_assert!(psi(l, x + dx).unwrap() >= p);
    }

    #[test]
    fn log_phi_is_even_and_convex_with_psi_as_slope(l in levels(), x in -20.0..20.0f64) {
        let f = |t: f64| log_phi(l, t).unwrap();
        prop_assert_eq!(f(-x), f(x));
        let h = 1e-4;
        let slope = (f(x + h) - f(x - h)) / (2.0 * h);
        prop_assert!((slope - psi(l, x).unwrap()).abs() < 1e-7);
        prop_assert!(f(x + h) + f(x - h) - 2.0 * f(x) >= -1e-12);
    }

    #[test]
    fn marginals_are_normalized(p in (1usize..=6, 1usize..=4).prop_flat_map(|(nv, nh)| rbm(nv, nh))) {
        let total: f64 = log_marginals_exact(&p).unwrap().iter().map(|l| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn global_spin_flip_is_a_symmetry(p in (1usize..=5, 1usize..=3).prop_flat_map(|(nv, nh)| rbm(nv, nh))) {
        // Negating every bias and flipping every visible spin leaves the
        // energy unchanged because the hidden levels are symmetric about 0.
        let flipped = RbmParams::new(
            -p.visible_bias(),
            -p.hidden_bias(),
            p.couplings().clone(),
            p.levels(),
        )
        .unwrap();
        let a = log_marginals_exact(&p).unwrap();
        let b = log_marginals_exact(&flipped).unwrap();
        let mask = (1usize << p.n_visible()) - 1;
        for (i, la) in a.iter().enumerate() {
            prop_assert!((la - b[i ^ mask]).abs() < 1e-10);
        }
    }

    #[test]
    fn kld_is_non_negative_and_zero_on_itself(
        (a, b) in (1usize..=5).prop_flat_map(|nv| (rbm(nv, 2), rbm(nv, 3)))
    ) {
        prop_assert!(kld(&a, &b).unwrap() >= -1e-12);
        prop_assert_eq!(kld(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn rbm_model_text_round_trips_exactly(p in (1usize..=4, 1usize..=4).prop_flat_map(|(nv, nh)| rbm(nv, nh))) {
        let model = Model::Rbm(p);
        prop_assert_eq!(model_from_str(&model_to_string(&model)).unwrap(), model);
    }

    #[test]
    fn idx_tensors_round_trip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let payload: Vec<u8> = (0..dims.iter().product::<usize>()).map(|_| rng.random()).collect();
        let tensor = IdxTensor::new(dims, payload).unwrap();
        let bytes = tensor.to_bytes();
        let back = IdxTensor::parse(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, tensor);
    }
}

#[test]
fn drbm_model_round_trip_and_class_probabilities() {
    let mut rng = RngStream::new(11);
    for levels in [HiddenLevels::finite(1).unwrap(), HiddenLevels::finite(5).unwrap(), HiddenLevels::Infinite] {
        let p = DrbmParams::init_xavier(6, 4, 3, levels, &mut rng).unwrap();
        let model = Model::Drbm(p.clone());
        assert_eq!(model_from_str(&model_to_string(&model)).unwrap(), model);
        let x = Array1::from_shape_fn(6, |_| rng.random::<f64>());
        let total: f64 = class_log_probs(&p, x.view()).unwrap().iter().map(|l| l.exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn rng_streams_are_reproducible_and_split_independently() {
    let draw = |mut r: RngStream| (0..8).map(|_| r.random::<u64>()).collect::<Vec<_>>();
    let root = RngStream::new(99);
    assert_eq!(draw(root.split(3)), draw(RngStream::new(99).split(3)));
    assert_ne!(draw(root.split(3)), draw(root.split(4)));
    assert_ne!(root.child_seed(0), root.child_seed(1));
}
