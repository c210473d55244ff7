use proptest::prelude::*;
use rand::seq::SliceRandom;

use vslab::autodiff::{Tape, Tensor};
use vslab::covariance::{CovarianceModel, StationaryParams};
use vslab::grid::{Cell, GridField, ObservationMask};
use vslab::harness::{aggregate, table_markdown, MetricName, ModelName, ResultRow};
use vslab::kriging::{ok_predict_points, KrigingOptions};
use vslab::metrics::{mae, morans_i, rmse, SpatialWeights};
use vslab::model::{build_unet, UNetConfig};
use vslab::rng::rng_from_seed;

fn grid(h: usize, w: usize, v: Vec<f64>) -> GridField {
    GridField::new(h, w, v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rmse_bounds_mae(vals in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, any::<bool>()), 4..40)) {
        let n = vals.len();
        let p = grid(1, n, vals.iter().map(|v| v.0).collect());
        let t = grid(1, n, vals.iter().map(|v| v.1).collect());
        let mut bits: Vec<bool> = vals.iter().map(|v| v.2).collect();
        bits[0] = true;
        let m = ObservationMask::new(1, n, bits).unwrap();
        let (r, a) = (rmse(&p, &t, &m).unwrap(), mae(&p, &t, &m).unwrap());
        prop_assert!(a >= 0.0);
        prop_assert!(r >= a * (1.0 - 1e-12));
    }

    #[test]
    fn morans_i_affine_invariant(
        v in prop::collection::vec(-10.0f64..10.0, 16),
        a in 0.01f64..100.0,
        b in -100.0f64..100.0,
        queen in any::<bool>(),
    ) {
        let f = grid(4, 4, v.clone());
        prop_assume!(v.iter().any(|x| (x - v[0]).abs() > 1e-3));
        let w = if queen { SpatialWeights::queen() } else { SpatialWeights::rook() };
        let g = grid(4, 4, v.iter().map(|x| a * x + b).collect());
        let (i, j) = (morans_i(&f, &w).unwrap(), morans_i(&g, &w).unwrap());
        prop_assert!((i - j).abs() <= 1e-10, "{} vs {}", i, j);
    }

    #[test]
    fn kriging_ignores_observation_order(seed: u64, tau2 in prop_oneof![Just(0.0), 0.01f64..0.5]) {
        let mut rng = rng_from_seed(seed);
        use rand::Rng as _;
        let (h, w) = (6, 6);
        let mut cells: Vec<usize> = (0..h * w).collect();
        cells.shuffle(&mut rng);
        let obs: Vec<(Cell, f64)> = cells[..12]
            .iter()
            .map(|&i| (Cell::new(i / w, i % w), rng.random_range(-2.0..2.0)))
            .collect();
        let mut shuffled = obs.clone();
        shuffled.shuffle(&mut rng);
        let cov = CovarianceModel::ExponentialNugget(StationaryParams::new(1.0, 2.0).with_nugget(tau2));
        let o = KrigingOptions::default();
        let a = ok_predict_points(&obs, h, w, &cov, &o).unwrap().field;
        let b = ok_predict_points(&shuffled, h, w, &cov, &o).unwrap().field;
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn aggregation_ignores_row_order(values in prop::collection::vec(-5.0f64..5.0, 2..30), seed: u64) {
        let rows: Vec<ResultRow> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| ResultRow {
                model: if i % 2 == 0 { ModelName::Kriging } else { ModelName::MlVsl },
                metric: MetricName::Rmse,
                phi_fraction: 0.1,
                observed_fraction: if i % 3 == 0 { 0.2 } else { 0.5 },
                run: i,
                seed: i as u64,
                value: Some(v),
                error: None,
            })
            .collect();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng_from_seed(seed));
        prop_assert_eq!(
            table_markdown(&aggregate(&rows), "t"),
            table_markdown(&aggregate(&shuffled), "t")
        );
    }

    #[test]
    fn pconv_mask_only_grows(bits in prop::collection::vec(any::<bool>(), 36), k in prop_oneof![Just(1usize), Just(3), Just(5)]) {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 6, 6], vec![0.5; 36]).unwrap(), false).unwrap();
        let w = t.leaf(Tensor::new(vec![1, 1, k, k], vec![1.0; k * k]).unwrap(), false).unwrap();
        let b = t.leaf(Tensor::zeros(vec![1]), false).unwrap();
        let m = Tensor::new(vec![1, 6, 6], bits.iter().map(|&b| f64::from(b)).collect()).unwrap();
        let (_, nm) = t.pconv2d(x, &m, w, b).unwrap();
        for (a, b) in m.data.iter().zip(&nm.data) {
            prop_assert!(b >= a);
        }
    }
}

#[test]
fn one_observation_validates_every_cell() {
    for (h, w) in [(32, 32), (16, 16), (20, 12)] {
        for cell in [0, h * w - 1, (h / 2) * w + w / 3] {
            let cfg = UNetConfig {
                base_channels: 2,
                ..UNetConfig::ml_vsl()
            };
            let net = build_unet(&cfg, 1).unwrap();
            let mut m = vec![0.0; h * w];
            m[cell] = 1.0;
            let mask = Tensor::new(vec![1, h, w], m.clone()).unwrap();
            let input = Tensor::new(vec![1, h, w], m).unwrap();
            let mut tape = Tape::new();
            let params = net.leaves(&mut tape, false).unwrap();
            let (y, valid) = net
                .forward_masked(&mut tape, &params, &input, &mask)
                .unwrap();
            assert!(
                valid.data.iter().all(|&v| v == 1.0),
                "{h}x{w}, observed cell {cell}"
            );
            assert!(tape.value(y).data.iter().all(|v| v.is_finite()));
        }
    }
}
