use online_fcr::Error;
use online_fcr::{conformal::*, interval::*, scheduler::*};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn line_data(n: usize) -> TrainingSet {
    let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
    let ys = xs.iter().map(|x| 2.0 * x[0] + ((x[0] * 37.0).sin() * 0.3)).collect();
    TrainingSet::new(xs, ys).unwrap()
}

#[test]
fn csv_ingestion() {
    let t = TrainingSet::from_csv("a,b,y\n1,2,3\n4,5,6\n".as_bytes()).unwrap();
    assert_eq!(t.dim(), 2);
    assert_eq!(t.ys(), &[3.0, 6.0]);
    let err = TrainingSet::from_csv("a,y\n1,2\n1,x\n".as_bytes()).unwrap_err();
    assert!(matches!(err, Error::MalformedInput { line: 3, .. }));
    assert!(TrainingSet::from_csv("a,y\n".as_bytes()).is_err());
}

#[test]
fn split_quantile_index() {
    let t = line_data(19);
    let cfg = ConformalConfig {
        predictor: PredictorSpec::RidgeLinear { lambda: 0.0 },
        y_grid: None,
        mode: ConformalMode::Split {
            train_fraction: 10.0 / 19.0,
        },
    };
    let s = SplitConformal::fit(&t, &cfg).unwrap();
    assert_eq!(s.n_cal(), 9);
    assert_eq!(s.quantile_index(0.1), 9);
    assert!(matches!(
        s.radius(0.05),
        Err(Error::CalibrationTooSmall { index: 10, n_cal: 9 })
    ));
    let a = s.interval(&[0.2], 0.2).unwrap().interval;
    let b = s.interval(&[0.9], 0.2).unwrap().interval;
    assert!((a.width() - b.width()).abs() < 1e-12);
    assert_eq!(
        s.interval_or_real_line(&[0.2], 0.01).unwrap().interval,
        Interval::real_line()
    );
}

#[test]
fn single_point_spans_grid() {
    let t = TrainingSet::new(vec![vec![0.0]], vec![1.0]).unwrap();
    let cfg = ConformalConfig {
        predictor: PredictorSpec::KNearestMean { k: 1 },
        y_grid: Some(YGrid {
            lo: -5.0,
            hi: 5.0,
            steps: 11,
        }),
        mode: ConformalMode::Full,
    };
    let pi = full_conformal_interval(&t, &[3.0], 0.3, &cfg).unwrap();
    assert_eq!(pi.interval, Interval::closed(-5.0, 5.0));
    assert!(pi.grid_edge && !pi.hull);
}

#[test]
fn full_conformal_is_order_free() {
    let t = line_data(15);
    let mut xs = t.xs().to_vec();
    let mut ys = t.ys().to_vec();
    xs.reverse();
    ys.reverse();
    let r = TrainingSet::new(xs, ys).unwrap();
    let cfg = ConformalConfig {
        predictor: PredictorSpec::RidgeLinear { lambda: 0.1 },
        y_grid: Some(YGrid {
            lo: -3.0,
            hi: 5.0,
            steps: 801,
        }),
        mode: ConformalMode::Full,
    };
    let a = full_conformal_interval(&t, &[0.5], 0.2, &cfg).unwrap();
    let b = full_conformal_interval(&r, &[0.5], 0.2, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.interval.contains(1.0));
}

#[test]
fn selection_rules() {
    let i = Interval::closed(1.0, 2.0);
    assert!(IntervalSelection::WidthBudget { max_width: 1.0 }.selects(&[0.0], &i));
    assert!(!IntervalSelection::WidthBudget { max_width: 0.5 }.selects(&[0.0], &i));
    assert!(IntervalSelection::ExcludesValue { value: 0.0 }.selects(&[0.0], &i));
    let nb = IntervalSelection::Neighborhood {
        center: vec![1.0],
        radius: 0.5,
    };
    assert!(nb.selects(&[1.4], &i) && !nb.selects(&[1.6], &i));
    assert!(nb.validate(2).is_err());
}

#[test]
fn stream_without_selection_spends_wealth_only() {
    let t = line_data(40);
    let cfg = ConformalConfig {
        predictor: PredictorSpec::RidgeLinear { lambda: 0.0 },
        y_grid: None,
        mode: ConformalMode::Split { train_fraction: 0.5 },
    };
    let test: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0]).collect();
    let log = selective_conformal_stream(
        &t,
        &test,
        &IntervalSelection::WidthBudget { max_width: 0.0 },
        &cfg,
        &StreamSettings::new(0.1, 100),
    )
    .unwrap();
    assert!(log.outcomes.iter().all(|o| !o.selected && o.interval.is_none()));
    let gamma = GammaSequence::lord_default(100);
    for (k, o) in log.outcomes.iter().enumerate() {
        assert_eq!(o.level, gamma.weight(k as i64 + 1) * 0.05);
    }
}

fn noisy_line(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
    let ys = xs.iter().map(|x| x[0] + rng.sample::<f64, _>(StandardNormal)).collect();
    (xs, ys)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn permuting_training_data_leaves_full_conformal_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<Vec<f64>> = (0..25)
        .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| x[0] - x[1] + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let base = TrainingSet::new(xs.clone(), ys.clone()).unwrap();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(&mut rng);
    let shuffled = TrainingSet::new(
        order.iter().map(|&i| xs[i].clone()).collect(),
        order.iter().map(|&i| ys[i]).collect(),
    )
    .unwrap();
    for predictor in [
        PredictorSpec::KNearestMean { k: 4 },
        PredictorSpec::RidgeLinear { lambda: 0.2 },
    ] {
        let cfg = ConformalConfig {
            predictor,
            y_grid: Some(YGrid::around(&ys, 301)),
            mode: ConformalMode::Full,
        };
        for x in [[0.2, 0.7], [0.5, 0.5], [0.9, 0.1]] {
            let a = full_conformal_interval(&base, &x, 0.1, &cfg).unwrap();
            let b = full_conformal_interval(&shuffled, &x, 0.1, &cfg).unwrap();
            assert_eq!(a, b, "{predictor:?} at {x:?}");
        }
    }
}

#[test]
fn constant_predictor_on_symmetric_data_gives_symmetric_interval() {
    let ys = vec![-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0];
    let xs: Vec<Vec<f64>> = vec![vec![0.0]; ys.len()];
    let t = TrainingSet::new(xs, ys.clone()).unwrap();
    let grid = YGrid {
        lo: -10.0,
        hi: 10.0,
        steps: 2001,
    };
    let step = (grid.hi - grid.lo) / (grid.steps - 1) as f64;
    let cfg = ConformalConfig {
        // All covariates coincide and ties at the k-th distance are kept, so
        // every refit predicts the mean of all n + 1 responses.
        predictor: PredictorSpec::KNearestMean { k: ys.len() },
        y_grid: Some(grid),
        mode: ConformalMode::Full,
    };
    let pi = full_conformal_interval(&t, &[0.0], 0.25, &cfg).unwrap();
    let (lo, hi) = (pi.interval.lo().unwrap(), pi.interval.hi().unwrap());
    assert!((lo + hi).abs() <= step + 1e-12, "[{lo}, {hi}]");
    assert!(!pi.hull && !pi.grid_edge);
}

#[test]
fn split_width_is_constant_in_covariates() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (xs, ys) = noisy_line(&mut rng, 60);
    let t = TrainingSet::new(xs, ys).unwrap();
    let cfg = ConformalConfig {
        predictor: PredictorSpec::RidgeLinear { lambda: 0.0 },
        y_grid: None,
        mode: ConformalMode::Split { train_fraction: 0.5 },
    };
    let s = SplitConformal::fit(&t, &cfg).unwrap();
    let widths: Vec<f64> = [-1.0, 0.0, 0.3, 2.0]
        .iter()
        .map(|&x| s.interval(&[x], 0.2).unwrap().interval.width())
        .collect();
    assert!(widths.iter().all(|w| (w - widths[0]).abs() < 1e-12), "{widths:?}");
    assert!(matches!(
        s.interval(&[0.0], 1e-4),
        Err(Error::CalibrationTooSmall { .. })
    ));
    assert_eq!(
        s.interval_or_real_line(&[0.0], 1e-4).unwrap().interval,
        Interval::real_line()
    );
}

#[test]
fn selective_stream_respects_the_budget_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (xs, ys) = noisy_line(&mut rng, 400);
    let t = TrainingSet::new(xs, ys).unwrap();
    let (test, _) = noisy_line(&mut rng, 300);
    let cfg = ConformalConfig {
        predictor: PredictorSpec::KNearestMean { k: 10 },
        y_grid: None,
        mode: ConformalMode::Split { train_fraction: 0.5 },
    };
    for selection in [
        IntervalSelection::All,
        IntervalSelection::WidthBudget { max_width: 8.0 },
        IntervalSelection::ExcludesValue { value: 0.0 },
        IntervalSelection::Neighborhood {
            center: vec![0.5],
            radius: 0.1,
        },
    ] {
        let log = selective_conformal_stream(&t, &test, &selection, &cfg, &StreamSettings::new(0.1, 300)).unwrap();
        let (mut spent, mut selected) = (0.0, 0usize);
        for o in &log.outcomes {
            spent += o.level;
            selected += o.selected as usize;
            assert!(spent <= 0.1 * selected.max(1) as f64 + 1e-12, "{selection:?}");
            assert_eq!(o.selected, o.interval.is_some());
        }
    }
}

#[test]
fn rarer_neighbourhood_selection_widens_reported_intervals() {
    // A large calibration set so that small committed levels stay finite.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (xs, ys) = noisy_line(&mut rng, 60_000);
    let t = TrainingSet::new(xs, ys).unwrap();
    let cfg = ConformalConfig {
        predictor: PredictorSpec::RidgeLinear { lambda: 0.0 },
        y_grid: None,
        mode: ConformalMode::Split { train_fraction: 0.5 },
    };
    let medians: Vec<f64> = [0.2, 0.05, 0.0125]
        .iter()
        .map(|&radius| {
            let selection = IntervalSelection::Neighborhood {
                center: vec![0.5],
                radius,
            };
            let mut widths = Vec::new();
            for stream in 0..40u64 {
                let mut g = ChaCha8Rng::seed_from_u64(1000 + stream);
                let (test, _) = noisy_line(&mut g, 200);
                let log =
                    selective_conformal_stream(&t, &test, &selection, &cfg, &StreamSettings::new(0.1, 200)).unwrap();
                widths.extend(log.outcomes.iter().filter_map(|o| o.interval.map(|i| i.width())));
            }
            median(widths)
        })
        .collect();
    assert!(medians[0] < medians[1] && medians[1] < medians[2], "{medians:?}");
}
