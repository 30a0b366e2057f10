use approx::assert_relative_eq;
use online_fcr::metrics::*;
use online_fcr::Error;

fn rec(index: u64, selected: bool, miscovered: bool) -> StepRecord {
    StepRecord {
        index,
        selected,
        miscovered: if selected { Some(miscovered) } else { None },
        level: 0.01,
        sign_decision: 0,
    }
}

#[test]
fn fcp_basic_cases() {
    let none: Vec<_> = (1..=5).map(|i| rec(i, false, false)).collect();
    assert_eq!(fcp(&none, 5).unwrap(), 0.0);
    let covered: Vec<_> = (1..=4).map(|i| rec(i, true, false)).collect();
    assert_eq!(fcp(&covered, 4).unwrap(), 0.0);
    let one_bad: Vec<_> = (1..=4).map(|i| rec(i, true, i == 2)).collect();
    assert_eq!(fcp(&one_bad, 4).unwrap(), 0.25);
    assert_eq!(fcp(&one_bad, 1).unwrap(), 0.0);
}

#[test]
fn fcp_requires_oracle_flags() {
    let mut r = rec(3, true, false);
    r.miscovered = None;
    assert!(matches!(fcp(&[r], 3), Err(Error::IncompleteOracle { index: 3 })));
    // records past the horizon are ignored
    assert_eq!(fcp(&[r], 2).unwrap(), 0.0);
}

#[test]
fn estimated_fcp_cases() {
    assert_relative_eq!(
        estimated_fcp(&[0.01, 0.02, 0.03], &[true, false, true]).unwrap(),
        0.03,
        max_relative = 1e-15
    );
    assert_eq!(estimated_fcp(&[0.05], &[false]).unwrap(), 0.05);
    assert!(estimated_fcp(&[0.0], &[false]).is_err());
    assert!(estimated_fcp(&[0.1, 0.2], &[false]).is_err());
}

#[test]
fn mem_weighted_cases() {
    let recs = vec![rec(1, false, false), rec(2, true, true), rec(3, true, false)];
    assert_relative_eq!(
        mem_weighted_fcp(&recs, 0.5, 3).unwrap(),
        1.0 / 3.0,
        max_relative = 1e-15
    );
    let single = vec![rec(1, false, false), rec(2, true, true)];
    assert_eq!(mem_weighted_fcp(&single, 0.3, 2).unwrap(), 1.0);
    assert_eq!(
        mem_weighted_fcp(&recs, 1.0, 3).unwrap().to_bits(),
        fcp(&recs, 3).unwrap().to_bits()
    );
    assert!(mem_weighted_fcp(&recs, 0.0, 3).is_err());
}

#[test]
fn sign_errors_use_weak_convention() {
    let mk = |d: i8| StepRecord {
        sign_decision: d,
        ..rec(1, d != 0, false)
    };
    assert_eq!(sign_error_counts(&[mk(0), mk(0)], &[1.0, -1.0]).unwrap(), (0, 0));
    assert_eq!(sign_error_counts(&[mk(1), mk(1)], &[2.0, -1.0]).unwrap(), (1, 2));
    assert_eq!(sign_error_counts(&[mk(-1), mk(1)], &[0.0, 1.0]).unwrap(), (0, 2));
}

#[test]
fn record_validation() {
    let mut r = rec(1, false, false);
    r.sign_decision = 1;
    assert!(r.validate().is_err());
    r.sign_decision = 0;
    r.miscovered = Some(true);
    assert!(r.validate().is_err());
    assert!(rec(1, true, true).validate().is_ok());
}

#[test]
fn aggregate_means_and_ratios() {
    let a = RateReport::from_counts(10, 0, 0.5, 0, 0, 0, 0);
    let b = RateReport::from_counts(10, 2, 0.5, 0, 0, 0, 0);
    let agg = aggregate_rates(&[a, b]).unwrap();
    assert_relative_eq!(agg.fcr.value, 0.1, max_relative = 1e-15);
    let c = RateReport::from_counts(10, 1, 0.5, 0, 0, 0, 0);
    let d = RateReport::from_counts(10, 3, 0.5, 0, 0, 0, 0);
    let agg = aggregate_rates(&[c, d]).unwrap();
    assert_relative_eq!(agg.mfcr.value, 0.2, max_relative = 1e-15);
    assert!(aggregate_rates(&[]).is_err());
}

#[test]
fn pfcr_conditions_on_a_selection() {
    let empty = RateReport::from_counts(0, 0, 0.01, 0, 0, 0, 0);
    let half = RateReport::from_counts(2, 1, 0.1, 0, 0, 0, 0);
    let agg = aggregate_rates(&[empty, half]).unwrap();
    assert_eq!(agg.fcr.value, 0.25);
    assert_eq!(agg.pfcr.value, 0.5);
    assert_eq!(agg.n_reps_with_selection, 1);
}
