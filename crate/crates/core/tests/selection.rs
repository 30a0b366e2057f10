use approx::assert_relative_eq;
use online_fcr::{interval::*, rules::*, scheduler::*, selection::*};
use online_fcr::{Error, Result};

fn sd(rule: MarginalRule) -> RuleSpec {
    RuleSpec::SignDetermining { rule, null_value: 0.0 }
}

#[test]
fn fixed_threshold_examples() {
    let spec = RuleSpec::FixedThreshold {
        threshold: 3.0,
        two_sided: false,
    };
    assert!(spec.decide(3.5, 0.01).unwrap().selected);
    assert!(!spec.decide(-3.5, 0.01).unwrap().selected);
    let two = RuleSpec::FixedThreshold {
        threshold: 3.0,
        two_sided: true,
    };
    assert!(two.decide(-3.5, 0.01).unwrap().selected);
    assert!(!two.decide(2.0, 0.01).unwrap().selected);
}

#[test]
fn sign_determining_examples() {
    let spec = sd(MarginalRule::Symmetric);
    let out = spec.decide(1.0, 0.002).unwrap();
    assert!(!out.selected && out.sign.is_none());
    let out = spec.decide(2.0, 0.1).unwrap();
    assert!(out.selected);
    assert_eq!(out.sign, Some(1));
    let out = spec.decide(-2.0, 0.1).unwrap();
    assert_eq!(out.sign, Some(-1));
    let i = spec.prepare(0.1).unwrap().candidate(2.0).unwrap();
    assert_relative_eq!(i.lo().unwrap(), 0.355_146_373_048_527, max_relative = 1e-12);
}

#[test]
fn one_sided_negative_branch_is_sign_determining() {
    let out = sd(MarginalRule::OneSided).decide(-2.0, 0.1).unwrap();
    assert_eq!(out.sign, Some(-1));
}

#[test]
fn localization_requires_exactly_one_target() {
    let targets = vec![
        IntervalSet::new([Interval::open(f64::NEG_INFINITY, 0.0)]),
        IntervalSet::new([Interval::closed(0.0, 10.0)]),
    ];
    let spec = RuleSpec::Localization {
        rule: MarginalRule::Symmetric,
        targets,
    };
    spec.validate().unwrap();
    let out = spec.decide(5.0, 0.1).unwrap();
    assert_eq!(out.localized_index, Some(2));
    assert!(!spec.decide(0.5, 0.1).unwrap().selected);
    let out = spec.decide(-3.0, 0.1).unwrap();
    assert_eq!(out.localized_index, Some(1));
    let overlapping = RuleSpec::Localization {
        rule: MarginalRule::Symmetric,
        targets: vec![
            IntervalSet::new([Interval::closed(0.0, 2.0)]),
            IntervalSet::new([Interval::closed(2.0, 3.0)]),
        ],
    };
    assert!(overlapping.validate().is_err());
}

#[test]
fn composite_test_matches_pvalue() {
    let null_set = IntervalSet::new([Interval::closed(-1.0, 1.0)]);
    let spec = RuleSpec::CompositeTest {
        rule: MarginalRule::Symmetric,
        null_set: null_set.clone(),
    };
    for k in 0..60 {
        let x = -6.0 + 0.2 * k as f64 + 0.013;
        for &level in &[0.01, 0.05, 0.1, 0.2] {
            let p = online_fcr::rules::ci_pvalue(&MarginalRule::Symmetric, x, &null_set).unwrap();
            let sel = spec.decide(x, level).unwrap().selected;
            if (p - level).abs() > 1e-7 {
                assert_eq!(sel, p <= level, "x = {x}, level = {level}, p = {p}");
            }
        }
    }
}

#[test]
fn pvalue_thresholds() {
    assert_relative_eq!(
        equivalent_pvalue_threshold(&sd(MarginalRule::Symmetric), 0.1).unwrap(),
        1.644_853_626_951_472_9,
        max_relative = 1e-13
    );
    assert_relative_eq!(
        equivalent_pvalue_threshold(&sd(MarginalRule::OneSided), 0.1).unwrap(),
        1.281_551_565_544_600_4,
        max_relative = 1e-13
    );
    assert_relative_eq!(
        equivalent_pvalue_threshold(&sd(MarginalRule::Symmetric), 0.05).unwrap(),
        1.959_963_984_540_054_5,
        max_relative = 1e-13
    );
    let err = equivalent_pvalue_threshold(&sd(MarginalRule::mqc()), 0.1).unwrap_err();
    assert_eq!(err.to_string(), "no closed-form cutoff; use bisection audit");
}

#[test]
fn selection_events() {
    let fixed = RuleSpec::FixedThreshold {
        threshold: 3.0,
        two_sided: true,
    };
    assert_eq!(fixed.selection_event(0.01).unwrap(), TruncationContext::TwoSided(3.0));
    let ctx = sd(MarginalRule::Symmetric).selection_event(0.1).unwrap();
    assert_relative_eq!(ctx.cutoff(), 1.644_853_626_951_472_9, max_relative = 1e-13);
    let loc = RuleSpec::Localization {
        rule: MarginalRule::Symmetric,
        targets: vec![IntervalSet::new([Interval::above(0.0)])],
    };
    assert!(matches!(
        loc.selection_event(0.1),
        Err(Error::ConditionalUnavailable(_))
    ));
}

#[test]
fn audit_is_clean_for_shipped_rules() {
    let template = LordCi::with_defaults(0.1, 64).unwrap();
    let fixed = RuleSpec::FixedThreshold {
        threshold: 3.0,
        two_sided: true,
    };
    let report = monotonicity_audit(&fixed, &template, 6).unwrap();
    assert!(report.is_clean());
    assert_eq!(report.pairs, (0..=6).map(|n| 3u64.pow(n) - 2u64.pow(n)).sum::<u64>());
    for rule in [MarginalRule::Symmetric, MarginalRule::OneSided, MarginalRule::mqc()] {
        let report = monotonicity_audit(&sd(rule), &template, 6).unwrap();
        assert!(report.is_clean(), "{rule:?}: {:?}", report.witnesses);
    }
}

struct Widening;
impl CiRule for Widening {
    fn interval(&self, x: f64, level: f64) -> Result<Interval> {
        Ok(Interval::open(x - 20.0 * level, x + 20.0 * level))
    }
}

#[test]
fn audit_flags_non_nested_rule() {
    let template = LordCi::with_defaults(0.1, 64).unwrap();
    let report = sign_determining_audit(&Widening, &template, 4).unwrap();
    assert!(report.selection_violations > 0);
    assert!(!report.witnesses.is_empty());
}

#[test]
fn rule_spec_json() {
    let spec: RuleSpec =
        serde_json::from_str(r#"{"kind":"sign_determining","rule":{"rule":"mqc","psi":0.7}}"#).unwrap();
    assert_eq!(spec, sd(MarginalRule::mqc()));
    let spec: RuleSpec = serde_json::from_str(
        r#"{"kind":"localization","targets":[[{"lo":null,"hi":0.0,"lo_open":true,"hi_open":false}]]}"#,
    )
    .unwrap();
    assert!(matches!(spec, RuleSpec::Localization { .. }));
    assert!(serde_json::from_str::<RuleSpec>(r#"{"kind":"fixed_threshold","threshold":3,"extra":1}"#).is_err());
}
