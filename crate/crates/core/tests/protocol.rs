use approx::assert_relative_eq;
use online_fcr::{interval::*, protocol::*, rules::*, scheduler::*, selection::*};
use online_fcr::{normal, Error};

fn fixed3() -> RuleSpec {
    RuleSpec::FixedThreshold {
        threshold: 3.0,
        two_sided: false,
    }
}

fn sd(rule: MarginalRule) -> RuleSpec {
    RuleSpec::SignDetermining { rule, null_value: 0.0 }
}

#[test]
fn fresh_commit_is_gamma_one_w0() {
    let mut p = Protocol::new(ProtocolConfig::new(0.1, fixed3(), 100)).unwrap();
    let (c, token) = p.commit().unwrap();
    assert_eq!(c.index, 1);
    assert_relative_eq!(c.level, 0.002_502_261_321_821_403, max_relative = 1e-14);
    assert_eq!(token.index(), 1);
}

#[test]
fn double_commit_and_stale_tokens_are_rejected() {
    let mut p = Protocol::new(ProtocolConfig::new(0.1, fixed3(), 100)).unwrap();
    let (_, token) = p.commit().unwrap();
    assert!(matches!(p.commit(), Err(Error::ProtocolOrder(_))));
    let mut other = Protocol::new(ProtocolConfig::new(0.1, fixed3(), 100)).unwrap();
    assert!(matches!(other.observe(token, 1.0), Err(Error::ProtocolOrder(_))));
    // the original protocol is still waiting for step 1
    let (_, t2) = other.commit().unwrap();
    assert!(p.observe(t2, 1.0).is_err());
}

#[test]
fn unselected_step_has_no_interval() {
    let mut p = Protocol::new(ProtocolConfig::new(0.1, fixed3(), 100)).unwrap();
    let out = p.step(2.0).unwrap();
    assert!(!out.selected && out.interval.is_none() && out.sign == 0);
    assert_eq!(p.scheduler().history(), vec![false]);
}

#[test]
fn selected_fixed_threshold_reports_level_interval() {
    let log = run_stream(&ProtocolConfig::new(0.1, fixed3(), 100), &[4.0]).unwrap();
    let o = log.outcomes[0];
    assert!(o.selected);
    let z = normal::upper_quantile(o.level / 2.0);
    assert_eq!(o.interval.unwrap(), Interval::open(4.0 - z, 4.0 + z));
}

#[test]
fn commits_depend_only_on_selections() {
    let cfg = ProtocolConfig::new(0.1, fixed3(), 100);
    let a = run_stream(&cfg, &[0.1, 3.5, -1.0, 0.2, 4.0]).unwrap();
    let b = run_stream(&cfg, &[-2.0, 3.7, 2.9, -0.5, 5.0]).unwrap();
    let bits = |l: &RunLog| l.levels().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn sign_determining_intervals_exclude_zero() {
    let xs: Vec<f64> = (0..400).map(|k| ((k * 37) % 101) as f64 / 10.0 - 5.0).collect();
    for rule in [MarginalRule::Symmetric, MarginalRule::OneSided, MarginalRule::mqc()] {
        let log = run_stream(&ProtocolConfig::new(0.1, sd(rule), 1000), &xs).unwrap();
        for o in log.outcomes.iter().filter(|o| o.selected) {
            assert_ne!(o.sign, 0);
            assert!(o.interval.unwrap().is_sign_determining());
        }
        assert!(log.estimated_fcp().unwrap() <= 0.1);
    }
}

#[test]
fn conditional_mode_uses_committed_cutoff() {
    let cfg = ProtocolConfig::new(0.1, sd(MarginalRule::Symmetric), 100)
        .with_interval_mode(IntervalMode::ConditionalAtNominal { shape: None });
    let mut p = Protocol::new(cfg).unwrap();
    let (c, token) = p.commit().unwrap();
    let cutoff = c.selection_event.unwrap().cutoff();
    assert_relative_eq!(cutoff, normal::quantile(1.0 - c.level / 2.0), max_relative = 1e-12);
    let out = p.observe(token, cutoff + 0.5).unwrap();
    assert!(out.selected);
    let expected = conditional_truncated_interval(cutoff + 0.5, TruncationContext::TwoSided(cutoff), 0.1).unwrap();
    assert_eq!(out.interval.unwrap(), expected);
}

#[test]
fn conditional_mode_rejects_unsupported_selection() {
    let cfg = ProtocolConfig::new(
        0.1,
        RuleSpec::CompositeTest {
            rule: MarginalRule::Symmetric,
            null_set: online_fcr::interval::IntervalSet::new([Interval::point(0.0)]),
        },
        10,
    )
    .with_interval_mode(IntervalMode::ConditionalAtNominal { shape: None });
    assert!(matches!(Protocol::new(cfg), Err(Error::ConditionalUnavailable(_))));
    let mismatch = ProtocolConfig::new(0.1, fixed3(), 10).with_interval_mode(IntervalMode::ConditionalAtNominal {
        shape: Some(TruncationShape::TwoSided),
    });
    assert!(matches!(Protocol::new(mismatch), Err(Error::Config(_))));
}

#[test]
fn interval_rule_must_match_selection_rule() {
    let cfg = ProtocolConfig::new(0.1, sd(MarginalRule::mqc()), 10)
        .with_interval_mode(IntervalMode::LordCiMarginal(MarginalRule::Symmetric));
    assert!(matches!(Protocol::new(cfg), Err(Error::Config(_))));
}

#[test]
fn empty_stream_gives_empty_log() {
    let log = run_stream(&ProtocolConfig::new(0.1, fixed3(), 10), &[]).unwrap();
    assert!(log.outcomes.is_empty());
    assert_eq!(log.summary().steps, 0);
}

#[test]
fn lordpp_all_ones() {
    let run = lordpp_testing_run(&[1.0; 20], 0.1, 0.05, GammaSequence::lord_default(20)).unwrap();
    assert!(run.rejections.iter().all(|&r| !r));
    for (j, l) in run.levels.iter().enumerate() {
        assert_relative_eq!(
            *l,
            0.05 * online_fcr::scheduler::gamma_default(j as i64 + 1),
            max_relative = 1e-15
        );
    }
    assert!(lordpp_testing_run(&[1.5], 0.1, 0.05, GammaSequence::lord_default(2)).is_err());
}

#[test]
fn quick_reject_agrees_with_full_decision() {
    let xs: Vec<f64> = (0..2000).map(|k| (k as f64 * 0.61803).sin() * 4.0).collect();
    for rule in [MarginalRule::Symmetric, MarginalRule::OneSided, MarginalRule::mqc()] {
        let log = run_stream(&ProtocolConfig::new(0.1, sd(rule), 2000), &xs).unwrap();
        for o in &log.outcomes {
            let full = sd(rule).decide(o.x, o.level).unwrap();
            assert_eq!(full.selected, o.selected);
        }
    }
}

#[test]
fn csv_and_jsonl_forms() {
    let log = run_stream(&ProtocolConfig::new(0.1, fixed3(), 10), &[1.0, 4.0]).unwrap();
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "index,level,selected,lo,hi,sign,localized_index");
    assert!(lines.next().unwrap().starts_with("1,2.5022613218214"));
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let back: StepOutcome = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(back, log.outcomes[1]);
    assert!(lines[2].starts_with("{\"summary\""));
}

#[test]
fn interval_mode_json() {
    let m: IntervalMode = serde_json::from_str(r#"{"rule":"conditional","shape":"two_sided"}"#).unwrap();
    assert_eq!(
        m,
        IntervalMode::ConditionalAtNominal {
            shape: Some(TruncationShape::TwoSided)
        }
    );
    let m: IntervalMode = serde_json::from_str(r#"{"rule":"mqc"}"#).unwrap();
    assert_eq!(m, IntervalMode::LordCiMarginal(MarginalRule::mqc()));
    assert!(serde_json::from_str::<IntervalMode>(r#"{"rule":"symmetric","shape":"two_sided"}"#).is_err());
    assert!(serde_json::from_str::<IntervalMode>(r#"{"rule":"bogus"}"#).is_err());
    let back = serde_json::to_string(&IntervalMode::LordCiMarginal(MarginalRule::mqc())).unwrap();
    assert_eq!(back, r#"{"rule":"mqc","psi":0.7}"#);
}
