//! Property-based checks of the structural guarantees.

use online_fcr::interval::{Interval, IntervalSet};
use online_fcr::normal;
use online_fcr::posthoc::{track_uniform_bound, PosthocConfig};
use online_fcr::rules::{ci_pvalue, conditional_truncated_interval, MarginalRule, TruncationContext};
use online_fcr::scheduler::LordCi;
use online_fcr::selection::{decide, RuleSpec};
use proptest::prelude::*;

fn rule_strategy() -> impl Strategy<Value = MarginalRule> {
    prop_oneof![
        Just(MarginalRule::Symmetric),
        Just(MarginalRule::OneSided),
        Just(MarginalRule::mqc()),
        (0.55f64..0.95).prop_map(|psi| MarginalRule::Mqc { psi }),
    ]
}

fn replay(history: &[bool]) -> (Vec<f64>, LordCi) {
    let mut s = LordCi::with_defaults(0.1, 256).unwrap();
    let levels = history.iter().map(|&sel| s.step(sel)).collect();
    (levels, s)
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a == b || (a - b).abs() <= tol * (1.0 + a.abs()),
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scheduler_spends_within_budget(history in prop::collection::vec(any::<bool>(), 1..200)) {
        let (levels, _) = replay(&history);
        let mut spent = 0.0;
        let mut selected = 0usize;
        for (l, &s) in levels.iter().zip(&history) {
            prop_assert!(*l > 0.0 && *l < 0.1);
            spent += l;
            selected += s as usize;
            prop_assert!(spent <= 0.1 * selected.max(1) as f64 + 1e-12);
        }
    }

    #[test]
    fn more_selections_never_lower_the_next_level(
        history in prop::collection::vec(any::<bool>(), 1..120),
        flip in any::<prop::sample::Index>(),
    ) {
        let k = flip.index(history.len());
        let mut lower = history.clone();
        let mut upper = history;
        lower[k] = false;
        upper[k] = true;
        prop_assert!(replay(&upper).1.next_level() >= replay(&lower).1.next_level());
    }

    #[test]
    fn intervals_nest_in_level(
        rule in rule_strategy(),
        x in -8.0f64..8.0,
        a in 1e-6f64..0.4,
        ratio in 1.0f64..50.0,
    ) {
        let b = (a * ratio).min(0.45);
        let wide = rule.interval(x, a).unwrap();
        let narrow = rule.interval(x, b).unwrap();
        prop_assert!(narrow.is_subset_of(&wide), "{narrow:?} ⊄ {wide:?}");
        prop_assert!(wide.contains(x) || x.abs() < 1e-12);
    }

    #[test]
    fn sign_selection_is_monotone_in_level(
        rule in rule_strategy(),
        x in -6.0f64..6.0,
        a in 1e-6f64..0.2,
        ratio in 1.0f64..20.0,
    ) {
        let spec = RuleSpec::SignDetermining { rule, null_value: 0.0 };
        let b = (a * ratio).min(0.45);
        if decide(&spec, x, a).unwrap().selected {
            prop_assert!(decide(&spec, x, b).unwrap().selected);
        }
        if decide(&spec, x.abs(), a).unwrap().selected {
            prop_assert!(decide(&spec, x.abs() + 0.5, a).unwrap().selected);
        }
    }

    #[test]
    fn selection_matches_pvalue_rejection(x in -6.0f64..6.0, level in 1e-5f64..0.4) {
        let null = IntervalSet::new([Interval::point(0.0)]);
        // The one-sided interval at x < 0 is closed at 0, so its inverted
        // p-value against {0} is the one-sided Φ̄(x) rather than Φ̄(|x|).
        for (rule, p, ci_target) in [
            (MarginalRule::Symmetric, 2.0 * normal::sf(x.abs()), 2.0 * normal::sf(x.abs())),
            (MarginalRule::OneSided, normal::sf(x.abs()), normal::sf(x)),
        ] {
            // Skip points within rounding distance of the cutoff.
            prop_assume!((p - level).abs() > 1e-12 * level);
            let spec = RuleSpec::SignDetermining { rule, null_value: 0.0 };
            prop_assert_eq!(decide(&spec, x, level).unwrap().selected, p <= level);
            let ci_p = ci_pvalue(&rule, x, &null).unwrap();
            prop_assert!((ci_p - ci_target).abs() <= 1e-10, "{ci_p} vs {ci_target}");
        }
    }

    #[test]
    fn symmetric_rule_is_mirror_symmetric(x in -8.0f64..8.0, level in 1e-6f64..0.45) {
        let i = MarginalRule::Symmetric.interval(x, level).unwrap();
        let m = MarginalRule::Symmetric.interval(-x, level).unwrap();
        prop_assert!(close(i.lo().map(|v| -v), m.hi(), 1e-12));
        prop_assert!(close(i.hi().map(|v| -v), m.lo(), 1e-12));
    }

    #[test]
    fn two_sided_conditional_is_mirror_symmetric(
        c in 0.0f64..3.0,
        gap in 0.01f64..5.0,
        level in 0.01f64..0.3,
    ) {
        let ctx = TruncationContext::TwoSided(c);
        let x = c + gap;
        let i = conditional_truncated_interval(x, ctx, level).unwrap();
        let m = conditional_truncated_interval(-x, ctx, level).unwrap();
        prop_assert!(close(i.lo().map(|v| -v), m.hi(), 1e-7), "{i:?} vs {m:?}");
        prop_assert!(close(i.hi().map(|v| -v), m.lo(), 1e-7), "{i:?} vs {m:?}");
    }

    #[test]
    fn conditional_interval_contains_observation(
        c in 0.0f64..3.0,
        gap in 0.01f64..5.0,
        level in 0.01f64..0.3,
    ) {
        let x = c + gap;
        for ctx in [TruncationContext::RightTail(c), TruncationContext::TwoSided(c)] {
            let i = conditional_truncated_interval(x, ctx, level).unwrap();
            prop_assert!(i.contains(x), "{ctx:?} x={x}: {i:?}");
            let wider = conditional_truncated_interval(x, ctx, level / 2.0).unwrap();
            prop_assert!(i.is_subset_of(&wider) || (i.lo() == wider.lo() && i.hi() == wider.hi()));
        }
    }

    #[test]
    fn posthoc_bound_monotonicity(
        levels in prop::collection::vec(1e-5f64..0.05, 1..80),
        seed in any::<u64>(),
        a in 0.1f64..10.0,
        d1 in 0.01f64..0.5,
        d2 in 0.01f64..0.5,
    ) {
        let selections: Vec<bool> = (0..levels.len()).map(|k| (seed >> (k % 64)) & 1 == 1).collect();
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let strict = track_uniform_bound(&levels, &selections, &PosthocConfig::new(a, lo).unwrap()).unwrap();
        let loose = track_uniform_bound(&levels, &selections, &PosthocConfig::new(a, hi).unwrap()).unwrap();
        let mut sel = 0u64;
        for (k, (s, l)) in strict.iter().zip(&loose).enumerate() {
            sel += selections[k] as u64;
            prop_assert_eq!(s.bound.is_vacuous(), sel == 0);
            if let (Some(s), Some(l)) = (s.bound.value(), l.bound.value()) {
                prop_assert!(s >= l * (1.0 - 1e-12));
            }
        }
        // Between selections the numerator only grows.
        for w in strict.windows(2) {
            let k = w[1].n as usize - 1;
            if !selections[k] {
                if let (Some(p), Some(q)) = (w[0].bound.value(), w[1].bound.value()) {
                    prop_assert!(q >= p);
                }
            }
        }
    }
}
