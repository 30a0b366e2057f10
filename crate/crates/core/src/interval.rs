//! Real intervals with open/closed endpoint flags, and finite unions of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A (possibly unbounded) real interval, or the empty set.
///
/// Infinite endpoints are always open. A degenerate point `[a, a]` is allowed;
/// anything else with `lo >= hi` collapses to [`Interval::Empty`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interval {
    Empty,
    Span {
        lo: f64,
        hi: f64,
        lo_open: bool,
        hi_open: bool,
    },
}

impl Interval {
    pub fn new(lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> Interval {
        if lo.is_nan() || hi.is_nan() {
            return Interval::Empty;
        }
        let lo_open = lo_open || lo.is_infinite();
        let hi_open = hi_open || hi.is_infinite();
        if lo > hi || (lo == hi && (lo_open || hi_open)) {
            return Interval::Empty;
        }
        Interval::Span {
            lo,
            hi,
            lo_open,
            hi_open,
        }
    }

    pub fn open(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi, true, true)
    }

    pub fn closed(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi, false, false)
    }

    pub fn real_line() -> Interval {
        Interval::open(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// The single point `{a}`.
    pub fn point(a: f64) -> Interval {
        Interval::closed(a, a)
    }

    /// (a, ∞)
    pub fn above(a: f64) -> Interval {
        Interval::open(a, f64::INFINITY)
    }

    /// (−∞, a]
    pub fn at_most(a: f64) -> Interval {
        Interval::new(f64::NEG_INFINITY, a, true, false)
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Interval::Empty)
    }

    pub fn lo(&self) -> Option<f64> {
        match *self {
            Interval::Empty => None,
            Interval::Span { lo, .. } => Some(lo),
        }
    }

    pub fn hi(&self) -> Option<f64> {
        match *self {
            Interval::Empty => None,
            Interval::Span { hi, .. } => Some(hi),
        }
    }

    pub fn width(&self) -> f64 {
        match *self {
            Interval::Empty => 0.0,
            Interval::Span { lo, hi, .. } => hi - lo,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Interval::Empty => false,
            Interval::Span {
                lo,
                hi,
                lo_open,
                hi_open,
            } => {
                let above_lo = if lo_open { v > lo } else { v >= lo };
                let below_hi = if hi_open { v < hi } else { v <= hi };
                above_lo && below_hi
            }
        }
    }

    /// `self ⊆ other`, respecting endpoint openness exactly.
    pub fn is_subset_of(&self, other: &Interval) -> bool {
        match (*self, *other) {
            (Interval::Empty, _) => true,
            (_, Interval::Empty) => false,
            (
                Interval::Span {
                    lo,
                    hi,
                    lo_open,
                    hi_open,
                },
                Interval::Span {
                    lo: olo,
                    hi: ohi,
                    lo_open: olo_open,
                    hi_open: ohi_open,
                },
            ) => {
                let lo_ok = lo > olo || (lo == olo && (lo_open || !olo_open));
                let hi_ok = hi < ohi || (hi == ohi && (hi_open || !ohi_open));
                lo_ok && hi_ok
            }
        }
    }

    pub fn intersection(&self, other: &Interval) -> Interval {
        match (*self, *other) {
            (Interval::Empty, _) | (_, Interval::Empty) => Interval::Empty,
            (
                Interval::Span {
                    lo: a_lo,
                    hi: a_hi,
                    lo_open: a_lo_open,
                    hi_open: a_hi_open,
                },
                Interval::Span {
                    lo: b_lo,
                    hi: b_hi,
                    lo_open: b_lo_open,
                    hi_open: b_hi_open,
                },
            ) => {
                let (lo, lo_open) = if a_lo > b_lo {
                    (a_lo, a_lo_open)
                } else if b_lo > a_lo {
                    (b_lo, b_lo_open)
                } else {
                    (a_lo, a_lo_open || b_lo_open)
                };
                let (hi, hi_open) = if a_hi < b_hi {
                    (a_hi, a_hi_open)
                } else if b_hi < a_hi {
                    (b_hi, b_hi_open)
                } else {
                    (a_hi, a_hi_open || b_hi_open)
                };
                Interval::new(lo, hi, lo_open, hi_open)
            }
        }
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        !self.intersection(other).is_empty()
    }

    /// Contains only values `> reference` or only values `<= reference`.
    pub fn sign_relative_to(&self, reference: f64) -> Option<Sign> {
        if self.is_empty() {
            None
        } else if self.is_subset_of(&Interval::above(reference)) {
            Some(Sign::Positive)
        } else if self.is_subset_of(&Interval::at_most(reference)) {
            Some(Sign::Nonpositive)
        } else {
            None
        }
    }

    pub fn is_sign_determining(&self) -> bool {
        self.sign_relative_to(0.0).is_some()
    }
}

/// Weak sign classification: zero belongs to the nonpositive side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Nonpositive,
}

impl Sign {
    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Positive => 1,
            Sign::Nonpositive => -1,
        }
    }
}

/// Serialized form of an interval: `{"lo": .., "hi": .., "lo_open": .., "hi_open": ..}`.
/// A `null` endpoint stands for ±∞.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSpec {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    #[serde(default)]
    pub lo_open: bool,
    #[serde(default)]
    pub hi_open: bool,
}

impl From<IntervalSpec> for Interval {
    fn from(s: IntervalSpec) -> Interval {
        Interval::new(
            s.lo.unwrap_or(f64::NEG_INFINITY),
            s.hi.unwrap_or(f64::INFINITY),
            s.lo_open,
            s.hi_open,
        )
    }
}

impl From<Interval> for Option<IntervalSpec> {
    fn from(i: Interval) -> Option<IntervalSpec> {
        match i {
            Interval::Empty => None,
            Interval::Span {
                lo,
                hi,
                lo_open,
                hi_open,
            } => Some(IntervalSpec {
                lo: lo.is_finite().then_some(lo),
                hi: hi.is_finite().then_some(hi),
                lo_open,
                hi_open,
            }),
        }
    }
}

impl Serialize for Interval {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        Option::<IntervalSpec>::from(*self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Option::<IntervalSpec>::deserialize(d)?.map_or(Interval::Empty, Interval::from))
    }
}

/// A finite union of intervals, normalized so that no two pieces overlap or touch.
///
/// Serializes as an array of interval objects.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<IntervalSpec>", into = "Vec<IntervalSpec>")]
pub struct IntervalSet {
    pieces: Vec<Interval>,
}

impl IntervalSet {
    pub fn new(pieces: impl IntoIterator<Item = Interval>) -> IntervalSet {
        let mut spans: Vec<Interval> = pieces.into_iter().filter(|p| !p.is_empty()).collect();
        spans.sort_by(|a, b| {
            let (al, bl) = (a.lo().unwrap(), b.lo().unwrap());
            al.partial_cmp(&bl).unwrap().then_with(|| lo_open(a).cmp(&lo_open(b)))
        });
        let mut merged: Vec<Interval> = Vec::with_capacity(spans.len());
        for s in spans {
            if let Some(last) = merged.last_mut() {
                if touches(last, &s) {
                    *last = hull(last, &s);
                    continue;
                }
            }
            merged.push(s);
        }
        IntervalSet { pieces: merged }
    }

    pub fn pieces(&self) -> &[Interval] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn contains(&self, v: f64) -> bool {
        self.pieces.iter().any(|p| p.contains(v))
    }

    /// `interval ⊆ self`. Pieces never touch, so this reduces to one piece.
    pub fn contains_interval(&self, interval: &Interval) -> bool {
        interval.is_empty() || self.pieces.iter().any(|p| interval.is_subset_of(p))
    }

    pub fn intersects(&self, interval: &Interval) -> bool {
        self.pieces.iter().any(|p| p.intersects(interval))
    }

    pub fn intersects_set(&self, other: &IntervalSet) -> bool {
        other.pieces.iter().any(|p| self.intersects(p))
    }

    pub fn from_specs(specs: &[IntervalSpec]) -> IntervalSet {
        IntervalSet::new(specs.iter().copied().map(Interval::from))
    }

    pub fn to_specs(&self) -> Vec<IntervalSpec> {
        self.pieces
            .iter()
            .filter_map(|p| Option::<IntervalSpec>::from(*p))
            .collect()
    }
}

impl From<Vec<IntervalSpec>> for IntervalSet {
    fn from(specs: Vec<IntervalSpec>) -> Self {
        IntervalSet::from_specs(&specs)
    }
}

impl From<IntervalSet> for Vec<IntervalSpec> {
    fn from(set: IntervalSet) -> Self {
        set.to_specs()
    }
}

fn lo_open(i: &Interval) -> bool {
    matches!(i, Interval::Span { lo_open: true, .. })
}

// Pieces sorted by lower endpoint; do `a` and `b` overlap or share a boundary
// point that one of them contains?
fn touches(a: &Interval, b: &Interval) -> bool {
    match (*a, *b) {
        (
            Interval::Span {
                hi: a_hi,
                hi_open: a_hi_open,
                ..
            },
            Interval::Span {
                lo: b_lo,
                lo_open: b_lo_open,
                ..
            },
        ) => b_lo < a_hi || (b_lo == a_hi && !(a_hi_open && b_lo_open)),
        _ => false,
    }
}

fn hull(a: &Interval, b: &Interval) -> Interval {
    match (*a, *b) {
        (
            Interval::Span {
                lo,
                lo_open,
                hi: a_hi,
                hi_open: a_hi_open,
            },
            Interval::Span {
                hi: b_hi,
                hi_open: b_hi_open,
                ..
            },
        ) => {
            let (hi, hi_open) = if a_hi > b_hi {
                (a_hi, a_hi_open)
            } else if b_hi > a_hi {
                (b_hi, b_hi_open)
            } else {
                (a_hi, a_hi_open && b_hi_open)
            };
            Interval::new(lo, hi, lo_open, hi_open)
        }
        (Interval::Empty, x) | (x, Interval::Empty) => x,
    }
}

/// Pairwise disjointness of a family of sets (used to validate localization targets).
pub fn pairwise_disjoint(sets: &[IntervalSet]) -> Result<()> {
    for (i, a) in sets.iter().enumerate() {
        for (j, b) in sets.iter().enumerate().skip(i + 1) {
            if a.intersects_set(b) {
                return Err(Error::invalid(format!(
                    "localization targets {} and {} overlap",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(())
}
