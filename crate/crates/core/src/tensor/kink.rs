//! Kink monitor for the piecewise-smooth ops.
//!
//! While [`watch`] runs a closure, relu, max reductions and the bilinear
//! samplers record two things:
//!
//! * a *margin*: how close their differentiable inputs sit to a point where
//!   the derivative jumps;
//! * a *pattern*: a hash of every discrete branch taken (relu signs, argmax
//!   positions, bilinear cells), for all inputs.
//!
//! Finite-difference checks reject evaluation points with a small margin, and
//! any point where a perturbed evaluation takes a different branch pattern
//! from the unperturbed one.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Smallest distance to a kink (`f64::INFINITY` if none was reported).
    pub margin: f64,
    pub pattern: u64,
}

const PATTERN_SEED: u64 = 0xcbf2_9ce4_8422_2325;

impl Observation {
    fn fresh() -> Self {
        Observation {
            margin: f64::INFINITY,
            pattern: PATTERN_SEED,
        }
    }
}

thread_local! {
    static STATE: Cell<Option<Observation>> = const { Cell::new(None) };
}

#[inline]
fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(29)
}

/// Runs `f` and returns its result with what was observed during the call.
pub fn watch<R>(f: impl FnOnce() -> R) -> (R, Observation) {
    let outer = STATE.with(|s| s.replace(Some(Observation::fresh())));
    let r = f();
    let inner = STATE.with(|s| s.replace(outer)).expect("set above");
    if let Some(o) = outer {
        STATE.with(|s| {
            s.set(Some(Observation {
                margin: o.margin.min(inner.margin),
                pattern: mix(o.pattern, inner.pattern),
            }))
        });
    }
    (r, inner)
}

#[inline]
pub(crate) fn active() -> bool {
    STATE.with(|s| s.get().is_some())
}

#[inline]
pub(crate) fn note(distance: f64) {
    STATE.with(|s| {
        if let Some(mut o) = s.get() {
            o.margin = o.margin.min(distance);
            s.set(Some(o));
        }
    });
}

/// Folds branch identifiers into the pattern.
pub(crate) fn record(branches: impl IntoIterator<Item = u64>) {
    STATE.with(|s| {
        if let Some(mut o) = s.get() {
            o.pattern = branches.into_iter().fold(o.pattern, mix);
            s.set(Some(o));
        }
    });
}

/// Records the sign of every value.
pub(crate) fn record_signs(values: impl Iterator<Item = f64>) {
    let mut words = Vec::new();
    let (mut word, mut n) = (0u64, 0u32);
    for v in values {
        word |= u64::from(v > 0.0) << n;
        n += 1;
        if n == 64 {
            words.push(word);
            (word, n) = (0, 0);
        }
    }
    words.push(word);
    record(words);
}

/// Records the integer cell of every coordinate.
pub(crate) fn record_cells(values: impl Iterator<Item = f64>) {
    record(values.map(|v| v.floor() as i64 as u64));
}

/// Distance from `v` to the nearest integer.
#[inline]
pub(crate) fn to_integer(v: f64) -> f64 {
    (v - v.round()).abs()
}

/// Gap between the largest and second-largest value.
pub(crate) fn top_gap(values: impl Iterator<Item = f64>) -> f64 {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in values {
        if v > a {
            b = a;
            a = v;
        } else if v > b {
            b = v;
        }
    }
    a - b
}
