use std::cmp::Ordering;

use serde::Serializer;

pub(crate) const EPS: f64 = 1e-9;

/// Round to the 0.01 grid used by every serialized output number.
pub(crate) fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub(crate) fn ser_round2<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round2(*x))
}

pub(crate) fn ser_round2_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&round2(*v)),
        None => s.serialize_none(),
    }
}

/// Index of the first maximum; `None` for an empty slice.
pub(crate) fn first_argmax<T: PartialOrd + Copy>(values: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, v) in values.iter().enumerate() {
        match best {
            Some(b) if v.partial_cmp(&values[b]) != Some(Ordering::Greater) => {}
            _ => best = Some(k),
        }
    }
    best
}

/// Index of the first minimum; `None` for an empty slice.
pub(crate) fn first_argmin<T: PartialOrd + Copy>(values: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, v) in values.iter().enumerate() {
        match best {
            Some(b) if v.partial_cmp(&values[b]) != Some(Ordering::Less) => {}
            _ => best = Some(k),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(first_argmax(&[1, 3, 3, 2]), Some(1));
        assert_eq!(first_argmin(&[2, 1, 1, 5]), Some(1));
        assert_eq!(first_argmax::<i32>(&[]), None);
    }

    #[test]
    fn round2_snaps_to_grid() {
        assert_eq!(round2(1.005_000_1), 1.01);
        assert_eq!(round2(-0.001), 0.0);
        assert_eq!(round2(17.5), 17.5);
    }
}
