//! Token error rate by Levenshtein alignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edit counts from one optimal alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn edits(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn wer(&self) -> f64 {
        self.edits() as f64 / self.reference_len as f64
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.substitutions += rhs.substitutions;
        self.insertions += rhs.insertions;
        self.deletions += rhs.deletions;
        self.reference_len += rhs.reference_len;
    }
}

/// Levenshtein alignment of `hyp` against `reference`. On ties the backtrace
/// prefers a match or substitution, then an insertion, then a deletion.
pub fn edit_counts(hyp: &[usize], reference: &[usize]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let width = m + 1;
    let mut cost = vec![0usize; (n + 1) * width];
    for i in 0..=n {
        cost[i * width] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[(i - 1) * width + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let ins = cost[i * width + j - 1] + 1;
            let del = cost[(i - 1) * width + j] + 1;
            cost[i * width + j] = diag.min(ins).min(del);
        }
    }
    let mut counts = EditCounts { reference_len: n, ..EditCounts::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * width + j];
        if i > 0 && j > 0 && here == cost[(i - 1) * width + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]) {
            if reference[i - 1] != hyp[j - 1] {
                counts.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if j > 0 && here == cost[i * width + j - 1] + 1 {
            counts.insertions += 1;
            j -= 1;
        } else {
            counts.deletions += 1;
            i -= 1;
        }
    }
    counts
}

/// `(substitutions + insertions + deletions) / len(reference)`.
pub fn wer(hyp: &[usize], reference: &[usize]) -> Result<(f64, EditCounts)> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let counts = edit_counts(hyp, reference);
    Ok((counts.wer(), counts))
}

/// Corpus-level rate: total edits over total reference length.
pub fn corpus_wer<'a, I>(pairs: I) -> Result<(f64, EditCounts)>
where
    I: IntoIterator<Item = (&'a [usize], &'a [usize])>,
{
    let mut total = EditCounts::default();
    for (hyp, reference) in pairs {
        total += edit_counts(hyp, reference);
    }
    if total.reference_len == 0 {
        return Err(Error::EmptyReference);
    }
    Ok((total.wer(), total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook recursive edit distance with memoization, written independently
    /// of the table above.
    fn reference_distance(a: &[usize], b: &[usize]) -> usize {
        fn go(a: &[usize], b: &[usize], memo: &mut std::collections::HashMap<(usize, usize), usize>) -> usize {
            if a.is_empty() {
                return b.len();
            }
            if b.is_empty() {
                return a.len();
            }
            if let Some(&v) = memo.get(&(a.len(), b.len())) {
                return v;
            }
            let v = if a[0] == b[0] {
                go(&a[1..], &b[1..], memo)
            } else {
                1 + go(&a[1..], &b[1..], memo).min(go(&a[1..], b, memo)).min(go(a, &b[1..], memo))
            };
            memo.insert((a.len(), b.len()), v);
            v
        }
        go(a, b, &mut Default::default())
    }

    #[test]
    fn identical_is_zero() {
        assert_eq!(wer(&[1, 2, 3], &[1, 2, 3]).unwrap().0, 0.0);
    }

    #[test]
    fn one_substitution() {
        let (rate, c) = wer(&[0, 1, 2], &[0, 9, 2]).unwrap();
        assert_eq!(c.substitutions, 1);
        assert_eq!(c.edits(), 1);
        assert!((rate - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn insertions_and_deletions() {
        let c = edit_counts(&[1, 1, 2], &[1, 2]);
        assert_eq!((c.insertions, c.deletions, c.substitutions), (1, 0, 0));
        let c = edit_counts(&[2], &[1, 2]);
        assert_eq!((c.insertions, c.deletions, c.substitutions), (0, 1, 0));
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert_eq!(wer(&[1], &[]), Err(Error::EmptyReference));
    }

    proptest! {
        #[test]
        fn matches_recursive_reference(a in prop::collection::vec(0usize..4, 0..9), b in prop::collection::vec(0usize..4, 0..9)) {
            prop_assert_eq!(edit_counts(&a, &b).edits(), reference_distance(&a, &b));
        }
    }
}
