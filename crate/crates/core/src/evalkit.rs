//! Character error rate and grouped error reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::AddAssign;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("baseline error rate must be positive, got {0}")]
    ZeroBaseline(f64),
}

/// Edit statistics of one or more aligned utterances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference length in characters.
    pub reference: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// (S + D + I) / N; 0 for an empty group.
    pub fn cer(&self) -> f64 {
        if self.reference == 0 {
            0.0
        } else {
            self.errors() as f64 / self.reference as f64
        }
    }
}

impl AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.reference += o.reference;
    }
}

/// Minimum edit alignment between two character sequences (one unit per
/// Unicode scalar value). On ties the backtrace prefers match/substitution,
/// then deletion, then insertion.
pub fn align(reference: &[char], hypothesis: &[char]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut out = EditCounts {
        reference: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let differ = reference[i - 1] != hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(differ) {
                out.substitutions += usize::from(differ);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            out.deletions += 1;
            i -= 1;
        } else {
            out.insertions += 1;
            j -= 1;
        }
    }
    out
}

/// Edit statistics of `hypothesis` against a non-empty `reference`.
pub fn cer(reference: &str, hypothesis: &str) -> Result<EditCounts, EvalError> {
    let r: Vec<char> = reference.chars().collect();
    if r.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let h: Vec<char> = hypothesis.chars().collect();
    Ok(align(&r, &h))
}

/// Relative error reduction in percent: 100 · (baseline − system) / baseline.
pub fn relative_reduction(baseline: f64, system: f64) -> Result<f64, EvalError> {
    if baseline <= 0.0 {
        return Err(EvalError::ZeroBaseline(baseline));
    }
    Ok(100.0 * (baseline - system) / baseline)
}

/// Edit statistics accumulated per named group, plus the whole-set total.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CerReport {
    groups: BTreeMap<String, EditCounts>,
    total: EditCounts,
    utterances: usize,
}

impl CerReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one utterance's counts to the total and to each listed group.
    pub fn add<S: AsRef<str>>(&mut self, groups: &[S], counts: EditCounts) {
        self.total += counts;
        self.utterances += 1;
        for g in groups {
            *self.groups.entry(g.as_ref().to_string()).or_default() += counts;
        }
    }

    pub fn total(&self) -> EditCounts {
        self.total
    }

    pub fn utterances(&self) -> usize {
        self.utterances
    }

    pub fn group(&self, name: &str) -> Option<EditCounts> {
        self.groups.get(name).copied()
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, EditCounts)> {
        self.groups.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Tab-separated table `group N S D I CER CERR`; CERR is relative to the
    /// same group in `baseline` and left empty when unavailable. CER values
    /// are percentages.
    pub fn to_table(&self, baseline: Option<&CerReport>) -> String {
        let mut out = String::from("group\tN\tS\tD\tI\tCER\tCERR\n");
        let rows = self
            .groups
            .iter()
            .map(|(k, v)| (k.as_str(), *v))
            .chain(std::iter::once(("total", self.total)));
        for (name, c) in rows {
            let base = baseline.and_then(|b| {
                if name == "total" {
                    Some(b.total)
                } else {
                    b.group(name)
                }
            });
            let cerr = base
                .and_then(|b| relative_reduction(b.cer(), c.cer()).ok())
                .map(|r| format!("{r:.2}"))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{name}\t{}\t{}\t{}\t{}\t{:.2}\t{cerr}",
                c.reference,
                c.substitutions,
                c.deletions,
                c.insertions,
                100.0 * c.cer()
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_substitution() {
        let c = cer("北京大学", "北京天学").unwrap();
        assert_eq!(
            c,
            EditCounts {
                substitutions: 1,
                deletions: 0,
                insertions: 0,
                reference: 4
            }
        );
        assert!((c.cer() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identical_strings_have_zero_cer() {
        assert_eq!(cer("abc", "abc").unwrap().cer(), 0.0);
    }

    #[test]
    fn insertions_and_deletions() {
        let c = cer("abc", "").unwrap();
        assert_eq!((c.deletions, c.errors()), (3, 3));
        let c = cer("a", "xab").unwrap();
        assert_eq!((c.insertions, c.substitutions), (2, 0));
        assert_eq!(cer("", "a"), Err(EvalError::EmptyReference));
    }

    #[test]
    fn substitution_preferred_over_insertion_deletion() {
        let c = cer("ab", "ba").unwrap();
        // distance 2: either two substitutions or one deletion + one insertion
        assert_eq!(c.errors(), 2);
        assert_eq!(c.substitutions, 2);
    }

    #[test]
    fn relative_reductions_round_to_one_decimal() {
        assert!((relative_reduction(4.70, 3.82).unwrap() - 18.7).abs() < 0.1);
        assert!((relative_reduction(11.30, 10.16).unwrap() - 10.1).abs() < 0.1);
        assert_eq!(relative_reduction(5.0, 5.0).unwrap(), 0.0);
        assert!(relative_reduction(0.0, 1.0).is_err());
    }

    #[test]
    fn group_sums_equal_total() {
        let mut r = CerReport::new();
        r.add(&["p1"], cer("abcd", "abxd").unwrap());
        r.add(&["p2"], cer("ab", "b").unwrap());
        r.add(&["p1"], cer("xyz", "xyz").unwrap());
        let mut sum = EditCounts::default();
        for (_, c) in r.groups() {
            sum += c;
        }
        assert_eq!(sum, r.total());
        let table = r.to_table(Some(&r));
        assert!(table.lines().last().unwrap().starts_with("total\t9\t1\t1\t0\t22.22\t0.00"));
    }

    /// Plain recursive edit distance, memoized.
    fn reference_distance(a: &[char], b: &[char]) -> usize {
        fn go(a: &[char], b: &[char], memo: &mut std::collections::HashMap<(usize, usize), usize>) -> usize {
            if a.is_empty() {
                return b.len();
            }
            if b.is_empty() {
                return a.len();
            }
            if let Some(&v) = memo.get(&(a.len(), b.len())) {
                return v;
            }
            let v = (go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]))
                .min(go(&a[1..], b, memo) + 1)
                .min(go(a, &b[1..], memo) + 1);
            memo.insert((a.len(), b.len()), v);
            v
        }
        go(a, b, &mut Default::default())
    }

    proptest! {
        #[test]
        fn matches_reference_distance(a in "[abc北京]{1,12}", b in "[abc北京]{0,12}") {
            let ra: Vec<char> = a.chars().collect();
            let rb: Vec<char> = b.chars().collect();
            let c = cer(&a, &b).unwrap();
            prop_assert_eq!(c.errors(), reference_distance(&ra, &rb));
            prop_assert_eq!(c.reference, ra.len());
            // the alignment consumes both strings exactly
            prop_assert_eq!(ra.len() - c.deletions + c.insertions, rb.len());
        }

        #[test]
        fn triangle_inequality(a in "[ab]{1,8}", b in "[ab]{1,8}", c in "[ab]{1,8}") {
            let d = |x: &str, y: &str| cer(x, y).unwrap().errors();
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        }
    }
}
