use geoasr::evalkit::{cer, CerReport, EditCounts};
use proptest::prelude::*;

fn distance(a: &str, b: &str) -> usize {
    // plain Levenshtein over scalar values
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut prev = row[0];
        row[0] = i;
        for j in 1..=b.len() {
            let cur = row[j];
            row[j] = (prev + usize::from(a[i - 1] != b[j - 1])).min(row[j] + 1).min(row[j - 1] + 1);
            prev = cur;
        }
    }
    row[b.len()]
}

fn text() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop_oneof![Just('地'), Just('图'), Just('店'), Just('a'), Just('é')], 0..12)
        .prop_map(|v| v.into_iter().collect())
}

proptest! {
    #[test]
    fn errors_equal_levenshtein_distance(r in text(), h in text()) {
        prop_assume!(!r.is_empty());
        let c = cer(&r, &h).unwrap();
        prop_assert_eq!(c.errors(), distance(&r, &h));
        prop_assert_eq!(c.reference, r.chars().count());
    }

    #[test]
    fn triangle_inequality(a in text(), b in text(), c in text()) {
        prop_assume!(!a.is_empty() && !b.is_empty());
        let ab = cer(&a, &b).unwrap().errors();
        let bc = cer(&b, &c).unwrap().errors();
        let ac = cer(&a, &c).unwrap().errors();
        prop_assert!(ac <= ab + bc);
    }

    #[test]
    fn group_sums_add_up(pairs in proptest::collection::vec((text(), text(), 0usize..3), 1..20)) {
        let mut report = CerReport::new();
        let mut total = EditCounts::default();
        for (r, h, g) in &pairs {
            if r.is_empty() {
                continue;
            }
            let c = cer(r, h).unwrap();
            report.add(&[format!("g{g}")], c);
            total += c;
        }
        let summed = report.groups().fold(EditCounts::default(), |mut acc, (_, c)| {
            acc += c;
            acc
        });
        prop_assert_eq!(summed, total);
        prop_assert_eq!(report.total(), total);
    }
}
