use std::fmt::Write as _;

use rustc_hash::FxHashMap as HashMap;

use super::{Entry, NGramModel, NgramError, Vocabulary, WordId};

const CUTOFF_COMMENT: &str = "# cutoffs:";

impl NGramModel {
    /// Serializes to ARPA text. Values are written in shortest round-trip
    /// decimal form, so reparsing reproduces every stored value bit for bit.
    pub fn to_arpa(&self) -> String {
        let mut out = String::new();
        let cutoffs: Vec<String> = self.cutoffs.iter().map(u32::to_string).collect();
        let _ = writeln!(out, "{CUTOFF_COMMENT} {}", cutoffs.join(" "));
        out.push_str("\n\\data\\\n");
        for k in 1..=self.order {
            let _ = writeln!(out, "ngram {k}={}", self.num_ngrams(k));
        }
        for k in 1..=self.order {
            let _ = write!(out, "\n\\{k}-grams:\n");
            for (key, e) in self.entries(k) {
                let _ = write!(out, "{}\t{}", e.log_prob, self.render(key));
                if k < self.order {
                    let _ = write!(out, "\t{}", e.backoff);
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn from_arpa(text: &str) -> Result<NGramModel, NgramError> {
        let err = |line: usize, msg: &str| NgramError::Arpa {
            line: line + 1,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let mut cutoffs = None;

        for (i, line) in lines.by_ref() {
            let t = line.trim();
            if let Some(rest) = t.strip_prefix(CUTOFF_COMMENT) {
                let parsed: Result<Vec<u32>, _> =
                    rest.split_whitespace().map(str::parse).collect();
                cutoffs = Some(parsed.map_err(|_| err(i, "bad cutoff comment"))?);
            } else if t == "\\data\\" {
                break;
            }
        }

        let mut declared: Vec<usize> = Vec::new();
        let mut section_start = None;
        for (i, line) in lines.by_ref() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix("ngram ") {
                let (k, n) = rest
                    .split_once('=')
                    .ok_or_else(|| err(i, "malformed ngram count line"))?;
                let k: usize = k.trim().parse().map_err(|_| err(i, "non-numeric order"))?;
                let n: usize = n.trim().parse().map_err(|_| err(i, "non-numeric count"))?;
                if k != declared.len() + 1 {
                    return Err(err(i, "ngram counts out of order"));
                }
                declared.push(n);
            } else if t == "\\1-grams:" {
                section_start = Some(i);
                break;
            } else {
                return Err(err(i, "unexpected line in header"));
            }
        }
        let order = declared.len();
        if order == 0 || section_start.is_none() {
            return Err(err(0, "missing \\data\\ header or ngram counts"));
        }

        let mut vocab = Vocabulary::new();
        let mut raw_tables: Vec<Vec<(Vec<String>, Entry)>> = vec![Vec::new(); order];
        let mut k = 1;
        let mut ended = false;
        for (i, line) in lines {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if t == "\\end\\" {
                ended = true;
                break;
            }
            if t.starts_with('\\') {
                let next = t
                    .strip_prefix('\\')
                    .and_then(|s| s.strip_suffix("-grams:"))
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| err(i, "malformed section header"))?;
                if next != k + 1 || next > order {
                    return Err(err(i, "unexpected section"));
                }
                k = next;
                continue;
            }
            let fields: Vec<&str> = if t.contains('\t') {
                let f: Vec<&str> = t.split('\t').collect();
                let mut words: Vec<&str> = Vec::new();
                if f.len() < 2 {
                    return Err(err(i, "too few fields"));
                }
                words.push(f[0]);
                words.extend(f[1].split_whitespace());
                words.extend(&f[2..]);
                words
            } else {
                t.split_whitespace().collect()
            };
            if fields.len() != 1 + k && fields.len() != 2 + k {
                return Err(err(i, "wrong number of fields"));
            }
            let log_prob: f64 = fields[0]
                .parse()
                .map_err(|_| err(i, "non-numeric probability"))?;
            let backoff: f64 = match fields.get(1 + k) {
                Some(b) => b.parse().map_err(|_| err(i, "non-numeric backoff"))?,
                None => 0.0,
            };
            if k == 1 {
                vocab.insert(fields[1]);
            }
            let words = fields[1..=k].iter().map(|s| s.to_string()).collect();
            raw_tables[k - 1].push((words, Entry { log_prob, backoff }));
        }
        if !ended {
            return Err(err(text.lines().count(), "missing \\end\\"));
        }

        let mut tables = Vec::with_capacity(order);
        for (idx, entries) in raw_tables.into_iter().enumerate() {
            if entries.len() != declared[idx] {
                return Err(NgramError::CountMismatch {
                    order: idx + 1,
                    declared: declared[idx],
                    found: entries.len(),
                });
            }
            let mut table: HashMap<Vec<WordId>, Entry> =
                HashMap::with_capacity_and_hasher(entries.len(), Default::default());
            for (words, e) in entries {
                let ids: Option<Vec<WordId>> = words.iter().map(|w| vocab.get(w)).collect();
                let ids = ids.ok_or_else(|| NgramError::Arpa {
                    line: 0,
                    msg: format!("n-gram '{}' uses a word missing from the unigrams", words.join(" ")),
                })?;
                table.insert(ids, e);
            }
            tables.push(table);
        }
        let cutoffs = cutoffs.filter(|c| c.len() == order).unwrap_or_else(|| vec![0; order]);
        Ok(NGramModel::from_parts(order, vocab, tables, cutoffs))
    }
}

#[cfg(test)]
mod tests {
    use super::super::train;
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let corpus: Vec<Vec<&str>> = vec![
            vec!["a", "b", "c"],
            vec!["a", "c"],
            vec!["b", "c", "a", "b"],
            vec!["c"],
        ];
        let m = train(&corpus, 3, &[0, 0, 1]).unwrap();
        let back = NGramModel::from_arpa(&m.to_arpa()).unwrap();
        assert_eq!(back, m);
        for k in 1..=3 {
            for ((ka, ea), (kb, eb)) in m.entries(k).into_iter().zip(back.entries(k)) {
                assert_eq!(ka, kb);
                assert_eq!(ea.log_prob.to_bits(), eb.log_prob.to_bits());
                assert_eq!(ea.backoff.to_bits(), eb.backoff.to_bits());
            }
        }
        assert_eq!(back.to_arpa(), m.to_arpa());
    }

    #[test]
    fn hand_written_unigram_model() {
        let text = "\\data\\\nngram 1=3\n\n\\1-grams:\n-0.5\t</s>\n-0.25\tfoo\n-1.25\t<unk>\n\n\\end\\\n";
        let m = NGramModel::from_arpa(text).unwrap();
        let none: [&str; 0] = [];
        assert_eq!(m.logprob("foo", &none), -0.25);
        assert_eq!(m.logprob("</s>", &["foo"]), -0.5);
        assert_eq!(m.logprob("bar", &none), -1.25);
        assert_eq!(m.order(), 1);
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let text = "\\data\\\nngram 1=2\nngram 2=5\n\n\\1-grams:\n-0.3\ta\t-0.1\n-0.3\tb\t-0.1\n\n\\2-grams:\n-0.2\ta b\n-0.2\tb a\n-0.2\ta a\n-0.2\tb b\n\n\\end\\\n";
        match NGramModel::from_arpa(text) {
            Err(NgramError::CountMismatch {
                order: 2,
                declared: 5,
                found: 4,
            }) => {}
            other => panic!("expected count mismatch, got {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        assert!(NGramModel::from_arpa("hello").is_err());
        let bad_num = "\\data\\\nngram 1=1\n\n\\1-grams:\nabc\tfoo\n\\end\\\n";
        assert!(matches!(
            NGramModel::from_arpa(bad_num),
            Err(NgramError::Arpa { .. })
        ));
        let bad_header = "\\data\\\nngram one=1\n\\1-grams:\n-1\tfoo\n\\end\\\n";
        assert!(NGramModel::from_arpa(bad_header).is_err());
        let no_end = "\\data\\\nngram 1=1\n\n\\1-grams:\n-1\tfoo\n";
        assert!(NGramModel::from_arpa(no_end).is_err());
    }
}
