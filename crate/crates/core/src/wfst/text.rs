//! Tab-separated text formats.
//!
//! Transducer: `src<TAB>dst<TAB>ilabel<TAB>olabel<TAB>cost` per arc and
//! `state<TAB>cost` per final state; labels are written as symbols. The
//! source of the first line is the start state. Symbol tables:
//! `symbol<TAB>id` per line.

use std::fmt::Write as _;
use std::sync::Arc;

use super::{StateId, SymbolTable, Transition, Weight, WfstError, Wfst};

fn parse_err(line: usize, msg: impl Into<String>) -> WfstError {
    WfstError::Parse {
        line: line + 1,
        msg: msg.into(),
    }
}

impl SymbolTable {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.symbols.iter().enumerate() {
            let _ = writeln!(out, "{s}\t{i}");
        }
        out
    }

    /// Ids must be dense, start at 0 with `<eps>`, and appear in order.
    pub fn from_text(text: &str) -> Result<SymbolTable, WfstError> {
        let mut t = SymbolTable::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (sym, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| parse_err(i, "expected symbol<TAB>id"))?;
            let id: usize = id.trim().parse().map_err(|_| parse_err(i, "non-numeric id"))?;
            if id == 0 {
                if sym != super::EPSILON_SYMBOL {
                    return Err(parse_err(i, "id 0 is reserved for <eps>"));
                }
                continue;
            }
            if id != t.len() || t.get(sym).is_some() {
                return Err(parse_err(i, "ids must be dense and symbols unique"));
            }
            t.add(sym);
        }
        Ok(t)
    }
}

impl Wfst {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sym = |t: &SymbolTable, l| t.symbol(l).unwrap_or("?").to_string();
        // emit states starting from the start state so it comes first
        let order = std::iter::once(self.start).chain(self.states().filter(|&s| s != self.start));
        let mut finals = String::new();
        for s in order {
            for a in self.arcs(s) {
                let _ = writeln!(
                    out,
                    "{s}\t{}\t{}\t{}\t{}",
                    a.next,
                    sym(&self.isyms, a.ilabel),
                    sym(&self.osyms, a.olabel),
                    a.weight.0
                );
            }
            let fw = self.final_weight(s);
            if !fw.is_zero() {
                let _ = writeln!(finals, "{s}\t{}", fw.0);
            }
        }
        out.push_str(&finals);
        out
    }

    pub fn from_text(
        text: &str,
        isyms: Arc<SymbolTable>,
        osyms: Arc<SymbolTable>,
    ) -> Result<Wfst, WfstError> {
        enum Line {
            Arc(StateId, Transition),
            Final(StateId, f64),
        }
        let mut parsed = Vec::new();
        let mut max_state: StateId = 0;
        let mut start = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let state = |s: &str| -> Result<StateId, WfstError> {
                s.trim().parse().map_err(|_| parse_err(i, format!("bad state '{s}'")))
            };
            let cost = |s: &str| -> Result<f64, WfstError> {
                s.trim().parse().map_err(|_| parse_err(i, format!("bad cost '{s}'")))
            };
            let item = match f.len() {
                5 => {
                    let il = isyms
                        .get(f[2])
                        .ok_or_else(|| parse_err(i, format!("unknown input symbol '{}'", f[2])))?;
                    let ol = osyms
                        .get(f[3])
                        .ok_or_else(|| parse_err(i, format!("unknown output symbol '{}'", f[3])))?;
                    let src = state(f[0])?;
                    let dst = state(f[1])?;
                    max_state = max_state.max(src).max(dst);
                    Line::Arc(src, Transition::new(il, ol, cost(f[4])?, dst))
                }
                1 | 2 => {
                    let s = state(f[0])?;
                    max_state = max_state.max(s);
                    let c = if f.len() == 2 { cost(f[1])? } else { 0.0 };
                    Line::Final(s, c)
                }
                _ => return Err(parse_err(i, "expected 5 fields (arc) or 1-2 fields (final)")),
            };
            if start.is_none() {
                start = Some(match &item {
                    Line::Arc(s, _) | Line::Final(s, _) => *s,
                });
            }
            parsed.push(item);
        }
        let mut fst = Wfst::new(isyms, osyms);
        for _ in 0..max_state {
            fst.add_state();
        }
        fst.set_start(start.unwrap_or(0));
        for item in parsed {
            match item {
                Line::Arc(s, a) => fst.add_arc(s, a),
                Line::Final(s, c) => fst.set_final(s, Weight(c)),
            }
        }
        Ok(fst)
    }
}
