//! Weighted finite-state transducers over the tropical (min, +) semiring.
//!
//! Costs are negative natural-log probabilities. Label 0 is epsilon in both
//! the input and the output symbol table.

mod compose;
mod paths;
mod text;

use std::sync::Arc;

use rustc_hash::FxHashMap as HashMap;
use thiserror::Error;

pub use self::compose::{compose_static, expand, ComposeState, LazyComposition, LazyFst};
pub use self::paths::{shortest_distance_to_final, shortest_paths};

pub type Label = u32;
pub type StateId = u32;

pub const EPSILON: Label = 0;
pub const EPSILON_SYMBOL: &str = "<eps>";

#[derive(Debug, Error)]
pub enum WfstError {
    #[error("symbol table mismatch: left output table differs from right input table")]
    SymbolMismatch,
    #[error("arc {src} -> {dst} has non-finite cost {cost}")]
    NonFiniteWeight { src: StateId, dst: StateId, cost: f64 },
    #[error("no accepting path")]
    NoAcceptingPath,
    #[error("negative-cost cycle reachable from the start state")]
    NegativeCycle,
    #[error("n must be at least 1")]
    ZeroPaths,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Tropical semiring element: ⊕ = min, ⊗ = +, 0̄ = +∞, 1̄ = 0.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Weight(pub f64);

impl Weight {
    pub const ZERO: Weight = Weight(f64::INFINITY);
    pub const ONE: Weight = Weight(0.0);

    pub fn new(cost: f64) -> Self {
        Weight(cost)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn plus(self, other: Weight) -> Weight {
        if other.0 < self.0 {
            other
        } else {
            self
        }
    }

    pub fn times(self, other: Weight) -> Weight {
        if self.is_zero() || other.is_zero() {
            Weight::ZERO
        } else {
            Weight(self.0 + other.0)
        }
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub ilabel: Label,
    pub olabel: Label,
    pub weight: Weight,
    pub next: StateId,
}

impl Transition {
    pub fn new(ilabel: Label, olabel: Label, weight: f64, next: StateId) -> Self {
        Transition {
            ilabel,
            olabel,
            weight: Weight(weight),
            next,
        }
    }
}

/// Symbol table with `<eps>` fixed at id 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    symbols: Vec<String>,
    ids: HashMap<String, Label>,
}

impl Default for SymbolTable {
    fn default() -> Self {
        Self::new()
    }
}

impl SymbolTable {
    pub fn new() -> Self {
        let mut t = SymbolTable {
            symbols: Vec::new(),
            ids: HashMap::default(),
        };
        t.add(EPSILON_SYMBOL);
        t
    }

    pub fn from_symbols<S: AsRef<str>>(symbols: impl IntoIterator<Item = S>) -> Self {
        let mut t = SymbolTable::new();
        for s in symbols {
            t.add(s.as_ref());
        }
        t
    }

    pub fn add(&mut self, symbol: &str) -> Label {
        if let Some(&id) = self.ids.get(symbol) {
            return id;
        }
        let id = self.symbols.len() as Label;
        self.symbols.push(symbol.to_string());
        self.ids.insert(symbol.to_string(), id);
        id
    }

    pub fn get(&self, symbol: &str) -> Option<Label> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: Label) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Non-epsilon symbols with their ids.
    pub fn iter(&self) -> impl Iterator<Item = (Label, &str)> {
        self.symbols
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, s)| (i as Label, s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct StateData {
    arcs: Vec<Transition>,
    final_weight: Weight,
}

impl StateData {
    fn new() -> Self {
        StateData {
            arcs: Vec::new(),
            final_weight: Weight::ZERO,
        }
    }
}

/// Mutable vector-backed transducer. A fresh transducer has a single
/// non-final start state, i.e. it accepts nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Wfst {
    start: StateId,
    states: Vec<StateData>,
    isyms: Arc<SymbolTable>,
    osyms: Arc<SymbolTable>,
    input_sorted: bool,
}

impl Wfst {
    pub fn new(isyms: Arc<SymbolTable>, osyms: Arc<SymbolTable>) -> Self {
        Wfst {
            start: 0,
            states: vec![StateData::new()],
            isyms,
            osyms,
            input_sorted: true,
        }
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn set_start(&mut self, s: StateId) {
        assert!((s as usize) < self.states.len(), "start state {s} does not exist");
        self.start = s;
    }

    pub fn add_state(&mut self) -> StateId {
        self.states.push(StateData::new());
        (self.states.len() - 1) as StateId
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.states.iter().map(|s| s.arcs.len()).sum()
    }

    pub fn add_arc(&mut self, src: StateId, arc: Transition) {
        assert!(
            (arc.next as usize) < self.states.len(),
            "arc destination {} does not exist",
            arc.next
        );
        let arcs = &mut self.states[src as usize].arcs;
        if let Some(last) = arcs.last() {
            if last.ilabel > arc.ilabel {
                self.input_sorted = false;
            }
        }
        arcs.push(arc);
    }

    pub fn set_final(&mut self, s: StateId, w: Weight) {
        self.states[s as usize].final_weight = w;
    }

    pub fn final_weight(&self, s: StateId) -> Weight {
        self.states[s as usize].final_weight
    }

    pub fn is_final(&self, s: StateId) -> bool {
        !self.final_weight(s).is_zero()
    }

    pub fn arcs(&self, s: StateId) -> &[Transition] {
        &self.states[s as usize].arcs
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        0..self.states.len() as StateId
    }

    pub fn input_symbols(&self) -> &Arc<SymbolTable> {
        &self.isyms
    }

    pub fn output_symbols(&self) -> &Arc<SymbolTable> {
        &self.osyms
    }

    /// Sorts every state's arcs by input label (stable).
    pub fn sort_by_input(&mut self) {
        for st in &mut self.states {
            st.arcs.sort_by_key(|a| a.ilabel);
        }
        self.input_sorted = true;
    }

    /// Arcs leaving `s` with input label `label`. Binary search when the
    /// arcs are input-sorted, a linear scan otherwise.
    pub fn arcs_with_input(&self, s: StateId, label: Label) -> impl Iterator<Item = &Transition> {
        let arcs = self.arcs(s);
        let (lo, hi) = if self.input_sorted {
            let lo = arcs.partition_point(|a| a.ilabel < label);
            (lo, lo + arcs[lo..].partition_point(|a| a.ilabel == label))
        } else {
            (0, arcs.len())
        };
        arcs[lo..hi].iter().filter(move |a| a.ilabel == label)
    }

    /// Copy with every arc and final cost multiplied by -1.
    pub fn negate_weights(&self) -> Result<Wfst, WfstError> {
        let mut out = self.clone();
        for (s, st) in out.states.iter_mut().enumerate() {
            for a in &mut st.arcs {
                if !a.weight.0.is_finite() {
                    return Err(WfstError::NonFiniteWeight {
                        src: s as StateId,
                        dst: a.next,
                        cost: a.weight.0,
                    });
                }
                a.weight = Weight(-a.weight.0);
            }
            if !st.final_weight.is_zero() {
                st.final_weight = Weight(-st.final_weight.0);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn syms() -> Arc<SymbolTable> {
        Arc::new(SymbolTable::from_symbols(["a", "b", "c"]))
    }

    #[test]
    fn fresh_transducer_accepts_nothing() {
        let f = Wfst::new(syms(), syms());
        assert_eq!(f.num_states(), 1);
        assert!(!f.is_final(f.start()));
    }

    #[test]
    fn negation_flips_costs() {
        let mut f = Wfst::new(syms(), syms());
        let s1 = f.add_state();
        f.add_arc(0, Transition::new(1, 2, 2.5, s1));
        f.set_final(s1, Weight(0.75));
        let n = f.negate_weights().unwrap();
        assert_eq!(n.arcs(0)[0].weight, Weight(-2.5));
        assert_eq!(n.final_weight(s1), Weight(-0.75));
        assert!(n.final_weight(0).is_zero());
        assert_eq!(n.negate_weights().unwrap(), f);
    }

    #[test]
    fn negation_rejects_infinite_arcs() {
        let mut f = Wfst::new(syms(), syms());
        f.add_arc(0, Transition::new(1, 1, f64::INFINITY, 0));
        assert!(matches!(
            f.negate_weights(),
            Err(WfstError::NonFiniteWeight { .. })
        ));
    }

    #[test]
    fn label_lookup_on_sorted_arcs() {
        let mut f = Wfst::new(syms(), syms());
        f.add_arc(0, Transition::new(2, 1, 1.0, 0));
        f.add_arc(0, Transition::new(1, 1, 1.0, 0));
        f.add_arc(0, Transition::new(2, 2, 3.0, 0));
        f.sort_by_input();
        assert_eq!(f.arcs_with_input(0, 2).count(), 2);
        assert_eq!(f.arcs_with_input(0, 1).count(), 1);
        assert_eq!(f.arcs_with_input(0, 3).count(), 0);
    }

    fn finite() -> impl Strategy<Value = f64> {
        -50.0f64..50.0
    }

    proptest! {
        #[test]
        fn semiring_laws(a in finite(), b in finite(), c in finite()) {
            let (a, b, c) = (Weight(a), Weight(b), Weight(c));
            prop_assert_eq!(a.plus(b).plus(c), a.plus(b.plus(c)));
            prop_assert_eq!(a.plus(b), b.plus(a));
            prop_assert!((a.times(b).times(c).0 - a.times(b.times(c)).0).abs() < 1e-9);
            let left = a.times(b.plus(c)).0;
            let right = a.times(b).plus(a.times(c)).0;
            prop_assert!((left - right).abs() < 1e-12);
            prop_assert_eq!(a.plus(Weight::ZERO), a);
            prop_assert_eq!(a.times(Weight::ONE), a);
            prop_assert!(a.times(Weight::ZERO).is_zero());
        }
    }
}
