use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rustc_hash::FxHashMap as HashMap;

use super::{Label, StateId, SymbolTable, Transition, Weight, WfstError, Wfst, EPSILON};

/// A transducer whose states and arcs may be produced on demand.
///
/// Methods take `&mut self` so implementations can memoize expansions.
pub trait LazyFst {
    fn start(&mut self) -> StateId;
    fn final_weight(&mut self, s: StateId) -> Weight;
    fn arcs(&mut self, s: StateId) -> &[Transition];
    fn input_symbols(&self) -> &Arc<SymbolTable>;
    fn output_symbols(&self) -> &Arc<SymbolTable>;

    /// Arcs leaving `s` whose input label is `label`.
    fn arcs_with_input(&mut self, s: StateId, label: Label) -> Vec<Transition> {
        self.arcs(s)
            .iter()
            .filter(|a| a.ilabel == label)
            .copied()
            .collect()
    }
}

macro_rules! impl_lazy_for_static {
    ($t:ty) => {
        impl LazyFst for $t {
            fn start(&mut self) -> StateId {
                Wfst::start(self)
            }
            fn final_weight(&mut self, s: StateId) -> Weight {
                Wfst::final_weight(self, s)
            }
            fn arcs(&mut self, s: StateId) -> &[Transition] {
                Wfst::arcs(self, s)
            }
            fn input_symbols(&self) -> &Arc<SymbolTable> {
                Wfst::input_symbols(self)
            }
            fn output_symbols(&self) -> &Arc<SymbolTable> {
                Wfst::output_symbols(self)
            }
            fn arcs_with_input(&mut self, s: StateId, label: Label) -> Vec<Transition> {
                Wfst::arcs_with_input(self, s, label).copied().collect()
            }
        }
    };
}

impl_lazy_for_static!(&Wfst);
impl_lazy_for_static!(Wfst);
impl_lazy_for_static!(Arc<Wfst>);

/// Lets a lazily expanded machine be borrowed as an operand and keep its
/// memoized states afterwards.
impl<T: LazyFst + ?Sized> LazyFst for &mut T {
    fn start(&mut self) -> StateId {
        (**self).start()
    }
    fn final_weight(&mut self, s: StateId) -> Weight {
        (**self).final_weight(s)
    }
    fn arcs(&mut self, s: StateId) -> &[Transition] {
        (**self).arcs(s)
    }
    fn input_symbols(&self) -> &Arc<SymbolTable> {
        (**self).input_symbols()
    }
    fn output_symbols(&self) -> &Arc<SymbolTable> {
        (**self).output_symbols()
    }
    fn arcs_with_input(&mut self, s: StateId, label: Label) -> Vec<Transition> {
        (**self).arcs_with_input(s, label)
    }
}

/// Composed state: a pair of operand states plus the epsilon-filter state.
///
/// Filter state 0 allows both kinds of epsilon moves; filter state 1 is
/// entered after the right operand moved alone and forbids the left operand
/// from moving alone until a matched (non-epsilon) pair is taken. This keeps
/// exactly one path per pair of epsilon-interleaved operand paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComposeState {
    pub left: StateId,
    pub right: StateId,
    pub filter: u8,
}

fn check_symbols(left: &SymbolTable, right: &SymbolTable) -> Result<(), WfstError> {
    if left == right {
        Ok(())
    } else {
        Err(WfstError::SymbolMismatch)
    }
}

/// On-the-fly composition `left ∘ right`. A composed state's arcs are
/// computed the first time they are requested and cached afterwards.
pub struct LazyComposition<A, B> {
    left: A,
    right: B,
    tuples: Vec<ComposeState>,
    index: HashMap<ComposeState, StateId>,
    arcs: Vec<Option<Vec<Transition>>>,
    /// Arcs computed for a single input label of a not yet fully expanded state.
    partial: HashMap<(StateId, Label), Vec<Transition>>,
    finals: Vec<Option<Weight>>,
    isyms: Arc<SymbolTable>,
    osyms: Arc<SymbolTable>,
}

impl<A: LazyFst, B: LazyFst> LazyComposition<A, B> {
    pub fn new(mut left: A, mut right: B) -> Result<Self, WfstError> {
        check_symbols(left.output_symbols(), right.input_symbols())?;
        let isyms = left.input_symbols().clone();
        let osyms = right.output_symbols().clone();
        let start = ComposeState {
            left: left.start(),
            right: right.start(),
            filter: 0,
        };
        let mut lc = LazyComposition {
            left,
            right,
            tuples: Vec::new(),
            index: HashMap::default(),
            arcs: Vec::new(),
            partial: HashMap::default(),
            finals: Vec::new(),
            isyms,
            osyms,
        };
        lc.intern(start);
        Ok(lc)
    }

    fn intern(&mut self, st: ComposeState) -> StateId {
        if let Some(&id) = self.index.get(&st) {
            return id;
        }
        let id = self.tuples.len() as StateId;
        self.tuples.push(st);
        self.index.insert(st, id);
        self.arcs.push(None);
        self.finals.push(None);
        id
    }

    /// Operand states behind a composed state id.
    pub fn tuple(&self, s: StateId) -> ComposeState {
        self.tuples[s as usize]
    }

    /// Number of composed states discovered so far.
    pub fn num_discovered(&self) -> usize {
        self.tuples.len()
    }

    /// Number of composed states whose arcs have been computed.
    pub fn num_expanded(&self) -> usize {
        self.arcs.iter().filter(|a| a.is_some()).count()
    }

    pub fn left(&self) -> &A {
        &self.left
    }

    pub fn right(&self) -> &B {
        &self.right
    }

    fn expand(&mut self, s: StateId) {
        let left_arcs = self.left.arcs(self.tuples[s as usize].left).to_vec();
        let out = self.match_arcs(s, left_arcs, true);
        self.arcs[s as usize] = Some(out);
    }

    /// Composed arcs built from the given left arcs of `s`; right-only
    /// epsilon moves are appended when `right_eps` is set.
    fn match_arcs(&mut self, s: StateId, left_arcs: Vec<Transition>, right_eps: bool) -> Vec<Transition> {
        let ComposeState {
            left: s1,
            right: s2,
            filter,
        } = self.tuples[s as usize];
        let mut out = Vec::with_capacity(left_arcs.len());
        for a1 in left_arcs {
            if a1.olabel == EPSILON {
                if filter == 0 {
                    let next = self.intern(ComposeState {
                        left: a1.next,
                        right: s2,
                        filter: 0,
                    });
                    out.push(Transition {
                        ilabel: a1.ilabel,
                        olabel: EPSILON,
                        weight: a1.weight,
                        next,
                    });
                }
                continue;
            }
            for a2 in self.right.arcs_with_input(s2, a1.olabel) {
                let next = self.intern(ComposeState {
                    left: a1.next,
                    right: a2.next,
                    filter: 0,
                });
                out.push(Transition {
                    ilabel: a1.ilabel,
                    olabel: a2.olabel,
                    weight: a1.weight.times(a2.weight),
                    next,
                });
            }
        }
        if right_eps {
            for a2 in self.right.arcs_with_input(s2, EPSILON) {
                let next = self.intern(ComposeState {
                    left: s1,
                    right: a2.next,
                    filter: 1,
                });
                out.push(Transition {
                    ilabel: EPSILON,
                    olabel: a2.olabel,
                    weight: a2.weight,
                    next,
                });
            }
        }
        out
    }
}

impl<A: LazyFst, B: LazyFst> LazyFst for LazyComposition<A, B> {
    fn start(&mut self) -> StateId {
        0
    }

    fn final_weight(&mut self, s: StateId) -> Weight {
        if let Some(w) = self.finals[s as usize] {
            return w;
        }
        let st = self.tuples[s as usize];
        let w = self
            .left
            .final_weight(st.left)
            .times(self.right.final_weight(st.right));
        self.finals[s as usize] = Some(w);
        w
    }

    fn arcs(&mut self, s: StateId) -> &[Transition] {
        if self.arcs[s as usize].is_none() {
            self.expand(s);
        }
        self.arcs[s as usize].as_deref().unwrap()
    }

    fn input_symbols(&self) -> &Arc<SymbolTable> {
        &self.isyms
    }

    fn output_symbols(&self) -> &Arc<SymbolTable> {
        &self.osyms
    }

    /// Computes only the arcs carrying `label`, so a caller that never asks
    /// for the other labels of a state never pays for them.
    fn arcs_with_input(&mut self, s: StateId, label: Label) -> Vec<Transition> {
        if let Some(arcs) = &self.arcs[s as usize] {
            return arcs.iter().filter(|a| a.ilabel == label).copied().collect();
        }
        if let Some(arcs) = self.partial.get(&(s, label)) {
            return arcs.clone();
        }
        let s1 = self.tuples[s as usize].left;
        let left_arcs = self.left.arcs_with_input(s1, label);
        let out = self.match_arcs(s, left_arcs, label == EPSILON);
        self.partial.insert((s, label), out.clone());
        out
    }
}

/// Materializes every state reachable from the start, numbered in
/// breadth-first discovery order.
pub fn expand<F: LazyFst>(fst: &mut F) -> Wfst {
    let mut out = Wfst::new(fst.input_symbols().clone(), fst.output_symbols().clone());
    let mut ids: HashMap<StateId, StateId> = HashMap::default();
    let mut queue = VecDeque::new();
    let start = fst.start();
    ids.insert(start, 0);
    queue.push_back(start);
    while let Some(s) = queue.pop_front() {
        let src = ids[&s];
        let fw = fst.final_weight(s);
        out.set_final(src, fw);
        let arcs = fst.arcs(s).to_vec();
        for a in arcs {
            let dst = match ids.get(&a.next) {
                Some(&d) => d,
                None => {
                    let d = out.add_state();
                    ids.insert(a.next, d);
                    queue.push_back(a.next);
                    d
                }
            };
            out.add_arc(src, Transition { next: dst, ..a });
        }
    }
    out
}

/// Eager composition of two concrete transducers with the same epsilon
/// filter as [`LazyComposition`]. States are numbered in discovery order.
pub fn compose_static(a: &Wfst, b: &Wfst) -> Result<Wfst, WfstError> {
    check_symbols(a.output_symbols(), b.input_symbols())?;

    // b's arcs grouped by input label, preserving arc order
    let by_label: Vec<BTreeMap<Label, Vec<Transition>>> = b
        .states()
        .map(|s| {
            let mut m: BTreeMap<Label, Vec<Transition>> = BTreeMap::new();
            for arc in b.arcs(s) {
                m.entry(arc.ilabel).or_default().push(*arc);
            }
            m
        })
        .collect();

    let mut out = Wfst::new(a.input_symbols().clone(), b.output_symbols().clone());
    let mut ids: HashMap<(StateId, StateId, u8), StateId> = HashMap::default();
    let mut order: Vec<(StateId, StateId, u8)> = Vec::new();
    let start = (a.start(), b.start(), 0u8);
    ids.insert(start, 0);
    order.push(start);

    fn next_id(
        key: (StateId, StateId, u8),
        out: &mut Wfst,
        ids: &mut HashMap<(StateId, StateId, u8), StateId>,
        order: &mut Vec<(StateId, StateId, u8)>,
    ) -> StateId {
        *ids.entry(key).or_insert_with(|| {
            order.push(key);
            out.add_state()
        })
    }

    let mut i = 0;
    while i < order.len() {
        let (s1, s2, f) = order[i];
        let src = i as StateId;
        i += 1;
        out.set_final(src, a.final_weight(s1).times(b.final_weight(s2)));
        let empty = Vec::new();
        for a1 in a.arcs(s1) {
            if a1.olabel == EPSILON {
                if f == 0 {
                    let d = next_id((a1.next, s2, 0), &mut out, &mut ids, &mut order);
                    out.add_arc(src, Transition::new(a1.ilabel, EPSILON, a1.weight.0, d));
                }
                continue;
            }
            let matches = by_label[s2 as usize].get(&a1.olabel).unwrap_or(&empty);
            for a2 in matches {
                let d = next_id((a1.next, a2.next, 0), &mut out, &mut ids, &mut order);
                out.add_arc(
                    src,
                    Transition {
                        ilabel: a1.ilabel,
                        olabel: a2.olabel,
                        weight: a1.weight.times(a2.weight),
                        next: d,
                    },
                );
            }
        }
        let eps = by_label[s2 as usize].get(&EPSILON).unwrap_or(&empty);
        for a2 in eps {
            let d = next_id((s1, a2.next, 1), &mut out, &mut ids, &mut order);
            out.add_arc(src, Transition::new(EPSILON, a2.olabel, a2.weight.0, d));
        }
    }
    Ok(out)
}
