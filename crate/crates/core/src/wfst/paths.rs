use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use super::{Label, StateId, Weight, WfstError, Wfst, EPSILON};

/// Cost of the cheapest path from each state to a final state (+∞ when no
/// final state is reachable). Bellman-Ford on the reversed arcs, so negative
/// arc costs are allowed as long as no negative cycle exists.
pub fn shortest_distance_to_final(fst: &Wfst) -> Result<Vec<f64>, WfstError> {
    let n = fst.num_states();
    let mut dist: Vec<f64> = fst.states().map(|s| fst.final_weight(s).0).collect();
    for round in 0..=n {
        let mut changed = false;
        for s in fst.states() {
            for a in fst.arcs(s) {
                let d = dist[a.next as usize];
                if d == f64::INFINITY {
                    continue;
                }
                let cand = a.weight.0 + d;
                if cand < dist[s as usize] {
                    dist[s as usize] = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(dist);
        }
        if round == n {
            break;
        }
    }
    Err(WfstError::NegativeCycle)
}

struct Item {
    priority: f64,
    cost: f64,
    state: StateId,
    output: Vec<Label>,
    complete: bool,
}

impl Item {
    fn key(&self) -> (f64, &[Label], bool, StateId) {
        (self.priority, &self.output, self.complete, self.state)
    }
}

impl PartialEq for Item {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Item {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        let (pa, oa, ca, sa) = self.key();
        let (pb, ob, cb, sb) = other.key();
        pb.total_cmp(&pa)
            .then_with(|| ob.cmp(oa))
            .then_with(|| cb.cmp(&ca))
            .then_with(|| sb.cmp(&sa))
    }
}

/// Up to `n` distinct output label sequences (epsilons removed) in
/// nondecreasing cost order, each with the cost of its best path.
///
/// Best-first search over partial paths, ordered by cost so far plus the
/// exact distance to a final state. A (state, output prefix) pair is
/// expanded at most once: any later arrival is costlier and can only
/// complete to sequences already found.
pub fn shortest_paths(fst: &Wfst, n: usize) -> Result<Vec<(Vec<Label>, Weight)>, WfstError> {
    if n == 0 {
        return Err(WfstError::ZeroPaths);
    }
    let h = shortest_distance_to_final(fst)?;
    let start = fst.start();
    if h[start as usize] == f64::INFINITY {
        return Err(WfstError::NoAcceptingPath);
    }

    let mut heap = BinaryHeap::new();
    heap.push(Item {
        priority: h[start as usize],
        cost: 0.0,
        state: start,
        output: Vec::new(),
        complete: false,
    });
    let mut expanded: HashSet<(StateId, Vec<Label>)> = HashSet::new();
    let mut emitted: HashSet<Vec<Label>> = HashSet::new();
    let mut out = Vec::new();

    while let Some(item) = heap.pop() {
        if item.complete {
            if emitted.insert(item.output.clone()) {
                out.push((item.output, Weight(item.cost)));
                if out.len() == n {
                    break;
                }
            }
            continue;
        }
        if emitted.len() >= n || !expanded.insert((item.state, item.output.clone())) {
            continue;
        }
        let fw = fst.final_weight(item.state);
        if !fw.is_zero() {
            let cost = item.cost + fw.0;
            heap.push(Item {
                priority: cost,
                cost,
                state: item.state,
                output: item.output.clone(),
                complete: true,
            });
        }
        for a in fst.arcs(item.state) {
            let rest = h[a.next as usize];
            if rest == f64::INFINITY {
                continue;
            }
            let cost = item.cost + a.weight.0;
            let mut output = item.output.clone();
            if a.olabel != EPSILON {
                output.push(a.olabel);
            }
            heap.push(Item {
                priority: cost + rest,
                cost,
                state: a.next,
                output,
                complete: false,
            });
        }
    }
    Ok(out)
}
