/// Binary sum tree over `2^k` leaves. Internal nodes are always recomputed as
/// the sum of their two children, so the root never drifts from the leaves by
/// more than the rounding of a single balanced summation.
#[derive(Debug, Clone)]
pub struct SumTree {
    nodes: Vec<f64>,
    leaves: usize,
    cap: usize,
}

impl SumTree {
    pub fn new(leaves: usize) -> Self {
        let cap = leaves.max(1).next_power_of_two();
        Self {
            nodes: vec![0.0; 2 * cap],
            leaves,
            cap,
        }
    }

    pub fn from_values(values: &[f64]) -> Self {
        let mut tree = Self::new(values.len());
        tree.nodes[tree.cap..tree.cap + values.len()].copy_from_slice(values);
        tree.rebuild();
        tree
    }

    pub fn len(&self) -> usize {
        self.leaves
    }

    pub fn is_empty(&self) -> bool {
        self.leaves == 0
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.cap + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: f64) {
        debug_assert!(i < self.leaves && value >= 0.0);
        let mut node = self.cap + i;
        if self.nodes[node] == value {
            return;
        }
        self.nodes[node] = value;
        while node > 1 {
            node >>= 1;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Write a leaf without updating its ancestors; follow with [`Self::propagate`].
    #[inline]
    pub fn set_leaf(&mut self, i: usize, value: f64) {
        debug_assert!(i < self.leaves && value >= 0.0);
        self.nodes[self.cap + i] = value;
    }

    /// Recompute the ancestors of the given sorted, deduplicated leaves,
    /// visiting each shared ancestor once. The slice is used as scratch.
    pub fn propagate(&mut self, leaves: &mut Vec<usize>) {
        for leaf in leaves.iter_mut() {
            *leaf += self.cap;
        }
        while leaves.first().is_some_and(|&n| n > 1) {
            let mut w = 0;
            for r in 0..leaves.len() {
                let parent = leaves[r] >> 1;
                if w == 0 || leaves[w - 1] != parent {
                    leaves[w] = parent;
                    w += 1;
                }
            }
            leaves.truncate(w);
            for &node in leaves.iter() {
                self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
            }
        }
        leaves.clear();
    }

    /// Recompute every internal node from the leaves.
    pub fn rebuild(&mut self) {
        for node in (1..self.cap).rev() {
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf `i` such that the prefix sum before `i` is ≤ `target` < prefix through `i`.
    /// Never returns a zero-weight leaf while the total is positive.
    #[inline]
    pub fn find(&self, mut target: f64) -> usize {
        let mut node = 1;
        while node < self.cap {
            let left = self.nodes[2 * node];
            let right = self.nodes[2 * node + 1];
            let go_right = target >= left && right > 0.0;
            target -= if go_right { left } else { 0.0 };
            node = 2 * node + go_right as usize;
        }
        node - self.cap
    }

    pub fn leaves(&self) -> &[f64] {
        &self.nodes[self.cap..self.cap + self.leaves]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn find_respects_weights() {
        let t = SumTree::from_values(&[1.0, 0.0, 2.0, 3.0, 0.0]);
        assert_eq!(t.total(), 6.0);
        assert_eq!(t.find(0.0), 0);
        assert_eq!(t.find(0.999), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.999), 2);
        assert_eq!(t.find(3.0), 3);
        assert_eq!(t.find(5.999_999), 3);
        // rounding past the end must not land on a zero leaf
        assert_eq!(t.find(6.0), 3);
    }

    proptest! {
        #[test]
        fn root_tracks_leaves(values in prop::collection::vec(0.0f64..10.0, 1..70), updates in prop::collection::vec((0usize..70, 0.0f64..10.0), 0..200)) {
            let mut t = SumTree::from_values(&values);
            let mut shadow = values.clone();
            for (i, v) in updates {
                let i = i % shadow.len();
                t.set(i, v);
                shadow[i] = v;
            }
            let sum: f64 = shadow.iter().sum();
            prop_assert!((t.total() - sum).abs() <= 1e-9 * sum.max(1.0));
            prop_assert_eq!(t.leaves(), &shadow[..]);
        }

        #[test]
        fn batched_updates_match_single(values in prop::collection::vec(0.0f64..10.0, 1..70), batch in prop::collection::vec((0usize..70, 0.0f64..10.0), 0..20)) {
            let mut single = SumTree::from_values(&values);
            let mut batched = single.clone();
            let mut idx: Vec<(usize, f64)> = batch.into_iter().map(|(i, v)| (i % values.len(), v)).collect();
            idx.sort_by_key(|p| p.0);
            idx.dedup_by_key(|p| p.0);
            for &(i, v) in &idx {
                single.set(i, v);
                batched.set_leaf(i, v);
            }
            let mut leaves: Vec<usize> = idx.iter().map(|p| p.0).collect();
            batched.propagate(&mut leaves);
            prop_assert_eq!(single.nodes, batched.nodes);
        }
    }
}
