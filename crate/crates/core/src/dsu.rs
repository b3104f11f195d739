//! Disjoint-set forest that also tracks the member list of every root.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            members: (0..n).map(|i| vec![i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Root lookup without path compression so it works through `&self`.
    pub fn find(&self, mut node: usize) -> usize {
        while self.parent[node] != node {
            node = self.parent[node];
        }
        node
    }

    /// Sorted members of the set containing `node`.
    pub fn members(&self, node: usize) -> &[usize] {
        &self.members[self.find(node)]
    }

    /// Merges the two sets and returns the new root. Union by size keeps depth logarithmic.
    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        let moved = std::mem::take(&mut self.members[rb]);
        let kept = std::mem::take(&mut self.members[ra]);
        self.members[ra] = merge_sorted(&kept, &moved);
        ra
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.parent[i] == i)
    }
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
