/// Disjoint-set forest with union by size and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(len: usize) -> Self {
        Self {
            parent: (0..len as u32).collect(),
            size: vec![1; len],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    /// Merges the sets of `a` and `b`; returns the new root, or `None` if they
    /// were already joined.
    pub fn union(&mut self, a: u32, b: u32) -> Option<u32> {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return None;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        Some(big)
    }

    pub fn set_size(&mut self, x: u32) -> usize {
        let r = self.find(x);
        self.size[r as usize] as usize
    }

    /// Dense component labels `0..k` in order of first appearance, plus sizes.
    pub fn labels(&mut self) -> (Vec<u32>, Vec<usize>) {
        let n = self.parent.len();
        let mut root_label = vec![u32::MAX; n];
        let mut labels = Vec::with_capacity(n);
        let mut sizes = Vec::new();
        for i in 0..n as u32 {
            let r = self.find(i) as usize;
            if root_label[r] == u32::MAX {
                root_label[r] = sizes.len() as u32;
                sizes.push(0);
            }
            let l = root_label[r];
            sizes[l as usize] += 1;
            labels.push(l);
        }
        (labels, sizes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unions_and_labels() {
        let mut uf = UnionFind::new(6);
        assert!(uf.union(0, 1).is_some());
        assert!(uf.union(4, 5).is_some());
        assert!(uf.union(1, 0).is_none());
        uf.union(1, 4);
        let (labels, sizes) = uf.labels();
        assert_eq!(labels, vec![0, 0, 1, 2, 0, 0]);
        assert_eq!(sizes, vec![4, 1, 1]);
        assert_eq!(uf.set_size(5), 4);
    }
}
