use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::skeldata::SkeletonSequence;

/// Rooted joint hierarchy; `parent[i]` is `None` exactly for roots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphPrior {
    parent: Vec<Option<usize>>,
}

impl GraphPrior {
    pub fn new(parent: Vec<Option<usize>>) -> Result<Self> {
        let n = parent.len();
        if n == 0 {
            return Err(Error::config("parent", "graph needs at least one joint"));
        }
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return Err(Error::config(format!("parent[{i}]"), format!("parent {p} out of range")));
                }
            }
        }
        // every walk towards the root must terminate within n hops
        for start in 0..n {
            let mut cur = start;
            let mut hops = 0;
            while let Some(p) = parent[cur] {
                cur = p;
                hops += 1;
                if hops > n {
                    return Err(Error::config(format!("parent[{start}]"), "cycle in joint hierarchy"));
                }
            }
        }
        Ok(GraphPrior { parent })
    }

    /// Joint 0 is the root and joint `i` hangs off joint `i - 1`.
    pub fn chain(num_joints: usize) -> Self {
        let parent = (0..num_joints).map(|i| i.checked_sub(1)).collect();
        GraphPrior { parent }
    }

    pub fn num_joints(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    /// Longest root-to-leaf hop count.
    pub fn depth(&self) -> usize {
        (0..self.parent.len())
            .map(|mut cur| {
                let mut hops = 0;
                while let Some(p) = self.parent[cur] {
                    cur = p;
                    hops += 1;
                }
                hops
            })
            .max()
            .unwrap_or(0)
    }

    /// The ancestor exactly `k` hops up, if the chain is long enough.
    pub fn ancestor(&self, joint: usize, k: usize) -> Option<usize> {
        (0..k).try_fold(joint, |cur, _| self.parent[cur])
    }

    /// Binary `J x J` matrix with `P[i][parent(i)] = 1`.
    pub fn adjacency(&self) -> Tensor {
        let n = self.parent.len();
        let mut data = vec![0.0; n * n];
        for (i, p) in self.parent.iter().enumerate() {
            if let Some(p) = *p {
                data[i * n + p] = 1.0;
            }
        }
        Tensor::new(vec![n, n], data).expect("finite")
    }
}

/// k-hop bone modality `(I - P^k) X_t` per frame and entity. Joints without
/// a `k`-th ancestor keep their joint coordinates.
pub fn khop_bones(x: &SkeletonSequence, prior: &GraphPrior, k: usize) -> Result<SkeletonSequence> {
    if k < 1 {
        return Err(Error::Usage("k-hop bones need k >= 1".into()));
    }
    let d = x.dims();
    if prior.num_joints() != d.j {
        return Err(Error::Dimension(format!("graph has {} joints, sequence has {}", prior.num_joints(), d.j)));
    }
    let src = x.data();
    let mut out = src.to_vec();
    for j in 0..d.j {
        let Some(anc) = prior.ancestor(j, k) else { continue };
        for c in 0..d.c {
            for t in 0..d.t {
                for e in 0..d.e {
                    out[d.offset(c, t, j, e)] -= src[d.offset(c, t, anc, e)];
                }
            }
        }
    }
    x.with_data(out)
}
