use super::RegionQuery;

/// Boolean attention mask; `true` blocks the link from row token to column
/// token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    blocked: Vec<bool>,
}

impl AttentionMask {
    pub fn unblocked(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            blocked: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_blocked(&self, i: usize, j: usize) -> bool {
        self.blocked[i * self.cols + j]
    }

    pub fn block(&mut self, i: usize, j: usize) {
        self.blocked[i * self.cols + j] = true;
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|b| **b).count()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::unblocked(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.is_blocked(i, j) {
                    t.block(j, i);
                }
            }
        }
        t
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && *self == self.transpose()
    }
}

/// Blocks attention between distinct queries that describe the same
/// region (noise replicas of one box). Self-attention stays open.
pub fn build_denoise_mask(queries: &[RegionQuery]) -> AttentionMask {
    let n = queries.len();
    let mut m = AttentionMask::unblocked(n, n);
    let mut by_region: std::collections::HashMap<&str, Vec<usize>> = Default::default();
    for (i, q) in queries.iter().enumerate() {
        by_region.entry(q.region_id.as_str()).or_default().push(i);
    }
    for idx in by_region.values() {
        for &i in idx {
            for &j in idx {
                if i != j {
                    m.block(i, j);
                }
            }
        }
    }
    m
}
