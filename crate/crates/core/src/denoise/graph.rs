use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// For every view, the ordered list of views whose keys and values it attends to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewGraph {
    related: Vec<Vec<usize>>,
}

impl ViewGraph {
    pub fn from_lists(related: Vec<Vec<usize>>) -> Result<Self> {
        let n = related.len();
        for (v, list) in related.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Config(format!("view {v} has no related views")));
            }
            if let Some(bad) = list.iter().find(|&&r| r >= n) {
                return Err(Error::Config(format!(
                    "view {v} relates to view {bad} but there are only {n} views"
                )));
            }
        }
        Ok(Self { related })
    }

    /// Left neighbour, optionally self, right neighbour on a closed ring.
    pub fn ring(n: usize, include_self: bool) -> Self {
        let related = (0..n)
            .map(|v| {
                let left = (v + n - 1) % n;
                let right = (v + 1) % n;
                let mut list = vec![left];
                if include_self {
                    list.push(v);
                }
                list.push(right);
                let mut seen = Vec::with_capacity(list.len());
                for r in list {
                    if !seen.contains(&r) {
                        seen.push(r);
                    }
                }
                seen
            })
            .collect();
        Self { related }
    }

    /// Every view attends to all views.
    pub fn complete(n: usize) -> Self {
        Self {
            related: (0..n).map(|_| (0..n).collect()).collect(),
        }
    }

    pub fn self_only(n: usize) -> Self {
        Self {
            related: (0..n).map(|v| vec![v]).collect(),
        }
    }

    pub fn num_views(&self) -> usize {
        self.related.len()
    }

    pub fn related(&self, view: usize) -> &[usize] {
        &self.related[view]
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.related
    }
}

/// Graph policy used when a sampler builds its view graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphPolicy {
    /// Left and right neighbours plus the view itself.
    #[default]
    RingWithSelf,
    /// Left and right neighbours only.
    Ring,
    Complete,
    SelfOnly,
}

impl GraphPolicy {
    pub fn build(self, n: usize) -> ViewGraph {
        match self {
            GraphPolicy::RingWithSelf => ViewGraph::ring(n, true),
            GraphPolicy::Ring => ViewGraph::ring(n, false),
            GraphPolicy::Complete => ViewGraph::complete(n),
            GraphPolicy::SelfOnly => ViewGraph::self_only(n),
        }
    }
}
