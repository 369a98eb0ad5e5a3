use std::collections::VecDeque;

use serde::Serialize;

use super::{ResultSet, SearchFeature};

pub const HISTORY_CAPACITY: usize = 100;

/// Per-user back stack of result sets plus the similarity tab.
///
/// The similarity tab holds the most recent similarity result ever pushed
/// and is not affected by going back.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SearchHistory {
    stack: VecDeque<ResultSet>,
    last_similarity: Option<ResultSet>,
}

impl SearchHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, results: ResultSet) {
        if results.query.feature == SearchFeature::SimilaritySearch {
            self.last_similarity = Some(results.clone());
        }
        if self.stack.len() == HISTORY_CAPACITY {
            self.stack.pop_front();
        }
        self.stack.push_back(results);
    }

    /// Pops the most recent result set.
    pub fn back(&mut self) -> Option<ResultSet> {
        self.stack.pop_back()
    }

    pub fn current(&self) -> Option<&ResultSet> {
        self.stack.back()
    }

    pub fn last_similarity(&self) -> Option<&ResultSet> {
        self.last_similarity.as_ref()
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ResultSet> {
        self.stack.iter()
    }
}
