use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Deduplicated implicit-feedback pairs over dense 0-based ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSet {
    pairs: Vec<(usize, usize)>,
    num_users: usize,
    num_items: usize,
}

impl InteractionSet {
    /// Builds a set from raw pairs. Duplicates are collapsed and pairs are
    /// sorted by `(user, item)`. Every user in `[0, num_users)` must have at
    /// least one interaction.
    pub fn new(pairs: Vec<(usize, usize)>, num_users: usize, num_items: usize) -> Result<Self> {
        let set: BTreeSet<(usize, usize)> = pairs.into_iter().collect();
        let pairs: Vec<_> = set.into_iter().collect();
        if pairs.is_empty() {
            return Err(Error::EmptyDataset("no interactions".into()));
        }
        if let Some(&(u, i)) = pairs.iter().find(|(u, i)| *u >= num_users || *i >= num_items) {
            return Err(Error::dim(format!(
                "pair ({u}, {i}) outside {num_users}x{num_items}"
            )));
        }
        let mut seen = vec![false; num_users];
        pairs.iter().for_each(|&(u, _)| seen[u] = true);
        if let Some(u) = seen.iter().position(|s| !s) {
            return Err(Error::EmptyDataset(format!("user {u} has no interactions")));
        }
        Ok(Self {
            pairs,
            num_users,
            num_items,
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn density(&self) -> f64 {
        self.pairs.len() as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    pub fn to_matrix(&self) -> RatingMatrix {
        RatingMatrix::from_pairs(self.num_users, self.num_items, &self.pairs)
    }
}

/// Binary CSR matrix; every stored entry is an implicit 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    num_cols: usize,
}

impl RatingMatrix {
    pub fn from_pairs(num_rows: usize, num_cols: usize, pairs: &[(usize, usize)]) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); num_rows];
        for &(u, i) in pairs {
            rows[u].push(i);
        }
        Self::from_rows(num_cols, rows)
    }

    /// Rows are sorted and deduplicated.
    pub fn from_rows(num_cols: usize, rows: Vec<Vec<usize>>) -> Self {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for mut row in rows {
            row.sort_unstable();
            row.dedup();
            debug_assert!(row.last().is_none_or(|&j| j < num_cols));
            col_indices.extend(row);
            row_offsets.push(col_indices.len());
        }
        Self {
            row_offsets,
            col_indices,
            num_cols,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.num_rows()).map(move |i| self.row(i))
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_cols];
        self.col_indices.iter().for_each(|&j| counts[j] += 1);
        counts
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.num_rows())
            .flat_map(|i| self.row(i).iter().map(move |&j| (i, j)))
            .collect()
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> RatingMatrix {
        RatingMatrix::from_rows(
            self.num_cols,
            rows.iter().map(|&i| self.row(i).to_vec()).collect(),
        )
    }
}
