use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::Stream;

/// Default number of folds.
pub const DEFAULT_FOLDS: usize = 5;

/// Random partition of `0..n` into `folds` groups whose sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossFitPlan {
    folds: usize,
    assignment: Vec<usize>,
}

impl CrossFitPlan {
    pub fn new(n: usize, folds: usize, rng: &mut Stream) -> Result<Self> {
        if folds < 2 {
            return Err(Error::Input(format!("need at least 2 folds, got {folds}")));
        }
        if n < folds {
            return Err(Error::Input(format!("{n} records cannot fill {folds} folds")));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let mut assignment = vec![0; n];
        for (pos, &i) in perm.iter().enumerate() {
            assignment[i] = pos % folds;
        }
        Ok(Self { folds, assignment })
    }

    /// Plan from an explicit assignment (fold indices `0..folds`).
    pub fn from_assignment(assignment: Vec<usize>, folds: usize) -> Result<Self> {
        if folds < 2 || assignment.iter().any(|&f| f >= folds) {
            return Err(Error::Input("invalid fold assignment".into()));
        }
        Ok(Self { folds, assignment })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Records in fold `k`.
    pub fn held_out(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == k).collect()
    }

    /// Records outside fold `k`.
    pub fn training(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] != k).collect()
    }
}
