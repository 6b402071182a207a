//! State–action transfer datasets.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng as _;

use crate::error::{check_len, Error, Result};
use crate::rng::Rng;

/// A sequence of (state, action) pairs with a train/validation split.
///
/// Rows `[0, val_start)` form the training split and rows
/// `[val_start, len)` the validation split. Rows are stored in random order,
/// so a positional split is a random split.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferDataset {
    states: Array2<f64>,
    actions: Array2<f64>,
    val_start: usize,
}

impl TransferDataset {
    /// Build a dataset whose last `round(len * val_fraction)` rows are the
    /// validation split.
    pub fn new(states: Array2<f64>, actions: Array2<f64>, val_fraction: f64) -> Result<Self> {
        check_len("dataset rows", states.nrows(), actions.nrows())?;
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::InvalidConfig(format!(
                "val_fraction must lie in [0,1), got {val_fraction}"
            )));
        }
        let len = states.nrows();
        let n_val = ((len as f64) * val_fraction).round() as usize;
        Ok(Self {
            states,
            actions,
            val_start: len - n_val.min(len),
        })
    }

    /// An empty dataset with the given state and action widths.
    pub fn empty(state_dim: usize, action_dim: usize) -> Self {
        Self {
            states: Array2::zeros((0, state_dim)),
            actions: Array2::zeros((0, action_dim)),
            val_start: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    pub fn states(&self) -> ArrayView2<'_, f64> {
        self.states.view()
    }

    pub fn actions(&self) -> ArrayView2<'_, f64> {
        self.actions.view()
    }

    pub fn train_len(&self) -> usize {
        self.val_start
    }

    pub fn val_len(&self) -> usize {
        self.len() - self.val_start
    }

    pub fn train_states(&self) -> ArrayView2<'_, f64> {
        self.states.slice(s![..self.val_start, ..])
    }

    pub fn train_actions(&self) -> ArrayView2<'_, f64> {
        self.actions.slice(s![..self.val_start, ..])
    }

    pub fn val_states(&self) -> ArrayView2<'_, f64> {
        self.states.slice(s![self.val_start.., ..])
    }

    pub fn val_actions(&self) -> ArrayView2<'_, f64> {
        self.actions.slice(s![self.val_start.., ..])
    }

    /// The training split as a dataset of its own (no validation rows).
    pub fn train_split(&self) -> Self {
        Self::from_rows(self.train_states(), self.train_actions(), 0.0)
    }

    /// The validation split as a dataset of its own (no validation rows).
    pub fn val_split(&self) -> Self {
        Self::from_rows(self.val_states(), self.val_actions(), 0.0)
    }

    fn from_rows(
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        val_fraction: f64,
    ) -> Self {
        Self::new(states.to_owned(), actions.to_owned(), val_fraction)
            .expect("row counts agree by construction")
    }

    /// Draw `n` distinct rows uniformly at random and split them anew.
    pub fn sample(&self, n: usize, val_fraction: f64, rng: &mut Rng) -> Result<Self> {
        if self.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        if n > self.len() {
            return Err(Error::Shape {
                context: "dataset sample size",
                expected: self.len(),
                actual: n,
            });
        }
        let idx = index::sample(rng, self.len(), n).into_vec();
        Self::new(
            self.states.select(Axis(0), &idx),
            self.actions.select(Axis(0), &idx),
            val_fraction,
        )
    }

    /// Keep only rows where `keep` returns true, preserving order; the split
    /// point moves with the retained rows.
    pub fn filter<F>(&self, mut keep: F) -> Self
    where
        F: FnMut(ndarray::ArrayView1<'_, f64>, ndarray::ArrayView1<'_, f64>) -> bool,
    {
        let mut idx = Vec::new();
        let mut val_start = 0;
        for (i, (s, a)) in self
            .states
            .outer_iter()
            .zip(self.actions.outer_iter())
            .enumerate()
        {
            if keep(s, a) {
                if i < self.val_start {
                    val_start += 1;
                }
                idx.push(i);
            }
        }
        Self {
            states: self.states.select(Axis(0), &idx),
            actions: self.actions.select(Axis(0), &idx),
            val_start,
        }
    }

    /// Concatenate two datasets and re-split the union with a fresh shuffle.
    pub fn union_resplit(&self, other: &Self, val_fraction: f64, rng: &mut Rng) -> Result<Self> {
        check_len("union state width", self.state_dim(), other.state_dim())?;
        check_len("union action width", self.action_dim(), other.action_dim())?;
        let states = concatenate(Axis(0), &[self.states.view(), other.states.view()])
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let actions = concatenate(Axis(0), &[self.actions.view(), other.actions.view()])
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let mut order: Vec<usize> = (0..states.nrows()).collect();
        shuffle(&mut order, rng);
        Self::new(
            states.select(Axis(0), &order),
            actions.select(Axis(0), &order),
            val_fraction,
        )
    }
}

/// Keep exactly the pairs whose action has no component equal to `+1` or
/// `-1`. Exact comparison: only answers that hit the clipping bound are
/// removed.
pub fn prune_saturated(d: &TransferDataset) -> TransferDataset {
    d.filter(|_, a| a.iter().all(|&x| x != 1.0 && x != -1.0))
}

/// Fisher–Yates shuffle driven by the crate RNG.
pub(crate) fn shuffle(order: &mut [usize], rng: &mut Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}
