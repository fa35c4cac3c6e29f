//! Small hand-checkable instances shared by tests, benches and the CLI.

use nalgebra::DMatrix;

use crate::cells::ActivationPattern;
use crate::model::Dataset;

/// The two-sample, bias-free instance `x1 = (1,0)`, `x2 = (0,1)`,
/// `y = (1,1)`; with `flipped` the second label is `-1`.
pub fn two_sample_dataset(flipped: bool) -> Dataset {
    let samples = DMatrix::identity(2, 2);
    let y2 = if flipped { -1.0 } else { 1.0 };
    Dataset::without_bias(samples, vec![1.0, y2]).expect("fixture is valid")
}

/// Quadrants of the single-neuron weight plane of [`two_sample_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoSampleCell {
    /// Both samples inactive (third quadrant).
    R1,
    /// Only `x2` active.
    R2,
    /// Only `x1` active.
    R3,
    /// Both samples active (first quadrant).
    R4,
}

impl TwoSampleCell {
    pub const ALL: [TwoSampleCell; 4] = [Self::R1, Self::R2, Self::R3, Self::R4];

    pub fn name(self) -> &'static str {
        match self {
            Self::R1 => "r1",
            Self::R2 => "r2",
            Self::R3 => "r3",
            Self::R4 => "r4",
        }
    }
}

pub fn two_sample_pattern(cell: TwoSampleCell) -> ActivationPattern {
    let (a1, a2) = match cell {
        TwoSampleCell::R1 => (false, false),
        TwoSampleCell::R2 => (false, true),
        TwoSampleCell::R3 => (true, false),
        TwoSampleCell::R4 => (true, true),
    };
    ActivationPattern::from_fn(2, 1, |i, _| if i == 0 { a1 } else { a2 })
}

/// One feature plus bias, K = 2. Neuron 0 sees every sample; neuron 1 only
/// the three with positive feature. With `S = {0}` the candidate is a
/// genuine saddle: `R_0` fits all labels by least squares and neuron 1 has a
/// nonzero gradient hyperplane that cuts through its cell.
pub fn saddle_instance() -> (Dataset, ActivationPattern) {
    let ts = [-2.0, -1.0, 1.0, 2.0, 3.0];
    let features: Vec<Vec<f64>> = ts.iter().map(|&t| vec![t]).collect();
    let data = Dataset::from_features(&features, vec![1.0, 1.0, 1.0, -1.0, 1.0])
        .expect("fixture is valid");
    let pattern = ActivationPattern::from_fn(5, 2, |i, j| j == 0 || ts[i] > 0.0);
    (data, pattern)
}

/// One feature plus bias, K = 1, with a boundary minimum: neuron 0 on the
/// hyperplane of sample 3 (`t = 1`), active on the samples with `t < 1`.
/// Returns `(data, pattern, m, n)`.
pub fn boundary_instance() -> (Dataset, ActivationPattern, usize, usize) {
    let ts = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let features: Vec<Vec<f64>> = ts.iter().map(|&t| vec![t]).collect();
    let data = Dataset::from_features(&features, vec![1.0, 1.0, 1.0, -1.0, 1.0])
        .expect("fixture is valid");
    let pattern = ActivationPattern::from_fn(5, 1, |i, _| ts[i] < 1.0);
    (data, pattern, 0, 3)
}
