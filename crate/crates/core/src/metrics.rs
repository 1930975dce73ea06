//! Evaluation on the raw risk scale: RMSE, MAE, Recall@K over top-risk
//! regions, per-horizon-step breakdowns, and the persistence baseline.

use alloc::vec::Vec;

use crate::fmath;
use crate::risk::SampleWindow;
use crate::tensor::Tensor;

/// Predictions and targets for a whole split, stacked (windows, N, τ).
#[derive(Debug, Clone)]
pub struct StackedOutcomes {
    pub actual: Tensor,
    pub predicted: Tensor,
}

impl StackedOutcomes {
    pub fn new(actual: Tensor, predicted: Tensor) -> Self {
        assert_eq!(actual.dims(), predicted.dims(), "outcome shape mismatch");
        assert_eq!(actual.rank(), 3, "expected (windows, regions, steps)");
        Self { actual, predicted }
    }

    pub fn from_windows(pairs: &[(Tensor, Tensor)]) -> Self {
        assert!(!pairs.is_empty());
        let dims = pairs[0].0.dims();
        let (n, tau) = (dims[0], dims[1]);
        let w = pairs.len();
        let mut actual = Tensor::zeros(&[w, n, tau]);
        let mut predicted = Tensor::zeros(&[w, n, tau]);
        for (i, (a, p)) in pairs.iter().enumerate() {
            assert_eq!(a.dims(), dims);
            assert_eq!(p.dims(), dims);
            actual.data_mut()[i * n * tau..(i + 1) * n * tau].copy_from_slice(a.data());
            predicted.data_mut()[i * n * tau..(i + 1) * n * tau].copy_from_slice(p.data());
        }
        Self { actual, predicted }
    }

    pub fn n_windows(&self) -> usize {
        self.actual.dims()[0]
    }

    pub fn n_regions(&self) -> usize {
        self.actual.dims()[1]
    }

    pub fn horizon(&self) -> usize {
        self.actual.dims()[2]
    }
}

/// Root mean squared error: per-step MSE over regions and windows, averaged
/// over steps, then the square root.
pub fn rmse(outcomes: &StackedOutcomes) -> f64 {
    let tau = outcomes.horizon();
    let mut acc = 0.0;
    for step in 0..tau {
        acc += step_mse(outcomes, step);
    }
    fmath::sqrt(acc / tau as f64)
}

/// Mean absolute error over every entry.
pub fn mae(outcomes: &StackedOutcomes) -> f64 {
    let tau = outcomes.horizon();
    let mut acc = 0.0;
    for step in 0..tau {
        acc += step_mae(outcomes, step);
    }
    acc / tau as f64
}

fn step_mse(outcomes: &StackedOutcomes, step: usize) -> f64 {
    let (w, n, tau) = (
        outcomes.n_windows(),
        outcomes.n_regions(),
        outcomes.horizon(),
    );
    let mut acc = 0.0;
    for wi in 0..w {
        for r in 0..n {
            let idx = (wi * n + r) * tau + step;
            let d = outcomes.actual.data()[idx] - outcomes.predicted.data()[idx];
            acc += d * d;
        }
    }
    acc / (w * n) as f64
}

fn step_mae(outcomes: &StackedOutcomes, step: usize) -> f64 {
    let (w, n, tau) = (
        outcomes.n_windows(),
        outcomes.n_regions(),
        outcomes.horizon(),
    );
    let mut acc = 0.0;
    for wi in 0..w {
        for r in 0..n {
            let idx = (wi * n + r) * tau + step;
            acc += fmath::abs(outcomes.actual.data()[idx] - outcomes.predicted.data()[idx]);
        }
    }
    acc / (w * n) as f64
}

/// Indices of the top-k values, ties resolved toward the lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Recall of one (window, step): predicted top-K against the positive-risk
/// actual set (capped at K). `None` when no region has positive actual risk.
fn slice_recall(actual: &[f64], predicted: &[f64], k: usize) -> Option<f64> {
    let positives: Vec<usize> = (0..actual.len()).filter(|&i| actual[i] > 0.0).collect();
    if positives.is_empty() || k == 0 {
        return None;
    }
    let actual_set: Vec<usize> = if positives.len() > k {
        top_k_indices(actual, k)
    } else {
        positives
    };
    let predicted_set = top_k_indices(predicted, k);
    let hits = actual_set
        .iter()
        .filter(|i| predicted_set.contains(i))
        .count();
    Some(hits as f64 / actual_set.len() as f64)
}

/// Pooled Recall@K over every retained (window, step) pair; `None` when all
/// were skipped for lack of positive actual risk.
pub fn recall_at_k(outcomes: &StackedOutcomes, k_fraction: f64) -> Option<f64> {
    assert!(k_fraction > 0.0 && k_fraction <= 1.0, "k_fraction in (0,1]");
    let (w, n, tau) = (
        outcomes.n_windows(),
        outcomes.n_regions(),
        outcomes.horizon(),
    );
    let k = fmath::round(k_fraction * n as f64) as usize;
    let mut acc = 0.0;
    let mut retained = 0usize;
    for wi in 0..w {
        for step in 0..tau {
            let (a, p) = gather_step(outcomes, wi, step);
            if let Some(r) = slice_recall(&a, &p, k) {
                acc += r;
                retained += 1;
            }
        }
    }
    (retained > 0).then(|| acc / retained as f64)
}

fn gather_step(outcomes: &StackedOutcomes, window: usize, step: usize) -> (Vec<f64>, Vec<f64>) {
    let (n, tau) = (outcomes.n_regions(), outcomes.horizon());
    let mut a = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    for r in 0..n {
        let idx = (window * n + r) * tau + step;
        a.push(outcomes.actual.data()[idx]);
        p.push(outcomes.predicted.data()[idx]);
    }
    (a, p)
}

/// Metrics for one horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub rmse: f64,
    pub mae: f64,
    pub recall: Option<f64>,
    /// (window, step) pairs that had positive actual risk.
    pub retained: usize,
}

/// Split-level evaluation report. Aggregates are means of the per-step
/// values (RMSE as the root of the mean per-step MSE).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    /// Mean of per-step recalls over steps with retained pairs; `None` when
    /// every step was skipped.
    pub recall_at_k: Option<f64>,
    pub k_fraction: f64,
    pub per_step: Vec<StepMetrics>,
    pub n_windows: usize,
    pub n_regions: usize,
    pub skipped_pairs: usize,
}

impl EvalReport {
    pub fn compute(outcomes: &StackedOutcomes, k_fraction: f64) -> Self {
        assert!(k_fraction > 0.0 && k_fraction <= 1.0);
        let (w, n, tau) = (
            outcomes.n_windows(),
            outcomes.n_regions(),
            outcomes.horizon(),
        );
        let k = fmath::round(k_fraction * n as f64) as usize;
        let mut per_step = Vec::with_capacity(tau);
        let mut mse_sum = 0.0;
        let mut mae_sum = 0.0;
        let mut skipped = 0usize;
        for step in 0..tau {
            let mse = step_mse(outcomes, step);
            let mae_s = step_mae(outcomes, step);
            let mut acc = 0.0;
            let mut retained = 0usize;
            for wi in 0..w {
                let (a, p) = gather_step(outcomes, wi, step);
                match slice_recall(&a, &p, k) {
                    Some(r) => {
                        acc += r;
                        retained += 1;
                    }
                    None => skipped += 1,
                }
            }
            per_step.push(StepMetrics {
                step,
                rmse: fmath::sqrt(mse),
                mae: mae_s,
                recall: (retained > 0).then(|| acc / retained as f64),
                retained,
            });
            mse_sum += mse;
            mae_sum += mae_s;
        }
        let with_recall: Vec<f64> = per_step.iter().filter_map(|s| s.recall).collect();
        EvalReport {
            rmse: fmath::sqrt(mse_sum / tau as f64),
            mae: mae_sum / tau as f64,
            recall_at_k: (!with_recall.is_empty())
                .then(|| with_recall.iter().sum::<f64>() / with_recall.len() as f64),
            k_fraction,
            per_step,
            n_windows: w,
            n_regions: n,
            skipped_pairs: skipped,
        }
    }
}

/// Repeats the last observed input step across the whole horizon.
pub fn persistence_baseline(window: &SampleWindow) -> Tensor {
    let n = window.inputs.dims()[0];
    let t = window.t_in();
    let tau = window.horizon();
    let mut out = Tensor::zeros(&[n, tau]);
    for r in 0..n {
        let last = window.inputs.at2(r, t - 1);
        for j in 0..tau {
            out.set2(r, j, last);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn stack1(actual: Vec<f64>, predicted: Vec<f64>, n: usize, tau: usize) -> StackedOutcomes {
        StackedOutcomes::new(
            Tensor::new(vec![1, n, tau], actual),
            Tensor::new(vec![1, n, tau], predicted),
        )
    }

    #[test]
    fn rmse_and_mae_match_hand_values() {
        // Y=[[0,1]], Yhat=[[0,0]] -> rmse = sqrt(0.5), mae = 0.5
        let o = stack1(vec![0.0, 1.0], vec![0.0, 0.0], 1, 2);
        assert_eq!(rmse(&o).to_bits(), (0.5f64).sqrt().to_bits());
        assert_eq!(mae(&o), 0.5);
        // perfect prediction
        let o = stack1(vec![0.5, -1.0], vec![0.5, -1.0], 1, 2);
        assert_eq!(rmse(&o), 0.0);
        assert_eq!(mae(&o), 0.0);
    }

    #[test]
    fn rmse_is_homogeneous_and_dominates_mae() {
        let a = vec![0.0, 3.0, 1.0, 2.0, 5.0, 0.5];
        let p = vec![1.0, 2.0, 0.0, 2.5, 4.0, 1.5];
        let o = stack1(a.clone(), p.clone(), 3, 2);
        let r1 = rmse(&o);
        let m1 = mae(&o);
        assert!(m1 <= r1);
        let scaled = stack1(
            a.iter().map(|x| x * 3.0).collect(),
            p.iter().map(|x| x * 3.0).collect(),
            3,
            2,
        );
        assert!((rmse(&scaled) - 3.0 * r1).abs() < 1e-12);
    }

    #[test]
    fn recall_worked_example() {
        // N=10, K=2: actual top set {3,7}, predicted picks {3,5} -> 0.5
        let mut actual = vec![0.0; 10];
        actual[3] = 5.0;
        actual[7] = 4.0;
        let mut predicted = vec![0.0; 10];
        predicted[3] = 9.0;
        predicted[5] = 8.0;
        let o = stack1(actual, predicted, 10, 1);
        assert_eq!(recall_at_k(&o, 0.2), Some(0.5));
    }

    #[test]
    fn recall_perfect_prediction_is_one() {
        let actual = vec![0.0, 2.0, 0.0, 1.0];
        let o = stack1(actual.clone(), actual, 4, 1);
        assert_eq!(recall_at_k(&o, 0.5), Some(1.0));
    }

    #[test]
    fn recall_caps_actual_set_at_positives() {
        // only one positive; K=2; prediction ranks it second -> recall 1
        let actual = vec![0.0, 0.0, 3.0, 0.0];
        let predicted = vec![5.0, 0.0, 4.0, 0.0];
        let o = stack1(actual, predicted, 4, 1);
        assert_eq!(recall_at_k(&o, 0.5), Some(1.0));
    }

    #[test]
    fn recall_skips_all_zero_steps() {
        let o = stack1(vec![0.0, 0.0], vec![1.0, 0.5], 2, 1);
        assert_eq!(recall_at_k(&o, 0.5), None);
        let report = EvalReport::compute(&o, 0.5);
        assert_eq!(report.recall_at_k, None);
        assert_eq!(report.skipped_pairs, 1);
    }

    #[test]
    fn recall_is_invariant_under_monotone_transforms() {
        let actual = vec![0.0, 2.0, 1.0, 0.0, 4.0, 0.0];
        let predicted = vec![0.3, 1.9, 2.2, 0.1, 3.5, 0.2];
        let o = stack1(actual.clone(), predicted.clone(), 6, 1);
        let base = recall_at_k(&o, 0.34);
        let transformed = stack1(
            actual,
            predicted.iter().map(|&x| (x * 2.0).exp() + 7.0).collect(),
            6,
            1,
        );
        assert_eq!(base, recall_at_k(&transformed, 0.34));
    }

    #[test]
    fn report_aggregates_are_means_of_steps() {
        let actual = vec![1.0, 0.0, 2.0, 3.0, 0.0, 1.0, 0.0, 2.0];
        let predicted = vec![0.5, 0.5, 1.5, 2.0, 0.5, 0.5, 1.0, 1.0];
        let o = StackedOutcomes::new(
            Tensor::new(vec![2, 2, 2], actual),
            Tensor::new(vec![2, 2, 2], predicted),
        );
        let report = EvalReport::compute(&o, 0.5);
        assert_eq!(report.per_step.len(), 2);
        let mean_mse: f64 = report
            .per_step
            .iter()
            .map(|s| s.rmse * s.rmse)
            .sum::<f64>()
            / 2.0;
        assert!((report.rmse - mean_mse.sqrt()).abs() < 1e-12);
        let mean_mae: f64 = report.per_step.iter().map(|s| s.mae).sum::<f64>() / 2.0;
        assert!((report.mae - mean_mae).abs() < 1e-12);
    }

    #[test]
    fn persistence_repeats_last_input() {
        let w = SampleWindow {
            window_start: 0,
            inputs: Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            targets: Tensor::zeros(&[2, 2]),
            external_met: Tensor::zeros(&[2, 3, 1]),
            external_cal: Tensor::zeros(&[2, 3, 1]),
        };
        let p = persistence_baseline(&w);
        assert_eq!(p.data(), &[3.0, 3.0, 6.0, 6.0]);
        // constant series has zero persistence error
        let w2 = SampleWindow {
            window_start: 0,
            inputs: Tensor::full(&[2, 3], 1.5),
            targets: Tensor::full(&[2, 2], 1.5),
            external_met: Tensor::zeros(&[2, 3, 1]),
            external_cal: Tensor::zeros(&[2, 3, 1]),
        };
        let p2 = persistence_baseline(&w2);
        let o = StackedOutcomes::from_windows(&[(w2.targets.clone(), p2)]);
        assert_eq!(rmse(&o), 0.0);
    }
}
