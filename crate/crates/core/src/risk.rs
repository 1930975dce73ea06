//! Region×time risk tensors: severity-weighted scoring, the zero-inflation
//! transform, and sliding-window slicing into train/val/test samples.
//!
//! The transform replaces zero (no-accident) cells of region `i` with a
//! negative intensity `π_i = b1·log2(ε_i) + b2` fitted so the least active
//! region maps to −1 and the most active to −0.05, and rescales nonzero
//! cells by the training-slice maximum into (0, 1]. Both `ε` and the
//! maximum are fitted on the training period only; later values clip at 1.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::catalog::ExternalFeatures;
use crate::fmath;
use crate::tensor::Tensor;

/// One recorded accident, already aligned to the region index and time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccidentEvent {
    pub region: usize,
    pub time: usize,
    /// 1 = slight, 2 = serious, 3 = fatal.
    pub severity: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskKind {
    Raw,
    Pkde,
}

/// Region×time matrix of risk scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTensor {
    pub values: Tensor,
    pub kind: RiskKind,
    pub interval_hours: u32,
}

impl RiskTensor {
    pub fn n_regions(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn n_steps(&self) -> usize {
        self.values.dims()[1]
    }
}

/// Fitted zero-inflation transform.
#[derive(Debug, Clone, PartialEq)]
pub struct PkdeParams {
    pub b1: f64,
    pub b2: f64,
    /// Per-region statistical accident intensity (floored share of the
    /// busiest region's total).
    pub epsilon: Vec<f64>,
    pub floor: f64,
    /// Largest nonzero risk score in the training slice; the nonzero
    /// normalization statistic.
    pub train_max: f64,
}

/// Offset keeping the busiest region's negative intensity strictly below 0.
pub const PKDE_DELTA: f64 = 0.05;
/// Intensity floor (2⁻¹⁰) keeping log2 finite for regions without accidents.
pub const PKDE_FLOOR: f64 = 1.0 / 1024.0;

impl PkdeParams {
    /// Negative intensity assigned to zero cells of region `i`.
    pub fn pi(&self, region: usize) -> f64 {
        self.b1 * fmath::log2(self.epsilon[region]) + self.b2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RiskError {
    EventOutOfBounds {
        position: usize,
        event: AccidentEvent,
        n_regions: usize,
        n_steps: usize,
    },
    BadSeverity {
        position: usize,
        severity: u8,
    },
    NoTrainingAccidents,
    TooFewSteps {
        available: usize,
        minimum: usize,
    },
}

impl core::fmt::Display for RiskError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RiskError::EventOutOfBounds {
                position,
                event,
                n_regions,
                n_steps,
            } => write!(
                f,
                "event #{position} (region {}, time {}) outside bounds {n_regions}x{n_steps}",
                event.region, event.time
            ),
            RiskError::BadSeverity { position, severity } => {
                write!(f, "event #{position} has severity {severity}, expected 1..=3")
            }
            RiskError::NoTrainingAccidents => write!(f, "no accidents in training period"),
            RiskError::TooFewSteps { available, minimum } => write!(
                f,
                "time axis has {available} steps but windows need at least {minimum}"
            ),
        }
    }
}

/// Severity-weighted risk scores: each cell sums `severity` over its events.
pub fn compute_risk_scores(
    events: &[AccidentEvent],
    n_regions: usize,
    n_steps: usize,
    interval_hours: u32,
) -> Result<RiskTensor, RiskError> {
    let mut values = Tensor::zeros(&[n_regions, n_steps]);
    for (position, ev) in events.iter().enumerate() {
        if ev.region >= n_regions || ev.time >= n_steps {
            return Err(RiskError::EventOutOfBounds {
                position,
                event: *ev,
                n_regions,
                n_steps,
            });
        }
        if !(1..=3).contains(&ev.severity) {
            return Err(RiskError::BadSeverity {
                position,
                severity: ev.severity,
            });
        }
        let idx = ev.region * n_steps + ev.time;
        values.data_mut()[idx] += ev.severity as f64;
    }
    Ok(RiskTensor {
        values,
        kind: RiskKind::Raw,
        interval_hours,
    })
}

/// Fits the transform on the training columns `[0, train_end)` of a raw
/// tensor.
pub fn fit_pkde(tensor: &RiskTensor, train_end: usize) -> Result<PkdeParams, RiskError> {
    assert_eq!(tensor.kind, RiskKind::Raw, "fit_pkde expects a raw tensor");
    let n = tensor.n_regions();
    let steps = tensor.n_steps();
    let train_end = train_end.min(steps);

    let mut totals = Vec::with_capacity(n);
    let mut train_max = 0.0f64;
    for region in 0..n {
        let row = &tensor.values.data()[region * steps..region * steps + train_end];
        totals.push(row.iter().sum::<f64>());
        for &v in row {
            if v > train_max {
                train_max = v;
            }
        }
    }
    let max_total = totals.iter().cloned().fold(0.0f64, f64::max);
    if max_total <= 0.0 {
        return Err(RiskError::NoTrainingAccidents);
    }

    let epsilon: Vec<f64> = totals
        .iter()
        .map(|&t| (t / max_total).max(PKDE_FLOOR))
        .collect();
    let eps_min = epsilon.iter().cloned().fold(f64::INFINITY, f64::min);
    let eps_max = epsilon.iter().cloned().fold(0.0f64, f64::max);

    let (b1, b2) = if eps_min == eps_max {
        // all regions equally active: flat intensity at the midpoint
        (0.0, -0.5)
    } else {
        let (lmin, lmax) = (fmath::log2(eps_min), fmath::log2(eps_max));
        let b1 = (PKDE_DELTA - 1.0) / (lmin - lmax);
        let b2 = -PKDE_DELTA - b1 * lmax;
        (b1, b2)
    };

    Ok(PkdeParams {
        b1,
        b2,
        epsilon,
        floor: PKDE_FLOOR,
        train_max,
    })
}

/// Applies a fitted transform to a raw tensor (training or held-out columns).
pub fn apply_pkde(tensor: &RiskTensor, params: &PkdeParams) -> RiskTensor {
    assert_eq!(tensor.kind, RiskKind::Raw, "apply_pkde expects a raw tensor");
    let n = tensor.n_regions();
    let steps = tensor.n_steps();
    assert_eq!(
        params.epsilon.len(),
        n,
        "pkde params fitted for a different region count"
    );
    let mut values = tensor.values.clone();
    for region in 0..n {
        let pi = params.pi(region);
        for v in &mut values.data_mut()[region * steps..(region + 1) * steps] {
            *v = if *v == 0.0 {
                pi
            } else {
                (*v / params.train_max).min(1.0)
            };
        }
    }
    RiskTensor {
        values,
        kind: RiskKind::Pkde,
        interval_hours: tensor.interval_hours,
    }
}

/// Maps model outputs back to the raw risk scale: negative (no-accident)
/// intensities clamp to 0, nonzero scale restores via the training maximum.
pub fn invert_pkde(values: &Tensor, train_max: f64) -> Tensor {
    values.map(|v| if v <= 0.0 { 0.0 } else { v * train_max })
}

/// One training sample: `t_in` input steps followed by `horizon` target
/// steps, with the external features of the input steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub window_start: usize,
    pub inputs: Tensor,
    pub targets: Tensor,
    pub external_met: Tensor,
    pub external_cal: Tensor,
}

impl SampleWindow {
    pub fn t_in(&self) -> usize {
        self.inputs.dims()[1]
    }

    pub fn horizon(&self) -> usize {
        self.targets.dims()[1]
    }

    /// First target time index.
    pub fn target_start(&self) -> usize {
        self.window_start + self.t_in()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSplits {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
    /// Time-axis boundaries: training period `[0, train_end)`, validation
    /// `[train_end, val_end)`, test `[val_end, n_steps)`.
    pub train_end: usize,
    pub val_end: usize,
}

impl WindowSplits {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Chronological split boundaries from ratios.
pub fn split_boundaries(n_steps: usize, train_ratio: f64, val_ratio: f64) -> (usize, usize) {
    let train_end = fmath::floor(n_steps as f64 * train_ratio) as usize;
    let val_end = fmath::floor(n_steps as f64 * (train_ratio + val_ratio)) as usize;
    (train_end.min(n_steps), val_end.min(n_steps))
}

/// Slices stride-1 windows and assigns each to the split containing its
/// last target index, so training windows never touch later periods.
pub fn make_windows(
    tensor: &RiskTensor,
    externals: &ExternalFeatures,
    t_in: usize,
    horizon: usize,
    train_ratio: f64,
    val_ratio: f64,
) -> Result<WindowSplits, RiskError> {
    let n = tensor.n_regions();
    let steps = tensor.n_steps();
    let minimum = t_in + horizon;
    if steps < minimum {
        return Err(RiskError::TooFewSteps {
            available: steps,
            minimum,
        });
    }
    assert_eq!(
        externals.meteorology.dims()[0],
        n,
        "external region axis mismatch"
    );
    assert!(
        externals.meteorology.dims()[1] >= steps && externals.calendar.dims()[1] >= steps,
        "external time axis shorter than the risk tensor"
    );

    let (train_end, val_end) = split_boundaries(steps, train_ratio, val_ratio);
    let d_met = externals.meteorology.dims()[2];
    let d_cal = externals.calendar.dims()[2];

    let mut splits = WindowSplits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        train_end,
        val_end,
    };

    for start in 0..=(steps - minimum) {
        let input_range = start..start + t_in;
        let target_range = start + t_in..start + minimum;

        let mut inputs = Tensor::zeros(&[n, t_in]);
        let mut targets = Tensor::zeros(&[n, horizon]);
        for region in 0..n {
            for (j, t) in input_range.clone().enumerate() {
                inputs.set2(region, j, tensor.values.at2(region, t));
            }
            for (j, t) in target_range.clone().enumerate() {
                targets.set2(region, j, tensor.values.at2(region, t));
            }
        }
        let mut met = Tensor::zeros(&[n, t_in, d_met]);
        let mut cal = Tensor::zeros(&[n, t_in, d_cal]);
        for region in 0..n {
            for (j, t) in input_range.clone().enumerate() {
                for c in 0..d_met {
                    met.set3(region, j, c, externals.meteorology.at3(region, t, c));
                }
                for c in 0..d_cal {
                    cal.set3(region, j, c, externals.calendar.at3(region, t, c));
                }
            }
        }

        let window = SampleWindow {
            window_start: start,
            inputs,
            targets,
            external_met: met,
            external_cal: cal,
        };
        let last_target = start + minimum - 1;
        if last_target < train_end {
            splits.train.push(window);
        } else if last_target < val_end {
            splits.val.push(window);
        } else {
            splits.test.push(window);
        }
    }
    Ok(splits)
}

/// Human-readable split summary for logs.
pub fn describe_splits(splits: &WindowSplits) -> String {
    let (tr, va, te) = splits.counts();
    format!(
        "windows: {tr} train / {va} val / {te} test (time boundaries {} and {})",
        splits.train_end, splits.val_end
    )
}
