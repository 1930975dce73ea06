//! Region catalog, urban feature matrices, and external feature tensors.
//! Pure data containers plus the standardization and calendar-encoding math;
//! file parsing lives in the companion crate.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::fmath;
use crate::tensor::Tensor;

/// Region identifiers, their index order, and the binary spatial adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCatalog {
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
    adjacency: Tensor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CatalogError {
    DuplicateRegion(String),
    SelfLoop(usize),
}

impl core::fmt::Display for CatalogError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CatalogError::DuplicateRegion(id) => write!(f, "duplicate region id {id:?}"),
            CatalogError::SelfLoop(i) => write!(f, "self-loop on region index {i}"),
        }
    }
}

impl RegionCatalog {
    pub fn new(ids: Vec<String>) -> Result<Self, CatalogError> {
        let mut index = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateRegion(id.clone()));
            }
        }
        let n = ids.len();
        Ok(Self {
            ids,
            index,
            adjacency: Tensor::zeros(&[n, n]),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Marks an undirected edge; idempotent. Self-loops are rejected.
    pub fn set_edge(&mut self, a: usize, b: usize) -> Result<(), CatalogError> {
        if a == b {
            return Err(CatalogError::SelfLoop(a));
        }
        let n = self.len();
        assert!(a < n && b < n, "edge endpoint out of range");
        self.adjacency.data_mut()[a * n + b] = 1.0;
        self.adjacency.data_mut()[b * n + a] = 1.0;
        Ok(())
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    /// Regions without any neighbor (zero adjacency row).
    pub fn isolated_regions(&self) -> Vec<usize> {
        let n = self.len();
        (0..n)
            .filter(|&i| {
                self.adjacency.data()[i * n..(i + 1) * n]
                    .iter()
                    .all(|&v| v == 0.0)
            })
            .collect()
    }

    pub fn degree(&self, region: usize) -> usize {
        let n = self.len();
        self.adjacency.data()[region * n..(region + 1) * n]
            .iter()
            .filter(|&&v| v != 0.0)
            .count()
    }
}

/// Per-column mean/std captured during standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Variance floor below which a column is treated as constant.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Standardizes each column of an N×d matrix to zero mean / unit variance
/// (population moments) in place, flooring the variance for constant columns.
pub fn standardize_columns(matrix: &mut Tensor, floor: f64) -> ColumnStats {
    let n = matrix.dims()[0];
    let d = matrix.dims()[1];
    let mut means = Vec::with_capacity(d);
    let mut stds = Vec::with_capacity(d);
    for c in 0..d {
        let mut sum = 0.0;
        for r in 0..n {
            sum += matrix.at2(r, c);
        }
        let mean = sum / n as f64;
        let mut var = 0.0;
        for r in 0..n {
            let dv = matrix.at2(r, c) - mean;
            var += dv * dv;
        }
        var /= n as f64;
        let std = fmath::sqrt(var.max(floor));
        for r in 0..n {
            let v = (matrix.at2(r, c) - mean) / std;
            matrix.set2(r, c, v);
        }
        means.push(mean);
        stds.push(std);
    }
    ColumnStats { means, stds }
}

/// Static urban configuration: standardized POI and road matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct UrbanFeatures {
    pub poi: Tensor,
    pub road: Tensor,
    pub poi_columns: Vec<String>,
    pub road_columns: Vec<String>,
    pub poi_stats: ColumnStats,
    pub road_stats: ColumnStats,
}

impl UrbanFeatures {
    pub fn d_poi(&self) -> usize {
        self.poi.dims()[1]
    }

    pub fn d_road(&self) -> usize {
        self.road.dims()[1]
    }
}

/// Dynamic external features over the full time axis, broadcast per region.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalFeatures {
    /// N×T_total×d_M interval means of weather observations.
    pub meteorology: Tensor,
    /// N×T_total×d_C calendar encodings.
    pub calendar: Tensor,
}

impl ExternalFeatures {
    pub fn d_met(&self) -> usize {
        self.meteorology.dims()[2]
    }

    pub fn d_cal(&self) -> usize {
        self.calendar.dims()[2]
    }
}

/// Calendar encoding width: 7 day-of-week slots + holiday + weekend, plus a
/// day-part flag at 12-hour resolution.
pub fn calendar_width(interval_hours: u32) -> usize {
    if interval_hours == 12 {
        10
    } else {
        9
    }
}

/// Encodes one interval: `dow` is 0 = Monday .. 6 = Sunday; `pm` is the
/// day-part flag used only at 12-hour resolution.
pub fn encode_calendar(dow: usize, holiday: bool, pm: Option<bool>) -> Vec<f64> {
    assert!(dow < 7, "day-of-week index out of range");
    let mut v = Vec::with_capacity(10);
    for i in 0..7 {
        v.push(if i == dow { 1.0 } else { 0.0 });
    }
    v.push(if holiday { 1.0 } else { 0.0 });
    v.push(if dow >= 5 { 1.0 } else { 0.0 });
    if let Some(pm) = pm {
        v.push(if pm { 1.0 } else { 0.0 });
    }
    v
}
