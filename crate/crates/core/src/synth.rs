//! Deterministic synthetic city for desk-scale verification: a rook-adjacent
//! grid with planted accident hotspots, correlated urban features, sinusoidal
//! weather, and a sparse holiday calendar.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::catalog::RegionCatalog;
use crate::fmath;
use crate::risk::AccidentEvent;
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_regions: usize,
    pub n_steps: usize,
    pub n_hotspots: usize,
    pub seed: u64,
    pub interval_hours: u32,
}

/// An event plus the hour offset inside its interval (used when the city is
/// serialized with real timestamps).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthEvent {
    pub region: usize,
    pub time: usize,
    pub severity: u8,
    pub hour_offset: u32,
}

impl SynthEvent {
    pub fn to_event(self) -> AccidentEvent {
        AccidentEvent {
            region: self.region,
            time: self.time,
            severity: self.severity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCity {
    pub config: SynthConfig,
    /// Grid side; the catalog holds `side²` regions.
    pub side: usize,
    /// Regions appended to complete the grid when `n_regions` is not a
    /// perfect square; they never emit events.
    pub padding_regions: Vec<usize>,
    pub catalog: RegionCatalog,
    pub hotspots: Vec<usize>,
    pub events: Vec<SynthEvent>,
    /// N×4 raw (unstandardized) POI columns.
    pub poi: Tensor,
    /// N×3 raw road columns.
    pub road: Tensor,
    /// One row per hour (temperature, snow_depth, visibility).
    pub weather_hourly: Vec<[f64; 3]>,
    /// Day offsets (from the axis origin) that are holidays.
    pub holidays: Vec<usize>,
}

pub const POI_COLUMNS: [&str; 4] = ["poi_density", "retail", "leisure", "transit"];
pub const ROAD_COLUMNS: [&str; 3] = ["road_length", "junctions", "avg_width"];

impl SyntheticCity {
    pub fn n_regions(&self) -> usize {
        self.catalog.len()
    }

    pub fn events_plain(&self) -> Vec<AccidentEvent> {
        self.events.iter().map(|e| e.to_event()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SynthError {
    TooManyHotspots { hotspots: usize, regions: usize },
    Empty,
}

impl core::fmt::Display for SynthError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SynthError::TooManyHotspots { hotspots, regions } => {
                write!(f, "{hotspots} hotspots requested for {regions} regions")
            }
            SynthError::Empty => write!(f, "city needs at least one region and one step"),
        }
    }
}

fn sample_distinct(rng: &mut SeededRng, count: usize, upper: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..upper).collect();
    rng::shuffle(rng, &mut pool);
    let mut picked: Vec<usize> = pool.into_iter().take(count).collect();
    picked.sort_unstable();
    picked
}

fn severity_draw(rng: &mut SeededRng) -> u8 {
    let u: f64 = rand::Rng::random_range(rng, 0.0..1.0);
    if u < 0.85 {
        1
    } else if u < 0.985 {
        2
    } else {
        3
    }
}

/// Builds the whole city from one seed; identical seeds give identical
/// structs field-for-field.
pub fn generate_synthetic_city(config: SynthConfig) -> Result<SyntheticCity, SynthError> {
    if config.n_regions == 0 || config.n_steps == 0 {
        return Err(SynthError::Empty);
    }
    if config.n_hotspots > config.n_regions {
        return Err(SynthError::TooManyHotspots {
            hotspots: config.n_hotspots,
            regions: config.n_regions,
        });
    }

    let mut side = 1usize;
    while side * side < config.n_regions {
        side += 1;
    }
    let n = side * side;
    let padding_regions: Vec<usize> = (config.n_regions..n).collect();

    let width = {
        let mut w = 1;
        let mut rest = n - 1;
        while rest >= 10 {
            rest /= 10;
            w += 1;
        }
        w.max(3)
    };
    let ids: Vec<String> = (0..n).map(|i| format!("r{i:0width$}")).collect();
    let mut catalog = RegionCatalog::new(ids).expect("generated ids are unique");
    for row in 0..side {
        for col in 0..side {
            let i = row * side + col;
            if col + 1 < side {
                catalog.set_edge(i, i + 1).expect("grid edge");
            }
            if row + 1 < side {
                catalog.set_edge(i, i + side).expect("grid edge");
            }
        }
    }

    let mut r = rng::stream(config.seed, rng::TAG_SYNTH);
    let hotspots = sample_distinct(&mut r, config.n_hotspots, config.n_regions);

    // per-hotspot base intensity so hotspots differ in activity
    let hotspot_rate: Vec<f64> = hotspots
        .iter()
        .map(|_| 1.0 + rand::Rng::random_range(&mut r, 0.0..0.8))
        .collect();

    let steps_per_day = (24 / config.interval_hours.max(1)).max(1) as usize;
    let mut events = Vec::new();
    for t in 0..config.n_steps {
        let phase = (t % steps_per_day) as f64 / steps_per_day as f64;
        let daily = 1.0 + 0.6 * fmath::sin(core::f64::consts::TAU * phase);
        for (h, &region) in hotspots.iter().enumerate() {
            let lambda = hotspot_rate[h] * daily;
            let count = rng::poisson(&mut r, lambda);
            for _ in 0..count {
                let hour_offset = rand::Rng::random_range(&mut r, 0..config.interval_hours.max(1));
                events.push(SynthEvent {
                    region,
                    time: t,
                    severity: severity_draw(&mut r),
                    hour_offset,
                });
            }
        }
    }

    let is_hotspot = |i: usize| hotspots.binary_search(&i).is_ok();
    let poi = Tensor::from_fn(&[n, POI_COLUMNS.len()], |flat| {
        let region = flat / POI_COLUMNS.len();
        let col = flat % POI_COLUMNS.len();
        let noise = rng::normal(&mut r) * 0.3;
        let boost = if is_hotspot(region) { 4.0 } else { 0.0 };
        match col {
            0 => 1.0 + boost + noise,        // density tracks hotspot membership
            1 => 0.5 + 0.5 * boost + noise,  // retail partially correlated
            2 => 2.0 + noise,                // leisure uncorrelated
            _ => 0.2 + 0.3 * boost + noise,  // transit partially correlated
        }
    });
    let road = Tensor::from_fn(&[n, ROAD_COLUMNS.len()], |flat| {
        let region = flat / ROAD_COLUMNS.len();
        let col = flat % ROAD_COLUMNS.len();
        let noise = rng::normal(&mut r) * 0.2;
        let boost = if is_hotspot(region) { 2.0 } else { 0.0 };
        match col {
            0 => 3.0 + boost + noise,
            1 => 1.0 + 0.8 * boost + noise,
            _ => 6.0 + noise,
        }
    });

    let total_hours = config.n_steps * config.interval_hours.max(1) as usize;
    let mut weather_hourly = Vec::with_capacity(total_hours);
    for hour in 0..total_hours {
        let day_phase = (hour % 24) as f64 / 24.0;
        let season_phase = hour as f64 / (24.0 * 90.0);
        let temperature = 10.0
            + 6.0 * fmath::sin(core::f64::consts::TAU * (day_phase - 0.25))
            + 4.0 * fmath::sin(core::f64::consts::TAU * season_phase)
            + rng::normal(&mut r) * 0.5;
        let snow_raw = rng::normal(&mut r) - 2.2;
        let snow_depth = if snow_raw > 0.0 { snow_raw } else { 0.0 };
        let visibility = (9.0 - snow_depth * 2.0 + rng::normal(&mut r) * 0.4).max(0.5);
        weather_hourly.push([temperature, snow_depth, visibility]);
    }

    let total_days = total_hours.div_ceil(24);
    let holidays: Vec<usize> = (0..total_days)
        .filter(|_| rand::Rng::random_range(&mut r, 0.0..1.0) < 0.05)
        .collect();

    Ok(SyntheticCity {
        config,
        side,
        padding_regions,
        catalog,
        hotspots,
        events,
        poi,
        road,
        weather_hourly,
        holidays,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::compute_risk_scores;

    fn cfg(n_regions: usize, n_hotspots: usize) -> SynthConfig {
        SynthConfig {
            n_regions,
            n_steps: 60,
            n_hotspots,
            seed: 7,
            interval_hours: 12,
        }
    }

    #[test]
    fn same_seed_is_identical() {
        let a = generate_synthetic_city(cfg(25, 5)).unwrap();
        let b = generate_synthetic_city(cfg(25, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_hotspots_means_zero_risk() {
        let city = generate_synthetic_city(cfg(9, 0)).unwrap();
        assert!(city.events.is_empty());
        let rt = compute_risk_scores(&city.events_plain(), city.n_regions(), 60, 12).unwrap();
        assert!(rt.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hotspots_emit_strictly_more_events() {
        let city = generate_synthetic_city(cfg(25, 5)).unwrap();
        let mut counts = alloc::vec![0usize; city.n_regions()];
        for e in &city.events {
            counts[e.region] += 1;
        }
        let hot_mean = city.hotspots.iter().map(|&h| counts[h]).sum::<usize>() as f64
            / city.hotspots.len() as f64;
        let cold: Vec<usize> = (0..city.n_regions())
            .filter(|i| !city.hotspots.contains(i))
            .map(|i| counts[i])
            .collect();
        let cold_mean = cold.iter().sum::<usize>() as f64 / cold.len() as f64;
        assert!(hot_mean > cold_mean, "hot {hot_mean} vs cold {cold_mean}");
        assert_eq!(cold_mean, 0.0);
    }

    #[test]
    fn non_square_city_pads_to_grid() {
        let city = generate_synthetic_city(cfg(7, 2)).unwrap();
        assert_eq!(city.side, 3);
        assert_eq!(city.n_regions(), 9);
        assert_eq!(city.padding_regions, alloc::vec![7, 8]);
        // padding regions are inert
        assert!(city.events.iter().all(|e| e.region < 7));
        // rook grid: corner has 2 neighbors, center 4
        assert_eq!(city.catalog.degree(0), 2);
        assert_eq!(city.catalog.degree(4), 4);
    }

    #[test]
    fn hotspot_count_validated() {
        assert!(matches!(
            generate_synthetic_city(cfg(4, 9)).unwrap_err(),
            SynthError::TooManyHotspots { .. }
        ));
    }

    #[test]
    fn weather_covers_axis_hourly() {
        let city = generate_synthetic_city(cfg(9, 1)).unwrap();
        assert_eq!(city.weather_hourly.len(), 60 * 12);
    }
}
