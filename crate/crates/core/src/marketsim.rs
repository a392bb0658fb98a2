//! A simulated market day: random bids and loads, one dispatch per
//! five-minute interval, and the resulting congestion price matrix.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispatch::{self, GridModel, MarketScenario};
use crate::error::{Error, Result};
use crate::lpsolve::SolveOptions;
use crate::numerics;
use crate::textio;
use crate::tolerances;

pub const DATASET_FORMAT: u32 = 1;

/// Normalized hourly load profile used for the IEEE 14-bus day.
pub const HOURLY_LOAD_FACTORS: [f64; 24] = [
    0.77, 0.74, 0.73, 0.74, 0.77, 0.83, 0.90, 0.95, 0.97, 0.99, 0.99, 1.00, 0.99, 0.99, 0.97,
    0.96, 0.94, 0.92, 0.91, 0.90, 0.91, 0.88, 0.81, 0.75,
];

/// RNG stream ids; every consumer of randomness gets its own stream.
pub const STREAM_SCENARIOS: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_MASKS: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Mean offer price, $/MWh.
    pub bid: f64,
    /// Upper generation bound, MW.
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BusSpec {
    /// Unmodulated mean fixed load, MW.
    #[serde(default)]
    pub load: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusRole {
    Generator,
    Load,
    Zero,
}

impl BusSpec {
    pub fn role(&self) -> BusRole {
        if self.generator.is_some() {
            BusRole::Generator
        } else if self.load > 0.0 {
            BusRole::Load
        } else {
            BusRole::Zero
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redraw {
    Hourly,
    PerInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub intervals: usize,
    pub intervals_per_hour: usize,
    pub buses: Vec<BusSpec>,
    /// Standard deviation of the uniform bid perturbation, $/MWh.
    pub bid_std: f64,
    /// Standard deviation of the Gaussian load draws, MW.
    pub load_std: f64,
    pub hourly_factors: Vec<f64>,
    pub seed: u64,
    /// Price noise level; noise columns are `B^-1 (sigma z)`.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_true")]
    pub drop_uncongested: bool,
    #[serde(default = "default_bid_redraw")]
    pub bid_redraw: Redraw,
    #[serde(default = "default_load_redraw")]
    pub load_redraw: Redraw,
}

fn default_true() -> bool {
    true
}
fn default_bid_redraw() -> Redraw {
    Redraw::Hourly
}
fn default_load_redraw() -> Redraw {
    Redraw::PerInterval
}

impl SimulationConfig {
    /// Bus data for the IEEE 14-bus day: generators at buses 1, 2, 3, 6, 8,
    /// a zero-injection bus 7, fixed loads elsewhere.
    pub fn ieee14(seed: u64) -> Self {
        let gen = |bid, upper| Some(GeneratorSpec { bid, upper });
        let load = |load| BusSpec {
            load,
            generator: None,
        };
        let buses = vec![
            BusSpec { load: 0.0, generator: gen(18.0, 200.0) },
            BusSpec { load: 21.7, generator: gen(31.0, 140.0) },
            BusSpec { load: 94.2, generator: gen(30.0, 100.0) },
            load(47.8),
            load(7.6),
            BusSpec { load: 11.2, generator: gen(15.0, 100.0) },
            load(0.0),
            BusSpec { load: 0.0, generator: gen(22.0, 100.0) },
            load(29.5),
            load(9.0),
            load(3.5),
            load(6.1),
            load(13.5),
            load(14.9),
        ];
        SimulationConfig {
            intervals: 288,
            intervals_per_hour: 12,
            buses,
            bid_std: 2.88,
            load_std: 3f64.sqrt(),
            hourly_factors: HOURLY_LOAD_FACTORS.to_vec(),
            seed,
            noise_sigma: 0.0,
            drop_uncongested: true,
            bid_redraw: Redraw::Hourly,
            load_redraw: Redraw::PerInterval,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hourly_factors.len() != 24 {
            return Err(Error::Config(format!(
                "hourly_factors needs 24 entries, got {}",
                self.hourly_factors.len()
            )));
        }
        if self.intervals == 0 || self.intervals_per_hour == 0 {
            return Err(Error::Config("interval counts must be positive".into()));
        }
        if !(self.bid_std >= 0.0 && self.load_std >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::Config(
                "standard deviations must be non-negative".into(),
            ));
        }
        for (n, bus) in self.buses.iter().enumerate() {
            if !(bus.load >= 0.0) {
                return Err(Error::Config(format!("bus {} has negative mean load", n + 1)));
            }
            if let Some(g) = bus.generator {
                if !(g.upper >= 0.0 && g.bid.is_finite()) {
                    return Err(Error::Config(format!("bus {} has an invalid generator", n + 1)));
                }
            }
        }
        Ok(())
    }

    pub fn hour_of(&self, interval: usize) -> usize {
        (interval / self.intervals_per_hour) % 24
    }

    fn redraw_due(&self, mode: Redraw, interval: usize) -> bool {
        match mode {
            Redraw::PerInterval => true,
            Redraw::Hourly => interval.is_multiple_of(self.intervals_per_hour),
        }
    }
}

/// Per-interval bids and injection bounds for the whole day.
pub fn generate_scenarios(config: &SimulationConfig) -> Result<Vec<MarketScenario>> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, STREAM_SCENARIOS);
    let buses = config.buses.len();
    let half_width = config.bid_std * 3f64.sqrt();
    let mut bids = vec![0.0; buses];
    let mut loads = vec![0.0; buses];
    let mut scenarios = Vec::with_capacity(config.intervals);
    for t in 0..config.intervals {
        let hour = config.hour_of(t);
        let factor = config.hourly_factors[hour];
        if t == 0 || config.redraw_due(config.bid_redraw, t) {
            for (n, bus) in config.buses.iter().enumerate() {
                if let Some(g) = bus.generator {
                    bids[n] = if half_width > 0.0 {
                        Uniform::new_inclusive(g.bid - half_width, g.bid + half_width)
                            .expect("finite bid range")
                            .sample(&mut rng)
                    } else {
                        g.bid
                    };
                }
            }
        }
        if t == 0 || config.redraw_due(config.load_redraw, t) {
            for (n, bus) in config.buses.iter().enumerate() {
                if bus.load > 0.0 {
                    let mean = bus.load * factor;
                    loads[n] = if config.load_std > 0.0 {
                        Normal::new(mean, config.load_std)
                            .expect("positive std")
                            .sample(&mut rng)
                    } else {
                        mean
                    };
                }
            }
        }
        let mut p_lower = vec![0.0; buses];
        let mut p_upper = vec![0.0; buses];
        for (n, bus) in config.buses.iter().enumerate() {
            p_lower[n] = -loads[n];
            p_upper[n] = bus.generator.map_or(0.0, |g| g.upper) - loads[n];
        }
        scenarios.push(MarketScenario {
            interval: t,
            bids: bids.clone(),
            p_lower,
            p_upper,
        });
    }
    Ok(scenarios)
}

/// Congestion prices and multipliers collected over a simulated day.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceDataset {
    pub meta: DatasetMeta,
    /// N × T congestion (plus noise) prices at non-reference buses.
    pub prices: DMatrix<f64>,
    /// Lines × T net multipliers `mu_lower - mu_upper`.
    pub multipliers: DMatrix<f64>,
    /// N × T, `A' D M`.
    pub sources: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    /// Reduced dimension N.
    pub n: usize,
    pub lines: usize,
    pub t: usize,
    pub reference: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Intervals simulated, including dropped and infeasible ones.
    pub total_intervals: usize,
    /// Interval index of each column.
    pub intervals: Vec<usize>,
    /// Congested line indices (0-based) of each column.
    pub congested: Vec<Vec<usize>>,
    pub degenerate: Vec<bool>,
    pub infeasible: Vec<usize>,
    /// Number of simulated intervals with at least one congested line.
    pub congested_intervals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<serde_json::Value>,
}

impl PriceDataset {
    pub fn n(&self) -> usize {
        self.prices.nrows()
    }

    pub fn t(&self) -> usize {
        self.prices.ncols()
    }

    /// Distinct lines congested at least once.
    pub fn distinct_congested_lines(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.meta.congested.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn source_rank(&self) -> Result<usize> {
        numerics::numerical_rank(&self.sources, tolerances::RANK)
    }

    pub fn to_text(&self) -> Result<String> {
        textio::render(
            &self.meta,
            &[
                ("prices", &self.prices),
                ("multipliers", &self.multipliers),
                ("sources", &self.sources),
            ],
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut doc: textio::Document<DatasetMeta> = textio::parse(text)?;
        let meta = doc.header.clone();
        if meta.format != DATASET_FORMAT || meta.kind != "price_dataset" {
            return Err(Error::Schema(format!(
                "expected price_dataset format {DATASET_FORMAT}, found {} format {}",
                meta.kind, meta.format
            )));
        }
        for (what, len) in [
            ("intervals", meta.intervals.len()),
            ("congested", meta.congested.len()),
            ("degenerate", meta.degenerate.len()),
        ] {
            if len != meta.t {
                return Err(Error::Schema(format!(
                    "header lists {len} {what} entries for T = {}",
                    meta.t
                )));
            }
        }
        let prices = doc.take("prices", meta.n, meta.t)?;
        let multipliers = doc.take("multipliers", meta.lines, meta.t)?;
        let sources = doc.take("sources", meta.n, meta.t)?;
        Ok(PriceDataset {
            meta,
            prices,
            multipliers,
            sources,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

pub fn save_dataset(dataset: &PriceDataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.save(path)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<PriceDataset> {
    PriceDataset::load(path)
}

/// Output of [`simulate_day`] beyond the dataset itself.
#[derive(Debug, Clone, Default)]
pub struct SimulationTrace {
    /// Final simplex tableau of each solved interval, when requested.
    pub tableaus: Vec<(usize, String)>,
}

pub fn simulate_day(model: &GridModel, config: &SimulationConfig) -> Result<PriceDataset> {
    simulate_day_with(model, config, &SolveOptions::default()).map(|(d, _)| d)
}

pub fn simulate_day_with(
    model: &GridModel,
    config: &SimulationConfig,
    lp_options: &SolveOptions,
) -> Result<(PriceDataset, SimulationTrace)> {
    let topo = model.topology();
    if config.buses.len() != topo.bus_count() {
        return Err(Error::Config(format!(
            "config describes {} buses, grid has {}",
            config.buses.len(),
            topo.bus_count()
        )));
    }
    let scenarios = generate_scenarios(config)?;

    let solved: Vec<Result<_>> = scenarios
        .par_iter()
        .map(|s| dispatch::solve_dispatch_with(model, s, lp_options))
        .collect();

    let n = topo.reduced_dim();
    let lines = topo.line_count();
    let mut noise_rng = stream_rng(config.seed, STREAM_NOISE);
    let mut price_cols = Vec::new();
    let mut mu_cols = Vec::new();
    let mut source_cols = Vec::new();
    let mut meta = DatasetMeta {
        format: DATASET_FORMAT,
        kind: "price_dataset".into(),
        grid: topo.name().map(str::to_string),
        n,
        lines,
        t: 0,
        reference: topo.reference() + 1,
        seed: config.seed,
        noise_sigma: config.noise_sigma,
        total_intervals: config.intervals,
        intervals: Vec::new(),
        congested: Vec::new(),
        degenerate: Vec::new(),
        infeasible: Vec::new(),
        congested_intervals: 0,
        manifest: None,
    };
    let mut trace = SimulationTrace::default();

    for (t, outcome) in solved.into_iter().enumerate() {
        let (sol, tableau) = match outcome {
            Ok(pair) => pair,
            Err(Error::Dispatch { interval, status }) => {
                log::warn!("marketsim interval={interval} status={status:?} skipped");
                meta.infeasible.push(interval);
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Some(text) = tableau {
            trace.tableaus.push((t, text));
        }
        let z: DVector<f64> = DVector::from_fn(n, |_, _| noise_rng.sample(StandardNormal));
        if sol.is_congested() {
            meta.congested_intervals += 1;
        } else if config.drop_uncongested {
            continue;
        }
        let mu = sol.net_multipliers();
        let mut price = model.congestion_prices(&mu);
        if config.noise_sigma > 0.0 {
            let scaled = DMatrix::from_column_slice(n, 1, (z * config.noise_sigma).as_slice());
            price += model.laplacian_factor().solve(&scaled)?.column(0);
        }
        source_cols.push(model.congestion_source(&mu));
        price_cols.push(price);
        mu_cols.push(mu);
        meta.intervals.push(t);
        meta.congested.push(sol.congested_lines.clone());
        meta.degenerate.push(sol.degenerate);
    }

    if meta.infeasible.len() == config.intervals {
        return Err(Error::NoFeasibleIntervals);
    }
    meta.t = price_cols.len();
    let stack = |cols: &[DVector<f64>], rows: usize| {
        DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
    };
    log::info!(
        "marketsim seed={} intervals={} congested={} kept={} infeasible={}",
        config.seed,
        config.intervals,
        meta.congested_intervals,
        meta.t,
        meta.infeasible.len()
    );
    Ok((
        PriceDataset {
            prices: stack(&price_cols, n),
            multipliers: stack(&mu_cols, lines),
            sources: stack(&source_cols, n),
            meta,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{GridTopology, Line};

    #[test]
    fn table_values() {
        let cfg = SimulationConfig::ieee14(1);
        assert_eq!(cfg.buses.len(), 14);
        assert_eq!(cfg.buses[6].role(), BusRole::Zero);
        assert_eq!(cfg.buses[3].role(), BusRole::Load);
        let gens: Vec<usize> = (0..14)
            .filter(|&n| cfg.buses[n].role() == BusRole::Generator)
            .map(|n| n + 1)
            .collect();
        assert_eq!(gens, vec![1, 2, 3, 6, 8]);
        assert_eq!(cfg.hourly_factors[11], 1.00);
        assert!((cfg.buses[2].load * cfg.hourly_factors[11] - 94.2).abs() < 1e-12);
    }

    #[test]
    fn deterministic_scenarios_without_noise() {
        let mut cfg = SimulationConfig::ieee14(5);
        cfg.bid_std = 0.0;
        cfg.load_std = 0.0;
        let s = generate_scenarios(&cfg).unwrap();
        assert_eq!(s.len(), 288);
        for hour in 0..24 {
            let block = &s[hour * 12..(hour + 1) * 12];
            assert!(block.iter().all(|x| x.bids == block[0].bids && x.p_lower == block[0].p_lower));
        }
        // bus 3, hour 11 (factor 1.00): fixed load 94.2 on top of a 100 MW unit
        assert!((s[11 * 12].p_lower[2] + 94.2).abs() < 1e-12);
        assert!((s[11 * 12].p_upper[2] - 5.8).abs() < 1e-12);
        for sc in &s {
            assert_eq!((sc.p_lower[6], sc.p_upper[6]), (0.0, 0.0));
            assert_eq!(sc.p_lower[3], sc.p_upper[3]);
        }
    }

    #[test]
    fn bid_draws_stay_in_uniform_support() {
        let cfg = SimulationConfig::ieee14(9);
        let s = generate_scenarios(&cfg).unwrap();
        let hw = 2.88 * 3f64.sqrt();
        for sc in &s {
            assert!((sc.bids[0] - 18.0).abs() <= hw + 1e-12);
            assert!((sc.bids[5] - 15.0).abs() <= hw + 1e-12);
        }
        // hourly redraw
        assert_eq!(s[0].bids, s[11].bids);
        assert_ne!(s[11].bids, s[12].bids);
        assert_ne!(s[0].p_lower[3], s[1].p_lower[3]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimulationConfig::ieee14(0);
        cfg.hourly_factors.pop();
        assert!(matches!(generate_scenarios(&cfg), Err(Error::Config(_))));
        let mut cfg = SimulationConfig::ieee14(0);
        cfg.load_std = -1.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    fn triangle_config() -> (GridModel, SimulationConfig) {
        let topo = GridTopology::new(
            3,
            vec![
                Line::new(0, 1, 1.0, 1000.0),
                Line::new(1, 2, 1.0, 1000.0),
                Line::new(0, 2, 1.0, 40.0),
            ],
            0,
        )
        .unwrap();
        let mut cfg = SimulationConfig::ieee14(3);
        cfg.buses = vec![
            BusSpec { load: 0.0, generator: Some(GeneratorSpec { bid: 10.0, upper: 200.0 }) },
            BusSpec { load: 0.0, generator: Some(GeneratorSpec { bid: 30.0, upper: 200.0 }) },
            BusSpec { load: 90.0, generator: None },
        ];
        cfg.hourly_factors = vec![1.0; 24];
        cfg.bid_std = 1.0;
        (GridModel::new(topo).unwrap(), cfg)
    }

    #[test]
    fn persistent_single_congestion_is_rank_one() {
        let (model, cfg) = triangle_config();
        let data = simulate_day(&model, &cfg).unwrap();
        assert_eq!(data.t(), 288);
        assert_eq!(data.distinct_congested_lines(), vec![2]);
        assert_eq!(data.source_rank().unwrap(), 1);
        // noiseless identity B L = S
        let b = &model.laplacian().reduced;
        assert!((b * &data.prices - &data.sources).amax() < 1e-9);
    }

    #[test]
    fn noise_enters_prices_only() {
        let (model, mut cfg) = triangle_config();
        let clean = simulate_day(&model, &cfg).unwrap();
        cfg.noise_sigma = 0.1;
        let noisy = simulate_day(&model, &cfg).unwrap();
        assert_eq!(clean.sources, noisy.sources);
        assert!((clean.prices.clone() - &noisy.prices).amax() > 1e-3);
    }

    #[test]
    fn dataset_text_round_trip_and_schema() {
        let (model, cfg) = triangle_config();
        let data = simulate_day(&model, &cfg).unwrap();
        let text = data.to_text().unwrap();
        let back = PriceDataset::from_text(&text).unwrap();
        assert_eq!(back, data);
        let wrong_n = text.replacen("\"n\":2", "\"n\":3", 1);
        assert!(matches!(PriceDataset::from_text(&wrong_n), Err(Error::Schema(_))));
    }
}
