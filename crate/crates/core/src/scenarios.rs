//! Scenario file format and experiment generators.
//!
//! Files use 1-based periods, links and sources. Generators are pure
//! functions of their arguments and seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::functions::{DelaySpec, UtilitySpec};
use crate::grid::Grid;
use crate::model::{validate, DelayContract, Routing, Scenario, Violation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    /// `S × T` minimum rates.
    pub min: Grid,
    /// `S × T` maximum rates.
    pub max: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractEntry {
    pub source: usize,
    pub window: Vec<usize>,
    pub bound: f64,
}

/// On-disk scenario, 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub horizon: usize,
    pub links: usize,
    pub sources: usize,
    /// `routing[t][l]` lists the sources crossing link `l` in period `t`.
    pub routing: Vec<Vec<Vec<usize>>>,
    /// `T × L`.
    pub capacities: Grid,
    pub rate_bounds: RateBounds,
    /// `utilities[s][t]`.
    pub utilities: Vec<Vec<UtilitySpec>>,
    /// One delay model per link.
    pub delay_models: Vec<DelaySpec>,
    #[serde(default)]
    pub contracts: Vec<ContractEntry>,
}

impl ScenarioFile {
    pub fn from_scenario(sc: &Scenario) -> ScenarioFile {
        ScenarioFile {
            horizon: sc.horizon,
            links: sc.links,
            sources: sc.sources,
            routing: sc
                .routing
                .iter()
                .map(|r| r.user_lists().iter().map(|u| u.iter().map(|s| s + 1).collect()).collect())
                .collect(),
            capacities: sc.capacity.clone(),
            rate_bounds: RateBounds { min: sc.rate_min.clone(), max: sc.rate_max.clone() },
            utilities: sc.utilities.clone(),
            delay_models: sc.delay_model.clone(),
            contracts: sc
                .contracts
                .iter()
                .map(|c| ContractEntry {
                    source: c.source + 1,
                    window: c.window.iter().map(|t| t + 1).collect(),
                    bound: c.bound,
                })
                .collect(),
        }
    }

    /// Converts to 0-based form and validates. Every problem found is
    /// reported, not only the first.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let mut violations = Vec::new();
        let mut routing = Vec::with_capacity(self.routing.len());
        for (t, per_link) in self.routing.iter().enumerate() {
            if per_link.len() != self.links {
                violations.push(Violation::new(
                    "routing",
                    vec![t + 1],
                    format!("expected {} link entries, found {}", self.links, per_link.len()),
                ));
            }
            let mut users = Vec::with_capacity(per_link.len());
            for (l, list) in per_link.iter().enumerate() {
                let mut zero_based = Vec::new();
                for &s in list {
                    if s == 0 || s > self.sources {
                        violations.push(Violation::new("routing", vec![t + 1, l + 1], format!("source {s} out of range")));
                    } else {
                        zero_based.push(s - 1);
                    }
                }
                users.push(zero_based);
            }
            routing.push(Routing::from_link_users(self.links, self.sources, &users).0);
        }

        let mut contracts = Vec::with_capacity(self.contracts.len());
        for (k, c) in self.contracts.iter().enumerate() {
            if c.source == 0 || c.source > self.sources {
                violations.push(Violation::new("contracts", vec![k + 1], "source out of range"));
                continue;
            }
            if let Some(&t) = c.window.iter().find(|&&t| t == 0 || t > self.horizon) {
                violations.push(Violation::new("contracts", vec![k + 1], format!("window out of horizon (period {t})")));
                continue;
            }
            contracts.push(DelayContract::new(c.source - 1, c.window.iter().map(|t| t - 1), c.bound));
        }

        let sc = Scenario {
            horizon: self.horizon,
            links: self.links,
            sources: self.sources,
            routing,
            capacity: self.capacities.clone(),
            rate_min: self.rate_bounds.min.clone(),
            rate_max: self.rate_bounds.max.clone(),
            utilities: self.utilities.clone(),
            delay_model: self.delay_models.clone(),
            contracts,
        };
        violations.extend(validate(&sc).into_iter().map(one_based));
        if violations.is_empty() {
            Ok(sc)
        } else {
            Err(Error::InvalidScenario(violations))
        }
    }
}

fn one_based(mut v: Violation) -> Violation {
    for i in &mut v.index {
        *i += 1;
    }
    v
}

pub fn to_json(sc: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from_scenario(sc)).expect("scenario serializes")
}

pub fn from_json(text: &str) -> Result<Scenario> {
    serde_json::from_str::<ScenarioFile>(text)?.to_scenario()
}

pub fn load(path: impl AsRef<std::path::Path>) -> Result<Scenario> {
    from_json(&std::fs::read_to_string(path)?)
}

/// Generator selector with optional JSON merge-patch overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    /// Merge patch applied to the generated [`ScenarioFile`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    Exp1,
    Exp2Line { links: usize, sources: usize, horizon: usize },
    Exp3Random { sources: usize, links: usize, horizon: usize },
    TinyOracle { variant: usize },
}

impl ExperimentSpec {
    pub fn build(&self) -> Result<Scenario> {
        let sc = match self.kind {
            ExperimentKind::Exp1 => gen_exp1(self.seed),
            ExperimentKind::Exp2Line { links, sources, horizon } => gen_exp2_line(links, sources, horizon, self.seed)?,
            ExperimentKind::Exp3Random { sources, links, horizon } => gen_exp3_random(sources, links, horizon, self.seed)?,
            ExperimentKind::TinyOracle { variant } => tiny_oracle(variant)?,
        };
        let Some(patch) = &self.overrides else {
            return Ok(sc);
        };
        let mut doc = serde_json::to_value(ScenarioFile::from_scenario(&sc))?;
        merge_patch(&mut doc, patch);
        serde_json::from_value::<ScenarioFile>(doc)?.to_scenario()
    }
}

/// JSON merge patch: objects merge recursively, `null` deletes, anything
/// else replaces.
pub fn merge_patch(target: &mut Value, patch: &Value) {
    let Value::Object(entries) = patch else {
        *target = patch.clone();
        return;
    };
    if !target.is_object() {
        *target = Value::Object(Default::default());
    }
    let map = target.as_object_mut().expect("object");
    for (k, v) in entries {
        if v.is_null() {
            map.remove(k);
        } else {
            merge_patch(map.entry(k.clone()).or_insert(Value::Null), v);
        }
    }
}

fn uniform_scenario(horizon: usize, links: usize, routes: &[Vec<usize>], capacity: Grid, w: f64, big_w: f64) -> Scenario {
    let sources = routes.len();
    let routing = Routing::from_routes(links, routes);
    Scenario {
        horizon,
        links,
        sources,
        routing: vec![routing; horizon],
        capacity,
        rate_min: Grid::filled(sources, horizon, w),
        rate_max: Grid::filled(sources, horizon, big_w),
        utilities: vec![vec![UtilitySpec::Log; horizon]; sources],
        delay_model: vec![DelaySpec::Mm1 { q: 1.0 }; links],
        contracts: vec![],
    }
}

/// Capacity ranges of the four chain links in the first experiment.
pub const EXP1_CAPACITY_RANGES: [(f64, f64); 4] = [(4.0, 6.0), (4.0, 10.0), (4.0, 10.0), (4.0, 6.0)];

/// Expected capacities of the first experiment's links.
pub fn exp1_capacity_means() -> Vec<f64> {
    EXP1_CAPACITY_RANGES.iter().map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Four sources on a four-link chain over ten periods with five delay
/// contracts; periods 9 and 10 carry none.
pub fn gen_exp1(seed: u64) -> Scenario {
    let (horizon, links) = (10, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacity = Grid::from_fn(horizon, links, |_, l| {
        let (a, b) = EXP1_CAPACITY_RANGES[l];
        rng.gen_range(a..b)
    });
    let routes = [vec![0, 1, 2, 3], vec![0, 1], vec![1, 2], vec![2, 3]];
    let mut sc = uniform_scenario(horizon, links, &routes, capacity, 0.1, 10.0);
    sc.contracts = vec![
        DelayContract::new(0, 0..3, 2.0),
        DelayContract::new(0, 5..8, 1.0),
        DelayContract::new(1, 0..6, 2.0),
        DelayContract::new(2, 2..8, 2.0),
        DelayContract::new(3, 2..6, 2.5),
    ];
    sc
}

/// Minimum rate of source 1 in period 2 of the line experiment.
pub const EXP2_SPIKE: f64 = 5.0;

/// Line topology: source 1 crosses every link, source 2 the first four,
/// source `j ≥ 3` the links `j−1 ..= j+2` (1-based, clamped). Sources 1 and 2
/// carry one full-horizon contract each, with the bound scaled by `L/200`.
pub fn gen_exp2_line(links: usize, sources: usize, horizon: usize, seed: u64) -> Result<Scenario> {
    if links < 4 || sources < 2 || horizon < 2 {
        return Err(Error::InvalidParameter {
            name: "exp2_line",
            reason: format!("needs L ≥ 4, S ≥ 2, T ≥ 2 (got {links}, {sources}, {horizon})"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacity = Grid::from_fn(horizon, links, |_, _| rng.gen_range(8.0..12.0));
    let mut routes = vec![(0..links).collect::<Vec<_>>(), (0..4).collect()];
    for j in 3..=sources {
        let first = (j - 1).max(1).min(links);
        let last = (j + 2).min(links);
        routes.push((first - 1..last).collect());
    }
    let mut sc = uniform_scenario(horizon, links, &routes, capacity, 0.5, 12.0);
    sc.rate_min[(0, 1)] = EXP2_SPIKE;
    let bound = 50.0 * links as f64 / 200.0;
    sc.contracts = vec![DelayContract::new(0, 0..horizon, bound), DelayContract::new(1, 0..horizon, bound)];
    Ok(sc)
}

/// Random topology with capacity 20: each source crosses one to four
/// distinct links and has one contract over a random contiguous window of at
/// least two periods, with bound drawn from `[4, 6]`.
pub fn gen_exp3_random(sources: usize, links: usize, horizon: usize, seed: u64) -> Result<Scenario> {
    if sources == 0 || links == 0 || horizon < 2 {
        return Err(Error::InvalidParameter {
            name: "exp3_random",
            reason: format!("needs S ≥ 1, L ≥ 1, T ≥ 2 (got {sources}, {links}, {horizon})"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let routes: Vec<Vec<usize>> = (0..sources)
        .map(|_| {
            let hops = rng.gen_range(1..=4usize.min(links));
            let mut route = rand::seq::index::sample(&mut rng, links, hops).into_vec();
            route.sort_unstable();
            route
        })
        .collect();
    let mut sc = uniform_scenario(horizon, links, &routes, Grid::filled(horizon, links, 20.0), 0.1, 20.0);
    sc.contracts = (0..sources)
        .map(|s| {
            let start = rng.gen_range(0..horizon - 1);
            let len = rng.gen_range(2..=horizon - start);
            DelayContract::new(s, start..start + len, rng.gen_range(4.0..6.0))
        })
        .collect();
    Ok(sc)
}

/// Number of members in the tiny oracle family.
pub const TINY_ORACLE_VARIANTS: usize = 6;

/// Instances with `TS + TL ≤ 6`, small enough for exhaustive search.
pub fn tiny_oracle(variant: usize) -> Result<Scenario> {
    let sc = match variant {
        0 => uniform_scenario(1, 1, &[vec![0], vec![0]], Grid::filled(1, 1, 2.0), 0.1, 10.0),
        1 => {
            let mut sc = tiny_oracle(0)?;
            sc.contracts = vec![DelayContract::new(0, [0], 1.0)];
            sc
        }
        2 => {
            let mut sc = uniform_scenario(1, 2, &[vec![0, 1], vec![1]], Grid::from_rows(&[vec![3.0, 2.0]]).unwrap(), 0.1, 10.0);
            sc.contracts = vec![DelayContract::new(0, [0], 1.5)];
            sc
        }
        3 => {
            let mut sc = uniform_scenario(2, 1, &[vec![0]], Grid::from_rows(&[vec![2.0], vec![3.0]]).unwrap(), 0.1, 10.0);
            sc.utilities[0][1] = UtilitySpec::WeightedLog { weight: 2.0 };
            sc.contracts = vec![DelayContract::new(0, [0, 1], 0.8)];
            sc
        }
        4 => {
            let mut sc =
                uniform_scenario(2, 1, &[vec![0], vec![0]], Grid::from_rows(&[vec![3.0], vec![2.0]]).unwrap(), 0.1, 10.0);
            sc.contracts = vec![DelayContract::new(0, [0, 1], 1.0)];
            sc
        }
        5 => {
            let mut sc = uniform_scenario(1, 1, &[vec![0], vec![0], vec![0]], Grid::filled(1, 1, 4.0), 0.2, 3.0);
            sc.utilities[1][0] = UtilitySpec::WeightedLog { weight: 2.0 };
            sc.utilities[2][0] = UtilitySpec::WeightedLog { weight: 0.5 };
            sc.delay_model[0] = DelaySpec::Mm1 { q: 0.5 };
            sc.contracts = vec![DelayContract::new(2, [0], 0.4)];
            sc
        }
        _ => {
            return Err(Error::InvalidParameter {
                name: "variant",
                reason: format!("tiny oracle variants are 0..{TINY_ORACLE_VARIANTS}"),
            })
        }
    };
    Ok(sc)
}

pub fn tiny_oracle_family() -> Vec<Scenario> {
    (0..TINY_ORACLE_VARIANTS).map(|v| tiny_oracle(v).expect("variant in range")).collect()
}
