//! Problem instances: a symmetric travel-time matrix plus the separation
//! threshold `D`, the two synthetic generators, and the JSON file format.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Open01};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Threshold used when none is given.
pub const DEFAULT_THRESHOLD: f64 = 60.0;

/// Symmetric, zero-diagonal travel-time matrix with a separation threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    n: usize,
    threshold: f64,
    distances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    threshold: f64,
    distances: Vec<Vec<f64>>,
}

impl Instance {
    /// Builds an instance from a full row-major matrix, validating every invariant.
    pub fn new(threshold: f64, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidConfig("instance must have at least one site".into()));
        }
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::InvalidConfig(format!("threshold must be positive, got {threshold}")));
        }
        let mut distances = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidInstance {
                    i,
                    j: row.len(),
                    reason: format!("row {i} has {} entries, expected {n}", row.len()),
                });
            }
            distances.extend_from_slice(row);
        }
        let inst = Self {
            n,
            threshold,
            distances,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            for j in 0..self.n {
                let d = self.d(i, j);
                let reason = if !d.is_finite() {
                    "non-finite distance"
                } else if d < 0.0 {
                    "negative distance"
                } else if i == j && d != 0.0 {
                    "nonzero diagonal"
                } else if d != self.d(j, i) {
                    "asymmetric distances"
                } else {
                    continue;
                };
                return Err(Error::InvalidInstance {
                    i,
                    j,
                    reason: reason.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.n + j]
    }

    /// `d_ij < D`, the strict test used for both the objective indicator and feasibility.
    #[inline]
    pub fn is_near(&self, i: usize, j: usize) -> bool {
        self.d(i, j) < self.threshold
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.distances.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Same distances, different threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        Self::new(threshold, self.rows())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&InstanceFile {
            n: self.n,
            threshold: self.threshold,
            distances: self.rows(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        if file.distances.len() != file.n {
            return Err(Error::InvalidInstance {
                i: file.distances.len(),
                j: file.n,
                reason: format!("declared n = {} but matrix has {} rows", file.n, file.distances.len()),
            });
        }
        Self::new(file.threshold, file.distances)
    }
}

pub fn save_instance(inst: &Instance, path: &Path) -> Result<()> {
    fs::write(path, inst.to_json()?).map_err(io_err(path))
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Instance::from_json(&text)
}

/// Sites scattered around three cities of decreasing size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CitiesConfig {
    pub n: usize,
    pub threshold: f64,
    pub map_side: f64,
    pub proportions: [f64; 3],
    pub variance_low: f64,
    pub variance_high: f64,
    pub min_center_separation: f64,
    pub seed: u64,
}

impl CitiesConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            threshold: DEFAULT_THRESHOLD,
            map_side: 240.0,
            proportions: [1.0 / 2.0, 1.0 / 3.0, 1.0 / 6.0],
            variance_low: 80.0,
            variance_high: 160.0,
            min_center_separation: 80.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n < 2 {
            return err("cities generator needs n >= 2");
        }
        if !(self.threshold > 0.0) {
            return err("threshold must be positive");
        }
        if !(self.map_side > 0.0) {
            return err("map side must be positive");
        }
        if self.proportions.iter().any(|p| *p < 0.0) || (self.proportions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return err("city proportions must be non-negative and sum to 1");
        }
        if !(0.0 < self.variance_low && self.variance_low < self.variance_high) {
            return err("need 0 < variance_low < variance_high");
        }
        // Three centers at mutual distance s fit in the square only if s is below the side.
        if !(self.min_center_separation >= 0.0 && self.min_center_separation < self.map_side) {
            return err("center separation must be in [0, map_side)");
        }
        Ok(())
    }

    /// Sites per city: round-half-up of the first two fractions, remainder to the last.
    pub fn city_counts(&self) -> [usize; 3] {
        let n = self.n as f64;
        let first = ((n * self.proportions[0]) + 0.5).floor() as usize;
        let second = ((n * self.proportions[1]) + 0.5).floor() as usize;
        let first = first.min(self.n);
        let second = second.min(self.n - first);
        [first, second, self.n - first - second]
    }
}

/// Generated cities instance along with the city each site was drawn around.
#[derive(Clone, Debug)]
pub struct CitiesSample {
    pub instance: Instance,
    pub city_of: Vec<usize>,
    pub centers: [(f64, f64); 3],
    pub positions: Vec<(f64, f64)>,
}

pub fn generate_cities(cfg: &CitiesConfig) -> Result<Instance> {
    Ok(generate_cities_sample(cfg)?.instance)
}

pub fn generate_cities_sample(cfg: &CitiesConfig) -> Result<CitiesSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut centers = [(0.0, 0.0); 3];
    'draw: loop {
        for c in centers.iter_mut() {
            *c = (
                rng.random_range(0.0..cfg.map_side),
                rng.random_range(0.0..cfg.map_side),
            );
        }
        for a in 0..3 {
            for b in a + 1..3 {
                let (dx, dy) = (centers[a].0 - centers[b].0, centers[a].1 - centers[b].1);
                if dx.hypot(dy) < cfg.min_center_separation {
                    continue 'draw;
                }
            }
        }
        break;
    }

    let counts = cfg.city_counts();
    let mut positions = Vec::with_capacity(cfg.n);
    let mut city_of = Vec::with_capacity(cfg.n);
    for (city, (&count, &(cx, cy))) in counts.iter().zip(centers.iter()).enumerate() {
        let variance = rng.random_range(cfg.variance_low..cfg.variance_high);
        let noise = Normal::new(0.0, variance.sqrt()).expect("positive std");
        for _ in 0..count {
            positions.push((cx + noise.sample(&mut rng), cy + noise.sample(&mut rng)));
            city_of.push(city);
        }
    }

    let n = cfg.n;
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = (positions[i].0 - positions[j].0).hypot(positions[i].1 - positions[j].1);
            rows[i][j] = d;
            rows[j][i] = d;
        }
    }
    Ok(CitiesSample {
        instance: Instance::new(cfg.threshold, rows)?,
        city_of,
        centers,
        positions,
    })
}

/// I.i.d. uniform off-diagonal travel times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralConfig {
    pub n: usize,
    pub threshold: f64,
    pub dist_high: f64,
    pub seed: u64,
}

impl GeneralConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            threshold: DEFAULT_THRESHOLD,
            dist_high: 240.0,
            seed,
        }
    }
}

pub fn generate_general(cfg: &GeneralConfig) -> Result<Instance> {
    if cfg.n < 2 {
        return Err(Error::InvalidConfig("general generator needs n >= 2".into()));
    }
    if !(cfg.dist_high > 0.0 && cfg.dist_high.is_finite()) {
        return Err(Error::InvalidConfig("dist_high must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let u: f64 = Open01.sample(&mut rng);
            let d = cfg.dist_high * u;
            rows[i][j] = d;
            rows[j][i] = d;
        }
    }
    Instance::new(cfg.threshold, rows)
}

/// Which synthetic distribution to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Cities,
    General,
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cities" => Ok(Self::Cities),
            "general" => Ok(Self::General),
            other => Err(Error::InvalidConfig(format!("unknown environment '{other}'"))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cities => "cities",
            Self::General => "general",
        })
    }
}

/// Reproducible family of instances: member `k` uses seed `seed_base + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub env: EnvKind,
    pub n: usize,
    pub threshold: f64,
    pub seed_base: u64,
}

impl InstanceSpec {
    pub fn generate(&self, index: u64) -> Result<Instance> {
        let seed = self.seed_base.wrapping_add(index);
        match self.env {
            EnvKind::Cities => generate_cities(&CitiesConfig {
                threshold: self.threshold,
                ..CitiesConfig::new(self.n, seed)
            }),
            EnvKind::General => generate_general(&GeneralConfig {
                threshold: self.threshold,
                ..GeneralConfig::new(self.n, seed)
            }),
        }
    }

    pub fn generate_many(&self, count: usize) -> Result<Vec<Instance>> {
        (0..count as u64).map(|k| self.generate(k)).collect()
    }
}
