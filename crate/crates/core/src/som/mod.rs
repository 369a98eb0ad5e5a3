//! Self-organizing maps and the feature-map catalog.
//!
//! Training is the classic online Kohonen rule with a Gaussian
//! neighborhood, a linearly decaying learning rate and a geometrically
//! decaying radius. All randomness comes from a [`ChaCha8Rng`] seeded with
//! [`SomConfig::seed`]: weight initialization draws `width * height * dim`
//! uniform `f64`s in unit order, then each epoch shuffles the visiting order
//! with `rand`'s Fisher-Yates `shuffle`. Identical samples and config give
//! bitwise identical weights.

mod catalog;
mod export;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorfeat::cosine_distance_dense;

pub use catalog::{
    build_map_catalog, FeatureMap, MapCatalog, MapKind, COLOR_MAP_ID, COLOR_MAP_TITLE,
    DEFAULT_CONCEPT_THRESHOLD, DEFAULT_MIN_MEMBERS,
};
pub use export::{read_catalog, write_catalog, CatalogIndex, MapExport};

#[derive(Debug, Error)]
pub enum SomError {
    #[error("no samples given")]
    EmptyInput,
    #[error("vector has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid SOM configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid map export: {0}")]
    InvalidExport(String),
    #[error("catalog i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Distance used for BMU search and quantization error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    L1,
    /// Cosine distance; a zero vector is at distance 1 from everything.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::Cosine => cosine_distance_dense(a, b).unwrap_or(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomConfig {
    pub width: usize,
    pub height: usize,
    pub epochs: usize,
    pub alpha0: f64,
    pub alpha_end: f64,
    pub sigma0: f64,
    pub sigma_end: f64,
    pub seed: u64,
    #[serde(default)]
    pub metric: Metric,
}

impl SomConfig {
    /// Defaults: 20 epochs, α 0.5 → 0.01, σ max(w, h)/2 → 0.5, seed 0,
    /// Euclidean metric.
    pub fn new(width: usize, height: usize) -> Self {
        SomConfig {
            width,
            height,
            epochs: 20,
            alpha0: 0.5,
            alpha_end: 0.01,
            sigma0: width.max(height) as f64 / 2.0,
            sigma_end: 0.5,
            seed: 0,
            metric: Metric::Euclidean,
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn units(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<(), SomError> {
        let bad = |msg: &str| Err(SomError::InvalidConfig(msg.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("grid dimensions must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.alpha0 > self.alpha_end && self.alpha_end > 0.0) {
            return bad("learning rate must satisfy alpha0 > alpha_end > 0");
        }
        if !(self.sigma0 >= self.sigma_end && self.sigma_end > 0.0) {
            return bad("radius must satisfy sigma0 >= sigma_end > 0");
        }
        Ok(())
    }

    /// Grid coordinates `(x, y)` of a unit.
    pub fn coords(&self, unit: usize) -> (usize, usize) {
        (unit % self.width, unit / self.width)
    }

    pub fn grid_distance(&self, a: usize, b: usize) -> f64 {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        let dx = ax as f64 - bx as f64;
        let dy = ay as f64 - by as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

impl Default for SomConfig {
    fn default() -> Self {
        SomConfig::new(16, 16)
    }
}

/// A trained (or initialized) map: one weight vector per grid unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SomModel {
    config: SomConfig,
    dim: usize,
    weights: Vec<f64>,
}

impl SomModel {
    /// Builds a model from explicit weights (one vector per unit).
    pub fn from_weights(config: SomConfig, weights: Vec<Vec<f64>>) -> Result<Self, SomError> {
        config.validate()?;
        if weights.len() != config.units() {
            return Err(SomError::InvalidExport(format!(
                "{} weight vectors for a {}x{} grid",
                weights.len(),
                config.width,
                config.height
            )));
        }
        let dim = weights.first().map_or(0, Vec::len);
        if let Some(w) = weights.iter().find(|w| w.len() != dim) {
            return Err(SomError::DimensionMismatch {
                expected: dim,
                got: w.len(),
            });
        }
        Ok(SomModel {
            config,
            dim,
            weights: weights.into_iter().flatten().collect(),
        })
    }

    /// The untrained model `train_som` starts from.
    pub fn initialize<V: AsRef<[f64]>>(samples: &[V], config: &SomConfig) -> Result<Self, SomError> {
        let dim = check_samples(samples, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(init_weights(samples, config, dim, &mut rng))
    }

    pub fn config(&self) -> &SomConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn units(&self) -> usize {
        self.config.units()
    }

    pub fn weight(&self, unit: usize) -> &[f64] {
        &self.weights[unit * self.dim..(unit + 1) * self.dim]
    }

    pub fn weights(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.dim.max(1)).take(self.units())
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), SomError> {
        if v.len() != self.dim {
            return Err(SomError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    fn bmu_unchecked(&self, v: &[f64]) -> (usize, f64) {
        let metric = self.config.metric;
        let mut best = (0, f64::INFINITY);
        for u in 0..self.units() {
            let d = metric.distance(self.weight(u), v);
            // strict: ties keep the lowest index
            if d < best.1 {
                best = (u, d);
            }
        }
        best
    }
}

fn check_samples<V: AsRef<[f64]>>(samples: &[V], config: &SomConfig) -> Result<usize, SomError> {
    config.validate()?;
    let dim = samples.first().ok_or(SomError::EmptyInput)?.as_ref().len();
    if let Some(bad) = samples.iter().find(|s| s.as_ref().len() != dim) {
        return Err(SomError::DimensionMismatch {
            expected: dim,
            got: bad.as_ref().len(),
        });
    }
    Ok(dim)
}

fn init_weights<V: AsRef<[f64]>>(
    samples: &[V],
    config: &SomConfig,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> SomModel {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for s in samples {
        for (d, &x) in s.as_ref().iter().enumerate() {
            lo[d] = lo[d].min(x);
            hi[d] = hi[d].max(x);
        }
    }
    let mut weights = Vec::with_capacity(config.units() * dim);
    for _ in 0..config.units() {
        for d in 0..dim {
            let r: f64 = rng.random();
            weights.push(lo[d] + r * (hi[d] - lo[d]));
        }
    }
    SomModel {
        config: config.clone(),
        dim,
        weights,
    }
}

/// Trains a map with the online Kohonen rule.
///
/// With `T = epochs * samples.len()` steps and `f = t / (T - 1)`, step `t`
/// uses `α = α0 + (α_end - α0)·f` and `σ = σ0·(σ_end/σ0)^f`; every unit moves
/// toward the sample by `α·exp(-d²/2σ²)` where `d` is the grid distance to
/// the best matching unit.
pub fn train_som<V: AsRef<[f64]>>(samples: &[V], config: &SomConfig) -> Result<SomModel, SomError> {
    let dim = check_samples(samples, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_weights(samples, config, dim, &mut rng);

    let total = config.epochs * samples.len();
    let coords: Vec<(f64, f64)> = (0..config.units())
        .map(|u| {
            let (x, y) = config.coords(u);
            (x as f64, y as f64)
        })
        .collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut t = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let frac = if total > 1 {
                t as f64 / (total - 1) as f64
            } else {
                0.0
            };
            let alpha = config.alpha0 + (config.alpha_end - config.alpha0) * frac;
            let sigma = config.sigma0 * (config.sigma_end / config.sigma0).powf(frac);
            let two_sigma_sq = 2.0 * sigma * sigma;

            let x = samples[i].as_ref();
            let (bmu, _) = model.bmu_unchecked(x);
            let (bx, by) = coords[bmu];
            for (u, &(ux, uy)) in coords.iter().enumerate() {
                let d2 = (ux - bx) * (ux - bx) + (uy - by) * (uy - by);
                let step = alpha * (-d2 / two_sigma_sq).exp();
                let w = &mut model.weights[u * dim..(u + 1) * dim];
                for (wd, xd) in w.iter_mut().zip(x) {
                    *wd += step * (xd - *wd);
                }
            }
            t += 1;
        }
    }
    Ok(model)
}

/// Unit whose weight is closest to `vector`; ties go to the lowest index.
pub fn best_matching_unit(model: &SomModel, vector: &[f64]) -> Result<usize, SomError> {
    model.check_dim(vector)?;
    Ok(model.bmu_unchecked(vector).0)
}

/// Places each member in its BMU cell. Within a cell members are ordered by
/// distance to the cell weight, then by id; the first is the representative.
pub fn assign_keyframes<V: AsRef<[f64]>>(
    model: &SomModel,
    members: &[(String, V)],
) -> Result<Vec<Vec<String>>, SomError> {
    let mut cells: Vec<Vec<(f64, &str)>> = vec![Vec::new(); model.units()];
    for (id, v) in members {
        let v = v.as_ref();
        model.check_dim(v)?;
        let (bmu, dist) = model.bmu_unchecked(v);
        cells[bmu].push((dist, id));
    }
    Ok(cells
        .into_iter()
        .map(|mut cell| {
            cell.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            cell.into_iter().map(|(_, id)| id.to_string()).collect()
        })
        .collect())
}

/// Mean distance from each sample to its BMU weight.
pub fn quantization_error<V: AsRef<[f64]>>(model: &SomModel, samples: &[V]) -> Result<f64, SomError> {
    if samples.is_empty() {
        return Err(SomError::EmptyInput);
    }
    let mut total = 0.0;
    for s in samples {
        let s = s.as_ref();
        model.check_dim(s)?;
        total += model.bmu_unchecked(s).1;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive argmin written without the model's helpers.
    fn brute_bmu(model: &SomModel, v: &[f64]) -> usize {
        let dists: Vec<f64> = (0..model.units())
            .map(|u| {
                let w = model.weight(u);
                match model.config().metric {
                    Metric::Euclidean => w
                        .iter()
                        .zip(v)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt(),
                    Metric::L1 => w.iter().zip(v).map(|(a, b)| (a - b).abs()).sum(),
                    Metric::Cosine => Metric::Cosine.distance(w, v),
                }
            })
            .collect();
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        dists.iter().position(|d| *d == min).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SomConfig::new(4, 4).validate().is_ok());
        assert!(SomConfig::new(0, 4).validate().is_err());
        assert!(SomConfig::new(4, 4).with_epochs(0).validate().is_err());
        let mut c = SomConfig::new(4, 4);
        c.alpha_end = 0.6;
        assert!(c.validate().is_err());
        let mut c = SomConfig::new(4, 4);
        c.sigma_end = 0.0;
        assert!(c.validate().is_err());
        assert_eq!(SomConfig::new(8, 6).sigma0, 4.0);
    }

    #[test]
    fn training_errors() {
        let cfg = SomConfig::new(2, 2);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(train_som(&empty, &cfg), Err(SomError::EmptyInput)));
        let ragged = vec![vec![0.0, 1.0], vec![0.0]];
        assert!(matches!(
            train_som(&ragged, &cfg),
            Err(SomError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn single_sample_attracts_weights() {
        let samples = vec![vec![0.2, 0.7, 0.1]];
        let mut prev = f64::INFINITY;
        for epochs in [1, 5, 20, 40] {
            let cfg = SomConfig::new(4, 4).with_epochs(epochs).with_seed(3);
            let m = train_som(&samples, &cfg).unwrap();
            let qe = quantization_error(&m, &samples).unwrap();
            assert!(qe <= prev, "error grew at {epochs} epochs");
            prev = qe;
        }
    }

    #[test]
    fn single_sample_initialization_is_exact() {
        // min == max in every dimension: weights start on the sample
        let samples = vec![vec![0.3, 0.4]];
        let m = SomModel::initialize(&samples, &SomConfig::new(3, 3)).unwrap();
        assert!(m.weights().all(|w| w == [0.3, 0.4]));
    }

    #[test]
    fn bmu_exact_weight_and_dimension_check() {
        let samples: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i as f64 * 0.37).sin().abs(), (i as f64 * 0.11).cos().abs()])
            .collect();
        let m = train_som(&samples, &SomConfig::new(4, 4).with_epochs(3)).unwrap();
        let w7 = m.weight(7).to_vec();
        let bmu = best_matching_unit(&m, &w7).unwrap();
        assert_eq!(m.weight(bmu), &w7[..]);
        assert!(bmu <= 7);
        assert!(matches!(
            best_matching_unit(&m, &[1.0]),
            Err(SomError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn bmu_ties_go_to_lowest_index() {
        let m = SomModel::from_weights(
            SomConfig::new(2, 2),
            vec![vec![1.0], vec![0.0], vec![0.0], vec![2.0]],
        )
        .unwrap();
        assert_eq!(best_matching_unit(&m, &[0.0]).unwrap(), 1);
        assert_eq!(best_matching_unit(&m, &[0.5]).unwrap(), 0);
    }

    #[test]
    fn assignment_cases() {
        let m = SomModel::from_weights(
            SomConfig::new(2, 1),
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        )
        .unwrap();
        let none: Vec<(String, Vec<f64>)> = vec![];
        assert_eq!(assign_keyframes(&m, &none).unwrap(), vec![Vec::<String>::new(); 2]);

        let one = vec![("k".to_string(), vec![0.9, 0.9])];
        assert_eq!(
            assign_keyframes(&m, &one).unwrap(),
            vec![vec![], vec!["k".to_string()]]
        );

        let ties = vec![
            ("b".to_string(), vec![0.1, 0.0]),
            ("a".to_string(), vec![0.0, 0.1]),
            ("c".to_string(), vec![0.0, 0.0]),
        ];
        assert_eq!(assign_keyframes(&m, &ties).unwrap()[0], ["c", "a", "b"]);

        let bad = vec![("x".to_string(), vec![0.0])];
        assert!(assign_keyframes(&m, &bad).is_err());
    }

    #[test]
    fn quantization_error_zero_on_weights() {
        let m = SomModel::from_weights(SomConfig::new(2, 1), vec![vec![0.5], vec![2.0]]).unwrap();
        assert_eq!(quantization_error(&m, &[vec![0.5], vec![0.5]]).unwrap(), 0.0);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            quantization_error(&m, &empty),
            Err(SomError::EmptyInput)
        ));
    }

    #[test]
    fn single_step_training_is_well_defined() {
        // T = 1 must not divide by zero in the schedules
        let cfg = SomConfig::new(1, 1).with_epochs(1);
        let init = SomModel::initialize(&[vec![1.0]], &cfg).unwrap();
        let m = train_som(&[vec![1.0]], &cfg).unwrap();
        assert_eq!(init.weight(0), [1.0]);
        assert_eq!(m.weight(0), [1.0]);
    }

    fn arb_samples() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..5).prop_flat_map(|dim| {
            proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, dim), 1..25)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn bmu_matches_exhaustive_scan(
            samples in arb_samples(),
            seed in any::<u64>(),
            metric in prop_oneof![Just(Metric::Euclidean), Just(Metric::L1), Just(Metric::Cosine)],
        ) {
            let cfg = SomConfig::new(3, 4).with_epochs(2).with_seed(seed).with_metric(metric);
            let m = train_som(&samples, &cfg).unwrap();
            for s in &samples {
                prop_assert_eq!(best_matching_unit(&m, s).unwrap(), brute_bmu(&m, s));
            }
        }

        #[test]
        fn training_is_deterministic(samples in arb_samples(), seed in any::<u64>()) {
            let cfg = SomConfig::new(3, 3).with_epochs(3).with_seed(seed);
            let a = train_som(&samples, &cfg).unwrap();
            let b = train_som(&samples, &cfg).unwrap();
            let bits = |m: &SomModel| m.weights().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a), bits(&b));
        }

        #[test]
        fn assignment_partitions_members(samples in arb_samples()) {
            let cfg = SomConfig::new(3, 3).with_epochs(2);
            let m = train_som(&samples, &cfg).unwrap();
            let members: Vec<(String, Vec<f64>)> = samples
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("k{i:03}"), s.clone()))
                .collect();
            let cells = assign_keyframes(&m, &members).unwrap();
            let mut all: Vec<String> = cells.into_iter().flatten().collect();
            all.sort();
            let mut want: Vec<String> = members.into_iter().map(|(id, _)| id).collect();
            want.sort();
            prop_assert_eq!(all, want);
        }
    }
}
