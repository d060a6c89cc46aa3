//! Synthetic diabetes cohort calibrated to published descriptive statistics.
//!
//! Continuous features are truncated normals. Each class shifts the mean of
//! some features; shifts are re-centred by the class priors so the pooled
//! mean stays at the reference mean, and the within-class spread is shrunk
//! so the pooled standard deviation also stays close to the reference.

use serde::{Deserialize, Serialize};

use super::{Cohort, Schema, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistribution {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl FeatureDistribution {
    fn new(name: &str, mean: f64, std: f64, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            mean,
            std,
            min,
            max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Continuous features, in schema order, excluding pregnancies.
    pub continuous: Vec<FeatureDistribution>,
    pub pregnancies: FeatureDistribution,
    /// Class priors: Type 1, Type 2, Gestational.
    pub priors: [f64; NUM_CLASSES],
    /// Per-class mean shift for each continuous feature.
    pub class_shifts: [Vec<f64>; NUM_CLASSES],
    /// Fraction of non-gestational patients that are male (zero pregnancies).
    pub male_fraction: f64,
    /// Probability that a female Type 1 patient reports zero pregnancies.
    pub type1_nulliparous: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let continuous = vec![
            FeatureDistribution::new("age", 52.3, 13.7, 18.0, 87.0),
            FeatureDistribution::new("bmi", 29.4, 6.2, 17.1, 47.8),
            FeatureDistribution::new("fpg", 158.6, 48.3, 70.0, 312.0),
            FeatureDistribution::new("hba1c", 7.8, 1.6, 5.1, 13.4),
            FeatureDistribution::new("sbp", 132.5, 16.9, 95.0, 188.0),
            FeatureDistribution::new("dbp", 81.7, 10.4, 55.0, 112.0),
        ];
        Self {
            continuous,
            pregnancies: FeatureDistribution::new("pregnancies", 2.4, 2.1, 0.0, 10.0),
            priors: [0.18, 0.67, 0.15],
            class_shifts: [
                vec![-22.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                vec![0.0; 6],
                vec![-18.0, 0.0, 0.0, -1.0, 0.0, 0.0],
            ],
            male_fraction: 0.5,
            type1_nulliparous: 0.9,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.priors.iter().any(|p| *p < 0.0) {
            return Err(Error::Invalid(format!("class priors {:?} do not sum to 1", self.priors)));
        }
        if self.class_shifts.iter().any(|s| s.len() != self.continuous.len()) {
            return Err(Error::Invalid("one shift per continuous feature per class".into()));
        }
        for f in self.continuous.iter().chain([&self.pregnancies]) {
            if !(f.std > 0.0 && f.min <= f.max) {
                return Err(Error::Invalid(format!("bad distribution for {}", f.name)));
            }
        }
        if !(0.0..=1.0).contains(&self.male_fraction) || !(0.0..=1.0).contains(&self.type1_nulliparous)
        {
            return Err(Error::Invalid("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Class counts by largest remainder so they always total `n`.
    fn class_counts(&self, n: usize) -> [usize; NUM_CLASSES] {
        let exact: Vec<f64> = self.priors.iter().map(|p| p * n as f64).collect();
        let mut counts = [0usize; NUM_CLASSES];
        for (c, e) in exact.iter().enumerate() {
            counts[c] = e.floor() as usize;
        }
        let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let missing = n - counts.iter().sum::<usize>();
        for &c in order.iter().take(missing) {
            counts[c] += 1;
        }
        counts
    }
}

const MAX_REJECTIONS: usize = 1000;

fn truncated_normal(rng: &mut Rng, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..MAX_REJECTIONS {
        let v = rng.normal(mean, std);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    rng.normal(mean, std).clamp(lo, hi)
}

pub fn generate_synthetic_cohort(n: usize, seed: u64, config: &SyntheticConfig) -> Result<Cohort> {
    if n < 30 {
        return Err(Error::Invalid(format!("synthetic cohort needs n >= 30, got {n}")));
    }
    config.validate()?;

    let counts = config.class_counts(n);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    let mut rng = Rng::seed(seed);
    rng.shuffle(&mut labels);

    // Per-feature class means and within-class spread.
    let shapes: Vec<(Vec<f64>, f64)> = config
        .continuous
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let shifts: Vec<f64> = config.class_shifts.iter().map(|s| s[j]).collect();
            let centre: f64 = shifts.iter().zip(&config.priors).map(|(s, p)| s * p).sum();
            let between: f64 = shifts
                .iter()
                .zip(&config.priors)
                .map(|(s, p)| p * (s - centre).powi(2))
                .sum();
            let within = (f.std * f.std - between).max((0.25 * f.std).powi(2)).sqrt();
            let means = shifts.iter().map(|s| f.mean + s - centre).collect();
            (means, within)
        })
        .collect();

    let d = config.continuous.len() + 1;
    let mut data = Vec::with_capacity(n * d);
    let preg = &config.pregnancies;
    for &label in &labels {
        for (f, (means, within)) in config.continuous.iter().zip(&shapes) {
            data.push(truncated_normal(&mut rng, means[label], *within, f.min, f.max));
        }
        let pregnancies = match label {
            2 => truncated_normal(&mut rng, preg.mean, preg.std, preg.min.max(1.0), preg.max).round(),
            _ => {
                let male = rng.bernoulli(config.male_fraction);
                let nulliparous = label == 0 && rng.bernoulli(config.type1_nulliparous);
                if male || nulliparous {
                    0.0
                } else {
                    truncated_normal(&mut rng, preg.mean, preg.std, preg.min, preg.max).round()
                }
            }
        };
        data.push(pregnancies);
    }

    let schema = Schema::diabetes();
    Cohort::new(
        Matrix::new(n, d, data)?,
        labels,
        schema.feature_names(),
        schema.class_names,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(c: &Cohort, j: usize) -> Vec<f64> {
        (0..c.len()).map(|r| c.features.get(r, j)).collect()
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn pooled_means_match_reference() {
        let c = generate_synthetic_cohort(540, 7, &SyntheticConfig::default()).unwrap();
        let age = mean(&column(&c, 0));
        let bmi = mean(&column(&c, 1));
        assert!((age - 52.3).abs() <= 2.0, "age mean {age}");
        assert!((bmi - 29.4).abs() <= 1.5, "bmi mean {bmi}");
    }

    #[test]
    fn class_prevalence() {
        let n = 540;
        let c = generate_synthetic_cohort(n, 7, &SyntheticConfig::default()).unwrap();
        for (count, p) in c.class_counts().iter().zip([0.18, 0.67, 0.15]) {
            assert!((*count as f64 - p * n as f64).abs() <= 0.03 * n as f64);
        }
    }

    #[test]
    fn values_within_reference_ranges() {
        let c = generate_synthetic_cohort(540, 7, &SyntheticConfig::default()).unwrap();
        assert!(column(&c, 2).iter().all(|v| (70.0..=312.0).contains(v)));
        let cfg = SyntheticConfig::default();
        for (j, f) in cfg.continuous.iter().enumerate() {
            assert!(column(&c, j).iter().all(|v| (f.min..=f.max).contains(v)), "{}", f.name);
        }
    }

    #[test]
    fn pregnancies_structure() {
        let c = generate_synthetic_cohort(540, 3, &SyntheticConfig::default()).unwrap();
        let preg = column(&c, 6);
        assert!(preg.iter().all(|p| p.fract() == 0.0 && (0.0..=10.0).contains(p)));
        for (p, &l) in preg.iter().zip(&c.labels) {
            if l == 2 {
                assert!(*p >= 1.0);
            }
        }
        let t1: Vec<f64> = preg.iter().zip(&c.labels).filter(|(_, &l)| l == 0).map(|(p, _)| *p).collect();
        let zero = t1.iter().filter(|p| **p == 0.0).count();
        assert!(zero * 2 > t1.len(), "type 1 mostly nulliparous");
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic_cohort(100, 9, &cfg).unwrap();
        let b = generate_synthetic_cohort(100, 9, &cfg).unwrap();
        let bits = |c: &Cohort| c.features.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.labels, b.labels);
        assert_ne!(bits(&a), bits(&generate_synthetic_cohort(100, 10, &cfg).unwrap()));
    }

    #[test]
    fn rejects_bad_priors_and_small_n() {
        let cfg = SyntheticConfig {
            priors: [0.5, 0.5, 0.5],
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic_cohort(100, 1, &cfg).is_err());
        assert!(generate_synthetic_cohort(29, 1, &SyntheticConfig::default()).is_err());
    }
}
