//! Synthetic regression data and output min-max standardization.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest magnitude fed into the `poly` power transform.
pub const POLY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Lin,
    Poly,
    Trig,
}

impl Structure {
    /// Noiseless response for a linear predictor value `t = x . beta`.
    pub fn signal(self, t: f64) -> f64 {
        match self {
            Structure::Lin => t,
            Structure::Poly => t.abs().max(POLY_FLOOR).powf(-2.0 / 3.0),
            Structure::Trig => {
                let a = t.abs();
                if a == 0.0 {
                    1.0
                } else {
                    a.sin() / a
                }
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Lin => "lin",
            Structure::Poly => "poly",
            Structure::Trig => "trig",
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Structure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lin" => Ok(Structure::Lin),
            "poly" => Ok(Structure::Poly),
            "trig" => Ok(Structure::Trig),
            other => Err(format!("unknown structure '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataGenSpec {
    pub p: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub mu: f64,
    pub snr: f64,
    pub structure: Structure,
}

impl DataGenSpec {
    /// The three `(p, n_train, n_test)` rows of the study grid, SNR 2 and mean 0.
    pub fn study_grid(structure: Structure) -> [DataGenSpec; 3] {
        [(5, 150, 50), (20, 500, 200), (50, 1000, 500)].map(|(p, n_train, n_test)| DataGenSpec {
            p,
            n_train,
            n_test,
            mu: 0.0,
            snr: 2.0,
            structure,
        })
    }
}

/// Regression data with row-major predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: usize,
    /// Generating coefficient, empty for imported data.
    pub beta: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, p: usize) -> Result<Self> {
        if p == 0 || x.len() != y.len() * p {
            return Err(Error::Shape(format!(
                "{} predictor values do not form {} rows of width {}",
                x.len(),
                y.len(),
                p
            )));
        }
        Ok(Dataset { x, y, p, beta: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.x[i * self.p..(i + 1) * self.p]
    }

    /// Stable 64-bit fingerprint of every predictor and response bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::seed::Fnv1a::new();
        h.write_u64(self.p as u64);
        h.write_u64(self.len() as u64);
        for v in self.x.iter().chain(&self.y) {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }

    /// CSV with header `x1..xp,y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.p).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let width = headers.len();
        if width < 2 || headers.get(width - 1) != Some("y") {
            return Err(Error::Shape("dataset CSV must end with a 'y' column".into()));
        }
        let p = width - 1;
        for (j, name) in headers.iter().take(p).enumerate() {
            if name != format!("x{}", j + 1) {
                return Err(Error::Shape(format!("unexpected column '{name}'")));
            }
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Shape(format!("non-numeric value '{field}'")))?;
                if j < p {
                    x.push(v);
                } else {
                    y.push(v);
                }
            }
        }
        Dataset::new(x, y, p)
    }
}

/// How the Gaussian error scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseScale {
    /// `sigma^2 = Var(signal) / snr` over the combined train and test signal.
    Snr(f64),
    /// Fixed standard deviation.
    Sd(f64),
}

pub fn generate_dataset<R: Rng + ?Sized>(spec: &DataGenSpec, rng: &mut R) -> (Dataset, Dataset) {
    generate_dataset_with(spec, NoiseScale::Snr(spec.snr), rng)
}

pub fn generate_dataset_with<R: Rng + ?Sized>(
    spec: &DataGenSpec,
    noise: NoiseScale,
    rng: &mut R,
) -> (Dataset, Dataset) {
    let p = spec.p;
    let n_total = spec.n_train + spec.n_test;
    let x: Vec<f64> = (0..n_total * p).map(|_| spec.mu + rng.sample::<f64, _>(StandardNormal)).collect();
    let beta: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let signal: Vec<f64> =
        x.chunks_exact(p).map(|row| spec.structure.signal(row.iter().zip(&beta).map(|(a, b)| a * b).sum())).collect();

    let sigma = match noise {
        NoiseScale::Snr(snr) => (sample_variance(&signal) / snr).sqrt(),
        NoiseScale::Sd(sd) => sd,
    };
    let mut noisy = |f: &f64| {
        if sigma > 0.0 {
            f + sigma * rng.sample::<f64, _>(StandardNormal)
        } else {
            *f
        }
    };
    let y_train: Vec<f64> = signal[..spec.n_train].iter().map(&mut noisy).collect();
    let y_test: Vec<f64> = signal[spec.n_train..].iter().map(&mut noisy).collect();

    let (x_train, x_test) = x.split_at(spec.n_train * p);
    let train = Dataset { x: x_train.to_vec(), y: y_train, p, beta: beta.clone() };
    let test = Dataset { x: x_test.to_vec(), y: y_test, p, beta };
    (train, test)
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Min-max transform fitted on training responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub y_min: f64,
    pub y_max: f64,
}

impl Standardizer {
    pub fn fit(y: &[f64]) -> Result<Self> {
        let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
        let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if y.is_empty() || y_max <= y_min {
            return Err(Error::DegenerateStandardization(y.first().copied().unwrap_or(f64::NAN)));
        }
        Ok(Standardizer { y_min, y_max })
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let range = self.y_max - self.y_min;
        y.iter().map(|v| (v - self.y_min) / range).collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        let range = self.y_max - self.y_min;
        y.iter().map(|v| v * range + self.y_min).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(structure: Structure) -> DataGenSpec {
        DataGenSpec { p: 5, n_train: 150, n_test: 50, mu: 0.0, snr: 2.0, structure }
    }

    #[test]
    fn trig_removable_singularity() {
        assert_eq!(Structure::Trig.signal(0.0), 1.0);
        assert!((Structure::Trig.signal(1e-9) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn poly_floor_guards_zero() {
        let v = Structure::Poly.signal(0.0);
        assert!(v.is_finite());
        assert_eq!(v, POLY_FLOOR.powf(-2.0 / 3.0));
        assert!((Structure::Poly.signal(-8.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lin_without_noise_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (train, test) = generate_dataset_with(&spec(Structure::Lin), NoiseScale::Sd(0.0), &mut rng);
        for d in [&train, &test] {
            for i in 0..d.len() {
                let t: f64 = d.row(i).iter().zip(&d.beta).map(|(a, b)| a * b).sum();
                assert_eq!(d.y[i], t);
            }
        }
    }

    #[test]
    fn shapes_and_shared_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = DataGenSpec { p: 20, n_train: 500, n_test: 200, mu: 0.0, snr: 2.0, structure: Structure::Poly };
        let (train, test) = generate_dataset(&s, &mut rng);
        assert_eq!((train.len(), train.p, train.x.len()), (500, 20, 10_000));
        assert_eq!((test.len(), test.p), (200, 20));
        assert_eq!(train.beta, test.beta);
        assert!(train.y.iter().chain(&test.y).all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_by_seed() {
        let a = generate_dataset(&spec(Structure::Trig), &mut ChaCha8Rng::seed_from_u64(4));
        let b = generate_dataset(&spec(Structure::Trig), &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn standardizer_examples() {
        let t = Standardizer::fit(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!((t.y_min, t.y_max), (2.0, 6.0));
        assert_eq!(t.apply(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert!(Standardizer::fit(&[5.0, 5.0]).is_err());
        assert!(Standardizer::fit(&[]).is_err());
        let id = Standardizer { y_min: 0.0, y_max: 1.0 };
        assert_eq!(id.apply(&[0.25]), vec![0.25]);
        let t = Standardizer::fit(&[0.3, -1.0, 1000.0]).unwrap();
        assert_eq!(t.y_max, 1000.0);
    }

    #[test]
    fn csv_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (train, _) = generate_dataset(&spec(Structure::Lin), &mut rng);
        let mut buf = Vec::new();
        train.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,x3,x4,x5,y\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.x, train.x);
        assert_eq!(back.y, train.y);
    }

    #[test]
    fn csv_rejects_bad_header() {
        assert!(Dataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("x1,y\n1,zz\n".as_bytes()).is_err());
    }
}
