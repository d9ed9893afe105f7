//! Full-covariance CMA-ES, the canonical (μ/μ_w, λ) variant with rank-one and
//! rank-μ covariance updates and cumulative step-size adaptation.
//!
//! The API maximizes: `tell` takes rewards and ranks them highest first.
//! Sampling noise for generation `g` is drawn from a generator seeded by
//! `(seed, g)`, so the trajectory is a pure function of the state and a
//! restored checkpoint continues exactly where the original run would have.

use std::cmp::Ordering;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::genome::{read_f64s, write_f64s};

/// Eigenvalues below this are clamped before taking square roots.
pub const MIN_EIGENVALUE: f64 = 1e-20;

#[derive(Clone, Debug, PartialEq)]
pub struct CmaConfig {
    /// λ, candidates per generation.
    pub population_size: usize,
    /// μ, defaults to ⌊λ/2⌋.
    pub parent_count: Option<usize>,
    pub initial_sigma: f64,
    pub seed: u64,
}

impl CmaConfig {
    pub const DEFAULT_POPULATION: usize = 256;
    pub const DEFAULT_SIGMA: f64 = 0.1;

    pub fn new(population_size: usize, initial_sigma: f64, seed: u64) -> Self {
        CmaConfig {
            population_size,
            parent_count: None,
            initial_sigma,
            seed,
        }
    }

    pub fn parents(&self) -> usize {
        self.parent_count.unwrap_or(self.population_size / 2)
    }

    fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config(format!(
                "population size must be at least 2, got {}",
                self.population_size
            )));
        }
        let mu = self.parents();
        if mu == 0 || mu > self.population_size {
            return Err(Error::Config(format!(
                "parent count {mu} must be in 1..={}",
                self.population_size
            )));
        }
        if !(self.initial_sigma.is_finite() && self.initial_sigma > 0.0) {
            return Err(Error::Config(format!(
                "initial sigma must be positive, got {}",
                self.initial_sigma
            )));
        }
        Ok(())
    }
}

impl Default for CmaConfig {
    fn default() -> Self {
        CmaConfig::new(Self::DEFAULT_POPULATION, Self::DEFAULT_SIGMA, 0)
    }
}

/// Recombination weights and learning rates, all derived from `(n, λ, μ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyParams {
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    /// E‖N(0, I)‖.
    pub chi_n: f64,
    /// Generations between eigendecompositions.
    pub eigen_interval: u64,
}

impl StrategyParams {
    pub fn new(dim: usize, lambda: usize, mu: usize) -> Self {
        let n = dim as f64;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        let eigen_interval = (1.0 / (10.0 * n * (c_1 + c_mu))).ceil().max(1.0) as u64;
        StrategyParams {
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            eigen_interval,
        }
    }
}

/// Best candidate ever told, with the fitness it was told with.
#[derive(Clone, Debug, PartialEq)]
pub struct Incumbent {
    pub solution: Vec<f64>,
    pub fitness: f64,
    pub generation: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TellReport {
    /// Candidates whose fitness was NaN and were ranked last.
    pub nan_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmaEs {
    config: CmaConfig,
    params: StrategyParams,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    /// Eigenvectors of `cov` as of the last decomposition (columns).
    basis: DMatrix<f64>,
    /// Square roots of the matching eigenvalues.
    scales: DVector<f64>,
    generation: u64,
    evaluations: u64,
    eigen_age: u64,
    nan_total: u64,
    best: Option<Incumbent>,
}

impl CmaEs {
    pub fn new(initial_mean: Vec<f64>, mut config: CmaConfig) -> Result<Self> {
        config.validate()?;
        config.parent_count = Some(config.parents());
        let n = initial_mean.len();
        if n == 0 {
            return Err(Error::Config("search space has zero dimensions".into()));
        }
        if initial_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("initial mean has non-finite entries".into()));
        }
        let params = StrategyParams::new(n, config.population_size, config.parents());
        Ok(CmaEs {
            sigma: config.initial_sigma,
            config,
            params,
            mean: DVector::from_vec(initial_mean),
            cov: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            generation: 0,
            evaluations: 0,
            eigen_age: 0,
            nan_total: 0,
            best: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn config(&self) -> &CmaConfig {
        &self.config
    }

    pub fn strategy(&self) -> &StrategyParams {
        &self.params
    }

    pub fn population_size(&self) -> usize {
        self.config.population_size
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Completed generations (number of `tell` calls).
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn nan_fitness_total(&self) -> u64 {
        self.nan_total
    }

    /// Best-ever candidate.
    pub fn best(&self) -> Result<&Incumbent> {
        self.best.as_ref().ok_or(Error::EmptyArchive)
    }

    fn generation_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix64(self.config.seed ^ mix64(self.generation)))
    }

    fn refresh_eigen(&mut self) {
        let eigen = SymmetricEigen::new(self.cov.clone());
        let mut clamped = 0;
        self.scales = eigen.eigenvalues.map(|v| {
            if v.is_finite() && v >= MIN_EIGENVALUE {
                v.sqrt()
            } else {
                clamped += 1;
                MIN_EIGENVALUE.sqrt()
            }
        });
        if clamped > 0 {
            warn!(
                "covariance not positive definite at generation {}: clamped {clamped} eigenvalues to {MIN_EIGENVALUE:e}",
                self.generation
            );
        }
        self.basis = eigen.eigenvectors;
        self.eigen_age = 0;
    }

    /// Samples λ candidates with the state-derived generator.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        let mut rng = self.generation_rng();
        self.ask_with(&mut rng)
    }

    /// Samples λ candidates `mean + σ·B·D·z`, `z ~ N(0, I)`.
    pub fn ask_with<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        if self.eigen_age >= self.params.eigen_interval {
            self.refresh_eigen();
        }
        let n = self.dim();
        let lambda = self.config.population_size;
        let mut z = DMatrix::<f64>::zeros(n, lambda);
        for k in 0..lambda {
            for i in 0..n {
                let draw: f64 = rng.sample(StandardNormal);
                z[(i, k)] = draw * self.scales[i];
            }
        }
        let y = &self.basis * z;
        (0..lambda)
            .map(|k| {
                self.mean
                    .iter()
                    .zip(y.column(k).iter())
                    .map(|(&m, &yi)| m + self.sigma * yi)
                    .collect()
            })
            .collect()
    }

    /// Updates the search distribution from one generation of fitnesses,
    /// higher being better. NaN fitnesses rank below every finite one.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<TellReport> {
        let n = self.dim();
        let lambda = self.config.population_size;
        if candidates.len() != lambda || fitness.len() != lambda {
            return Err(Error::shape(
                "cma-es generation",
                format!("{lambda} candidates and fitnesses"),
                format!("{} candidates, {} fitnesses", candidates.len(), fitness.len()),
            ));
        }
        if let Some(bad) = candidates.iter().find(|c| c.len() != n) {
            return Err(Error::shape("cma-es candidate", n, bad.len()));
        }

        let nan_count = fitness.iter().filter(|f| f.is_nan()).count();
        self.nan_total += nan_count as u64;
        if nan_count > 0 {
            warn!("{nan_count} NaN fitness values at generation {}", self.generation);
        }

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| rank_cmp(fitness[a], fitness[b]));

        let top = order[0];
        if !fitness[top].is_nan() && self.best.as_ref().is_none_or(|b| fitness[top] > b.fitness) {
            self.best = Some(Incumbent {
                solution: candidates[top].clone(),
                fitness: fitness[top],
                generation: self.generation,
            });
        }

        let p = &self.params;
        let mu = p.weights.len();
        let old_mean = self.mean.clone();

        // steps of the μ best, scaled by sqrt(w) for the rank-μ update
        let mut steps = DMatrix::<f64>::zeros(n, mu);
        let mut new_mean = DVector::<f64>::zeros(n);
        for (rank, &idx) in order.iter().take(mu).enumerate() {
            let w = p.weights[rank];
            let x = &candidates[idx];
            let w_sqrt = w.sqrt();
            for i in 0..n {
                new_mean[i] += w * x[i];
                steps[(i, rank)] = w_sqrt * (x[i] - old_mean[i]) / self.sigma;
            }
        }
        let y_w = (&new_mean - &old_mean) / self.sigma;

        // C^{-1/2}·y_w = B·D⁻¹·Bᵀ·y_w
        let mut rotated = self.basis.tr_mul(&y_w);
        for (v, &d) in rotated.iter_mut().zip(self.scales.iter()) {
            *v /= d;
        }
        let whitened = &self.basis * rotated;

        let cs = p.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - cs) + whitened * (cs * (2.0 - cs) * p.mu_eff).sqrt();
        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - cs).powf(2.0 * (self.generation as f64 + 1.0));
        let h_sigma = ps_norm / decay.sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };

        let cc = p.c_c;
        self.p_c = &self.p_c * (1.0 - cc) + &y_w * (h * (cc * (2.0 - cc) * p.mu_eff).sqrt());

        let keep = 1.0 - p.c_1 - p.c_mu + (1.0 - h) * p.c_1 * cc * (2.0 - cc);
        self.cov *= keep;
        self.cov.ger(p.c_1, &self.p_c, &self.p_c, 1.0);
        self.cov.gemm(p.c_mu, &steps, &steps.transpose(), 1.0);
        symmetrize(&mut self.cov);

        self.sigma *= ((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.mean = new_mean;
        self.generation += 1;
        self.evaluations += lambda as u64;
        self.eigen_age += 1;
        Ok(TellReport { nan_count })
    }
}

/// Higher fitness first, NaN last, equal values keep their input order.
fn rank_cmp(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => b.partial_cmp(&a).unwrap_or(Ordering::Equal),
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const CMA_MAGIC: &[u8; 8] = b"ATTNCMA\0";
const CMA_VERSION: u32 = 1;

impl CmaEs {
    /// Binary dump of the complete optimizer state, little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CMA_MAGIC)?;
        w.write_u32::<LittleEndian>(CMA_VERSION)?;
        for v in [
            self.dim() as u64,
            self.config.population_size as u64,
            self.config.parents() as u64,
            self.config.seed,
        ] {
            w.write_u64::<LittleEndian>(v)?;
        }
        w.write_f64::<LittleEndian>(self.config.initial_sigma)?;
        for v in [self.generation, self.evaluations, self.eigen_age, self.nan_total] {
            w.write_u64::<LittleEndian>(v)?;
        }
        w.write_f64::<LittleEndian>(self.sigma)?;
        write_f64s(&mut w, self.mean.as_slice())?;
        write_f64s(&mut w, self.p_sigma.as_slice())?;
        write_f64s(&mut w, self.p_c.as_slice())?;
        write_f64s(&mut w, self.cov.as_slice())?;
        write_f64s(&mut w, self.basis.as_slice())?;
        write_f64s(&mut w, self.scales.as_slice())?;
        match &self.best {
            None => w.write_u8(0)?,
            Some(b) => {
                w.write_u8(1)?;
                w.write_f64::<LittleEndian>(b.fitness)?;
                w.write_u64::<LittleEndian>(b.generation)?;
                write_f64s(&mut w, &b.solution)?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CMA_MAGIC {
            return Err(Error::Checkpoint("not a CMA-ES checkpoint".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CMA_VERSION {
            return Err(Error::Checkpoint(format!("unsupported CMA-ES version {version}")));
        }
        let n = r.read_u64::<LittleEndian>()? as usize;
        let lambda = r.read_u64::<LittleEndian>()? as usize;
        let mu = r.read_u64::<LittleEndian>()? as usize;
        let seed = r.read_u64::<LittleEndian>()?;
        let initial_sigma = r.read_f64::<LittleEndian>()?;
        let config = CmaConfig {
            population_size: lambda,
            parent_count: Some(mu),
            initial_sigma,
            seed,
        };
        config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        if n == 0 || n > (1 << 16) {
            return Err(Error::Checkpoint(format!("implausible dimension {n}")));
        }
        let generation = r.read_u64::<LittleEndian>()?;
        let evaluations = r.read_u64::<LittleEndian>()?;
        let eigen_age = r.read_u64::<LittleEndian>()?;
        let nan_total = r.read_u64::<LittleEndian>()?;
        let sigma = r.read_f64::<LittleEndian>()?;

        let vector = |r: &mut R, len: usize, what: &str| -> Result<Vec<f64>> {
            let v = read_f64s(r, len)?;
            if v.len() != len {
                return Err(Error::Checkpoint(format!("{what}: expected {len} values, got {}", v.len())));
            }
            Ok(v)
        };
        let mean = vector(&mut r, n, "mean")?;
        let p_sigma = vector(&mut r, n, "p_sigma")?;
        let p_c = vector(&mut r, n, "p_c")?;
        let cov = vector(&mut r, n * n, "covariance")?;
        let basis = vector(&mut r, n * n, "eigenvectors")?;
        let scales = vector(&mut r, n, "eigenvalues")?;
        let best = match r.read_u8()? {
            0 => None,
            1 => {
                let fitness = r.read_f64::<LittleEndian>()?;
                let generation = r.read_u64::<LittleEndian>()?;
                let solution = vector(&mut r, n, "incumbent")?;
                Some(Incumbent {
                    solution,
                    fitness,
                    generation,
                })
            }
            other => return Err(Error::Checkpoint(format!("bad incumbent flag {other}"))),
        };
        Ok(CmaEs {
            params: StrategyParams::new(n, lambda, mu),
            config,
            mean: DVector::from_vec(mean),
            sigma,
            cov: DMatrix::from_vec(n, n, cov),
            p_sigma: DVector::from_vec(p_sigma),
            p_c: DVector::from_vec(p_c),
            basis: DMatrix::from_vec(n, n, basis),
            scales: DVector::from_vec(scales),
            generation,
            evaluations,
            eigen_age,
            nan_total,
            best,
        })
    }
}
