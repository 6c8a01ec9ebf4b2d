//! Stimulus generators: Bernoulli parameter sweep, i.i.d. uniform / normal /
//! Gumbel / fair-coin pixels, and Ising-model lattices over a beta grid.
//!
//! Image `i` draws from its own ChaCha8 stream `(seed, i)`, so output does
//! not depend on how rayon schedules the work.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{
    invalid, read_bytes, read_f64, read_header, read_tensor, read_u32, read_u8, write_bytes, write_f64, write_header,
    write_tensor, write_u32, write_u8,
};
use crate::nn::Tensor;

pub const STIMULUS_MAGIC: &[u8; 4] = b"XSTM";
pub const STIMULUS_VERSION: u32 = 1;
pub const DEFAULT_SWEEPS: usize = 200;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("invalid noise spec: {0}")]
    InvalidSpec(String),
    #[error("stimulus file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, NoiseError>;

fn bad(msg: impl Into<String>) -> NoiseError {
    NoiseError::InvalidSpec(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    BernoulliSweep,
    Uniform,
    Normal,
    Gumbel,
    BernoulliHalf,
    Ising,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] = [
        NoiseKind::BernoulliSweep,
        NoiseKind::Uniform,
        NoiseKind::Normal,
        NoiseKind::Gumbel,
        NoiseKind::BernoulliHalf,
        NoiseKind::Ising,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::BernoulliSweep => "bernoulli_sweep",
            NoiseKind::Uniform => "uniform",
            NoiseKind::Normal => "normal",
            NoiseKind::Gumbel => "gumbel",
            NoiseKind::BernoulliHalf => "bernoulli_half",
            NoiseKind::Ising => "ising",
        }
    }

    fn code(self) -> u8 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u8
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Kinds whose outputs are exactly `{0, 1}`.
    pub fn is_binary(self) -> bool {
        matches!(self, NoiseKind::BernoulliSweep | NoiseKind::BernoulliHalf | NoiseKind::Ising)
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let kind = match norm.as_str() {
            "bernoulli" | "bernoulli_sweep" => NoiseKind::BernoulliSweep,
            "bernoulli_half" => NoiseKind::BernoulliHalf,
            other => {
                *Self::ALL.iter().find(|k| k.name() == other).ok_or_else(|| bad(format!("unknown noise kind '{s}'")))?
            }
        };
        Ok(kind)
    }
}

/// Sign of the Ising interaction `J`. `+1` favours aligned neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Coupling {
    Ferromagnetic,
    Antiferromagnetic,
}

impl Coupling {
    pub fn sign(self) -> i8 {
        match self {
            Coupling::Ferromagnetic => 1,
            Coupling::Antiferromagnetic => -1,
        }
    }
}

impl From<Coupling> for i8 {
    fn from(c: Coupling) -> i8 {
        c.sign()
    }
}

impl TryFrom<i8> for Coupling {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Coupling::Ferromagnetic),
            -1 => Ok(Coupling::Antiferromagnetic),
            _ => Err(format!("coupling must be +1 or -1, got {v}")),
        }
    }
}

impl FromStr for Coupling {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self> {
        let v: i8 = s.trim().trim_start_matches('+').parse().map_err(|_| bad(format!("bad coupling '{s}'")))?;
        Coupling::try_from(v).map_err(bad)
    }
}

/// `{0.01, 0.11, ..., 0.91}`.
pub fn default_p_grid() -> Vec<f64> {
    (0..10).map(|k| (1 + 10 * k) as f64 / 100.0).collect()
}

/// `{0.0, 0.1, ..., 0.9}`.
pub fn default_beta_grid() -> Vec<f64> {
    (0..10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub p_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub coupling: Coupling,
    pub sweeps: usize,
    /// Clamp real-valued outputs into `[0, 1]`. Off by default.
    #[serde(default)]
    pub clip: bool,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, count: usize, seed: u64) -> Self {
        Self {
            kind,
            count,
            width: 28,
            height: 28,
            p_grid: default_p_grid(),
            beta_grid: default_beta_grid(),
            coupling: Coupling::Ferromagnetic,
            sweeps: DEFAULT_SWEEPS,
            clip: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(bad("count must be at least 1"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(bad("image dimensions must be positive"));
        }
        match self.kind {
            NoiseKind::BernoulliSweep => {
                if self.p_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(bad("every p must lie in [0, 1]"));
                }
                stratum_size(self.count, self.p_grid.len())?;
            }
            NoiseKind::Ising => {
                if self.beta_grid.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
                    return Err(bad("every beta must be finite and >= 0"));
                }
                if self.sweeps == 0 {
                    return Err(bad("sweeps must be at least 1"));
                }
                stratum_size(self.count, self.beta_grid.len())?;
            }
            _ => {}
        }
        Ok(())
    }

    /// Swept parameter for image `i`, if the kind has one.
    fn param_for(&self, i: usize) -> Option<f64> {
        match self.kind {
            NoiseKind::BernoulliSweep => Some(self.p_grid[i / (self.count / self.p_grid.len())]),
            NoiseKind::Ising => Some(self.beta_grid[i / (self.count / self.beta_grid.len())]),
            NoiseKind::BernoulliHalf => Some(0.5),
            _ => None,
        }
    }
}

/// Images per grid value; `count` must split evenly.
pub fn stratum_size(count: usize, grid_len: usize) -> Result<usize> {
    if grid_len == 0 {
        return Err(bad("parameter grid is empty"));
    }
    if !count.is_multiple_of(grid_len) {
        return Err(bad(format!("count {count} is not divisible by grid size {grid_len}")));
    }
    Ok(count / grid_len)
}

/// Distribution and parameter value that produced one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusTag {
    pub kind: NoiseKind,
    pub param: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StimulusBatch {
    pub spec: NoiseSpec,
    pub images: Tensor<f32>,
    pub tags: Vec<StimulusTag>,
}

impl StimulusBatch {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Image indices grouped by tag parameter, in grid order of first appearance.
    pub fn strata(&self) -> Vec<(f64, Vec<usize>)> {
        let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
        for (i, t) in self.tags.iter().enumerate() {
            let p = t.param.unwrap_or(f64::NAN);
            match out.iter_mut().find(|(q, _)| q.to_bits() == p.to_bits()) {
                Some((_, v)) => v.push(i),
                None => out.push((p, vec![i])),
            }
        }
        out
    }

    pub fn select(&self, indices: &[usize]) -> StimulusBatch {
        StimulusBatch {
            spec: self.spec.clone(),
            images: self.images.gather_rows(indices),
            tags: indices.iter().map(|&i| self.tags[i]).collect(),
        }
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(w, STIMULUS_MAGIC, STIMULUS_VERSION)?;
        let spec = serde_json::to_vec(&self.spec).map_err(|e| NoiseError::Format(e.to_string()))?;
        write_bytes(w, &spec)?;
        write_u32(w, u32::try_from(self.tags.len()).map_err(|_| invalid("too many stimuli"))?)?;
        for t in &self.tags {
            write_u8(w, t.kind.code())?;
            write_u8(w, t.param.is_some() as u8)?;
            write_f64(w, t.param.unwrap_or(0.0))?;
        }
        write_tensor(w, &self.images)?;
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let fmt_err = |e: io::Error| NoiseError::Format(e.to_string());
        let version = read_header(r, STIMULUS_MAGIC).map_err(fmt_err)?;
        if version != STIMULUS_VERSION {
            return Err(NoiseError::Format(format!("unsupported version {version}")));
        }
        let spec: NoiseSpec = serde_json::from_slice(&read_bytes(r).map_err(fmt_err)?)
            .map_err(|e| NoiseError::Format(format!("embedded spec: {e}")))?;
        let n = read_u32(r).map_err(fmt_err)? as usize;
        let mut tags = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let code = read_u8(r).map_err(fmt_err)?;
            let kind = NoiseKind::from_code(code).ok_or_else(|| NoiseError::Format(format!("bad kind code {code}")))?;
            let has = read_u8(r).map_err(fmt_err)?;
            let value = read_f64(r).map_err(fmt_err)?;
            tags.push(StimulusTag { kind, param: (has == 1).then_some(value) });
        }
        let images = read_tensor(r).map_err(fmt_err)?;
        if images.rank() != 4 || images.dim(0) != n {
            return Err(NoiseError::Format(format!("image tensor {:?} does not match {n} tags", images.shape())));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(NoiseError::Format("trailing bytes after image tensor".into()));
        }
        Ok(Self { spec, images, tags })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}

/// Standard Gumbel by inversion: `-ln(-ln u)` for `u` in `(0, 1)`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Metropolis single-spin-flip sampler on a `width x height` lattice with
/// free boundaries and energy `E = -J * sum_<ij> s_i s_j`.
///
/// Spins start uniformly at random; each of the `sweeps` sweeps visits every
/// site once, even-parity sites before odd ones (same-colour sites share no
/// bond, so a half-sweep has no update-to-update dependency).
/// Returns pixels with `-1 -> 0`, `+1 -> 1`.
pub fn ising_sample<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    beta: f64,
    coupling: Coupling,
    sweeps: usize,
    rng: &mut R,
) -> Vec<u8> {
    let mut out = vec![0u8; width * height];
    ising_into(width, height, beta, coupling, sweeps, rng, |i, s| out[i] = s);
    out
}

fn ising_into<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    beta: f64,
    coupling: Coupling,
    sweeps: usize,
    rng: &mut R,
    mut emit: impl FnMut(usize, u8),
) {
    // Zero-padded border gives free boundaries without branching.
    let stride = width + 2;
    let mut spins = vec![0i8; stride * (height + 2)];
    for y in 0..height {
        for x in 0..width {
            spins[(y + 1) * stride + x + 1] = if rng.next_u32() & 1 == 1 { 1 } else { -1 };
        }
    }
    // local = s_i * sum(neighbours) in -4..=4; dE = 2 J local.
    // Acceptance threshold on a u32 draw, u64 so that probability 1 is representable.
    let j = coupling.sign() as f64;
    let table: [u64; 9] = std::array::from_fn(|k| {
        let d_e = 2.0 * j * (k as f64 - 4.0);
        if d_e <= 0.0 {
            1 << 32
        } else {
            ((-beta * d_e).exp() * 4_294_967_296.0) as u64
        }
    });
    let mut draws = vec![0u32; width * height];
    for _ in 0..sweeps {
        rng.fill(draws.as_mut_slice());
        let mut draw = draws.iter();
        for parity in 0..2 {
            for y in 1..=height {
                let row = y * stride;
                for x in ((1 + (y + parity) % 2)..=width).step_by(2) {
                    let i = row + x;
                    let s = spins[i];
                    let nb = spins[i - 1] + spins[i + 1] + spins[i - stride] + spins[i + stride];
                    let accept = (*draw.next().unwrap() as u64) < table[(s * nb + 4) as usize];
                    spins[i] = if accept { -s } else { s };
                }
            }
        }
    }
    for y in 0..height {
        for x in 0..width {
            emit(y * width + x, (spins[(y + 1) * stride + x + 1] > 0) as u8);
        }
    }
}

fn image_rng(base: &ChaCha8Rng, index: usize) -> ChaCha8Rng {
    let mut rng = base.clone();
    rng.set_stream(index as u64);
    rng
}

/// Generates the batch described by `spec`.
pub fn generate(spec: &NoiseSpec) -> Result<StimulusBatch> {
    spec.validate()?;
    let pixels = spec.width * spec.height;
    let mut data = vec![0f32; spec.count * pixels];
    let base = ChaCha8Rng::seed_from_u64(spec.seed);
    data.par_chunks_mut(pixels).enumerate().for_each(|(i, img)| {
        let mut rng = image_rng(&base, i);
        let param = spec.param_for(i);
        match spec.kind {
            NoiseKind::BernoulliSweep | NoiseKind::BernoulliHalf => {
                let p = param.unwrap();
                for v in img.iter_mut() {
                    *v = (rng.random::<f64>() < p) as u8 as f32;
                }
            }
            NoiseKind::Uniform => img.iter_mut().for_each(|v| *v = rng.random::<f32>()),
            NoiseKind::Normal => img.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
            NoiseKind::Gumbel => {
                img.iter_mut().for_each(|v| *v = gumbel_from_uniform(rng.sample::<f64, _>(Open01)) as f32)
            }
            NoiseKind::Ising => {
                ising_into(spec.width, spec.height, param.unwrap(), spec.coupling, spec.sweeps, &mut rng, |k, s| {
                    img[k] = s as f32
                })
            }
        }
        if spec.clip {
            img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
    });
    let images = Tensor::new(vec![spec.count, spec.height, spec.width, 1], data)
        .map_err(|e| NoiseError::InvalidSpec(e.to_string()))?;
    let tags = (0..spec.count).map(|i| StimulusTag { kind: spec.kind, param: spec.param_for(i) }).collect();
    Ok(StimulusBatch { spec: spec.clone(), images, tags })
}

pub fn gen_bernoulli_sweep(count: usize, p_grid: &[f64], seed: u64) -> Result<StimulusBatch> {
    let mut spec = NoiseSpec::new(NoiseKind::BernoulliSweep, count, seed);
    spec.p_grid = p_grid.to_vec();
    generate(&spec)
}

/// One of the unswept kinds: uniform, normal, gumbel or bernoulli_half.
pub fn gen_iid(kind: NoiseKind, count: usize, seed: u64) -> Result<StimulusBatch> {
    if matches!(kind, NoiseKind::BernoulliSweep | NoiseKind::Ising) {
        return Err(bad(format!("{kind} is a swept kind, not i.i.d.")));
    }
    generate(&NoiseSpec::new(kind, count, seed))
}

pub fn gen_ising_set(
    count: usize,
    beta_grid: &[f64],
    coupling: Coupling,
    sweeps: usize,
    seed: u64,
) -> Result<StimulusBatch> {
    let mut spec = NoiseSpec::new(NoiseKind::Ising, count, seed);
    spec.beta_grid = beta_grid.to_vec();
    spec.coupling = coupling;
    spec.sweeps = sweeps;
    generate(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f32]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
        let v = xs.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn grids() {
        let p = default_p_grid();
        assert_eq!(p.len(), 10);
        assert_eq!((p[0], p[1], p[9]), (0.01, 0.11, 0.91));
        assert_eq!(default_beta_grid()[9], 0.9);
    }

    #[test]
    fn full_sweep_splits_evenly() {
        assert_eq!(stratum_size(600_000, 10).unwrap(), 60_000);
        assert_eq!(stratum_size(70_000, 10).unwrap(), 7_000);
        assert!(stratum_size(600_001, 10).is_err());
        assert!(gen_bernoulli_sweep(15, &default_p_grid(), 0).is_err());
        assert!(gen_ising_set(15, &default_beta_grid(), Coupling::Ferromagnetic, 1, 0).is_err());
    }

    #[test]
    fn sweep_strata_are_contiguous_and_tagged() {
        let b = gen_bernoulli_sweep(40, &default_p_grid(), 1).unwrap();
        let strata = b.strata();
        assert_eq!(strata.len(), 10);
        for (k, (p, idx)) in strata.iter().enumerate() {
            assert_eq!(*p, default_p_grid()[k]);
            assert_eq!(idx, &(4 * k..4 * k + 4).collect::<Vec<_>>());
        }
        assert!(b.images.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn low_p_stratum_mean() {
        let b = gen_bernoulli_sweep(200, &[0.01], 2).unwrap();
        let (m, _) = mean_var(b.images.data());
        let se = (0.01f64 * 0.99 / b.images.len() as f64).sqrt();
        assert!((m - 0.01).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn degenerate_p_gives_ones() {
        let b = gen_bernoulli_sweep(3, &[1.0], 3).unwrap();
        assert!(b.images.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn uniform_moments() {
        let b = gen_iid(NoiseKind::Uniform, 1276, 4).unwrap();
        let n = b.images.len() as f64;
        assert!(n >= 1e6);
        let (m, v) = mean_var(b.images.data());
        assert!((m - 0.5).abs() < 3.0 * (1.0 / 12.0 / n).sqrt(), "mean {m}");
        // Var of (x - 1/2)^2 for U(0,1) is 1/80 - 1/144.
        assert!((v - 1.0 / 12.0).abs() < 3.0 * ((1.0 / 80.0 - 1.0 / 144.0) / n).sqrt(), "var {v}");
        assert!(b.images.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn normal_and_gumbel_moments() {
        let b = gen_iid(NoiseKind::Normal, 1276, 5).unwrap();
        let n = b.images.len() as f64;
        let (m, v) = mean_var(b.images.data());
        assert!(m.abs() < 3.0 / n.sqrt(), "normal mean {m}");
        assert!((v - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "normal var {v}");
        assert!(b.images.data().iter().any(|&x| x < 0.0));

        let g = gen_iid(NoiseKind::Gumbel, 1276, 6).unwrap();
        let (m, v) = mean_var(g.images.data());
        let euler_gamma = 0.577_215_664_901_532_9;
        let var = std::f64::consts::PI.powi(2) / 6.0;
        assert!((m - euler_gamma).abs() < 3.0 * (var / n).sqrt(), "gumbel mean {m}");
        // Excess kurtosis of the Gumbel is 12/5, so Var(s^2) = var^2 (2 + 12/5).
        assert!((v - var).abs() < 3.0 * (var * var * 4.4 / n).sqrt(), "gumbel var {v}");
    }

    #[test]
    fn gumbel_at_half() {
        let expected = -(2f64.ln().ln());
        assert!((gumbel_from_uniform(0.5) - expected).abs() < 1e-15);
        assert!((gumbel_from_uniform(0.5) - 0.36651).abs() < 1e-5);
    }

    #[test]
    fn bernoulli_half_is_a_fair_coin() {
        let b = gen_iid(NoiseKind::BernoulliHalf, 100, 7).unwrap();
        assert!(b.images.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let (m, _) = mean_var(b.images.data());
        assert!((m - 0.5).abs() < 3.0 * (0.25 / b.images.len() as f64).sqrt());
        assert!(gen_iid(NoiseKind::Ising, 10, 0).is_err());
    }

    #[test]
    fn clip_flag_bounds_real_kinds() {
        let mut spec = NoiseSpec::new(NoiseKind::Normal, 20, 8);
        spec.clip = true;
        let b = generate(&spec).unwrap();
        assert!(b.images.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn ising_beta_zero_is_fair() {
        let b = gen_ising_set(200, &[0.0], Coupling::Ferromagnetic, 3, 9).unwrap();
        let (m, _) = mean_var(b.images.data());
        assert!((m - 0.5).abs() < 3.0 * (0.25 / b.images.len() as f64).sqrt());
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let a = gen_ising_set(20, &default_beta_grid(), Coupling::Ferromagnetic, 5, 10).unwrap();
        let b = gen_ising_set(20, &default_beta_grid(), Coupling::Ferromagnetic, 5, 10).unwrap();
        let c = gen_ising_set(20, &default_beta_grid(), Coupling::Ferromagnetic, 5, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.images, c.images);
        let strata = a.strata();
        assert_eq!(strata.len(), 10);
        assert_eq!(strata[3], (0.3, vec![6, 7]));
    }

    #[test]
    fn parsing() {
        assert_eq!("gumbel".parse::<NoiseKind>().unwrap(), NoiseKind::Gumbel);
        assert_eq!("bernoulli".parse::<NoiseKind>().unwrap(), NoiseKind::BernoulliSweep);
        assert_eq!("bernoulli-half".parse::<NoiseKind>().unwrap(), NoiseKind::BernoulliHalf);
        assert!("poisson".parse::<NoiseKind>().is_err());
        assert_eq!("+1".parse::<Coupling>().unwrap(), Coupling::Ferromagnetic);
        assert_eq!("-1".parse::<Coupling>().unwrap(), Coupling::Antiferromagnetic);
        assert!("0".parse::<Coupling>().is_err());
        let json = serde_json::to_string(&NoiseSpec::new(NoiseKind::Ising, 10, 1)).unwrap();
        assert!(json.contains("\"coupling\":1") && json.contains("\"betaGrid\""), "{json}");
    }

    #[test]
    fn container_round_trip_and_corruption() {
        let b = gen_bernoulli_sweep(10, &default_p_grid(), 12).unwrap();
        let mut buf = Vec::new();
        b.write(&mut buf).unwrap();
        assert_eq!(StimulusBatch::read(&mut buf.as_slice()).unwrap(), b);
        let mut extra = buf.clone();
        extra.push(0);
        assert!(StimulusBatch::read(&mut extra.as_slice()).is_err());
        assert!(StimulusBatch::read(&mut &buf[..buf.len() - 3]).is_err());
        buf[0] = b'Y';
        assert!(StimulusBatch::read(&mut buf.as_slice()).is_err());
    }
}
