//! Collision error tensors and the truncated average BLEP built on them.
//!
//! A tensor of order `k + 1` holds `P_E(γ_{i0}, …, γ_{ik})`, the error
//! probability of user 0 when `k + 1` users collide at levels `i0..ik`. Flat
//! storage is row-major with `i0` the slowest axis.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::error_models::{collision_blep, BlockModel, ErrorModelSpec, EvalMode};
use crate::experiments::fmt12;
use crate::rng::derive_seed;
use crate::scenario::{BlockConfig, LevelDistribution, Modulation, PowerLevelGrid, TrafficModel};

/// Largest number of entries a single tensor may hold.
pub const MAX_TENSOR_ENTRIES: usize = 10_000_000;

/// Where a tensor's entries came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorProvenance {
    pub spec: ErrorModelSpec,
    pub block: BlockConfig,
    pub grid_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionErrorTensor {
    order: usize,
    q_count: usize,
    values: Vec<f64>,
    provenance: Option<TensorProvenance>,
}

impl CollisionErrorTensor {
    /// Wraps raw values; `values.len()` must be `q_count^order`.
    pub fn from_values(order: usize, q_count: usize, values: Vec<f64>) -> Result<Self> {
        if order == 0 || q_count == 0 {
            return Err(invalid("tensor order and Q must be positive"));
        }
        let expected = checked_pow(q_count, order)?;
        if values.len() != expected {
            return Err(invalid(format!(
                "tensor of order {order} over Q = {q_count} needs {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("tensor entries must lie in [0, 1]"));
        }
        Ok(Self {
            order,
            q_count,
            values,
            provenance: None,
        })
    }

    /// Every entry equal to `c`.
    pub fn constant(order: usize, q_count: usize, c: f64) -> Result<Self> {
        Self::from_values(order, q_count, vec![c; checked_pow(q_count, order)?])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of extra colliding users `k` (order - 1).
    pub fn collisions(&self) -> usize {
        self.order - 1
    }

    pub fn q_count(&self) -> usize {
        self.q_count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> Option<&TensorProvenance> {
        self.provenance.as_ref()
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.q_count + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.order, "index arity must equal tensor order");
        self.values[self.flat_index(idx)]
    }

    /// The order-2 tensor as a `Q × Q` matrix (`M1`).
    pub fn as_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order != 2 {
            return Err(invalid(format!("order-{} tensor is not a matrix", self.order)));
        }
        Ok(DMatrix::from_row_slice(self.q_count, self.q_count, &self.values))
    }

    /// Elementwise map, keeping shape. Values are clamped to [0, 1].
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            order: self.order,
            q_count: self.q_count,
            values: self.values.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
            provenance: None,
        }
    }

    /// CSV dump of an order-1 (`M0`) or order-2 (`M1`) tensor.
    pub fn to_csv(&self, grid: &PowerLevelGrid) -> Result<String> {
        if grid.q_count() != self.q_count {
            return Err(invalid("grid and tensor disagree on Q"));
        }
        let db = grid.snr_db();
        let mut out = String::new();
        match self.order {
            1 => {
                out.push_str("level,snr_db,value\n");
                for (q, v) in self.values.iter().enumerate() {
                    writeln!(out, "{},{},{}", q + 1, fmt12(db[q]), fmt12(*v)).unwrap();
                }
            }
            2 => {
                out.push_str("snr_db");
                for d in db {
                    write!(out, ",{}", fmt12(*d)).unwrap();
                }
                out.push('\n');
                for (r, d) in db.iter().enumerate() {
                    out.push_str(&fmt12(*d));
                    for c in 0..self.q_count {
                        write!(out, ",{}", fmt12(self.values[r * self.q_count + c])).unwrap();
                    }
                    out.push('\n');
                }
            }
            o => return Err(invalid(format!("CSV export supports order 1 or 2, got {o}"))),
        }
        Ok(out)
    }
}

fn checked_pow(q: usize, order: usize) -> Result<usize> {
    let mut n: usize = 1;
    for _ in 0..order {
        n = n
            .checked_mul(q)
            .filter(|&n| n <= MAX_TENSOR_ENTRIES)
            .ok_or_else(|| {
                Error::ResourceLimit(format!(
                    "tensor Q^{order} with Q = {q} exceeds {MAX_TENSOR_ENTRIES} entries"
                ))
            })?;
    }
    Ok(n)
}

/// Non-decreasing sequences of length `k` over `0..q`.
fn multisets(q: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0; k];
    fn rec(q: usize, pos: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        for i in start..q {
            cur[pos] = i;
            rec(q, pos + 1, i, cur, out);
        }
    }
    rec(q, 0, 0, &mut cur, &mut out);
    out
}

/// Fills the order-`k+1` tensor from [`collision_blep`].
///
/// User 0's error depends on its own level and the multiset of interferer
/// levels only, so one evaluation per `(i0, multiset)` is broadcast to every
/// permutation of the trailing indices.
pub fn build_tensor(
    grid: &PowerLevelGrid,
    k: usize,
    block: &BlockConfig,
    spec: &ErrorModelSpec,
) -> Result<CollisionErrorTensor> {
    let q = grid.q_count();
    let total = checked_pow(q, k + 1)?;
    spec.validate()?;
    if spec.mode == EvalMode::Analytic && !ErrorModelSpec::analytic_supported(spec.modulation, k + 1)
    {
        return Err(Error::UnsupportedModel(format!(
            "closed form unavailable for {} with {} colliding users",
            spec.modulation,
            k + 1
        )));
    }
    let gammas = grid.snr_linear();
    let tails = multisets(q, k);
    let jobs: Vec<(usize, &Vec<usize>)> = (0..q)
        .flat_map(|i0| tails.iter().map(move |t| (i0, t)))
        .collect();

    let evaluated: Vec<((usize, Vec<usize>), f64)> = jobs
        .par_iter()
        .map(|&(i0, tail)| {
            let mut snrs = Vec::with_capacity(k + 1);
            snrs.push(gammas[i0]);
            snrs.extend(tail.iter().map(|&i| gammas[i]));
            let mut labels = vec![k as u64, i0 as u64];
            labels.extend(tail.iter().map(|&i| i as u64));
            let entry_spec = spec.with_seed(derive_seed(spec.mc_seed, &labels));
            collision_blep(&snrs, block, &entry_spec).map(|e| ((i0, tail.clone()), e.value))
        })
        .collect::<Result<_>>()?;
    let lookup: HashMap<(usize, Vec<usize>), f64> = evaluated.into_iter().collect();

    let mut values = Vec::with_capacity(total);
    let mut idx = vec![0usize; k + 1];
    let mut tail = vec![0usize; k];
    for _ in 0..total {
        tail.copy_from_slice(&idx[1..]);
        tail.sort_unstable();
        values.push(lookup[&(idx[0], tail.clone())]);
        // odometer increment, last axis fastest
        for pos in (0..=k).rev() {
            idx[pos] += 1;
            if idx[pos] < q {
                break;
            }
            idx[pos] = 0;
        }
    }
    let mut t = CollisionErrorTensor::from_values(k + 1, q, values)?;
    t.provenance = Some(TensorProvenance {
        spec: *spec,
        block: *block,
        grid_fingerprint: grid.fingerprint(),
    });
    Ok(t)
}

fn check_dist(p: &LevelDistribution, q: usize) -> Result<()> {
    if p.q_count() != q {
        return Err(invalid(format!(
            "distribution has {} levels, tensor has {q}",
            p.q_count()
        )));
    }
    Ok(())
}

/// Contracts the trailing axis against `p` repeatedly until one value remains.
fn contract_all(values: &[f64], q: usize, p: &[f64]) -> f64 {
    let mut cur: Vec<f64> = values.to_vec();
    while cur.len() > 1 {
        cur = cur
            .chunks_exact(q)
            .map(|row| row.iter().zip(p).map(|(v, w)| v * w).sum())
            .collect();
    }
    cur[0]
}

/// `Σ P_{i0}…P_{ik} · T[i0, …, ik]`.
pub fn avg_blep_k(p: &LevelDistribution, tensor: &CollisionErrorTensor) -> Result<f64> {
    check_dist(p, tensor.q_count)?;
    Ok(contract_all(&tensor.values, tensor.q_count, p.probs()))
}

/// `M_k^{(l)}`: all but the last two axes contracted against `fixed`.
pub fn condition_tensor(
    tensor: &CollisionErrorTensor,
    fixed: &LevelDistribution,
) -> Result<DMatrix<f64>> {
    if tensor.order < 3 {
        return Err(invalid(format!(
            "conditioning needs order >= 3, got {}",
            tensor.order
        )));
    }
    let q = tensor.q_count;
    check_dist(fixed, q)?;
    let p = fixed.probs();
    let slab = q * q;
    let mut m = vec![0.0; slab];
    for (lead, block) in tensor.values.chunks_exact(slab).enumerate() {
        let mut w = 1.0;
        let mut rest = lead;
        for _ in 0..tensor.order - 2 {
            w *= p[rest % q];
            rest /= q;
        }
        if w == 0.0 {
            continue;
        }
        for (acc, v) in m.iter_mut().zip(block) {
            *acc += w * v;
        }
    }
    Ok(DMatrix::from_row_slice(q, q, &m))
}

/// How error models are chosen per collision order when building a bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSettings {
    pub modulation: Modulation,
    pub mc_trials: u64,
    pub mc_seed: u64,
    pub block_model: BlockModel,
    /// Use closed forms wherever they exist.
    pub prefer_analytic: bool,
}

impl ModelSettings {
    pub fn new(modulation: Modulation, mc_trials: u64, mc_seed: u64) -> Self {
        Self {
            modulation,
            mc_trials,
            mc_seed,
            block_model: BlockModel::IndependentBits,
            prefer_analytic: true,
        }
    }

    /// Error model used for the order-`k+1` tensor.
    pub fn spec_for(&self, k: usize) -> ErrorModelSpec {
        if self.prefer_analytic && ErrorModelSpec::analytic_supported(self.modulation, k + 1) {
            ErrorModelSpec::analytic_bpsk()
        } else {
            ErrorModelSpec {
                modulation: self.modulation,
                mode: EvalMode::MonteCarlo,
                mc_trials: self.mc_trials,
                mc_seed: derive_seed(self.mc_seed, &[0x7e45, k as u64]),
                block_model: self.block_model,
            }
        }
    }
}

/// Tensors for every collision order `0..=K` plus the traffic and grid they belong to.
#[derive(Debug, Clone)]
pub struct ObjectiveBundle {
    grid: PowerLevelGrid,
    traffic: TrafficModel,
    block: BlockConfig,
    tensors: Vec<CollisionErrorTensor>,
}

impl ObjectiveBundle {
    pub fn from_tensors(
        grid: PowerLevelGrid,
        traffic: TrafficModel,
        block: BlockConfig,
        tensors: Vec<CollisionErrorTensor>,
    ) -> Result<Self> {
        if tensors.len() != traffic.k_max() + 1 {
            return Err(invalid(format!(
                "need {} tensors for K = {}, got {}",
                traffic.k_max() + 1,
                traffic.k_max(),
                tensors.len()
            )));
        }
        for (k, t) in tensors.iter().enumerate() {
            if t.order != k + 1 || t.q_count != grid.q_count() {
                return Err(invalid(format!(
                    "tensor {k} has order {} over Q = {}, expected order {} over Q = {}",
                    t.order,
                    t.q_count,
                    k + 1,
                    grid.q_count()
                )));
            }
        }
        Ok(Self {
            grid,
            traffic,
            block,
            tensors,
        })
    }

    pub fn build(
        grid: &PowerLevelGrid,
        traffic: &TrafficModel,
        block: &BlockConfig,
        settings: &ModelSettings,
    ) -> Result<Self> {
        Self::build_cached(grid, traffic, block, settings, None)
    }

    pub fn build_cached(
        grid: &PowerLevelGrid,
        traffic: &TrafficModel,
        block: &BlockConfig,
        settings: &ModelSettings,
        cache: Option<&TensorCache>,
    ) -> Result<Self> {
        let tensors = (0..=traffic.k_max())
            .map(|k| {
                let spec = settings.spec_for(k);
                match cache {
                    Some(c) => c.load_or_build(grid, k, block, &spec),
                    None => build_tensor(grid, k, block, &spec),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_tensors(grid.clone(), traffic.clone(), *block, tensors)
    }

    /// Same tensors, fewer collision orders: `K' <= K`, same λ.
    pub fn truncated_to(&self, k_max: usize) -> Result<Self> {
        if k_max > self.k_max() {
            return Err(invalid(format!(
                "cannot extend bundle from K = {} to K = {k_max}",
                self.k_max()
            )));
        }
        Self::from_tensors(
            self.grid.clone(),
            TrafficModel::new(self.traffic.lambda(), k_max)?,
            self.block,
            self.tensors[..=k_max].to_vec(),
        )
    }

    /// Same tensors under a different arrival rate.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::from_tensors(
            self.grid.clone(),
            TrafficModel::new(lambda, self.k_max())?,
            self.block,
            self.tensors.clone(),
        )
    }

    pub fn grid(&self) -> &PowerLevelGrid {
        &self.grid
    }

    pub fn traffic(&self) -> &TrafficModel {
        &self.traffic
    }

    pub fn block(&self) -> &BlockConfig {
        &self.block
    }

    pub fn tensors(&self) -> &[CollisionErrorTensor] {
        &self.tensors
    }

    pub fn tensor(&self, k: usize) -> &CollisionErrorTensor {
        &self.tensors[k]
    }

    pub fn k_max(&self) -> usize {
        self.traffic.k_max()
    }

    pub fn q_count(&self) -> usize {
        self.grid.q_count()
    }

    /// `M0` as a plain vector.
    pub fn m0(&self) -> Vec<f64> {
        self.tensors[0].values.clone()
    }
}

/// `Σ_{k<=K} p_λ(k) · avg_blep_k(P, T_k)`.
pub fn truncated_blep(p: &LevelDistribution, bundle: &ObjectiveBundle) -> Result<f64> {
    bundle
        .tensors
        .iter()
        .zip(bundle.traffic.weights())
        .map(|(t, w)| avg_blep_k(p, t).map(|v| w * v))
        .sum()
}

/// [`truncated_blep`], optionally plus the collision mass the detector cannot handle.
pub fn reported_blep(
    p: &LevelDistribution,
    bundle: &ObjectiveBundle,
    include_tail: bool,
) -> Result<f64> {
    let base = truncated_blep(p, bundle)?;
    Ok(if include_tail {
        base + bundle.traffic.tail_mass()
    } else {
        base
    })
}

/// Expected decoded packets per slot, given at least one active user.
///
/// `Σ_{k<=K} p_λ(k)·(k+1)·(1 - avg_blep_k)`; larger collisions decode nothing.
pub fn throughput(p: &LevelDistribution, bundle: &ObjectiveBundle) -> Result<f64> {
    bundle
        .tensors
        .iter()
        .zip(bundle.traffic.weights())
        .enumerate()
        .map(|(k, (t, w))| avg_blep_k(p, t).map(|v| w * (k + 1) as f64 * (1.0 - v)))
        .sum()
}

/// Contracts every axis except `free_axis` against `p`.
fn contract_except(tensor: &CollisionErrorTensor, p: &[f64], free_axis: usize) -> Vec<f64> {
    let q = tensor.q_count;
    let order = tensor.order;
    let mut out = vec![0.0; q];
    let mut idx = vec![0usize; order];
    for &v in &tensor.values {
        let mut w = v;
        for (axis, &i) in idx.iter().enumerate() {
            if axis != free_axis {
                w *= p[i];
            }
        }
        out[idx[free_axis]] += w;
        for pos in (0..order).rev() {
            idx[pos] += 1;
            if idx[pos] < q {
                break;
            }
            idx[pos] = 0;
        }
    }
    out
}

/// Expected error of a tagged user on each level when every other user draws from `others`.
///
/// This is linear in the tagged user's own distribution and equals the
/// partial gradient of the truncated BLEP with respect to the axis-0 argument.
pub fn tagged_cost(others: &LevelDistribution, bundle: &ObjectiveBundle) -> Result<Vec<f64>> {
    check_dist(others, bundle.q_count())?;
    let q = bundle.q_count();
    let mut cost = vec![0.0; q];
    for (t, w) in bundle.tensors.iter().zip(bundle.traffic.weights()) {
        let slice = contract_except(t, others.probs(), 0);
        for (c, s) in cost.iter_mut().zip(slice) {
            *c += w * s;
        }
    }
    Ok(cost)
}

/// Full gradient of [`truncated_blep`] at `p` (derivative through every axis).
pub fn gradient(p: &LevelDistribution, bundle: &ObjectiveBundle) -> Result<Vec<f64>> {
    check_dist(p, bundle.q_count())?;
    let q = bundle.q_count();
    let mut g = vec![0.0; q];
    for (t, w) in bundle.tensors.iter().zip(bundle.traffic.weights()) {
        for axis in 0..t.order {
            for (gi, s) in g.iter_mut().zip(contract_except(t, p.probs(), axis)) {
                *gi += w * s;
            }
        }
    }
    Ok(g)
}

/// On-disk cache of built tensors, one text file per key.
#[derive(Debug, Clone)]
pub struct TensorCache {
    dir: PathBuf,
}

/// Environment variable naming the cache directory used by the CLI.
pub const CACHE_ENV: &str = "NOMA_TENSOR_CACHE";

const CACHE_MAGIC: &str = "noma-opt-tensor 1";

impl TensorCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    /// Cache rooted at `$NOMA_TENSOR_CACHE`, if set.
    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var_os(CACHE_ENV) {
            Some(d) if !d.is_empty() => Self::new(PathBuf::from(d)).map(Some),
            _ => Ok(None),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn header(grid: &PowerLevelGrid, k: usize, block: &BlockConfig, spec: &ErrorModelSpec) -> String {
        format!(
            "{CACHE_MAGIC}\nq_count {}\norder {}\ngrid {}\nmodel {}\nbits_per_block {}\nmetric {}\n",
            grid.q_count(),
            k + 1,
            grid.fingerprint(),
            spec.describe(),
            block.bits_per_block,
            block.metric
        )
    }

    pub fn path_for(
        &self,
        grid: &PowerLevelGrid,
        k: usize,
        block: &BlockConfig,
        spec: &ErrorModelSpec,
    ) -> PathBuf {
        let digest = Sha256::digest(Self::header(grid, k, block, spec).as_bytes());
        self.dir
            .join(format!("tensor-{}.txt", hex::encode(&digest[..10])))
    }

    pub fn store(
        &self,
        grid: &PowerLevelGrid,
        block: &BlockConfig,
        spec: &ErrorModelSpec,
        tensor: &CollisionErrorTensor,
    ) -> Result<PathBuf> {
        let k = tensor.collisions();
        let mut text = Self::header(grid, k, block, spec);
        writeln!(text, "values {}", tensor.values.len()).unwrap();
        for row in tensor.values.chunks(tensor.q_count) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            text.push_str(&line.join(" "));
            text.push('\n');
        }
        let path = self.path_for(grid, k, block, spec);
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn load(
        &self,
        grid: &PowerLevelGrid,
        k: usize,
        block: &BlockConfig,
        spec: &ErrorModelSpec,
    ) -> Result<Option<CollisionErrorTensor>> {
        let path = self.path_for(grid, k, block, spec);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let header = Self::header(grid, k, block, spec);
        let body = text.strip_prefix(&header).ok_or_else(|| {
            Error::CacheFormat(format!("{} has a mismatched header", path.display()))
        })?;
        let mut lines = body.lines();
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("values "))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::CacheFormat("missing values line".into()))?;
        let values: Vec<f64> = lines
            .flat_map(|l| l.split_whitespace())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::CacheFormat(format!("bad number '{s}'")))
            })
            .collect::<Result<_>>()?;
        if values.len() != count {
            return Err(Error::CacheFormat(format!(
                "expected {count} values, found {}",
                values.len()
            )));
        }
        let mut t = CollisionErrorTensor::from_values(k + 1, grid.q_count(), values)?;
        t.provenance = Some(TensorProvenance {
            spec: *spec,
            block: *block,
            grid_fingerprint: grid.fingerprint(),
        });
        Ok(Some(t))
    }

    pub fn load_or_build(
        &self,
        grid: &PowerLevelGrid,
        k: usize,
        block: &BlockConfig,
        spec: &ErrorModelSpec,
    ) -> Result<CollisionErrorTensor> {
        if let Some(t) = self.load(grid, k, block, spec)? {
            log::debug!("tensor cache hit: order {} Q {}", k + 1, grid.q_count());
            return Ok(t);
        }
        let t = build_tensor(grid, k, block, spec)?;
        self.store(grid, block, spec, &t)?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_models::{bep_to_blep, two_user_bep};
    use crate::scenario::{build_snr_grid, poisson_weights};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bpsk(l: usize) -> BlockConfig {
        BlockConfig::new(l, Modulation::Bpsk).unwrap()
    }

    fn random_dist(rng: &mut ChaCha8Rng, q: usize) -> LevelDistribution {
        let raw: Vec<f64> = (0..q).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        LevelDistribution::new(raw.into_iter().map(|x| x / s).collect()).unwrap()
    }

    fn random_tensor(rng: &mut ChaCha8Rng, order: usize, q: usize) -> CollisionErrorTensor {
        let n = q.pow(order as u32);
        CollisionErrorTensor::from_values(order, q, (0..n).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn m0_is_strictly_decreasing() {
        let grid = build_snr_grid(0.0, 2.0, 3).unwrap();
        let t = build_tensor(&grid, 0, &bpsk(100), &ErrorModelSpec::analytic_bpsk()).unwrap();
        assert_eq!(t.values().len(), 3);
        assert!(t.values().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn m1_diagonal_floor() {
        let grid = build_snr_grid(30.0, 5.0, 2).unwrap();
        let l = 50;
        let t = build_tensor(&grid, 1, &bpsk(l), &ErrorModelSpec::analytic_bpsk()).unwrap();
        let floor = 1.0 - 0.75f64.powi(l as i32);
        assert!(t.get(&[0, 0]) >= floor - 1e-12);
        assert!(t.get(&[1, 1]) >= floor - 1e-12);
    }

    #[test]
    fn m1_matches_elementwise_recomputation() {
        let grid = PowerLevelGrid::from_endpoints(15.0, 33.0, 4).unwrap();
        let t = build_tensor(&grid, 1, &bpsk(100), &ErrorModelSpec::analytic_bpsk()).unwrap();
        let g = grid.snr_linear();
        for i in 0..4 {
            for j in 0..4 {
                let expect = bep_to_blep(two_user_bep(g[i], g[j]).unwrap(), 100).unwrap();
                assert!((t.get(&[i, j]) - expect).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn tensor_guard() {
        let grid = build_snr_grid(0.0, 0.1, 400).unwrap();
        let spec = ErrorModelSpec::monte_carlo(Modulation::Bpsk, 10_000, 1).unwrap();
        assert!(matches!(
            build_tensor(&grid, 2, &bpsk(10), &spec),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn mc_tensor_is_permutation_symmetric() {
        let grid = build_snr_grid(3.0, 2.0, 3).unwrap();
        let spec = ErrorModelSpec::monte_carlo(Modulation::Bpsk, 10_000, 4).unwrap();
        let t = build_tensor(&grid, 2, &bpsk(10), &spec).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    assert_eq!(t.get(&[a, b, c]), t.get(&[a, c, b]));
                }
            }
        }
    }

    #[test]
    fn contraction_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t2 = random_tensor(&mut rng, 2, 3);
        for q in 0..3 {
            let unit = LevelDistribution::unit_mass(3, q).unwrap();
            assert_eq!(avg_blep_k(&unit, &t2).unwrap(), t2.get(&[q, q]));
        }
        let mean = t2.values().iter().sum::<f64>() / 9.0;
        assert_relative_eq!(avg_blep_k(&LevelDistribution::uniform(3), &t2).unwrap(), mean, max_relative = 1e-15);
    }

    #[test]
    fn triple_contraction_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let t = random_tensor(&mut rng, 3, 3);
            let p = random_dist(&mut rng, 3);
            let pp = p.probs();
            let mut naive = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        naive += pp[a] * pp[b] * pp[c] * t.get(&[a, b, c]);
                    }
                }
            }
            assert!((avg_blep_k(&p, &t).unwrap() - naive).abs() <= 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let t = CollisionErrorTensor::constant(2, 3, 0.5).unwrap();
        assert!(avg_blep_k(&LevelDistribution::uniform(4), &t).is_err());
        assert!(condition_tensor(&t, &LevelDistribution::uniform(3)).is_err());
    }

    fn bundle_from(tensors: Vec<CollisionErrorTensor>, lambda: f64) -> ObjectiveBundle {
        let q = tensors[0].q_count();
        let grid = build_snr_grid(15.0, 1.0, q).unwrap();
        let k = tensors.len() - 1;
        ObjectiveBundle::from_tensors(grid, poisson_weights(lambda, k).unwrap(), bpsk(100), tensors)
            .unwrap()
    }

    #[test]
    fn truncated_blep_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m0 = random_tensor(&mut rng, 1, 4);
        let m1 = random_tensor(&mut rng, 2, 4);
        let b0 = bundle_from(vec![m0.clone(), m1.clone()], 0.0);
        let p = random_dist(&mut rng, 4);
        let dot: f64 = p.probs().iter().zip(m0.values()).map(|(a, b)| a * b).sum();
        assert_relative_eq!(truncated_blep(&p, &b0).unwrap(), dot, max_relative = 1e-15);

        let c = 0.3;
        let bc = bundle_from(
            vec![
                CollisionErrorTensor::constant(1, 4, c).unwrap(),
                CollisionErrorTensor::constant(2, 4, c).unwrap(),
                CollisionErrorTensor::constant(3, 4, c).unwrap(),
            ],
            0.5,
        );
        let wsum: f64 = bc.traffic().weights().iter().sum();
        assert_relative_eq!(truncated_blep(&p, &bc).unwrap(), c * wsum, max_relative = 1e-14);

        let b = bundle_from(vec![m0.clone(), m1.clone()], 0.5);
        let u = LevelDistribution::uniform(4);
        let mean = |t: &CollisionErrorTensor| t.values().iter().sum::<f64>() / t.values().len() as f64;
        let e = (-0.5f64).exp();
        let hand = e * mean(&m0) + 0.5 * e * mean(&m1);
        assert!((truncated_blep(&u, &b).unwrap() - hand).abs() <= 1e-15);
        let with_tail = reported_blep(&u, &b, true).unwrap();
        assert_relative_eq!(with_tail - truncated_blep(&u, &b).unwrap(), b.traffic().tail_mass(), max_relative = 1e-12);
    }

    #[test]
    fn conditioning_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_tensor(&mut rng, 3, 3);
        let unit = LevelDistribution::unit_mass(3, 1).unwrap();
        let m = condition_tensor(&t, &unit).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(m[(a, b)], t.get(&[1, a, b]));
            }
        }
        let m = condition_tensor(&t, &LevelDistribution::uniform(3)).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let mean = (0..3).map(|i| t.get(&[i, a, b])).sum::<f64>() / 3.0;
                assert_relative_eq!(m[(a, b)], mean, max_relative = 1e-14);
            }
        }
        assert!(condition_tensor(&random_tensor(&mut rng, 2, 3), &unit).is_err());
    }

    #[test]
    fn conditioned_quadratic_form_reproduces_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for order in [3, 4] {
            for _ in 0..5 {
                let t = random_tensor(&mut rng, order, 3);
                let p = random_dist(&mut rng, 3);
                let m = condition_tensor(&t, &p).unwrap();
                let v = nalgebra::DVector::from_column_slice(p.probs());
                let quad = (v.transpose() * &m * &v)[(0, 0)];
                assert!((quad - avg_blep_k(&p, &t).unwrap()).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn throughput_examples() {
        let zero = bundle_from(
            vec![
                CollisionErrorTensor::constant(1, 3, 0.0).unwrap(),
                CollisionErrorTensor::constant(2, 3, 0.0).unwrap(),
            ],
            0.5,
        );
        let u = LevelDistribution::uniform(3);
        assert_relative_eq!(throughput(&u, &zero).unwrap(), 2.0 * (-0.5f64).exp(), max_relative = 1e-15);
        let one = bundle_from(
            vec![
                CollisionErrorTensor::constant(1, 3, 1.0).unwrap(),
                CollisionErrorTensor::constant(2, 3, 1.0).unwrap(),
            ],
            0.5,
        );
        assert_eq!(throughput(&u, &one).unwrap(), 0.0);
    }

    #[test]
    fn symmetrization_and_tagged_equivalence() {
        let grid = PowerLevelGrid::from_endpoints(15.0, 20.0, 4).unwrap();
        let t = build_tensor(&grid, 1, &bpsk(100), &ErrorModelSpec::analytic_bpsk()).unwrap();
        let m = t.as_matrix().unwrap();
        let sym = (&m + m.transpose()) * 0.5;
        let averaged = CollisionErrorTensor::from_values(
            2,
            4,
            (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| sym[(i, j)]).collect(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let p = random_dist(&mut rng, 4);
            let v = nalgebra::DVector::from_column_slice(p.probs());
            let a = (v.transpose() * &m * &v)[(0, 0)];
            let b = (v.transpose() * &sym * &v)[(0, 0)];
            assert!((a - b).abs() <= 1e-15);
            let tagged = avg_blep_k(&p, &t).unwrap();
            let avg_users = avg_blep_k(&p, &averaged).unwrap();
            assert!((tagged - avg_users).abs() <= 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let grid = PowerLevelGrid::from_endpoints(15.0, 27.0, 4).unwrap();
        let traffic = poisson_weights(0.5, 1).unwrap();
        let b = ObjectiveBundle::build(&grid, &traffic, &bpsk(100), &ModelSettings::new(Modulation::Bpsk, 10_000, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_dist(&mut rng, 4);
        let g = gradient(&p, &b).unwrap();

        // closed form for K = 1
        let m0 = b.m0();
        let m1 = b.tensor(1).as_matrix().unwrap();
        let sym = (&m1 + m1.transpose()) * 0.5;
        let pv = nalgebra::DVector::from_column_slice(p.probs());
        let w = b.traffic().weights();
        let analytic: Vec<f64> = (0..4).map(|i| w[0] * m0[i] + 2.0 * w[1] * (&sym * &pv)[i]).collect();

        let f = |x: &[f64]| {
            let t0: f64 = x.iter().zip(&m0).map(|(a, b)| a * b).sum();
            let xv = nalgebra::DVector::from_column_slice(x);
            w[0] * t0 + w[1] * (xv.transpose() * &m1 * &xv)[(0, 0)]
        };
        let mut dir = [0.3, -0.1, -0.25, 0.05];
        let norm = dir.iter().map(|d: &f64| d * d).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|d| *d /= norm);
        let h = 1e-6;
        let plus: Vec<f64> = p.probs().iter().zip(&dir).map(|(x, d)| x + h * d).collect();
        let minus: Vec<f64> = p.probs().iter().zip(&dir).map(|(x, d)| x - h * d).collect();
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let dd: f64 = analytic.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let dg: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((fd - dd).abs() < 1e-6, "{fd} vs {dd}");
        assert!((dg - dd).abs() < 1e-12);
    }

    #[test]
    fn truncated_blep_bounded() {
        let grid = PowerLevelGrid::from_endpoints(15.0, 20.0, 5).unwrap();
        let traffic = poisson_weights(0.5, 1).unwrap();
        let b = ObjectiveBundle::build(&grid, &traffic, &bpsk(100), &ModelSettings::new(Modulation::Bpsk, 10_000, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let upper: f64 = traffic.weights().iter().sum();
        for _ in 0..50 {
            let v = truncated_blep(&random_dist(&mut rng, 5), &b).unwrap();
            assert!((0.0..=upper).contains(&v));
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TensorCache::new(dir.path()).unwrap();
        let grid = build_snr_grid(10.0, 3.0, 3).unwrap();
        let spec = ErrorModelSpec::monte_carlo(Modulation::Bpsk, 10_000, 9).unwrap();
        let block = bpsk(20);
        assert!(cache.load(&grid, 1, &block, &spec).unwrap().is_none());
        let built = cache.load_or_build(&grid, 1, &block, &spec).unwrap();
        let loaded = cache.load(&grid, 1, &block, &spec).unwrap().unwrap();
        assert_eq!(built.values(), loaded.values());
        // a different seed maps to a different file
        assert!(cache.load(&grid, 1, &block, &spec.with_seed(10)).unwrap().is_none());
    }

    #[test]
    fn csv_export() {
        let grid = build_snr_grid(15.0, 5.0, 2).unwrap();
        let t = build_tensor(&grid, 1, &bpsk(100), &ErrorModelSpec::analytic_bpsk()).unwrap();
        let csv = t.to_csv(&grid).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("snr_db,15,20\n"));
        let t0 = build_tensor(&grid, 0, &bpsk(100), &ErrorModelSpec::analytic_bpsk()).unwrap();
        assert!(t0.to_csv(&grid).unwrap().starts_with("level,snr_db,value\n1,15,"));
    }
}
