//! On-disk calibration cache.
//!
//! Calibrating the treatment effect and censoring bound for a full-size
//! population takes a few seconds per scenario, so results are persisted
//! next to the run outputs and reloaded on later runs. Entries are keyed
//! by a hash of every parameter the calibrated value depends on, which
//! makes stale hits impossible: change a parameter and the key changes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mhr_core::GeneratorParams;
use serde::{Deserialize, Serialize};

/// FNV-1a 64-bit hash, used for compact content-derived cache keys.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Inputs that determine the calibrated treatment coefficient.
#[derive(Serialize)]
struct AlphaKey<'a> {
    seed: u64,
    n: usize,
    target: f64,
    eta: f64,
    gamma: f64,
    alpha: &'a [f64],
}

/// Inputs that determine the calibrated censoring bound.
#[derive(Serialize)]
struct ThetaKey<'a> {
    seed: u64,
    n: usize,
    rate: f64,
    alpha_z: f64,
    k: f64,
    eta: f64,
    gamma: f64,
    alpha: &'a [f64],
    beta: &'a [f64],
}

fn hash_key<T: Serialize>(key: &T) -> String {
    let json = serde_json::to_vec(key).expect("cache keys always serialize");
    format!("{:016x}", fnv1a64(&json))
}

/// Key for the treatment coefficient entry of `params` under `seed`.
fn alpha_key(params: &GeneratorParams, seed: u64) -> String {
    let width = params.p.min(params.alpha.len());
    hash_key(&AlphaKey {
        seed,
        n: params.calibration_size,
        target: params.target_mhr,
        eta: params.eta,
        gamma: params.gamma,
        alpha: &params.alpha[..width],
    })
}

/// Key for the censoring bound entry of `params` under `seed`.
///
/// Only valid once `alpha_z_star` is resolved, since the censoring
/// population draws event times from the full generator.
fn theta_key(params: &GeneratorParams, seed: u64) -> Result<String> {
    let alpha_z = params.resolved_alpha_z()?;
    let width = params.p.min(params.alpha.len().max(params.beta_base.len()));
    Ok(hash_key(&ThetaKey {
        seed,
        n: params.calibration_size,
        rate: params.censoring_rate,
        alpha_z,
        k: params.k,
        eta: params.eta,
        gamma: params.gamma,
        alpha: &params.alpha[..params.alpha.len().min(width)],
        beta: &params.beta_base[..params.beta_base.len().min(width)],
    }))
}

/// Persisted calibration results.
///
/// The censoring bound is stored as an `Option` because JSON has no
/// representation for infinity; `None` means "no censoring".
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CalibrationCache {
    #[serde(default)]
    alpha: BTreeMap<String, f64>,
    #[serde(default)]
    theta: BTreeMap<String, Option<f64>>,
    #[serde(skip)]
    path: PathBuf,
}

impl CalibrationCache {
    /// File name used inside an output directory.
    pub const FILE_NAME: &'static str = "calibration_cache.json";

    /// Loads the cache stored in `dir`, or an empty one if the file is
    /// missing or corrupted.
    pub fn load(dir: &Path) -> Self {
        let path = dir.join(Self::FILE_NAME);
        let mut cache = match std::fs::read_to_string(&path) {
            Ok(text) => match serde_json::from_str::<CalibrationCache>(&text) {
                Ok(cache) => cache,
                Err(err) => {
                    log::warn!("ignoring corrupted calibration cache {}: {err}", path.display());
                    CalibrationCache::default()
                }
            },
            Err(_) => CalibrationCache::default(),
        };
        cache.path = path;
        cache
    }

    /// Copies any cached values for `params` into its optional fields, so
    /// the downstream calibration pass sees them as already resolved.
    /// Returns true when anything was filled from cache.
    pub fn fill(&self, params: &mut GeneratorParams, seed: u64) -> bool {
        let mut hit = false;
        if params.alpha_z_star.is_none() {
            if let Some(&alpha_z) = self.alpha.get(&alpha_key(params, seed)) {
                params.alpha_z_star = Some(alpha_z);
                hit = true;
            }
        }
        if params.theta.is_none() && params.alpha_z_star.is_some() {
            if let Ok(key) = theta_key(params, seed) {
                if let Some(&theta) = self.theta.get(&key) {
                    params.theta = Some(theta.unwrap_or(f64::INFINITY));
                    hit = true;
                }
            }
        }
        hit
    }

    /// Records the resolved calibration values of `params`.
    pub fn record(&mut self, params: &GeneratorParams, seed: u64) -> Result<()> {
        let alpha_z = params.resolved_alpha_z()?;
        let theta = params.resolved_theta()?;
        self.alpha.insert(alpha_key(params, seed), alpha_z);
        let stored = if theta.is_finite() { Some(theta) } else { None };
        self.theta.insert(theta_key(params, seed)?, stored);
        Ok(())
    }

    /// Writes the cache back to the directory it was loaded from.
    pub fn save(&self) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("cache always serializes");
        std::fs::write(&self.path, json)
            .with_context(|| format!("cannot write {}", self.path.display()))
    }
}
