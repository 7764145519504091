//! Random Grids: `L` uniformly offset axis-aligned grids over the latent
//! space, each backed by a single-slot hash table.
//!
//! Inserting a vector hashes its cell in every table, reports a collision
//! when the slot already holds a vector within ℓ∞ tolerance, and then
//! overwrites the slot. Each insert costs O(L·λ) regardless of how many
//! vectors were inserted before.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{linf, LatentVector, MAX_LATENT_DIM};
use crate::error::{Error, Result};

/// Initial state of the cell hash.
pub const HASH_SEED: u64 = 0x243F_6A88_85A3_08D3;
/// Per-coordinate multiplier (golden ratio, 64-bit).
pub const HASH_MUL: u64 = 0x9E37_79B9_7F4A_7C15;
/// Finalizer multipliers (MurmurHash3 fmix64).
pub const FMIX_MUL_1: u64 = 0xFF51_AFD7_ED55_8CCD;
pub const FMIX_MUL_2: u64 = 0xC4CE_B9FE_1A85_EC53;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Number of tables `L`.
    pub tables: usize,
    /// Cell side length `c`.
    pub cell_size: f64,
    /// Collision tolerance `t` (ℓ∞, strict).
    pub tolerance: f64,
    /// Latent dimension λ.
    pub dim: usize,
    /// Each table has `2^table_bits` slots.
    pub table_bits: u32,
    pub seed: u64,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tables < 1 {
            return Err(Error::InvalidConfig("at least one table is required".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if !(self.cell_size >= self.tolerance && self.cell_size.is_finite()) {
            return Err(Error::InvalidConfig("cell size must be at least the tolerance".into()));
        }
        if self.dim != 6 && self.dim != 8 {
            return Err(Error::InvalidConfig(format!("latent dimension {} not in {{6, 8}}", self.dim)));
        }
        if !(1..=62).contains(&self.table_bits) {
            return Err(Error::InvalidConfig(format!("table_bits {} not in 1..=62", self.table_bits)));
        }
        Ok(())
    }

    pub fn slots_per_table(&self) -> usize {
        1usize << self.table_bits
    }
}

/// Bits needed for a table of `max_iterations / 10` slots (rounded up to a
/// power of two).
pub fn default_table_bits(max_iterations: u64) -> u32 {
    let target = max_iterations.div_ceil(10).max(2);
    64 - (target - 1).leading_zeros()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    pub existing_id: u64,
    pub new_id: u64,
    /// ℓ∞ distance between the two vectors, always `< tolerance`.
    pub distance: f64,
    pub table_index: usize,
    /// The vector that occupied the slot.
    pub existing: LatentVector,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridStats {
    pub insertions: u64,
    /// Slot lookups that found an occupant (same cell or shared slot).
    pub occupied_hits: u64,
    /// Occupied lookups whose occupant passed the tolerance test.
    pub tolerance_passes: u64,
    /// Inserts that reported a collision.
    pub collisions: u64,
}

#[derive(Clone, Copy)]
struct Slot {
    /// `id + 1`, zero when empty.
    occupant: u64,
    values: [f64; MAX_LATENT_DIM],
}

impl Slot {
    const EMPTY: Slot = Slot {
        occupant: 0,
        values: [0.0; MAX_LATENT_DIM],
    };
}

pub struct RandomGrid {
    config: GridConfig,
    offsets: Vec<[f64; MAX_LATENT_DIM]>,
    slots: Vec<Slot>,
    stats: GridStats,
}

impl std::fmt::Debug for RandomGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RandomGrid")
            .field("config", &self.config)
            .field("stats", &self.stats)
            .finish()
    }
}

/// Componentwise `floor((v + offset) / cell)`.
pub fn cell_index(v: &[f64], offset: &[f64], cell: f64) -> Vec<i64> {
    v.iter()
        .zip(offset)
        .map(|(x, o)| ((x + o) / cell).floor() as i64)
        .collect()
}

/// Mixes integer cell coordinates into a slot in `[0, 2^table_bits)`.
#[inline]
pub fn hash_cell(z: &[i64], table_bits: u32) -> usize {
    let mut h = HASH_SEED;
    for &k in z {
        h = (h ^ k as u64).wrapping_mul(HASH_MUL);
        h = h.rotate_left(29);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(FMIX_MUL_1);
    h ^= h >> 33;
    h = h.wrapping_mul(FMIX_MUL_2);
    h ^= h >> 33;
    (h >> (64 - table_bits)) as usize
}

impl RandomGrid {
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let per_table = config.slots_per_table();
        let total = per_table
            .checked_mul(config.tables)
            .ok_or_else(|| Error::Resource("grid size overflows".into()))?;
        let mut slots = Vec::new();
        slots
            .try_reserve_exact(total)
            .map_err(|e| Error::Resource(format!("cannot allocate {total} slots: {e}")))?;
        // Writing every slot up front keeps page faults out of the insert path.
        slots.resize(total, Slot::EMPTY);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let offsets = (0..config.tables)
            .map(|_| {
                let mut o = [0.0; MAX_LATENT_DIM];
                for x in o.iter_mut().take(config.dim) {
                    *x = rng.random::<f64>() * config.cell_size;
                }
                o
            })
            .collect();
        Ok(Self {
            config,
            offsets,
            slots,
            stats: GridStats::default(),
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn stats(&self) -> GridStats {
        self.stats
    }

    /// Empties every slot and resets the statistics; offsets are kept.
    pub fn clear(&mut self) {
        self.slots.fill(Slot::EMPTY);
        self.stats = GridStats::default();
    }

    /// Offset vector of table `i` (λ entries in `[0, c]`).
    pub fn offset(&self, i: usize) -> &[f64] {
        &self.offsets[i][..self.config.dim]
    }

    #[inline]
    fn slot_in_table(&self, table: usize, v: &[f64]) -> usize {
        let offset = &self.offsets[table];
        let cell = self.config.cell_size;
        let mut z = [0i64; MAX_LATENT_DIM];
        for k in 0..v.len() {
            z[k] = ((v[k] + offset[k]) / cell).floor() as i64;
        }
        hash_cell(&z[..v.len()], self.config.table_bits)
    }

    /// Inserts `v` under hypothesis `id` into every table and reports the first
    /// table whose occupant lies within tolerance.
    ///
    /// Panics if `v` does not have the grid's dimension.
    pub fn insert_and_check(&mut self, v: &LatentVector, id: u64) -> Option<Collision> {
        let dim = self.config.dim;
        assert_eq!(v.dim(), dim, "latent dimension does not match grid");
        assert!(id < u64::MAX);
        let values = v.as_slice();
        let per_table = self.config.slots_per_table();
        let mut found = None;
        self.stats.insertions += 1;
        for table in 0..self.config.tables {
            let idx = table * per_table + self.slot_in_table(table, values);
            let slot = &mut self.slots[idx];
            // Same work whether or not the slot is occupied; only a reported
            // collision takes a different path.
            let distance = linf(values, &slot.values[..dim]);
            let occupied = slot.occupant != 0;
            let passes = occupied & (distance < self.config.tolerance);
            self.stats.occupied_hits += occupied as u64;
            self.stats.tolerance_passes += passes as u64;
            if passes && found.is_none() {
                let existing = LatentVector::new(v.kind(), &slot.values[..dim]).expect("stored vectors are valid");
                found = Some(Collision {
                    existing_id: slot.occupant - 1,
                    new_id: id,
                    distance,
                    table_index: table,
                    existing,
                });
            }
            slot.occupant = id + 1;
            slot.values = [0.0; MAX_LATENT_DIM];
            slot.values[..dim].copy_from_slice(values);
        }
        if found.is_some() {
            self.stats.collisions += 1;
        }
        found
    }
}
