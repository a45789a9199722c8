//! Occupation-number bases for bosons, fermions and spin-1/2 modes.
//!
//! Every basis state is packed into a `u128` key with mode 0 in the most
//! significant bits, so descending numeric order of the keys is exactly the
//! descending lexicographic order on occupation vectors. That ordering is the
//! canonical one for every basis built here.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_BASIS_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_BASIS_ID.fetch_add(1, Ordering::Relaxed)
}

/// Operator algebra of a mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistics {
    Boson,
    Fermion,
    /// Spin-1/2 stored as a hard-core boson via Holstein-Primakoff
    /// (occupation 1 is spin down).
    SpinHalf,
}

impl Statistics {
    pub fn is_fermionic(self) -> bool {
        matches!(self, Statistics::Fermion)
    }
}

/// Description of the local modes of a system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSpec {
    count: usize,
    statistics: Statistics,
    /// `None` means unbounded (bosons only).
    max_occupancy: Option<u32>,
}

impl ModeSpec {
    pub fn new(count: usize, statistics: Statistics, max_occupancy: Option<u32>) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidModes("mode count must be at least 1".into()));
        }
        let max_occupancy = match statistics {
            Statistics::Boson => match max_occupancy {
                Some(0) => {
                    return Err(Error::InvalidModes("max occupancy must be at least 1".into()))
                }
                other => other,
            },
            Statistics::Fermion | Statistics::SpinHalf => match max_occupancy {
                None | Some(1) => Some(1),
                Some(m) => {
                    return Err(Error::InvalidModes(format!(
                        "{statistics:?} modes have max occupancy 1, got {m}"
                    )))
                }
            },
        };
        Ok(Self {
            count,
            statistics,
            max_occupancy,
        })
    }

    pub fn bosons(count: usize) -> Result<Self> {
        Self::new(count, Statistics::Boson, None)
    }

    pub fn hard_core(count: usize) -> Result<Self> {
        Self::new(count, Statistics::Boson, Some(1))
    }

    pub fn fermions(count: usize) -> Result<Self> {
        Self::new(count, Statistics::Fermion, None)
    }

    pub fn spins(count: usize) -> Result<Self> {
        Self::new(count, Statistics::SpinHalf, None)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn statistics(&self) -> Statistics {
        self.statistics
    }

    pub fn max_occupancy(&self) -> Option<u32> {
        self.max_occupancy
    }

    /// Largest particle number the modes can hold, `None` if unbounded.
    pub fn capacity(&self) -> Option<usize> {
        self.max_occupancy.map(|m| m as usize * self.count)
    }

    /// Per-mode occupation cap for a basis holding at most `max_particles`.
    fn effective_cap(&self, max_particles: usize) -> u32 {
        let n = max_particles.max(1) as u32;
        match self.max_occupancy {
            Some(m) => m.min(n),
            None => n,
        }
    }
}

/// A single mode as stored in a basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub statistics: Statistics,
    pub cap: u32,
}

/// An ancillary mode attached to a system basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AncillaSpec {
    pub statistics: Statistics,
    pub truncation: u32,
}

impl AncillaSpec {
    pub fn boson(truncation: u32) -> Self {
        Self {
            statistics: Statistics::Boson,
            truncation,
        }
    }

    pub fn fermion() -> Self {
        Self {
            statistics: Statistics::Fermion,
            truncation: 1,
        }
    }
}

/// Which combination of system and ancilla numbers is held fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conservation {
    /// `N_system + sum(n_ancilla) = N`: particle-exchange couplings.
    Total,
    /// `N_system - sum(n_ancilla) = N`: the Holstein-Primakoff picture of a
    /// red-sideband coupling, where lowering a spin creates a system boson
    /// together with a phonon.
    Difference,
    /// System sector fixed, ancillas enumerated independently.
    Independent,
}

#[derive(Clone, Debug)]
struct Layout {
    shift: Vec<u32>,
    width: Vec<u32>,
    /// Bits of the fermionic modes strictly before mode `i`.
    fermion_before: Vec<u128>,
}

impl Layout {
    fn new(modes: &[Mode]) -> Result<Self> {
        let width: Vec<u32> = modes
            .iter()
            .map(|m| (32 - m.cap.leading_zeros()).max(1))
            .collect();
        let total: u32 = width.iter().sum();
        if total > 128 {
            return Err(Error::InvalidModes(format!(
                "{} modes need {total} key bits, at most 128 are supported",
                modes.len()
            )));
        }
        let mut shift = Vec::with_capacity(modes.len());
        let mut used = 0;
        for w in &width {
            used += w;
            shift.push(total - used);
        }
        let mut fermion_before = Vec::with_capacity(modes.len());
        let mut mask = 0u128;
        for (i, m) in modes.iter().enumerate() {
            fermion_before.push(mask);
            if m.statistics.is_fermionic() {
                mask |= 1u128 << shift[i];
            }
        }
        Ok(Self {
            shift,
            width,
            fermion_before,
        })
    }

    #[inline]
    fn get(&self, key: u128, mode: usize) -> u32 {
        ((key >> self.shift[mode]) & ((1u128 << self.width[mode]) - 1)) as u32
    }

    fn pack(&self, occ: &[u32]) -> u128 {
        occ.iter()
            .enumerate()
            .fold(0u128, |k, (i, &n)| k | ((n as u128) << self.shift[i]))
    }
}

#[derive(Clone, Debug)]
enum Lookup {
    /// Combinatorial ranking for single-sector bases of capacity-1 modes.
    Ranked { particles: usize, binom: Vec<Vec<u64>> },
    Hashed(HashMap<u128, u32>),
}

/// Enumerated occupation-number basis.
///
/// Immutable after construction; share it behind an [`Arc`].
#[derive(Clone, Debug)]
pub struct Basis {
    id: u64,
    modes: Vec<Mode>,
    system_modes: usize,
    layout: Layout,
    keys: Vec<u128>,
    lookup: Lookup,
    sectors: Vec<usize>,
    spec: Option<ModeSpec>,
}

impl Basis {
    /// Enumerates the fixed particle-number sector `n` of `spec`.
    pub fn sector(spec: ModeSpec, n: usize) -> Result<Self> {
        Self::multi_sector(spec, &[n])
    }

    /// Enumerates the union of several particle-number sectors; sectors that
    /// cannot hold the requested number are skipped, but at least one must be
    /// feasible.
    pub fn multi_sector(spec: ModeSpec, particle_numbers: &[usize]) -> Result<Self> {
        let feasible: Vec<usize> = particle_numbers
            .iter()
            .copied()
            .filter(|&n| spec.capacity().map_or(true, |c| n <= c))
            .collect();
        if feasible.is_empty() {
            let n = particle_numbers.iter().copied().max().unwrap_or(0);
            return Err(Error::SectorEmpty {
                particles: n,
                modes: spec.count,
                capacity: spec.capacity().unwrap_or(usize::MAX),
            });
        }
        let max_n = *feasible.iter().max().unwrap();
        let cap = spec.effective_cap(max_n);
        let modes = vec![
            Mode {
                statistics: spec.statistics,
                cap
            };
            spec.count
        ];
        let layout = Layout::new(&modes)?;
        let mut keys = Vec::new();
        let mut occ = vec![0u32; modes.len()];
        for &n in &feasible {
            let caps: Vec<u32> = modes.iter().map(|m| m.cap).collect();
            fill_descending(&caps, 0, n as u32, &mut occ, &mut |o| keys.push(layout.pack(o)));
        }
        keys.sort_unstable_by(|a, b| b.cmp(a));
        keys.dedup();
        let mut sectors = feasible;
        sectors.sort_unstable();
        sectors.dedup();
        let lookup = if sectors.len() == 1 && cap == 1 {
            Lookup::Ranked {
                particles: sectors[0],
                binom: binomial_table(spec.count),
            }
        } else {
            hashed(&keys)
        };
        Ok(Self {
            id: next_id(),
            system_modes: modes.len(),
            modes,
            layout,
            keys,
            lookup,
            sectors,
            spec: Some(spec),
        })
    }

    fn from_parts(modes: Vec<Mode>, system_modes: usize, mut keys: Vec<u128>, sectors: Vec<usize>) -> Result<Self> {
        let layout = Layout::new(&modes)?;
        keys.sort_unstable_by(|a, b| b.cmp(a));
        keys.dedup();
        let lookup = hashed(&keys);
        Ok(Self {
            id: next_id(),
            modes,
            system_modes,
            layout,
            keys,
            lookup,
            sectors,
            spec: None,
        })
    }

    /// Mode specification of a plain system basis.
    pub fn spec(&self) -> Option<ModeSpec> {
        self.spec
    }

    /// Identity tag used to match operators and states to their basis.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.keys.len()
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    /// Number of leading modes that belong to the system (the rest are
    /// ancillas).
    pub fn system_modes(&self) -> usize {
        self.system_modes
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> Mode {
        self.modes[i]
    }

    /// Particle numbers of the system sectors present.
    pub fn sectors(&self) -> &[usize] {
        &self.sectors
    }

    pub fn keys(&self) -> &[u128] {
        &self.keys
    }

    pub fn key(&self, index: usize) -> u128 {
        self.keys[index]
    }

    pub fn state(&self, index: usize) -> Vec<u32> {
        let key = self.keys[index];
        (0..self.modes.len()).map(|m| self.layout.get(key, m)).collect()
    }

    #[inline]
    pub fn occupation(&self, index: usize, mode: usize) -> u32 {
        self.layout.get(self.keys[index], mode)
    }

    #[inline]
    pub fn key_occupation(&self, key: u128, mode: usize) -> u32 {
        self.layout.get(key, mode)
    }

    /// Number of system particles in state `index`.
    pub fn system_particles(&self, index: usize) -> usize {
        (0..self.system_modes)
            .map(|m| self.occupation(index, m) as usize)
            .sum()
    }

    pub fn pack(&self, occupation: &[u32]) -> u128 {
        self.layout.pack(occupation)
    }

    /// Position of `occupation` in the canonical ordering.
    pub fn index_of(&self, occupation: &[u32]) -> Result<usize> {
        if occupation.len() != self.modes.len()
            || occupation
                .iter()
                .zip(&self.modes)
                .any(|(&n, m)| n > m.cap)
        {
            return Err(Error::NotFound(occupation.to_vec()));
        }
        self.index_of_key(self.layout.pack(occupation))
            .ok_or_else(|| Error::NotFound(occupation.to_vec()))
    }

    #[inline]
    pub fn index_of_key(&self, key: u128) -> Option<usize> {
        match &self.lookup {
            Lookup::Hashed(map) => map.get(&key).map(|&i| i as usize),
            Lookup::Ranked { particles, binom } => {
                if key.count_ones() as usize != *particles || key >> self.modes.len() != 0 {
                    return None;
                }
                let m = self.modes.len();
                let mut remaining = *particles;
                let mut rank = 0u64;
                for i in 0..m {
                    if remaining == 0 {
                        break;
                    }
                    let bit = (key >> (m - 1 - i)) & 1;
                    if bit == 1 {
                        remaining -= 1;
                    } else {
                        rank += binom[m - i - 1][remaining - 1];
                    }
                }
                Some(rank as usize)
            }
        }
    }

    /// Applies a ladder or number operator to a packed key. Returns the new
    /// key and the matrix element, or `None` when the result vanishes.
    #[inline]
    pub fn apply_action(&self, key: u128, mode: usize, action: crate::linalg::Action) -> Option<(u128, f64)> {
        use crate::linalg::Action;
        let n = self.layout.get(key, mode);
        let m = self.modes[mode];
        match action {
            Action::Number => {
                if n == 0 {
                    None
                } else {
                    Some((key, n as f64))
                }
            }
            Action::Create => {
                if n >= m.cap {
                    return None;
                }
                let new_key = key + (1u128 << self.layout.shift[mode]);
                let mut amp = ((n + 1) as f64).sqrt();
                if m.statistics.is_fermionic() && (key & self.layout.fermion_before[mode]).count_ones() % 2 == 1 {
                    amp = -amp;
                }
                Some((new_key, amp))
            }
            Action::Annihilate => {
                if n == 0 {
                    return None;
                }
                let new_key = key - (1u128 << self.layout.shift[mode]);
                let mut amp = (n as f64).sqrt();
                if m.statistics.is_fermionic() && (key & self.layout.fermion_before[mode]).count_ones() % 2 == 1 {
                    amp = -amp;
                }
                Some((new_key, amp))
            }
        }
    }
}

fn hashed(keys: &[u128]) -> Lookup {
    let mut map = HashMap::with_capacity(keys.len());
    for (i, &k) in keys.iter().enumerate() {
        map.insert(k, i as u32);
    }
    Lookup::Hashed(map)
}

fn binomial_table(n: usize) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; n + 1]; n + 1];
    for i in 0..=n {
        t[i][0] = 1;
        for j in 1..=i {
            t[i][j] = t[i - 1][j - 1] + if j <= i - 1 { t[i - 1][j] } else { 0 };
        }
    }
    t
}

/// Visits every occupation vector with the given total, respecting the
/// per-mode caps, in descending lexicographic order.
fn fill_descending(caps: &[u32], pos: usize, remaining: u32, occ: &mut [u32], visit: &mut impl FnMut(&[u32])) {
    if pos == caps.len() {
        if remaining == 0 {
            visit(occ);
        }
        return;
    }
    let rest_capacity: u64 = caps[pos + 1..].iter().map(|&c| c as u64).sum();
    let hi = caps[pos].min(remaining);
    let lo = (remaining as u64).saturating_sub(rest_capacity) as u32;
    if lo > hi {
        return;
    }
    for n in (lo..=hi).rev() {
        occ[pos] = n;
        fill_descending(caps, pos + 1, remaining - n, occ, visit);
    }
    occ[pos] = 0;
}

/// Enumerates the sector of `modes` holding `n` particles.
pub fn enumerate_sector(modes: ModeSpec, n: usize) -> Result<Basis> {
    Basis::sector(modes, n)
}

/// System basis extended by ancillary modes.
#[derive(Clone, Debug)]
pub struct CompositeBasis {
    basis: Arc<Basis>,
    system: Arc<Basis>,
    ancillas: Vec<AncillaSpec>,
    conservation: Conservation,
    embedding: Vec<usize>,
}

impl CompositeBasis {
    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn system(&self) -> &Arc<Basis> {
        &self.system
    }

    pub fn ancillas(&self) -> &[AncillaSpec] {
        &self.ancillas
    }

    pub fn conservation(&self) -> Conservation {
        self.conservation
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Composite index of system state `i` with the ancillas in their
    /// initial configuration (empty unless built with
    /// [`compose_with_ancillas_at`]).
    pub fn embedding(&self) -> &[usize] {
        &self.embedding
    }

    /// Occupations of the ancillas in composite state `index`.
    pub fn ancilla_occupations(&self, index: usize) -> impl Iterator<Item = u32> + '_ {
        let s = self.basis.system_modes();
        (0..self.ancillas.len()).map(move |m| self.basis.occupation(index, s + m))
    }

    /// Global mode index of ancilla `m`.
    pub fn ancilla_mode(&self, m: usize) -> usize {
        self.basis.system_modes() + m
    }
}

/// Attaches ancillary modes to a single- or multi-sector system basis.
///
/// The system basis must have uniform mode statistics (as produced by
/// [`Basis::sector`]); its particle number is taken from its sector list.
pub fn compose_with_ancillas(system: &Arc<Basis>, ancillas: &[AncillaSpec], conservation: Conservation) -> Result<CompositeBasis> {
    compose_with_ancillas_at(system, ancillas, conservation, &vec![0; ancillas.len()])
}

/// As [`compose_with_ancillas`], with the ancillas initially holding
/// `initial` particles; the embedding then maps onto that configuration.
pub fn compose_with_ancillas_at(system: &Arc<Basis>, ancillas: &[AncillaSpec], conservation: Conservation, initial: &[u32]) -> Result<CompositeBasis> {
    if initial.len() != ancillas.len() || initial.iter().zip(ancillas).any(|(&n, a)| n > a.truncation) {
        return Err(Error::InvalidModes("initial ancilla occupations must fit their truncations".into()));
    }
    let k0: usize = initial.iter().map(|&n| n as usize).sum();
    let spec = system
        .spec()
        .ok_or_else(|| Error::InvalidModes("system basis already carries ancillas".into()))?;
    for a in ancillas {
        if a.truncation == 0 {
            return Err(Error::InvalidModes("ancilla truncation must be at least 1".into()));
        }
        if a.statistics != Statistics::Boson && a.truncation != 1 {
            return Err(Error::InvalidModes(format!(
                "{:?} ancilla must have truncation 1",
                a.statistics
            )));
        }
    }
    let sector = match system.sectors() {
        [n] => *n,
        _ => {
            return Err(Error::InvalidModes(
                "ancillas attach to a single-sector system basis".into(),
            ))
        }
    };
    let sys_modes = system.num_modes();
    let stats = spec.statistics();
    let sys_spec_cap = spec.max_occupancy();
    let max_anc: usize = ancillas.iter().map(|a| a.truncation as usize).sum();

    // System sectors reachable under the conservation rule, paired with the
    // total ancilla count they require.
    let capacity = sys_spec_cap.map(|c| c as usize * sys_modes);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for k in 0..=max_anc {
        let n_sys = match conservation {
            Conservation::Total => (sector + k0).checked_sub(k),
            Conservation::Difference => (sector + k).checked_sub(k0),
            Conservation::Independent => Some(sector),
        };
        if let Some(n) = n_sys {
            if capacity.map_or(true, |c| n <= c) {
                pairs.push((n, k));
            }
        }
    }
    let max_sys = pairs.iter().map(|p| p.0).max().unwrap_or(sector);
    let sys_cap = match sys_spec_cap {
        Some(c) => c,
        None => max_sys.max(1) as u32,
    };
    let mut modes: Vec<Mode> = vec![
        Mode {
            statistics: stats,
            cap: sys_cap
        };
        sys_modes
    ];
    modes.extend(ancillas.iter().map(|a| Mode {
        statistics: a.statistics,
        cap: a.truncation,
    }));
    let layout = Layout::new(&modes)?;

    let sys_caps = vec![sys_cap; sys_modes];
    let anc_caps: Vec<u32> = ancillas.iter().map(|a| a.truncation).collect();
    let mut keys = Vec::new();
    let mut occ = vec![0u32; modes.len()];
    let mut sys_occ = vec![0u32; sys_modes];
    let mut anc_occ = vec![0u32; ancillas.len()];
    let mut sectors = Vec::new();
    for &(n_sys, k) in &pairs {
        let mut anc_configs: Vec<Vec<u32>> = Vec::new();
        if ancillas.is_empty() {
            if k == 0 {
                anc_configs.push(Vec::new());
            }
        } else {
            fill_descending(&anc_caps, 0, k as u32, &mut anc_occ, &mut |o| anc_configs.push(o.to_vec()));
        }
        if anc_configs.is_empty() {
            continue;
        }
        sectors.push(n_sys);
        fill_descending(&sys_caps, 0, n_sys as u32, &mut sys_occ, &mut |s| {
            occ[..sys_modes].copy_from_slice(s);
            for a in &anc_configs {
                occ[sys_modes..].copy_from_slice(a);
                keys.push(layout.pack(&occ));
            }
        });
    }
    sectors.sort_unstable();
    sectors.dedup();
    if keys.is_empty() {
        return Err(Error::SectorEmpty {
            particles: sector,
            modes: sys_modes,
            capacity: capacity.unwrap_or(usize::MAX),
        });
    }
    let basis = Arc::new(Basis::from_parts(modes, sys_modes, keys, sectors)?);
    let mut full = vec![0u32; basis.num_modes()];
    let embedding = (0..system.dim())
        .map(|i| {
            let s = system.state(i);
            full[..sys_modes].copy_from_slice(&s);
            full[sys_modes..].copy_from_slice(initial);
            basis.index_of(&full)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompositeBasis {
        basis,
        system: Arc::clone(system),
        ancillas: ancillas.to_vec(),
        conservation,
        embedding,
    })
}

/// Binomial coefficient with saturation; used for dimension bookkeeping.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc.min(u64::MAX as u128) as u64
}

/// Sector dimension from closed-form counting.
pub fn sector_dimension(spec: ModeSpec, n: usize) -> u64 {
    let m = spec.count as u64;
    match spec.max_occupancy {
        None => binomial(n as u64 + m - 1, m - 1),
        Some(1) => binomial(m, n as u64),
        Some(cap) => {
            // inclusion-exclusion over modes exceeding the cap
            let c = cap as u64 + 1;
            let mut total: i128 = 0;
            let mut j = 0u64;
            while j <= m && j * c <= n as u64 {
                let term = binomial(m, j) as i128 * binomial(n as u64 - j * c + m - 1, m - 1) as i128;
                total += if j % 2 == 0 { term } else { -term };
                j += 1;
            }
            total.max(0) as u64
        }
    }
}
