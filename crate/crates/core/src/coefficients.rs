//! Transmission/reflection coefficient vectors and subsurface partitions
//! under mode switching.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::channel::{subsurface_channel, ChannelRealization, Region, C64};
use crate::error::{CoreError, Result};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarCoefficients {
    pub v_t: Vec<C64>,
    pub v_r: Vec<C64>,
}

impl StarCoefficients {
    pub fn new(v_t: Vec<C64>, v_r: Vec<C64>) -> Result<Self> {
        if v_t.len() != v_r.len() || v_t.is_empty() {
            return Err(CoreError::invalid("v_t and v_r must be non-empty and of equal length"));
        }
        Ok(StarCoefficients { v_t, v_r })
    }

    pub fn num_elements(&self) -> usize {
        self.v_t.len()
    }

    pub fn for_region(&self, region: Region) -> &[C64] {
        match region {
            Region::Transmission => &self.v_t,
            Region::Reflection => &self.v_r,
        }
    }

    /// Snap every element to the mode with the larger amplitude, keeping its phase.
    pub fn round_to_binary(&self) -> StarCoefficients {
        let unit = |z: C64| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) };
        let zero = C64::new(0.0, 0.0);
        let (v_t, v_r) = self
            .v_t
            .iter()
            .zip(&self.v_r)
            .map(|(&t, &r)| if t.norm() >= r.norm() { (unit(t), zero) } else { (zero, unit(r)) })
            .unzip();
        StarCoefficients { v_t, v_r }
    }
}

/// Outcome of [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVerdict {
    pub valid: bool,
    /// `max_m (|v_t,m|² + |v_r,m|² − 1)`, floored at 0.
    pub max_energy_violation: f64,
    /// `max_{m,s} (|v_s,m| − |v_s,m|²)`, floored at 0.
    pub max_binary_violation: f64,
    /// Elements that are off in both modes.
    pub unassigned: usize,
}

pub fn validate(coeffs: &StarCoefficients, binary_required: bool) -> CoefficientVerdict {
    let mut energy: f64 = 0.0;
    let mut binary: f64 = 0.0;
    let mut unassigned = 0;
    for (t, r) in coeffs.v_t.iter().zip(&coeffs.v_r) {
        let (a, b) = (t.norm(), r.norm());
        energy = energy.max(a * a + b * b - 1.0);
        binary = binary.max(a - a * a).max(b - b * b);
        if a < TOL && b < TOL {
            unassigned += 1;
        }
    }
    let valid = energy <= TOL && (!binary_required || (binary <= TOL && unassigned == 0));
    CoefficientVerdict {
        valid,
        max_energy_violation: energy.max(0.0),
        max_binary_violation: binary.max(0.0),
        unassigned,
    }
}

/// Assignment of surface elements to users; user `k` owns `index_ranges[k]`
/// and operates it in mode `modes[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfacePartition {
    pub counts: Vec<usize>,
    pub index_ranges: Vec<Range<usize>>,
    pub modes: Vec<Region>,
}

impl SurfacePartition {
    /// Consecutive blocks in user order: user 0 takes the first `counts[0]` elements.
    pub fn contiguous(counts: &[usize], modes: &[Region]) -> Result<Self> {
        let m: usize = counts.iter().sum();
        Self::pooled(counts, modes, &[0..m], &vec![0; counts.len()])
    }

    /// Blocks laid out inside fixed pools of elements.
    ///
    /// `pool_of[k]` names the pool hosting user `k`; within a pool users get
    /// consecutive blocks in user order. Pools must tile `0..M` and each must
    /// be filled exactly by its users' counts.
    pub fn pooled(
        counts: &[usize],
        modes: &[Region],
        pools: &[Range<usize>],
        pool_of: &[usize],
    ) -> Result<Self> {
        if counts.is_empty() || counts.len() != modes.len() || counts.len() != pool_of.len() {
            return Err(CoreError::invalid("counts, modes and pool map must have equal non-zero length"));
        }
        let mut next: Vec<usize> = pools.iter().map(|p| p.start).collect();
        let mut index_ranges = Vec::with_capacity(counts.len());
        for (k, &c) in counts.iter().enumerate() {
            let pool = pools
                .get(pool_of[k])
                .ok_or_else(|| CoreError::invalid("pool index out of range"))?;
            let start = next[pool_of[k]];
            if start + c > pool.end {
                return Err(CoreError::invalid("subsurface counts overflow their pool"));
            }
            index_ranges.push(start..start + c);
            next[pool_of[k]] += c;
        }
        let partition = SurfacePartition {
            counts: counts.to_vec(),
            index_ranges,
            modes: modes.to_vec(),
        };
        if next.iter().zip(pools).any(|(n, p)| *n != p.end) {
            return Err(CoreError::invalid("subsurface counts do not fill their pools"));
        }
        partition.check()?;
        Ok(partition)
    }

    fn check(&self) -> Result<()> {
        let m = self.num_elements();
        let mut seen = vec![false; m];
        for r in &self.index_ranges {
            for i in r.clone() {
                if i >= m || seen[i] {
                    return Err(CoreError::invalid("subsurfaces overlap or leave the surface"));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(CoreError::invalid("subsurfaces do not cover the surface"));
        }
        Ok(())
    }

    pub fn num_subsurfaces(&self) -> usize {
        self.counts.len()
    }

    pub fn num_elements(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Owner of every element.
    pub fn owners(&self) -> Vec<usize> {
        let mut owner = vec![0; self.num_elements()];
        for (k, r) in self.index_ranges.iter().enumerate() {
            for i in r.clone() {
                owner[i] = k;
            }
        }
        owner
    }
}

/// Binary coefficients realizing a partition with the given element phases.
pub fn partition_to_coefficients(
    partition: &SurfacePartition,
    phases: &[f64],
) -> Result<StarCoefficients> {
    let m = partition.num_elements();
    if phases.len() != m {
        return Err(CoreError::invalid(format!(
            "expected {m} phases, got {}",
            phases.len()
        )));
    }
    let zero = C64::new(0.0, 0.0);
    let mut v_t = vec![zero; m];
    let mut v_r = vec![zero; m];
    for (k, range) in partition.index_ranges.iter().enumerate() {
        let target = match partition.modes[k] {
            Region::Transmission => &mut v_t,
            Region::Reflection => &mut v_r,
        };
        for i in range.clone() {
            target[i] = C64::from_polar(1.0, phases[i]);
        }
    }
    Ok(StarCoefficients { v_t, v_r })
}

fn angle(z: C64) -> f64 {
    if z == C64::new(0.0, 0.0) {
        0.0
    } else {
        z.arg()
    }
}

/// Phases that co-phase every user's own subsurface with its direct link.
pub fn align_phases(real: &ChannelRealization, partition: &SurfacePartition) -> Result<Vec<f64>> {
    let mut phases = vec![0.0; partition.num_elements()];
    for k in 0..partition.num_subsurfaces() {
        let q = subsurface_channel(real, partition, k, k)?;
        let base = angle(real.h[k]);
        for (i, qn) in partition.index_ranges[k].clone().zip(q) {
            phases[i] = base - angle(qn);
        }
    }
    Ok(phases)
}
