//! System geometry, statistical CSI and per-block channel realizations.
//!
//! The STAR-RIS is modelled as a uniform linear array along the y axis with
//! half-wavelength spacing, centred at its reference point. Its surface
//! normal points along +x: users with `x` beyond the surface are served by
//! transmission, users on the base-station side by reflection.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coefficients::SurfacePartition;
use crate::error::{CoreError, Result};

pub type C64 = Complex64;
pub type Point3 = [f64; 3];

/// Height of every user terminal (meters).
pub const USER_HEIGHT: f64 = 0.0;

/// Which side of the surface a user is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Transmission,
    Reflection,
}

impl Region {
    pub fn index(self) -> usize {
        match self {
            Region::Transmission => 0,
            Region::Reflection => 1,
        }
    }

    pub fn other(self) -> Region {
        match self {
            Region::Transmission => Region::Reflection,
            Region::Reflection => Region::Transmission,
        }
    }
}

/// Deterministic RNG for stream `stream` of a master seed.
///
/// Streams are independent of each other, so trial `i` always sees the same
/// randomness no matter which thread draws it or in which order.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemGeometry {
    pub bs_position: Point3,
    pub ris_position: Point3,
    pub user_positions: Vec<Point3>,
    pub user_regions: Vec<Region>,
}

impl SystemGeometry {
    pub fn new(
        bs_position: Point3,
        ris_position: Point3,
        user_positions: Vec<Point3>,
        user_regions: Vec<Region>,
    ) -> Result<Self> {
        if user_positions.is_empty() {
            return Err(CoreError::invalid("geometry needs at least one user"));
        }
        if user_positions.len() != user_regions.len() {
            return Err(CoreError::invalid(format!(
                "{} user positions but {} region tags",
                user_positions.len(),
                user_regions.len()
            )));
        }
        let geo = SystemGeometry {
            bs_position,
            ris_position,
            user_positions,
            user_regions,
        };
        let mut d = geo.bs_distances();
        d.sort_by(f64::total_cmp);
        if d.windows(2).any(|w| w[0] == w[1]) {
            return Err(CoreError::invalid("BS-user distances must be distinct"));
        }
        if d[0] <= 0.0 {
            return Err(CoreError::invalid("user co-located with the BS"));
        }
        Ok(geo)
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn bs_distances(&self) -> Vec<f64> {
        self.user_positions
            .iter()
            .map(|u| distance(&self.bs_position, u))
            .collect()
    }

    pub fn ris_distances(&self) -> Vec<f64> {
        self.user_positions
            .iter()
            .map(|u| distance(&self.ris_position, u))
            .collect()
    }

    pub fn bs_ris_distance(&self) -> f64 {
        distance(&self.bs_position, &self.ris_position)
    }

    /// Geometry with users permuted so that new user `i` is old user `order[i]`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let k = self.num_users();
        let mut seen = vec![false; k];
        for &i in order {
            if i >= k || seen[i] {
                return Err(CoreError::invalid("order is not a permutation of the users"));
            }
            seen[i] = true;
        }
        if order.len() != k {
            return Err(CoreError::invalid("order is not a permutation of the users"));
        }
        Ok(SystemGeometry {
            bs_position: self.bs_position,
            ris_position: self.ris_position,
            user_positions: order.iter().map(|&i| self.user_positions[i]).collect(),
            user_regions: order.iter().map(|&i| self.user_regions[i]).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    pub rho0_db: f64,
    pub d0: f64,
    pub alpha_bs: f64,
    pub alpha_sk: f64,
    pub alpha_k: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel {
            rho0_db: -30.0,
            d0: 1.0,
            alpha_bs: 2.0,
            alpha_sk: 2.2,
            alpha_k: 3.5,
        }
    }
}

impl PathLossModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0) {
            return Err(CoreError::invalid("reference distance must be positive"));
        }
        if !(self.alpha_bs > 0.0 && self.alpha_sk > 0.0 && self.alpha_k > 0.0) {
            return Err(CoreError::invalid("path-loss exponents must be positive"));
        }
        Ok(())
    }
}

/// Linear power gain `rho0 * (d / d0)^(-alpha)`.
pub fn path_loss(d: f64, alpha: f64, model: &PathLossModel) -> Result<f64> {
    if !(d > 0.0) {
        return Err(CoreError::invalid(format!("distance must be positive, got {d}")));
    }
    Ok(10f64.powf(model.rho0_db / 10.0) * (d / model.d0).powf(-alpha))
}

/// Drops `K_t` transmission-side and `K_r` reflection-side users uniformly in
/// the half of a horizontal disc of `radius` around the surface reference
/// that lies on their side of the surface.
pub fn drop_users(
    bs_position: Point3,
    ris_position: Point3,
    radius: f64,
    counts: (usize, usize),
    seed: u64,
) -> Result<SystemGeometry> {
    if !(radius > 0.0) {
        return Err(CoreError::invalid("drop radius must be positive"));
    }
    let (kt, kr) = counts;
    if kt + kr == 0 {
        return Err(CoreError::invalid("at least one user is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // ties in BS distance have probability zero; redraw if one ever occurs
    loop {
        let mut positions = Vec::with_capacity(kt + kr);
        let mut regions = Vec::with_capacity(kt + kr);
        for (region, n) in [(Region::Transmission, kt), (Region::Reflection, kr)] {
            for _ in 0..n {
                let r = radius * rng.random::<f64>().sqrt();
                let base = match region {
                    Region::Transmission => -0.5 * PI,
                    Region::Reflection => 0.5 * PI,
                };
                let phi = base + PI * rng.random::<f64>();
                positions.push([
                    ris_position[0] + r * phi.cos(),
                    ris_position[1] + r * phi.sin(),
                    USER_HEIGHT,
                ]);
                regions.push(region);
            }
        }
        match SystemGeometry::new(bs_position, ris_position, positions, regions) {
            Ok(g) => return Ok(g),
            Err(CoreError::InvalidArgument(_)) => continue,
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticalCsi {
    pub delta_bs: f64,
    pub delta_sk: Vec<f64>,
    pub delta_k: Vec<f64>,
    pub kappa1: f64,
    pub kappa2: f64,
    pub g_los: Vec<C64>,
    pub r_los: Vec<Vec<C64>>,
    /// Cascaded LoS vectors with `w_los[k]^H v == r_los[k]^H diag(g_los) v`.
    pub w_los: Vec<Vec<C64>>,
    pub regions: Vec<Region>,
}

impl StatisticalCsi {
    pub fn num_elements(&self) -> usize {
        self.g_los.len()
    }

    pub fn num_users(&self) -> usize {
        self.delta_k.len()
    }

    /// Same statistics with different Rician factors.
    pub fn with_kappa(&self, kappa1: f64, kappa2: f64) -> Self {
        StatisticalCsi {
            kappa1,
            kappa2,
            ..self.clone()
        }
    }
}

/// Array response of the surface towards `target`.
fn steering_vector(ris: &Point3, target: &Point3, m: usize) -> Vec<C64> {
    let d = distance(ris, target);
    let cos_axis = (target[1] - ris[1]) / d;
    let centre = (m as f64 - 1.0) / 2.0;
    (0..m)
        .map(|i| C64::from_polar(1.0, -PI * (i as f64 - centre) * cos_axis))
        .collect()
}

/// Conjugate-consistent cascade `conj(a) .* b`, so that
/// `cascade(a, b)^H v == b^H diag(a) v`.
pub(crate) fn cascade(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).collect()
}

pub fn derive_statistical_csi(
    geo: &SystemGeometry,
    model: &PathLossModel,
    kappa1: f64,
    kappa2: f64,
    num_elements: usize,
) -> Result<StatisticalCsi> {
    model.validate()?;
    if !(kappa1 >= 0.0 && kappa2 >= 0.0) {
        return Err(CoreError::invalid("Rician factors must be non-negative"));
    }
    let delta_bs = path_loss(geo.bs_ris_distance(), model.alpha_bs, model)?;
    let delta_sk = geo
        .ris_distances()
        .into_iter()
        .map(|d| path_loss(d, model.alpha_sk, model))
        .collect::<Result<Vec<_>>>()?;
    let delta_k = geo
        .bs_distances()
        .into_iter()
        .map(|d| path_loss(d, model.alpha_k, model))
        .collect::<Result<Vec<_>>>()?;
    let g_los = steering_vector(&geo.ris_position, &geo.bs_position, num_elements);
    let r_los: Vec<Vec<C64>> = geo
        .user_positions
        .iter()
        .map(|u| steering_vector(&geo.ris_position, u, num_elements))
        .collect();
    let w_los = r_los.iter().map(|r| cascade(&g_los, r)).collect();
    Ok(StatisticalCsi {
        delta_bs,
        delta_sk,
        delta_k,
        kappa1,
        kappa2,
        g_los,
        r_los,
        w_los,
        regions: geo.user_regions.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<C64>,
    pub g: Vec<C64>,
    pub r: Vec<Vec<C64>>,
    /// Cascaded channels, `w[k]^H v == r[k]^H diag(g) v`.
    pub w: Vec<Vec<C64>>,
}

fn cn01<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn rician<R: Rng + ?Sized>(los: &[C64], power: f64, kappa: f64, rng: &mut R) -> Vec<C64> {
    let a = (power * kappa / (kappa + 1.0)).sqrt();
    let b = (power / (kappa + 1.0)).sqrt();
    los.iter().map(|l| a * l + b * cn01(rng)).collect()
}

/// Draws one coherence block of Rician RIS links and Rayleigh direct links.
pub fn sample_channels<R: Rng + ?Sized>(scsi: &StatisticalCsi, rng: &mut R) -> ChannelRealization {
    let g = rician(&scsi.g_los, scsi.delta_bs, scsi.kappa1, rng);
    let r: Vec<Vec<C64>> = scsi
        .r_los
        .iter()
        .zip(&scsi.delta_sk)
        .map(|(los, &d)| rician(los, d, scsi.kappa2, rng))
        .collect();
    let h = scsi.delta_k.iter().map(|&d| d.sqrt() * cn01(rng)).collect();
    let w = r.iter().map(|rk| cascade(&g, rk)).collect();
    ChannelRealization { h, g, r, w }
}

pub fn sample_channels_seeded(scsi: &StatisticalCsi, seed: u64) -> ChannelRealization {
    sample_channels(scsi, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `a^H b`.
pub(crate) fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

impl ChannelRealization {
    pub fn num_users(&self) -> usize {
        self.h.len()
    }

    pub fn num_elements(&self) -> usize {
        self.g.len()
    }
}

/// `h_k + w_k^H v_s` where `s` is the user's region.
pub fn effective_channel(
    real: &ChannelRealization,
    v_t: &[C64],
    v_r: &[C64],
    user: usize,
    region: Region,
) -> Result<C64> {
    let m = real.num_elements();
    if v_t.len() != m || v_r.len() != m {
        return Err(CoreError::invalid(format!(
            "coefficient vectors must have length {m}"
        )));
    }
    if user >= real.num_users() {
        return Err(CoreError::invalid(format!("user {user} out of range")));
    }
    let v = match region {
        Region::Transmission => v_t,
        Region::Reflection => v_r,
    };
    Ok(real.h[user] + inner(&real.w[user], v))
}

/// Entries of the row vector `w_k^H` on the elements of subsurface `from`.
///
/// With `from == to` this is the user's own subsurface channel; otherwise it
/// is the channel scattered towards user `to` by another user's subsurface.
pub fn subsurface_channel(
    real: &ChannelRealization,
    partition: &SurfacePartition,
    from: usize,
    to: usize,
) -> Result<Vec<C64>> {
    if from >= partition.num_subsurfaces() || to >= real.num_users() {
        return Err(CoreError::invalid("subsurface or user index out of range"));
    }
    if partition.num_elements() != real.num_elements() {
        return Err(CoreError::invalid("partition does not match the surface size"));
    }
    Ok(partition.index_ranges[from]
        .clone()
        .map(|m| real.w[to][m].conj())
        .collect())
}
