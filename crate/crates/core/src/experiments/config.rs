use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bte::PenaltySchedule;
use crate::channel::{PathLossModel, Point3};
use crate::error::{CoreError, Result};
use crate::noma::NomaConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Bte,
    Pte,
    Fdma,
    Tdma,
    CrNomaBte,
    CrNomaPte,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Scheme::Bte, Scheme::Pte, Scheme::Fdma, Scheme::Tdma, Scheme::CrNomaBte, Scheme::CrNomaPte];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Bte => "bte",
            Scheme::Pte => "pte",
            Scheme::Fdma => "fdma",
            Scheme::Tdma => "tdma",
            Scheme::CrNomaBte => "cr_noma_bte",
            Scheme::CrNomaPte => "cr_noma_pte",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown scheme `{s}`")))
    }
}

/// Parses a comma-separated scheme list.
pub fn parse_schemes(list: &str) -> Result<Vec<Scheme>> {
    let out = list.split(',').filter(|s| !s.trim().is_empty()).map(Scheme::from_str).collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(CoreError::Config("empty scheme list".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    None,
    /// Number of surface elements.
    M,
    /// Coherence time in symbols.
    TC,
    /// Rician factor of both links.
    Kappa,
}

impl FromStr for SweepAxis {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(SweepAxis::None),
            "m" => Ok(SweepAxis::M),
            "t_c" | "tc" => Ok(SweepAxis::TC),
            "kappa" => Ok(SweepAxis::Kappa),
            other => Err(CoreError::Config(format!("unknown sweep axis `{other}` (expected M, T_c, kappa or none)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl FromStr for Sweep {
    type Err = CoreError;

    /// `axis=v1,v2,...`
    fn from_str(s: &str) -> Result<Self> {
        let (axis, values) = s
            .split_once('=')
            .ok_or_else(|| CoreError::Config(format!("sweep `{s}` is not of the form axis=v1,v2,...")))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| CoreError::Config(format!("bad sweep value `{v}`"))))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Sweep { axis: axis.parse()?, values })
    }
}

/// Everything one experiment needs; powers in dBm, gains in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub bs_position: Point3,
    pub ris_position: Point3,
    /// Users are dropped within this radius of the surface.
    pub radius: f64,
    pub rho0_db: f64,
    pub d0: f64,
    pub alpha_bs: f64,
    pub alpha_sk: f64,
    pub alpha_k: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub sigma2_dbm: f64,
    pub p_max_dbm: f64,
    /// Rate targets in bps/Hz; one value is shared by every user.
    pub gamma: Vec<f64>,
    pub t_coherence: f64,
    pub num_elements: usize,
    pub k_t: usize,
    pub k_r: usize,
    pub n_trials: usize,
    pub master_seed: u64,
    /// Independent user drops averaged per sweep point.
    pub geometries: usize,
    pub sweep: Sweep,
    pub schemes: Vec<Scheme>,
    pub penalty: PenaltySchedule,
    /// Samples per closed-form check in the approximation audit.
    pub audit_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            bs_position: [0.0, 0.0, 1.0],
            ris_position: [50.0, 0.0, 1.0],
            radius: 5.0,
            rho0_db: -30.0,
            d0: 1.0,
            alpha_bs: 2.0,
            alpha_sk: 2.2,
            alpha_k: 3.5,
            kappa1: 3.0,
            kappa2: 3.0,
            sigma2_dbm: -80.0,
            p_max_dbm: 30.0,
            gamma: vec![1.8],
            t_coherence: 400.0,
            num_elements: 50,
            k_t: 2,
            k_r: 2,
            n_trials: 5000,
            master_seed: 0,
            geometries: 1,
            sweep: Sweep::default(),
            schemes: vec![Scheme::Bte, Scheme::Pte],
            penalty: PenaltySchedule::default(),
            audit_samples: 100_000,
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_users(&self) -> usize {
        self.k_t + self.k_r
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1");
        }
        if self.geometries == 0 {
            return bad("geometries must be at least 1");
        }
        if self.num_users() == 0 {
            return bad("at least one user is needed");
        }
        if !(self.radius > 0.0) {
            return bad("radius must be positive");
        }
        if self.gamma.len() != 1 && self.gamma.len() != self.num_users() {
            return bad("gamma needs one value or one per user");
        }
        if self.schemes.is_empty() {
            return bad("no schemes selected");
        }
        if self.sweep.axis == SweepAxis::None && !self.sweep.values.is_empty() {
            return bad("sweep values given without an axis");
        }
        if self.sweep.axis != SweepAxis::None && self.sweep.values.is_empty() {
            return bad("sweep axis given without values");
        }
        if self.sweep.values.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("sweep values must be strictly increasing");
        }
        for &v in &self.sweep.values {
            match self.sweep.axis {
                SweepAxis::M if !(v >= 0.0 && v.fract() == 0.0) => return bad("M sweep values must be non-negative integers"),
                SweepAxis::TC if !(v > 0.0) => return bad("T_c sweep values must be positive"),
                SweepAxis::Kappa if !(v >= 0.0) => return bad("kappa sweep values must be non-negative"),
                _ => {}
            }
        }
        self.path_loss().validate()?;
        self.penalty.validate()?;
        self.noma().validate()
    }

    pub fn path_loss(&self) -> PathLossModel {
        PathLossModel { rho0_db: self.rho0_db, d0: self.d0, alpha_bs: self.alpha_bs, alpha_sk: self.alpha_sk, alpha_k: self.alpha_k }
    }

    pub fn noma(&self) -> NomaConfig {
        let gamma = if self.gamma.len() == 1 { vec![self.gamma[0]; self.num_users()] } else { self.gamma.clone() };
        NomaConfig { p_max: dbm_to_watts(self.p_max_dbm), sigma2: dbm_to_watts(self.sigma2_dbm), gamma, t_coherence: self.t_coherence }
    }

    /// Sweep points; a config without a sweep has the single point `NaN`.
    pub fn sweep_points(&self) -> Vec<f64> {
        if self.sweep.axis == SweepAxis::None {
            vec![f64::NAN]
        } else {
            self.sweep.values.clone()
        }
    }

    /// The config with the sweep axis set to `value`.
    pub fn at(&self, value: f64) -> ExperimentConfig {
        let mut out = self.clone();
        match self.sweep.axis {
            SweepAxis::None => {}
            SweepAxis::M => out.num_elements = value as usize,
            SweepAxis::TC => out.t_coherence = value,
            SweepAxis::Kappa => {
                out.kappa1 = value;
                out.kappa2 = value;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn partial_documents_take_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"num_elements": 12, "sweep": {"axis": "t_c", "values": [200, 400]}}"#).unwrap();
        assert_eq!(cfg.num_elements, 12);
        assert_eq!(cfg.sweep.axis, SweepAxis::TC);
        assert_eq!(cfg.n_trials, 5000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"num_elements": 12, "bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"sweep": {"axis": "m", "values": [1], "step": 2}}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"n_trials": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"sweep": {"axis": "m", "values": [40, 20]}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"gamma": [1, 2, 3]}"#).is_err());
    }

    #[test]
    fn unit_conversions() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(-80.0) - 1e-11).abs() < 1e-25);
        let n = ExperimentConfig::default().noma();
        assert_eq!(n.gamma, vec![1.8; 4]);
    }

    #[test]
    fn cli_strings() {
        let s: Sweep = "M=20,40,60".parse().unwrap();
        assert_eq!(s, Sweep { axis: SweepAxis::M, values: vec![20.0, 40.0, 60.0] });
        assert_eq!("T_c=200".parse::<Sweep>().unwrap().axis, SweepAxis::TC);
        assert!("q=1".parse::<Sweep>().is_err());
        assert_eq!(parse_schemes("bte, cr_noma_pte").unwrap(), vec![Scheme::Bte, Scheme::CrNomaPte]);
        assert!(parse_schemes("bte,ofdma").is_err());
    }

    #[test]
    fn sweep_application() {
        let cfg = ExperimentConfig { sweep: "kappa=0,5".parse().unwrap(), ..Default::default() };
        let at = cfg.at(5.0);
        assert_eq!((at.kappa1, at.kappa2), (5.0, 5.0));
        assert!(ExperimentConfig::default().sweep_points()[0].is_nan());
    }
}
