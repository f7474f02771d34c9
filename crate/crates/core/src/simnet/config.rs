use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::TotalRisk;
use crate::crypto::EnvelopeKind;
use crate::error::ConfigError;
use crate::geometry::Point;
use crate::issuers::Rect;
use crate::server::PartialRisk;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// A wall: radio links crossing it are blocked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mobility {
    #[default]
    Stationary,
    /// Walks the polyline at `speed` m/s, then stays at the last point.
    Waypoint { points: Vec<Point>, speed: f64 },
    /// Gaussian step of `step_sigma` meters per axis per slot, kept in the region.
    RandomWalk { step_sigma: f64 },
}

/// What an amplified transmitter sends to its distant targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForgedPayload {
    /// The sender's genuine beacon.
    Own,
    /// A locked beacon claiming a spot offset from the target's true position.
    SpoofNear { target: usize, offset: Point },
    /// A locked beacon claiming a fixed position.
    Spoof { at: Point },
    /// The most recent beacon this agent overheard from someone else.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadioBehavior {
    #[default]
    Honest,
    /// Broken client that appends its pseudonym to every beacon. Used only as
    /// a positive control for the transcript scanners.
    LeakPseudonym,
    /// Honest beacon to real neighbours, plus `payload` delivered to each
    /// target regardless of distance, appearing `apparent_distance` away.
    Amplified {
        targets: Vec<usize>,
        apparent_distance: f64,
        payload: ForgedPayload,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub position: Point,
    #[serde(default)]
    pub mobility: Mobility,
    /// Ground truth: tested positive, so the health facility will sign.
    #[serde(default)]
    pub infected: bool,
    #[serde(default)]
    pub consent: bool,
    /// Slot at which to file a positive report. Infected, consenting agents
    /// without one report in the last slot.
    #[serde(default)]
    pub report_slot: Option<u64>,
    #[serde(default)]
    pub radio: RadioBehavior,
}

impl AgentSpec {
    pub fn at(x: f64, y: f64) -> Self {
        AgentSpec {
            position: Point::new(x, y),
            mobility: Mobility::Stationary,
            infected: false,
            consent: false,
            report_slot: None,
            radio: RadioBehavior::Honest,
        }
    }

    pub fn infected(mut self) -> Self {
        self.infected = true;
        self.consent = true;
        self
    }
}

fn tau_default() -> f64 {
    60.0
}
fn d_default() -> f64 {
    10.0
}
fn range_default() -> f64 {
    10.0
}
fn sigma_gps_default() -> f64 {
    5.0
}
fn sigma_bl_default() -> f64 {
    0.1
}
fn pitch_default() -> u32 {
    50
}
fn salt_rotation_default() -> u64 {
    5
}
fn salt_bits_default() -> u32 {
    128
}
fn rotation_default() -> u64 {
    15
}
fn retention_default() -> u64 {
    14
}
fn threshold_default() -> f64 {
    0.5
}
fn rsa_default() -> usize {
    1024
}
fn delta_move_default() -> f64 {
    1.0
}

/// Everything that determines a scenario. Identical configs give identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default = "tau_default")]
    pub tau: f64,
    pub duration_slots: u64,
    pub region: Rect,
    #[serde(default = "d_default")]
    pub d: f64,
    #[serde(default = "range_default")]
    pub ble_range: f64,
    #[serde(default = "sigma_gps_default")]
    pub sigma_gps: f64,
    #[serde(default = "sigma_bl_default")]
    pub sigma_bl: f64,
    /// Area side in units of one cell side (`2d`).
    #[serde(default = "pitch_default")]
    pub area_pitch_cells: u32,
    #[serde(default = "salt_rotation_default")]
    pub salt_rotation_slots: u64,
    #[serde(default = "salt_bits_default")]
    pub salt_bits: u32,
    #[serde(default = "rotation_default")]
    pub pseudonym_rotation_slots: u64,
    #[serde(default = "retention_default")]
    pub retention_days: u64,
    #[serde(default = "threshold_default")]
    pub alert_threshold: f64,
    #[serde(default)]
    pub partial_risk: PartialRisk,
    #[serde(default)]
    pub total_risk: TotalRisk,
    #[serde(default = "rsa_default")]
    pub rsa_bits: usize,
    #[serde(default)]
    pub envelope: EnvelopeKind,
    #[serde(default = "delta_move_default")]
    pub delta_move: f64,
    /// Lock lifetime in seconds; one slot when absent.
    #[serde(default)]
    pub t_lock: Option<f64>,
    #[serde(default)]
    pub obstacles: Vec<Segment>,
    #[serde(default)]
    pub sniffers: Vec<Point>,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
}

impl WorldConfig {
    /// Defaults for everything but the seed, length and region.
    pub fn new(seed: u64, duration_slots: u64, region: Rect) -> Self {
        WorldConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed,
            tau: tau_default(),
            duration_slots,
            region,
            d: d_default(),
            ble_range: range_default(),
            sigma_gps: sigma_gps_default(),
            sigma_bl: sigma_bl_default(),
            area_pitch_cells: pitch_default(),
            salt_rotation_slots: salt_rotation_default(),
            salt_bits: salt_bits_default(),
            pseudonym_rotation_slots: rotation_default(),
            retention_days: retention_default(),
            alert_threshold: threshold_default(),
            partial_risk: PartialRisk::default(),
            total_risk: TotalRisk::default(),
            rsa_bits: rsa_default(),
            envelope: EnvelopeKind::default(),
            delta_move: delta_move_default(),
            t_lock: None,
            obstacles: Vec::new(),
            sniffers: Vec::new(),
            agents: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: WorldConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// 512-bit signer keys and transparent envelopes. Not secure.
    pub fn insecure_fast_crypto(mut self) -> Self {
        self.rsa_bits = 512;
        self.envelope = EnvelopeKind::Transparent;
        self
    }

    pub fn slots_per_day(&self) -> u64 {
        (86_400.0 / self.tau).round().max(1.0) as u64
    }

    pub fn t_lock(&self) -> f64 {
        self.t_lock.unwrap_or(self.tau)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        let positive = [
            ("tau", self.tau),
            ("d", self.d),
            ("ble_range", self.ble_range),
            ("alert_threshold", self.alert_threshold),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("sigma_gps", self.sigma_gps), ("sigma_bl", self.sigma_bl)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.salt_rotation_slots == 0 || self.pseudonym_rotation_slots == 0 {
            return bad("rotation periods must be at least one slot".into());
        }
        if self.salt_bits > 128 {
            return bad(format!("salt_bits is at most 128, got {}", self.salt_bits));
        }
        if self.rsa_bits < 512 {
            return bad(format!("rsa_bits must be at least 512, got {}", self.rsa_bits));
        }
        let n = self.agents.len();
        for (i, a) in self.agents.iter().enumerate() {
            if !a.position.is_finite() {
                return bad(format!("agent {i} has a non-finite position"));
            }
            if let RadioBehavior::Amplified { targets, payload, .. } = &a.radio {
                let near = match payload {
                    ForgedPayload::SpoofNear { target, .. } => Some(*target),
                    _ => None,
                };
                if let Some(t) = targets.iter().copied().chain(near).find(|&t| t >= n) {
                    return bad(format!("agent {i} targets unknown agent {t}"));
                }
            }
        }
        crate::issuers::AreaGrid::new(
            self.region,
            self.area_pitch_cells,
            crate::geometry::LatticeConfig::new(self.d),
        )?;
        Ok(())
    }
}
