//! Direct air-to-ground (DA2G) propagation model and per-step radio
//! measurements.
//!
//! The closed-form pieces (LOS probability, path loss, shadow-fading sigma,
//! dB arithmetic) are scalar-generic kernels. The measurement operations
//! bind them to a [`ChannelParams`] and are pure functions of their inputs:
//! shadow fading and LOS state are frozen per (grid cell, base station) via
//! a seeded hash, so a location always measures identically within a
//! scenario.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// 3D position in metres.
pub type Pos3 = [f64; 3];

/// Altitude above which a LOS link is assumed unconditionally.
pub const LOS_CERTAIN_ALTITUDE_M: f64 = 100.0;

/// A fixed ground base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasestationSite {
    pub id: u32,
    /// Antenna position in metres (x, y, height).
    pub position: Pos3,
    /// Transmit power in dBm.
    pub tx_power: f64,
    /// Antenna gain in dBi.
    pub antenna_gain: f64,
    /// Carrier frequency in GHz.
    pub carrier_freq: f64,
}

impl BasestationSite {
    pub fn validate(&self) -> Result<()> {
        if !self.tx_power.is_finite() {
            return Err(Error::config(format!("bs {}: tx_power must be finite", self.id)));
        }
        if !(self.carrier_freq > 0.0) {
            return Err(Error::config(format!("bs {}: carrier_freq must be > 0", self.id)));
        }
        Ok(())
    }
}

/// How an altitude-dependent LOS parameter is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamMode {
    /// Resolve from UAV altitude (TR 36.777 convention).
    Auto,
    /// Fixed value in metres.
    Fixed(f64),
}

/// Channel-level parameters shared by all links of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// LOS breakpoint distance d1 (metres).
    pub d1_mode: ParamMode,
    /// LOS decay parameter p1 (metres).
    pub p1_mode: ParamMode,
    /// Noise power N0 in dBm.
    pub noise_power: f64,
    /// UAV antenna gain in dBi.
    pub uav_antenna_gain: f64,
    /// UAV transmit power in dBm (uplink).
    pub uav_tx_power: f64,
    /// Quantization step for freezing shadowing/LOS draws (metres).
    pub shadowing_grid_resolution: f64,
    /// Seed for the frozen shadowing/LOS field.
    pub seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            d1_mode: ParamMode::Auto,
            p1_mode: ParamMode::Auto,
            noise_power: -90.0,
            uav_antenna_gain: 0.0,
            uav_tx_power: 23.0,
            shadowing_grid_resolution: 100.0,
            seed: 0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !self.noise_power.is_finite() {
            return Err(Error::config("noise_power must be finite"));
        }
        if !(self.shadowing_grid_resolution > 0.0) {
            return Err(Error::config("shadowing_grid_resolution must be > 0"));
        }
        Ok(())
    }

    /// Resolve (d1, p1) for a given altitude. Both are clamped positive, so
    /// the pair is usable at any altitude covered by the model.
    pub fn resolve_d1_p1(&self, h: f64) -> (f64, f64) {
        let d1 = match self.d1_mode {
            ParamMode::Fixed(v) => v,
            ParamMode::Auto => (460.0 * h.log10() - 700.0).max(18.0),
        };
        let p1 = match self.p1_mode {
            ParamMode::Fixed(v) => v,
            ParamMode::Auto => (4300.0 * h.log10() - 3800.0).max(1.0),
        };
        (d1, p1)
    }

    /// Grid cell used to freeze shadowing and LOS draws for a position.
    pub fn cell_of(&self, pos: Pos3) -> GridCell {
        let res = self.shadowing_grid_resolution;
        GridCell {
            ix: (pos[0] / res).floor() as i64,
            iy: (pos[1] / res).floor() as i64,
        }
    }

    /// Centre of a frozen-field grid cell, at the given altitude.
    pub fn cell_center(&self, cell: GridCell, h: f64) -> Pos3 {
        let res = self.shadowing_grid_resolution;
        [(cell.ix as f64 + 0.5) * res, (cell.iy as f64 + 0.5) * res, h]
    }
}

/// Index of a quantized shadowing/LOS grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridCell {
    pub ix: i64,
    pub iy: i64,
}

/// One radio measurement from a single base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMeasurement {
    pub bs_id: u32,
    /// Reference signal received power, dBm.
    pub rsrp: f64,
    /// Reference signal received quality, dB.
    pub rsrq: f64,
    pub is_los: bool,
    /// Effective loss (path loss plus shadow fading), dB.
    pub path_loss: f64,
}

// ---------------------------------------------------------------------------
// Closed-form kernels (scalar-generic)
// ---------------------------------------------------------------------------

/// LOS probability between a UAV and a base station.
///
/// Returns 1 when `d_2d <= d1` or the altitude exceeds 100 m; otherwise the
/// decaying form `d1/d + exp(-(d - d1)/p1) * (1 - d1/d)`, clamped to [0, 1].
pub fn los_probability<F: Real>(d_2d: F, h: F, d1: F, p1: F) -> Result<F> {
    if !(d_2d.is_finite() && h.is_finite() && d1.is_finite() && p1.is_finite()) {
        return Err(Error::invalid("los_probability: non-finite input"));
    }
    if d_2d < F::zero() || h <= F::zero() || d1 <= F::zero() || p1 <= F::zero() {
        return Err(Error::invalid("los_probability: d_2d >= 0, h > 0, d1 > 0, p1 > 0 required"));
    }
    if h > F::of(LOS_CERTAIN_ALTITUDE_M) || d_2d <= d1 {
        return Ok(F::one());
    }
    let ratio = d1 / d_2d;
    let p = ratio + (-(d_2d - d1) / p1).exp() * (F::one() - ratio);
    Ok(p.max(F::zero()).min(F::one()))
}

/// Path loss in dB for a LOS or NLOS link.
pub fn path_loss<F: Real>(d_3d: F, h: F, f_c_ghz: F, los: bool) -> Result<F> {
    if !(d_3d.is_finite() && h.is_finite() && f_c_ghz.is_finite()) {
        return Err(Error::invalid("path_loss: non-finite input"));
    }
    if !(d_3d > F::zero()) || !(h > F::zero()) || !(f_c_ghz > F::zero()) {
        return Err(Error::invalid("path_loss: d_3d > 0, h > 0, f_c > 0 required"));
    }
    let freq_term = F::of(20.0) * f_c_ghz.log10();
    let pl = if los {
        F::of(28.0) + F::of(22.0) * d_3d.log10() + freq_term
    } else {
        F::of(15.0) + (F::of(46.0) - F::of(7.0) * h.log10()) * d_3d.log10() + freq_term
    };
    Ok(pl)
}

/// Shadow-fading standard deviation in dB.
pub fn shadow_sigma<F: Real>(h: F, los: bool) -> F {
    if los {
        F::of(4.64) * (F::of(-0.00066) * h).exp()
    } else {
        F::of(6.0)
    }
}

/// dBm (or dB) to linear milliwatts (or ratio).
pub fn dbm_to_mw<F: Real>(dbm: F) -> F {
    F::of(10.0).powf(dbm / F::of(10.0))
}

/// Linear milliwatts (or ratio) to dBm (or dB).
pub fn mw_to_dbm<F: Real>(mw: F) -> F {
    F::of(10.0) * mw.log10()
}

/// RSRQ in dB from an RSRP measurement and interference-plus-noise power.
pub fn rsrq_db<F: Real>(rsrp_dbm: F, interference_mw: F, noise_mw: F) -> F {
    mw_to_dbm(dbm_to_mw(rsrp_dbm) / (interference_mw + noise_mw))
}

// ---------------------------------------------------------------------------
// Frozen randomness
// ---------------------------------------------------------------------------

const TAG_SHADOW: u64 = 0x5348_4144;
const TAG_LOS: u64 = 0x4c4f_5344;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn field_hash(seed: u64, tag: u64, cell: GridCell, bs_id: u32, extra: u64) -> u64 {
    let mut x = splitmix64(seed ^ tag);
    x = splitmix64(x ^ cell.ix as u64);
    x = splitmix64(x ^ cell.iy as u64);
    x = splitmix64(x ^ bs_id as u64);
    splitmix64(x ^ extra)
}

// ---------------------------------------------------------------------------
// Measurement operations (f64 lane)
// ---------------------------------------------------------------------------

fn dist_2d(a: Pos3, b: Pos3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn dist_3d(a: Pos3, b: Pos3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Frozen Bernoulli LOS draw for the cell containing `uav_pos`.
///
/// The LOS probability is evaluated at the cell centre, so every position
/// inside one cell sees the same LOS state for a given base station.
pub fn los_draw(uav_pos: Pos3, bs: &BasestationSite, params: &ChannelParams) -> Result<bool> {
    let h = uav_pos[2];
    let cell = params.cell_of(uav_pos);
    let center = params.cell_center(cell, h);
    let (d1, p1) = params.resolve_d1_p1(h);
    let p = los_probability(dist_2d(center, bs.position), h, d1, p1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(field_hash(params.seed, TAG_LOS, cell, bs.id, 0));
    Ok(rng.gen::<f64>() < p)
}

/// Frozen zero-mean Gaussian shadow-fading draw in dB for (cell, bs).
pub fn shadow_fading(
    cell: GridCell,
    bs_id: u32,
    h: f64,
    los: bool,
    params: &ChannelParams,
) -> f64 {
    let sigma = shadow_sigma(h, los);
    let mut rng =
        ChaCha8Rng::seed_from_u64(field_hash(params.seed, TAG_SHADOW, cell, bs_id, los as u64));
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

/// Effective downlink/uplink loss in dB: path loss plus frozen shadow fading.
///
/// The same loss applies in both directions (channel reciprocity); frozen
/// LOS state and shadowing come from the cell containing `uav_pos`.
pub fn effective_loss(uav_pos: Pos3, bs: &BasestationSite, params: &ChannelParams) -> Result<f64> {
    let h = uav_pos[2];
    let cell = params.cell_of(uav_pos);
    let los = los_draw(uav_pos, bs, params)?;
    let pl = path_loss(dist_3d(uav_pos, bs.position), h, bs.carrier_freq, los)?;
    Ok(pl + shadow_fading(cell, bs.id, h, los, params))
}

/// RSRP in dBm at the UAV from one base station.
pub fn rsrp(uav_pos: Pos3, bs: &BasestationSite, params: &ChannelParams) -> Result<f64> {
    let loss = effective_loss(uav_pos, bs, params)?;
    Ok(bs.tx_power + params.uav_antenna_gain + bs.antenna_gain - loss)
}

/// Total downlink interference in linear mW from every base station other
/// than the serving one.
pub fn interference(
    uav_pos: Pos3,
    serving_bs_id: u32,
    all_bs: &[BasestationSite],
    params: &ChannelParams,
) -> Result<f64> {
    if !all_bs.iter().any(|b| b.id == serving_bs_id) {
        return Err(Error::NotFound(format!("serving bs {serving_bs_id} not in site list")));
    }
    let mut total = 0.0;
    for bs in all_bs.iter().filter(|b| b.id != serving_bs_id) {
        total += dbm_to_mw(rsrp(uav_pos, bs, params)?);
    }
    Ok(total)
}

/// RSRQ in dB given a serving RSRP and the co-channel interference.
pub fn rsrq(rsrp_dbm: f64, interference_mw: f64, params: &ChannelParams) -> f64 {
    rsrq_db(rsrp_dbm, interference_mw, dbm_to_mw(params.noise_power))
}

/// Uplink SINR (linear ratio) at the serving BS.
///
/// UAVs transmit over orthogonal resource blocks, so there is no co-channel
/// uplink interference: the ratio is received power over noise.
pub fn uplink_sinr(uav_pos: Pos3, serving_bs: &BasestationSite, params: &ChannelParams) -> Result<f64> {
    let loss = effective_loss(uav_pos, serving_bs, params)?;
    let rx_dbm = params.uav_tx_power + params.uav_antenna_gain + serving_bs.antenna_gain - loss;
    Ok(dbm_to_mw(rx_dbm) / dbm_to_mw(params.noise_power))
}

/// Full measurement of one link, including RSRQ against all other sites.
pub fn measure_link(
    uav_pos: Pos3,
    bs: &BasestationSite,
    all_bs: &[BasestationSite],
    params: &ChannelParams,
) -> Result<LinkMeasurement> {
    let los = los_draw(uav_pos, bs, params)?;
    let loss = effective_loss(uav_pos, bs, params)?;
    let rsrp_dbm = bs.tx_power + params.uav_antenna_gain + bs.antenna_gain - loss;
    let interf = interference(uav_pos, bs.id, all_bs, params)?;
    Ok(LinkMeasurement {
        bs_id: bs.id,
        rsrp: rsrp_dbm,
        rsrq: rsrq(rsrp_dbm, interf, params),
        is_los: los,
        path_loss: loss,
    })
}
