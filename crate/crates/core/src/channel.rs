//! Block-fading link model: large-scale loss and the Shannon rate of a link.
//!
//! Pathloss follows the urban-macro non-line-of-sight closed form
//!
//! ```text
//! PL(d) = 13.54 + 39.08·log10(d_3D) + 20·log10(f_GHz) − 0.6·(h_rx − 1.5)   [dB]
//! ```
//!
//! with `d_3D = sqrt(d² + (h_tx − h_rx)²)`. Both antenna heights default to
//! 1.5 m (vehicle-mounted), which makes `d_3D = d`. Shadowing is a zero-mean
//! Gaussian in dB drawn independently per link and per block.
//!
//! Received power is `P_tx[dBm] − loss[dB]`, converted to watts for the SNR.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{LinkId, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    Distance(f64),
    #[error("bandwidth must be positive, got {0} Hz")]
    Bandwidth(f64),
    #[error("carrier frequency must be positive, got {0} GHz")]
    Frequency(f64),
    #[error("shadowing sigma must be nonnegative, got {0} dB")]
    Sigma(f64),
    #[error("power must be nonnegative and finite, got {0} W")]
    Power(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthPolicy {
    /// Each transmitter gets `total / relays_per_layer`.
    PerRelayEqualSplit,
    /// Each transmitter reuses the whole band.
    FullReuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub carrier_ghz: f64,
    pub noise_psd_dbm_hz: f64,
    pub total_bandwidth_hz: f64,
    pub bandwidth_policy: BandwidthPolicy,
    pub shadowing_sigma_db: f64,
    pub tx_height_m: f64,
    pub rx_height_m: f64,
    /// Distance change applied to every link per block (0 = static geometry).
    pub displacement_m_per_block: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            carrier_ghz: 5.9,
            noise_psd_dbm_hz: -174.0,
            total_bandwidth_hz: 100e6,
            bandwidth_policy: BandwidthPolicy::PerRelayEqualSplit,
            shadowing_sigma_db: 7.82,
            tx_height_m: 1.5,
            rx_height_m: 1.5,
            displacement_m_per_block: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.carrier_ghz > 0.0 && self.carrier_ghz.is_finite()) {
            return Err(ChannelError::Frequency(self.carrier_ghz));
        }
        if !(self.total_bandwidth_hz > 0.0 && self.total_bandwidth_hz.is_finite()) {
            return Err(ChannelError::Bandwidth(self.total_bandwidth_hz));
        }
        if !(self.shadowing_sigma_db >= 0.0 && self.shadowing_sigma_db.is_finite()) {
            return Err(ChannelError::Sigma(self.shadowing_sigma_db));
        }
        Ok(())
    }

    /// Bandwidth available to one transmitter under the configured policy.
    pub fn link_bandwidth_hz(&self, topo: &Topology) -> f64 {
        match self.bandwidth_policy {
            BandwidthPolicy::PerRelayEqualSplit => self.total_bandwidth_hz / topo.relays_per_layer() as f64,
            BandwidthPolicy::FullReuse => self.total_bandwidth_hz,
        }
    }

    /// Noise power density in W/Hz.
    pub fn noise_psd_w_hz(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz)
    }
}

/// Channel realization of one link for one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub link: LinkId,
    pub block: usize,
    pub loss_db: f64,
    pub bandwidth_hz: f64,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Inverse of [`dbm_to_watts`]. Zero watts maps to negative infinity.
pub fn watts_to_dbm(watts: f64) -> Result<f64, ChannelError> {
    if !(watts >= 0.0 && watts.is_finite()) {
        return Err(ChannelError::Power(watts));
    }
    if watts == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * watts.log10() + 30.0)
}

pub fn pathloss_db(distance_m: f64, params: &ChannelParams) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return Err(ChannelError::Distance(distance_m));
    }
    if !(params.carrier_ghz > 0.0) {
        return Err(ChannelError::Frequency(params.carrier_ghz));
    }
    let dh = params.tx_height_m - params.rx_height_m;
    let d3d = (distance_m * distance_m + dh * dh).sqrt();
    Ok(13.54 + 39.08 * d3d.log10() + 20.0 * params.carrier_ghz.log10() - 0.6 * (params.rx_height_m - 1.5))
}

pub fn draw_shadowing<R: Rng + ?Sized>(rng: &mut R, sigma_db: f64) -> f64 {
    if sigma_db == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma_db).expect("sigma validated by caller").sample(rng)
}

/// Achievable rate in bits/s for a transmit power given in dBm.
pub fn link_rate(p_tx_dbm: f64, link: &LinkState, params: &ChannelParams) -> Result<f64, ChannelError> {
    let curve = RateCurve::new(link.bandwidth_hz, link.loss_db, params.noise_psd_dbm_hz)?;
    Ok(curve.rate(dbm_to_watts(p_tx_dbm)))
}

/// Draws every link's realization for one block, in flat link order.
pub fn draw_link_states<R: Rng + ?Sized>(
    topo: &Topology,
    params: &ChannelParams,
    block: usize,
    rng: &mut R,
) -> Result<Vec<LinkState>, ChannelError> {
    params.validate()?;
    let bandwidth_hz = params.link_bandwidth_hz(topo);
    topo.links()
        .into_iter()
        .enumerate()
        .map(|(i, link)| {
            let loss = pathloss_db(topo.distance_m(i), params)? + draw_shadowing(rng, params.shadowing_sigma_db);
            Ok(LinkState { link, block, loss_db: loss.max(0.0), bandwidth_hz })
        })
        .collect()
}

/// `D(P) = B·log2(1 + P·g / (B·N0))` as a function of transmit power in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub bandwidth_hz: f64,
    /// Linear channel gain `10^(−loss/10)`.
    pub gain: f64,
    /// Noise power over the link bandwidth, watts.
    pub noise_w: f64,
}

impl RateCurve {
    pub fn new(bandwidth_hz: f64, loss_db: f64, noise_psd_dbm_hz: f64) -> Result<RateCurve, ChannelError> {
        if !(bandwidth_hz > 0.0 && bandwidth_hz.is_finite()) {
            return Err(ChannelError::Bandwidth(bandwidth_hz));
        }
        Ok(RateCurve {
            bandwidth_hz,
            gain: 10f64.powf(-loss_db / 10.0),
            noise_w: bandwidth_hz * dbm_to_watts(noise_psd_dbm_hz),
        })
    }

    pub fn from_state(link: &LinkState, params: &ChannelParams) -> Result<RateCurve, ChannelError> {
        RateCurve::new(link.bandwidth_hz, link.loss_db, params.noise_psd_dbm_hz)
    }

    pub fn snr(&self, p_w: f64) -> f64 {
        p_w * self.gain / self.noise_w
    }

    pub fn rate(&self, p_w: f64) -> f64 {
        if p_w <= 0.0 {
            return 0.0;
        }
        self.bandwidth_hz * self.snr(p_w).ln_1p() / std::f64::consts::LN_2
    }

    /// Derivative of [`RateCurve::rate`] with respect to power.
    pub fn rate_slope(&self, p_w: f64) -> f64 {
        let g = self.gain / self.noise_w;
        self.bandwidth_hz * g / ((1.0 + g * p_w.max(0.0)) * std::f64::consts::LN_2)
    }

    /// Power needed to reach `rate_bps`.
    pub fn power_for_rate(&self, rate_bps: f64) -> f64 {
        if rate_bps <= 0.0 {
            return 0.0;
        }
        (rate_bps / self.bandwidth_hz * std::f64::consts::LN_2).exp_m1() * self.noise_w / self.gain
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Frozen from an independent evaluation of the closed forms.
    const PATHLOSS_50M_5P9GHZ_DB: f64 = 95.35278800229449;
    const RATE_50MHZ_23DBM_110DB_BPS: f64 = 173127123.66590565;
    const DBM23_W: f64 = 0.19952623149688797;

    #[test]
    fn pathloss_regression_and_monotonicity() {
        let p = ChannelParams::default();
        let pl50 = pathloss_db(50.0, &p).unwrap();
        assert!((pl50 - PATHLOSS_50M_5P9GHZ_DB).abs() < 1e-9);
        assert!(pathloss_db(100.0, &p).unwrap() > pl50);
        let low = ChannelParams { carrier_ghz: 2.0, ..p.clone() };
        assert!(pathloss_db(50.0, &low).unwrap() < pl50);
        assert!(pathloss_db(0.0, &p).is_err());
        assert!(pathloss_db(-1.0, &p).is_err());
    }

    #[test]
    fn unit_conversions() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(23.0) - DBM23_W).abs() < 1e-15);
        assert_eq!(format!("{:.4}", dbm_to_watts(23.0)), "0.1995");
        assert_eq!(watts_to_dbm(0.0).unwrap(), f64::NEG_INFINITY);
        assert!(watts_to_dbm(-1.0).is_err());
        assert!((watts_to_dbm(dbm_to_watts(17.3)).unwrap() - 17.3).abs() < 1e-12);
    }

    #[test]
    fn rate_regression() {
        let unit = RateCurve { bandwidth_hz: 1.0, gain: 1.0, noise_w: 1.0 };
        assert!((unit.rate(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(unit.rate(0.0), 0.0);

        let params = ChannelParams::default();
        let link = LinkState { link: LinkId { layer: 0, tx: 0, rx: 0 }, block: 0, loss_db: 110.0, bandwidth_hz: 50e6 };
        let d23 = link_rate(23.0, &link, &params).unwrap();
        assert!((d23 - RATE_50MHZ_23DBM_110DB_BPS).abs() / RATE_50MHZ_23DBM_110DB_BPS < 1e-12);
        assert!(d23 > link_rate(20.0, &link, &params).unwrap());
        assert_eq!(link_rate(f64::NEG_INFINITY, &link, &params).unwrap(), 0.0);
        let bad = LinkState { bandwidth_hz: 0.0, ..link };
        assert!(link_rate(23.0, &bad, &params).is_err());
    }

    #[test]
    fn rate_inverse_and_slope() {
        let c = RateCurve::new(50e6, 100.0, -174.0).unwrap();
        for p in [1e-6, 1e-3, 0.05, 0.2] {
            assert!((c.power_for_rate(c.rate(p)) - p).abs() / p < 1e-9);
            let h = p * 1e-6;
            let fd = (c.rate(p + h) - c.rate(p - h)) / (2.0 * h);
            assert!((fd - c.rate_slope(p)).abs() / fd < 1e-6);
        }
    }

    #[test]
    fn shadowing_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(draw_shadowing(&mut rng, 0.0), 0.0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| draw_shadowing(&mut rng, 7.82)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var.sqrt() - 7.82).abs() / 7.82 < 0.02, "std {}", var.sqrt());

        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(draw_shadowing(&mut a, 7.82), draw_shadowing(&mut b, 7.82));
        }
    }

    #[test]
    fn link_states_cover_every_link() {
        let topo = crate::topology::build_topology(2, &Default::default()).unwrap();
        let params = ChannelParams { shadowing_sigma_db: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let states = draw_link_states(&topo, &params, 4, &mut rng).unwrap();
        assert_eq!(states.len(), topo.num_links());
        for (s, id) in states.iter().zip(topo.links()) {
            assert_eq!(s.link, id);
            assert_eq!(s.block, 4);
            assert!((s.loss_db - PATHLOSS_50M_5P9GHZ_DB).abs() < 1e-9);
            assert_eq!(s.bandwidth_hz, 50e6);
        }
    }

    proptest! {
        #[test]
        fn rate_is_concave_and_increasing(
            loss in 60.0f64..140.0,
            p1 in 1e-9f64..0.1995,
            p2 in 1e-9f64..0.1995,
            theta in 0.0f64..=1.0,
        ) {
            let c = RateCurve::new(50e6, loss, -174.0).unwrap();
            let mid = c.rate(theta * p1 + (1.0 - theta) * p2);
            let chord = theta * c.rate(p1) + (1.0 - theta) * c.rate(p2);
            prop_assert!(mid >= chord - 1e-9 * mid.abs());
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            if hi > lo * (1.0 + 1e-9) {
                prop_assert!(c.rate(hi) > c.rate(lo));
            }
            prop_assert_eq!(c.rate(p1).to_bits(), c.rate(p1).to_bits());
        }
    }
}
