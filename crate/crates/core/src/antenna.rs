//! Antenna gain patterns: the steered MBS beam and the FSS dish.
//!
//! The MBS array uses a parabolic (quadratic in dB) main lobe capped by a
//! sidelobe floor, plus one extra floor of attenuation toward directions
//! outside the serving sector. The dish follows the 29 − 25·log10(φ)
//! off-axis envelope with a back-lobe floor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{azimuth_difference, Direction, EnuPoint};

/// Angular width of one MBS sector.
pub const SECTOR_WIDTH_DEG: f64 = 120.0;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid antenna parameters: {0}")]
pub struct AntennaError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MbsAntennaParams {
    pub peak_gain_dbi: f64,
    pub theta_3db_deg: f64,
    pub phi_3db_deg: f64,
    pub sidelobe_floor_db: f64,
}

impl Default for MbsAntennaParams {
    fn default() -> Self {
        Self {
            peak_gain_dbi: 26.0,
            theta_3db_deg: 10.0,
            phi_3db_deg: 10.0,
            sidelobe_floor_db: 30.0,
        }
    }
}

impl MbsAntennaParams {
    pub fn validate(&self) -> Result<(), AntennaError> {
        if !(self.peak_gain_dbi > 0.0) {
            return Err(AntennaError("MBS peak gain must be > 0".into()));
        }
        if !(self.theta_3db_deg > 0.0) || !(self.phi_3db_deg > 0.0) {
            return Err(AntennaError("MBS 3 dB beamwidths must be > 0".into()));
        }
        if !(self.sidelobe_floor_db > 0.0) {
            return Err(AntennaError("MBS sidelobe floor must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FssAntennaParams {
    pub boresight_gain_dbi: f64,
    pub boresight_azimuth_deg: f64,
    pub boresight_elevation_deg: f64,
    pub near_in_deg: f64,
    pub far_out_deg: f64,
    pub backlobe_dbi: f64,
}

impl Default for FssAntennaParams {
    fn default() -> Self {
        Self {
            boresight_gain_dbi: 33.8,
            boresight_azimuth_deg: 180.0,
            boresight_elevation_deg: 40.0,
            near_in_deg: 1.0,
            far_out_deg: 48.0,
            backlobe_dbi: -10.0,
        }
    }
}

impl FssAntennaParams {
    pub fn boresight(&self) -> Direction {
        Direction::new(self.boresight_azimuth_deg, self.boresight_elevation_deg)
    }

    pub fn validate(&self) -> Result<(), AntennaError> {
        if !(self.near_in_deg > 0.0 && self.near_in_deg < self.far_out_deg && self.far_out_deg <= 180.0) {
            return Err(AntennaError("FSS pattern needs 0 < near_in < far_out <= 180".into()));
        }
        let envelope_at_near_in = 29.0 - 25.0 * self.near_in_deg.log10();
        if !(self.boresight_gain_dbi > envelope_at_near_in) {
            return Err(AntennaError(format!(
                "FSS boresight gain {} dBi must exceed the envelope value {envelope_at_near_in:.3} dBi at near_in",
                self.boresight_gain_dbi
            )));
        }
        if !(-90.0..=90.0).contains(&self.boresight_elevation_deg) {
            return Err(AntennaError("FSS boresight elevation outside [-90, 90]".into()));
        }
        Ok(())
    }
}

/// One transmit beam of an MBS, steered at a UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub mbs_id: String,
    pub sector_index: u8,
    pub ue_index: u32,
    /// Center azimuth of the serving sector.
    pub sector_azimuth_deg: f64,
    pub steering: Direction,
    /// Position of the served UE in the scenario frame.
    pub ue_position: EnuPoint,
}

impl Beam {
    pub fn in_sector(&self, azimuth_deg: f64) -> bool {
        azimuth_difference(self.sector_azimuth_deg, azimuth_deg).abs() <= SECTOR_WIDTH_DEG / 2.0
    }
}

/// Gain of `beam` toward `target`, dBi.
pub fn mbs_beam_gain(beam: &Beam, target: Direction, params: &MbsAntennaParams) -> f64 {
    let d_az = azimuth_difference(beam.steering.azimuth_deg, target.azimuth_deg);
    let d_el = target.elevation_deg - beam.steering.elevation_deg;
    let attenuation = (12.0 * (d_az / params.theta_3db_deg).powi(2) + 12.0 * (d_el / params.phi_3db_deg).powi(2))
        .min(params.sidelobe_floor_db);
    let sector_loss = if beam.in_sector(target.azimuth_deg) {
        0.0
    } else {
        params.sidelobe_floor_db
    };
    params.peak_gain_dbi - attenuation - sector_loss
}

/// Receive gain of the dish for a signal arriving from `target`, dBi.
pub fn fss_gain(target: Direction, params: &FssAntennaParams) -> f64 {
    let phi = params.boresight().separation_deg(&target);
    fss_gain_at_offset(phi, params)
}

/// Dish gain at off-axis angle `phi_deg`.
///
/// The back-lobe level also floors the envelope between `near_in` and
/// `far_out`, which keeps the pattern non-increasing across `far_out`.
pub fn fss_gain_at_offset(phi_deg: f64, params: &FssAntennaParams) -> f64 {
    if phi_deg < params.near_in_deg {
        params.boresight_gain_dbi
    } else if phi_deg <= params.far_out_deg {
        (29.0 - 25.0 * phi_deg.log10()).max(params.backlobe_dbi)
    } else {
        params.backlobe_dbi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn beam(sector_az: f64, steer_az: f64, steer_el: f64) -> Beam {
        Beam {
            mbs_id: "m".into(),
            sector_index: 0,
            ue_index: 0,
            sector_azimuth_deg: sector_az,
            steering: Direction::new(steer_az, steer_el),
            ue_position: EnuPoint::default(),
        }
    }

    #[test]
    fn mbs_gain_reference_points() {
        let p = MbsAntennaParams::default();
        let b = beam(0.0, 10.0, -5.0);
        assert_eq!(mbs_beam_gain(&b, Direction::new(10.0, -5.0), &p), 26.0);
        assert_abs_diff_eq!(mbs_beam_gain(&b, Direction::new(20.0, -5.0), &p), 14.0, epsilon = 1e-12);
        // 90° off, outside the sector: floor + sector attenuation
        let b = beam(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(mbs_beam_gain(&b, Direction::new(90.0, 0.0), &p), -34.0, epsilon = 1e-12);
        // Wraps through north
        let b = beam(0.0, 355.0, 0.0);
        assert_abs_diff_eq!(mbs_beam_gain(&b, Direction::new(5.0, 0.0), &p), 14.0, epsilon = 1e-12);
    }

    #[test]
    fn fss_gain_reference_points() {
        let p = FssAntennaParams::default();
        assert_eq!(fss_gain(p.boresight(), &p), 33.8);
        assert_abs_diff_eq!(fss_gain_at_offset(10.0, &p), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fss_gain(Direction::new(180.0, 30.0), &p), 4.0, epsilon = 1e-9);
        assert_eq!(fss_gain_at_offset(60.0, &p), -10.0);
    }

    #[test]
    fn fss_validation() {
        let mut p = FssAntennaParams::default();
        assert!(p.validate().is_ok());
        p.boresight_gain_dbi = 29.0;
        assert!(p.validate().is_err());
        let p = FssAntennaParams {
            near_in_deg: 50.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn mbs_validation() {
        assert!(MbsAntennaParams::default().validate().is_ok());
        let p = MbsAntennaParams {
            theta_3db_deg: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn mbs_gain_bounds(sector in 0.0f64..360.0, off in -60.0f64..60.0, steer_el in -30.0f64..0.0,
                           az in 0.0f64..360.0, el in -90.0f64..90.0) {
            let p = MbsAntennaParams::default();
            let b = beam(sector, sector + off, steer_el);
            let g = mbs_beam_gain(&b, Direction::new(az, el), &p);
            prop_assert!(g <= p.peak_gain_dbi);
            prop_assert!(g >= p.peak_gain_dbi - 2.0 * p.sidelobe_floor_db);
            if g == p.peak_gain_dbi {
                prop_assert!(azimuth_difference(b.steering.azimuth_deg, az).abs() < 1e-9);
                prop_assert!((el - steer_el).abs() < 1e-9);
            }
        }

        #[test]
        fn fss_envelope_non_increasing(a in 0.0f64..180.0, b in 0.0f64..180.0) {
            let p = FssAntennaParams::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(fss_gain_at_offset(hi, &p) <= fss_gain_at_offset(lo, &p));
        }

        #[test]
        fn gains_rotation_invariant(rot in 0.0f64..360.0, sector in 0.0f64..360.0, off in -60.0f64..60.0,
                                    az in 0.0f64..360.0, el in -80.0f64..80.0) {
            let mp = MbsAntennaParams::default();
            let b0 = beam(sector, sector + off, -5.0);
            let b1 = beam(sector + rot, sector + off + rot, -5.0);
            let g0 = mbs_beam_gain(&b0, Direction::new(az, el), &mp);
            let g1 = mbs_beam_gain(&b1, Direction::new(az + rot, el), &mp);
            prop_assert!((g0 - g1).abs() < 1e-6);

            let fp = FssAntennaParams::default();
            let fr = FssAntennaParams { boresight_azimuth_deg: fp.boresight_azimuth_deg + rot, ..fp.clone() };
            let f0 = fss_gain(Direction::new(az, el), &fp);
            let f1 = fss_gain(Direction::new(az + rot, el), &fr);
            prop_assert!((f0 - f1).abs() < 1e-6);
        }
    }
}
