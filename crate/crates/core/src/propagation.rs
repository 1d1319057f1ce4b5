//! MBS → FSS path loss: 3GPP UMa LOS/NLOS base loss, per-link lognormal
//! shadowing and rain attenuation.
//!
//! The LOS flag is the geometric result of [`crate::geo::is_los`], never a
//! probability. Rain attenuation is a cubic fit in frequency whose four
//! coefficients are themselves cubics in rain rate (vertical polarization),
//! applied per kilometre of link length.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shortest 3D distance the UMa formulas are evaluated at, meters.
pub const MIN_DISTANCE_M: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("distance {0} m is below model validity (>= 10 m)")]
    BelowModelValidity(f64),
    #[error("frequency {0} GHz is outside the rain model validity range [10, 100] GHz")]
    RainModelValidity(f64),
    #[error("invalid path loss parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLossParams {
    pub frequency_ghz: f64,
    pub tx_height_m: f64,
    pub rx_height_m: f64,
    pub sigma_los_db: f64,
    pub sigma_nlos_db: f64,
    pub shadow_seed: u64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            frequency_ghz: 12.45,
            tx_height_m: 25.0,
            rx_height_m: 4.5,
            sigma_los_db: 4.0,
            sigma_nlos_db: 7.8,
            shadow_seed: 0,
        }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<(), PropagationError> {
        if !(0.5..=100.0).contains(&self.frequency_ghz) {
            return Err(PropagationError::InvalidParams(format!(
                "frequency {} GHz outside [0.5, 100]",
                self.frequency_ghz
            )));
        }
        if !(self.sigma_los_db >= 0.0) || !(self.sigma_nlos_db >= 0.0) {
            return Err(PropagationError::InvalidParams(
                "shadow fading sigmas must be >= 0".into(),
            ));
        }
        if !(self.tx_height_m > 0.0) || !(self.rx_height_m > 0.0) {
            return Err(PropagationError::InvalidParams("antenna heights must be > 0".into()));
        }
        Ok(())
    }

    fn sigma(&self, los: bool) -> f64 {
        if los {
            self.sigma_los_db
        } else {
            self.sigma_nlos_db
        }
    }
}

/// Path loss of one link, split into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationSample {
    pub los: bool,
    pub base_loss_db: f64,
    pub shadow_db: f64,
    pub rain_db: f64,
    pub total_db: f64,
}

/// UMa base loss. The LOS formula is the sub-breakpoint branch: with the
/// default heights the breakpoint sits beyond 11 km, outside any scenario.
pub fn base_path_loss(d3d_m: f64, los: bool, params: &PathLossParams) -> Result<f64, PropagationError> {
    if !(d3d_m >= MIN_DISTANCE_M) {
        return Err(PropagationError::BelowModelValidity(d3d_m));
    }
    let f_term = 20.0 * params.frequency_ghz.log10();
    let pl_los = 28.0 + 22.0 * d3d_m.log10() + f_term;
    if los {
        return Ok(pl_los);
    }
    let pl_nlos = 13.54 + 39.08 * d3d_m.log10() + f_term - 0.6 * (params.rx_height_m - 1.5);
    Ok(pl_los.max(pl_nlos))
}

/// Stable 64-bit identifier for a link, from a textual key (FNV-1a).
pub fn link_id(key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a keyed stream: independent of call order.
pub fn keyed_seed(seed: u64, key: u64) -> u64 {
    splitmix64(seed ^ splitmix64(key))
}

/// Zero-mean Gaussian shadowing, fixed per `(shadow_seed, link_id)`.
pub fn shadow_fading(link_id: u64, los: bool, params: &PathLossParams) -> f64 {
    let sigma = params.sigma(los);
    if sigma == 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(keyed_seed(params.shadow_seed, link_id));
    let z: f64 = StandardNormal.sample(&mut rng);
    sigma * z
}

/// Rain-rate dependent coefficients `(a, b, c, d)` of the frequency cubic.
pub fn rain_coefficients(rain_rate_mm_per_hr: f64) -> (f64, f64, f64, f64) {
    let x = rain_rate_mm_per_hr;
    let x2 = x * x;
    let x3 = x2 * x;
    let a = -5.520e-12 * x3 + 3.26e-9 * x2 - 1.21e-7 * x - 6e-6;
    let b = 8e-10 * x3 - 4.522e-7 * x2 - 3.03e-5 * x + 0.001;
    let c = -5.71e-9 * x3 + 6e-7 * x2 + 8.707e-3 * x - 0.018;
    let d = -1.073e-7 * x3 + 1.068e-4 * x2 - 0.0598e-3 * x + 0.0442;
    (a, b, c, d)
}

/// Rain specific attenuation in dB/km, clamped at zero.
pub fn rain_specific_attenuation(rain_rate_mm_per_hr: f64, frequency_ghz: f64) -> Result<f64, PropagationError> {
    if !(10.0..=100.0).contains(&frequency_ghz) {
        return Err(PropagationError::RainModelValidity(frequency_ghz));
    }
    if !(rain_rate_mm_per_hr >= 0.0) {
        return Err(PropagationError::InvalidParams(format!(
            "rain rate {rain_rate_mm_per_hr} mm/h must be >= 0"
        )));
    }
    // The cubic's constant terms leave a small residue at x = 0 (positive
    // between roughly 14 and 30 GHz); no rain means no rain loss.
    if rain_rate_mm_per_hr == 0.0 {
        return Ok(0.0);
    }
    let (a, b, c, d) = rain_coefficients(rain_rate_mm_per_hr);
    let f = frequency_ghz;
    let raw = ((a * f + b) * f + c) * f + d;
    Ok(raw.max(0.0))
}

/// Total loss of one link under the given rain rate.
pub fn path_loss(
    d3d_m: f64,
    link_id: u64,
    los: bool,
    rain_rate_mm_per_hr: f64,
    params: &PathLossParams,
) -> Result<PropagationSample, PropagationError> {
    let base = base_path_loss(d3d_m, los, params)?;
    let shadow = shadow_fading(link_id, los, params);
    let rain = if rain_rate_mm_per_hr == 0.0 {
        0.0
    } else {
        rain_specific_attenuation(rain_rate_mm_per_hr, params.frequency_ghz)? * (d3d_m / 1000.0)
    };
    Ok(PropagationSample {
        los,
        base_loss_db: base,
        shadow_db: shadow,
        rain_db: rain,
        total_db: base + shadow + rain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn no_shadow() -> PathLossParams {
        PathLossParams {
            sigma_los_db: 0.0,
            sigma_nlos_db: 0.0,
            ..Default::default()
        }
    }

    /// Term-by-term evaluation of the published cubics, kept separate from
    /// the Horner form used in the implementation.
    fn rain_oracle(x: f64, f: f64) -> f64 {
        let a = -5.520e-12 * x.powi(3) + 3.26e-9 * x.powi(2) - 1.21e-7 * x - 6e-6;
        let b = 8e-10 * x.powi(3) - 4.522e-7 * x.powi(2) - 3.03e-5 * x + 0.001;
        let c = -5.71e-9 * x.powi(3) + 6e-7 * x.powi(2) + 8.707e-3 * x - 0.018;
        let d = -1.073e-7 * x.powi(3) + 1.068e-4 * x.powi(2) - 0.0598e-3 * x + 0.0442;
        a * f.powi(3) + b * f.powi(2) + c * f + d
    }

    #[test]
    fn uma_reference_values() {
        let p = PathLossParams::default();
        assert_abs_diff_eq!(
            base_path_loss(1000.0, true, &p).unwrap(),
            115.903_387_03,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            base_path_loss(1000.0, false, &p).unwrap(),
            150.883_387_03,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            base_path_loss(2000.0, true, &p).unwrap(),
            122.526_046_93,
            epsilon = 1e-6
        );
    }

    #[test]
    fn nlos_never_below_los() {
        // A tall receiver pulls the NLOS branch under LOS at short range;
        // the max clause must then return the LOS value.
        let p = PathLossParams {
            rx_height_m: 20.0,
            ..Default::default()
        };
        let los = base_path_loss(10.0, true, &p).unwrap();
        let nlos = base_path_loss(10.0, false, &p).unwrap();
        assert_eq!(los, nlos);
        assert_abs_diff_eq!(los, 71.903_387_03, epsilon = 1e-6);
    }

    #[test]
    fn below_validity() {
        let p = PathLossParams::default();
        assert_eq!(
            base_path_loss(9.99, true, &p),
            Err(PropagationError::BelowModelValidity(9.99))
        );
        assert!(base_path_loss(f64::NAN, true, &p).is_err());
    }

    #[test]
    fn rain_reference_values() {
        let zero = rain_specific_attenuation(0.0, 12.45).unwrap();
        assert_eq!(zero, 0.0);
        assert_abs_diff_eq!(rain_oracle(0.0, 12.45), -0.036_476_19, epsilon = 1e-8);

        let ten = rain_specific_attenuation(10.0, 12.45).unwrap();
        assert_abs_diff_eq!(ten, 1.002_628_376, epsilon = 1e-8);
        assert_abs_diff_eq!(ten, rain_oracle(10.0, 12.45), epsilon = 1e-12);

        let twenty = rain_specific_attenuation(20.0, 12.45).unwrap();
        assert!(twenty > ten);
    }

    #[test]
    fn rain_frequency_validity() {
        assert_eq!(
            rain_specific_attenuation(5.0, 9.9),
            Err(PropagationError::RainModelValidity(9.9))
        );
        assert!(rain_specific_attenuation(5.0, 100.1).is_err());
        assert!(rain_specific_attenuation(-1.0, 12.0).is_err());
    }

    #[test]
    fn rain_zero_everywhere_in_band() {
        for i in 0..=180 {
            let f = 10.0 + 0.5 * f64::from(i);
            assert_eq!(rain_specific_attenuation(0.0, f).unwrap(), 0.0, "f = {f}");
        }
    }

    #[test]
    fn path_loss_with_rain() {
        let p = no_shadow();
        let s = path_loss(2000.0, 7, true, 10.0, &p).unwrap();
        assert_abs_diff_eq!(s.total_db, 124.531_303_69, epsilon = 1e-6);
        assert_eq!(s.total_db, s.base_loss_db + s.shadow_db + s.rain_db);
    }

    #[test]
    fn dry_path_loss_is_base_plus_shadow() {
        let p = PathLossParams {
            shadow_seed: 3,
            ..Default::default()
        };
        let s = path_loss(1500.0, 11, false, 0.0, &p).unwrap();
        assert_eq!(s.rain_db, 0.0);
        assert_eq!(
            s.total_db,
            base_path_loss(1500.0, false, &p).unwrap() + shadow_fading(11, false, &p)
        );
    }

    #[test]
    fn shadow_is_deterministic_and_zero_without_sigma() {
        let p = PathLossParams {
            shadow_seed: 42,
            ..Default::default()
        };
        assert_eq!(shadow_fading(99, true, &p), shadow_fading(99, true, &p));
        assert_ne!(shadow_fading(99, true, &p), shadow_fading(100, true, &p));
        assert_eq!(shadow_fading(99, true, &no_shadow()), 0.0);
        assert_eq!(shadow_fading(99, false, &no_shadow()), 0.0);
    }

    #[test]
    fn shadow_statistics() {
        let p = PathLossParams {
            shadow_seed: 2024,
            ..Default::default()
        };
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|i| shadow_fading(i, false, &p)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 0.25, "mean {mean}");
        assert!((var.sqrt() - 7.8).abs() <= 0.05 * 7.8, "sigma {}", var.sqrt());
    }

    #[test]
    fn link_ids_are_stable() {
        assert_eq!(link_id(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(link_id("a"), 0xaf63_dc4c_8601_ec8c);
    }

    proptest! {
        #[test]
        fn base_loss_increases_with_distance(d in 10.0f64..5000.0, step in 0.01f64..1000.0, los: bool) {
            let p = PathLossParams::default();
            prop_assert!(base_path_loss(d + step, los, &p).unwrap() > base_path_loss(d, los, &p).unwrap());
        }

        #[test]
        fn nlos_dominates_los(d in 10.0f64..5000.0, rx in 1.5f64..30.0) {
            let p = PathLossParams { rx_height_m: rx, ..no_shadow() };
            let los = path_loss(d, 1, true, 0.0, &p).unwrap().total_db;
            let nlos = path_loss(d, 1, false, 0.0, &p).unwrap().total_db;
            prop_assert!(nlos >= los);
        }

        #[test]
        fn rain_only_adds_loss(d in 10.0f64..5000.0, x in 0.0f64..150.0, los: bool) {
            let p = no_shadow();
            let dry = path_loss(d, 5, los, 0.0, &p).unwrap().total_db;
            let wet = path_loss(d, 5, los, x, &p).unwrap().total_db;
            prop_assert!(wet >= dry);
        }

        #[test]
        fn rain_matches_oracle(x in 0.0f64..150.0, f in 10.0f64..100.0) {
            let got = rain_specific_attenuation(x, f).unwrap();
            let want = rain_oracle(x, f).max(0.0);
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }
}
