//! Rotorcraft power model and battery/charging arithmetic.
//!
//! Hover power is split into a blade-profile term and an induced term;
//! forward-flight power adds a parasite term and scales the other two with
//! airspeed. All powers are in watts, energies in kWh.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Joules per kilowatt-hour.
pub const J_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("aircraft parameter `{0}` must be strictly positive")]
    NonPositiveParam(&'static str),
    #[error("battery parameter `{0}` is out of range")]
    BadBattery(&'static str),
    #[error("airspeed must be non-negative, got {0}")]
    NegativeSpeed(f64),
}

/// Airframe constants used by every power computation.
///
/// The derived quantities (`weight`, `disc_area`, `solidity`, `tip_speed`,
/// `fuselage_drag_ratio`, `hover_induced_velocity`) are stored as given
/// rather than recomputed from the primary ones: the tabulated source values
/// do not all agree with their textbook formulas (`hover_induced_velocity`
/// would come out near 94.7 m/s and `tip_speed` near ΩR = 113.1 m/s), and the
/// power figures the model is meant to reproduce were evaluated with the
/// tabulated numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AircraftParams {
    /// Maximum packages carried at once.
    pub max_packages: usize,
    /// Cruise speed, m/s.
    pub cruise_speed: f64,
    /// Mass including battery and rotors, kg.
    pub mass: f64,
    /// Weight, N.
    pub weight: f64,
    /// Rotor radius, m.
    pub rotor_radius: f64,
    /// Rotor disc area, m².
    pub disc_area: f64,
    pub blade_count: u32,
    /// Rotor solidity (dimensionless).
    pub solidity: f64,
    /// Blade angular velocity, rad/s.
    pub blade_angular_velocity: f64,
    /// Blade tip speed, m/s.
    pub tip_speed: f64,
    /// Air density, kg/m³.
    pub air_density: f64,
    pub fuselage_drag_ratio: f64,
    /// Mean rotor-induced velocity in hover, m/s.
    pub hover_induced_velocity: f64,
    pub profile_drag_coeff: f64,
    /// Incremental correction factor to induced power.
    pub induced_power_factor: f64,
}

impl Default for AircraftParams {
    fn default() -> Self {
        Self {
            max_packages: 4,
            cruise_speed: 73.762,
            mass: 1815.0,
            weight: 17_799.0,
            rotor_radius: 1.45,
            disc_area: 6.61,
            blade_count: 5,
            solidity: 0.2449,
            blade_angular_velocity: 78.0,
            tip_speed: 112.776,
            air_density: 1.225,
            fuselage_drag_ratio: 0.01,
            hover_induced_velocity: 26.45,
            profile_drag_coeff: 0.045,
            induced_power_factor: 0.052,
        }
    }
}

impl AircraftParams {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.max_packages == 0 {
            return Err(EnergyError::NonPositiveParam("max_packages"));
        }
        if self.blade_count == 0 {
            return Err(EnergyError::NonPositiveParam("blade_count"));
        }
        let fields = [
            ("cruise_speed", self.cruise_speed),
            ("mass", self.mass),
            ("weight", self.weight),
            ("rotor_radius", self.rotor_radius),
            ("disc_area", self.disc_area),
            ("solidity", self.solidity),
            ("blade_angular_velocity", self.blade_angular_velocity),
            ("tip_speed", self.tip_speed),
            ("air_density", self.air_density),
            ("fuselage_drag_ratio", self.fuselage_drag_ratio),
            ("hover_induced_velocity", self.hover_induced_velocity),
            ("profile_drag_coeff", self.profile_drag_coeff),
            ("induced_power_factor", self.induced_power_factor),
        ];
        for (name, value) in fields {
            // `profile_drag_coeff = 0` is a legitimate what-if (no blade drag).
            let ok = if name == "profile_drag_coeff" {
                value >= 0.0 && value.is_finite()
            } else {
                value > 0.0 && value.is_finite()
            };
            if !ok {
                return Err(EnergyError::NonPositiveParam(name));
            }
        }
        Ok(())
    }
}

/// Power broken into its aerodynamic contributions, in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerTerms {
    pub blade_profile: f64,
    pub induced: f64,
    pub parasite: f64,
}

impl PowerTerms {
    pub fn total(&self) -> f64 {
        self.blade_profile + self.induced + self.parasite
    }
}

/// Blade-profile power in hover, `(C_d/8) ρ s A Ω³ R³`.
fn hover_blade_profile(p: &AircraftParams) -> f64 {
    p.profile_drag_coeff / 8.0
        * p.air_density
        * p.solidity
        * p.disc_area
        * p.blade_angular_velocity.powi(3)
        * p.rotor_radius.powi(3)
}

/// Induced power in hover, `(1+k) W^{3/2} / sqrt(2ρA)`.
fn hover_induced(p: &AircraftParams) -> f64 {
    (1.0 + p.induced_power_factor) * p.weight.powf(1.5) / (2.0 * p.air_density * p.disc_area).sqrt()
}

pub fn hover_terms(params: &AircraftParams) -> PowerTerms {
    PowerTerms {
        blade_profile: hover_blade_profile(params),
        induced: hover_induced(params),
        parasite: 0.0,
    }
}

/// Power drawn while hovering, W.
pub fn hover_power(params: &AircraftParams) -> f64 {
    hover_terms(params).total()
}

/// Forward-flight power terms at airspeed `speed` (m/s).
///
/// At `speed == 0` the induced and blade factors are exactly 1 and the
/// parasite term exactly 0, so the total equals [`hover_power`] bit for bit.
pub fn propulsion_terms(speed: f64, params: &AircraftParams) -> Result<PowerTerms, EnergyError> {
    if !(speed >= 0.0) {
        return Err(EnergyError::NegativeSpeed(speed));
    }
    let v0 = params.hover_induced_velocity;
    let ratio2 = speed * speed / (v0 * v0);
    // sqrt(1 + x²/4) >= x/2 for all x >= 0, so the outer root argument is
    // non-negative; clamp anyway against rounding at very high speeds.
    let inner = ((1.0 + ratio2 * ratio2 / 4.0).sqrt() - ratio2 / 2.0).max(0.0);
    let induced = hover_induced(params) * inner.sqrt();
    let blade_profile =
        hover_blade_profile(params) * (1.0 + 3.0 * speed * speed / (params.tip_speed * params.tip_speed));
    let parasite = 0.5
        * params.fuselage_drag_ratio
        * params.air_density
        * params.solidity
        * params.disc_area
        * speed.powi(3);
    Ok(PowerTerms {
        blade_profile,
        induced,
        parasite,
    })
}

/// Total forward-flight power at `speed`, W.
pub fn propulsion_power(speed: f64, params: &AircraftParams) -> Result<f64, EnergyError> {
    propulsion_terms(speed, params).map(|t| t.total())
}

/// Energy per metre flown at cruise speed, kWh/m.
pub fn kwh_per_meter(params: &AircraftParams) -> f64 {
    // cruise_speed > 0 after validation, so this cannot fail.
    let power = propulsion_power(params.cruise_speed, params).unwrap_or(f64::NAN);
    power / params.cruise_speed / J_PER_KWH
}

/// Energy (kWh) to fly `distance` metres at cruise speed.
pub fn energy_for_leg(distance: f64, params: &AircraftParams) -> f64 {
    if distance <= 0.0 {
        return 0.0;
    }
    let power = propulsion_power(params.cruise_speed, params).unwrap_or(f64::NAN);
    power * (distance / params.cruise_speed) / J_PER_KWH
}

/// Energy (kWh) to hover for `seconds`.
pub fn hover_energy(seconds: f64, params: &AircraftParams) -> f64 {
    hover_power(params) * seconds.max(0.0) / J_PER_KWH
}

/// Battery pack and charger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryModel {
    /// Pack capacity, kWh.
    pub capacity_kwh: f64,
    /// Largest charge delivered in one charging session, kWh.
    pub max_charge_per_journey_kwh: f64,
    /// Charger supply power, kW.
    pub charger_power_kw: f64,
    /// SOC the local planner keeps in hand for the flight home.
    pub reserve_fraction: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        Self {
            capacity_kwh: 150.0,
            max_charge_per_journey_kwh: 30.0,
            charger_power_kw: 360.0,
            reserve_fraction: 0.10,
        }
    }
}

impl BatteryModel {
    /// Small pack sized so a 1 km grid and a few hundred one-second steps
    /// drain a meaningful share of it. Keeps the 20 % per-session charge
    /// ratio and the full-size charger.
    pub fn desk_scale() -> Self {
        Self {
            capacity_kwh: 2.0,
            max_charge_per_journey_kwh: 0.4,
            charger_power_kw: 360.0,
            reserve_fraction: 0.10,
        }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.capacity_kwh > 0.0 && self.capacity_kwh.is_finite()) {
            return Err(EnergyError::BadBattery("capacity_kwh"));
        }
        if !(self.max_charge_per_journey_kwh > 0.0 && self.max_charge_per_journey_kwh <= self.capacity_kwh) {
            return Err(EnergyError::BadBattery("max_charge_per_journey_kwh"));
        }
        if !(self.charger_power_kw > 0.0 && self.charger_power_kw.is_finite()) {
            return Err(EnergyError::BadBattery("charger_power_kw"));
        }
        if !(0.0..=1.0).contains(&self.reserve_fraction) {
            return Err(EnergyError::BadBattery("reserve_fraction"));
        }
        Ok(())
    }

    /// Hours needed to deliver one full session charge.
    pub fn session_hours(&self) -> f64 {
        self.max_charge_per_journey_kwh / self.charger_power_kw
    }
}

/// State of charge as a fraction of capacity, always within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Soc(f64);

impl Soc {
    pub const FULL: Soc = Soc(1.0);
    pub const EMPTY: Soc = Soc(0.0);

    pub fn new(fraction: f64) -> Self {
        if fraction.is_nan() {
            return Soc(0.0);
        }
        Soc(fraction.clamp(0.0, 1.0))
    }

    pub fn fraction(self) -> f64 {
        self.0
    }
}

/// Charge for `duration_s` seconds: adds `min(P·t, per-session cap)` kWh,
/// clamped at a full pack.
pub fn apply_charge(soc: Soc, duration_s: f64, battery: &BatteryModel) -> Soc {
    let delivered = (battery.charger_power_kw * duration_s.max(0.0) / 3600.0).min(battery.max_charge_per_journey_kwh);
    Soc::new(soc.fraction() + delivered / battery.capacity_kwh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn hover_equals_zero_speed_propulsion() {
        let p = AircraftParams::default();
        assert_eq!(propulsion_power(0.0, &p).unwrap(), hover_power(&p));
    }

    #[test]
    fn zero_profile_drag_leaves_induced_only() {
        let p = AircraftParams {
            profile_drag_coeff: 0.0,
            ..Default::default()
        };
        let t = hover_terms(&p);
        assert_eq!(t.blade_profile, 0.0);
        assert_eq!(hover_power(&p), t.induced);
    }

    #[test]
    fn blade_term_is_cubic_in_omega() {
        let p = AircraftParams::default();
        let q = AircraftParams {
            blade_angular_velocity: 2.0 * p.blade_angular_velocity,
            ..p.clone()
        };
        let (a, b) = (hover_terms(&p), hover_terms(&q));
        assert!(rel(b.blade_profile, 8.0 * a.blade_profile) < 1e-14);
        assert_eq!(a.induced, b.induced);
    }

    #[test]
    fn parasite_is_cubic_in_speed() {
        let p = AircraftParams::default();
        let a = propulsion_terms(30.0, &p).unwrap().parasite;
        let b = propulsion_terms(60.0, &p).unwrap().parasite;
        assert!(rel(b, 8.0 * a) < 1e-14);
    }

    #[test]
    fn negative_speed_rejected() {
        let p = AircraftParams::default();
        assert_eq!(propulsion_power(-1.0, &p), Err(EnergyError::NegativeSpeed(-1.0)));
    }

    #[test]
    fn leg_energy_is_linear() {
        let p = AircraftParams::default();
        assert_eq!(energy_for_leg(0.0, &p), 0.0);
        let d = energy_for_leg(250.0, &p);
        assert!(rel(energy_for_leg(500.0, &p), 2.0 * d) < 1e-14);
    }

    #[test]
    fn charge_examples() {
        let b = BatteryModel::default();
        assert!((apply_charge(Soc::new(0.5), 300.0, &b).fraction() - 0.7).abs() < 1e-12);
        assert_eq!(apply_charge(Soc::new(0.95), 300.0, &b), Soc::FULL);
        let mut soc = Soc::EMPTY;
        for _ in 0..5 {
            soc = apply_charge(soc, 300.0, &b);
        }
        assert!((soc.fraction() - 1.0).abs() < 1e-12);
        // Longer sessions are still capped at one journey's worth.
        assert!((apply_charge(Soc::EMPTY, 3600.0, &b).fraction() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn validation_catches_bad_values() {
        let p = AircraftParams {
            rotor_radius: 0.0,
            ..Default::default()
        };
        assert_eq!(p.validate(), Err(EnergyError::NonPositiveParam("rotor_radius")));
        let b = BatteryModel {
            max_charge_per_journey_kwh: 200.0,
            ..Default::default()
        };
        assert!(b.validate().is_err());
        assert!(BatteryModel::desk_scale().validate().is_ok());
    }

    #[test]
    fn session_takes_five_minutes_at_defaults() {
        let b = BatteryModel::default();
        assert!((b.session_hours() * 60.0 - 5.0).abs() < 1e-12);
    }
}
