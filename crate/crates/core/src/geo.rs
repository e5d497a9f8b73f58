//! Geo-pixel binning: a 0.001° × 0.001° grid keyed by integer millidegrees.
//!
//! Keys are integers so that grouping is exact. Rounding is half away from
//! zero and is computed exactly on the binary value of the coordinate, so a
//! coordinate whose decimal expansion sits just below a `.0005` tie is never
//! pushed over it by the multiplication.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid cells per degree.
pub const MILLI_PER_DEGREE: i64 = 1_000;

/// Equatorial length of one degree, in meters.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("coordinate is not a finite number: ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("latitude {0} is outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} is outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("coordinate {0} is too large for a pixel key")]
    KeyOverflow(f64),
}

/// How strictly coordinates are validated before binning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateMode {
    /// Latitude in [-90, 90], longitude in [-180, 180].
    Strict,
    /// Any finite value. Scenario coordinates are synthetic and not geodetic.
    #[default]
    Permissive,
}

impl fmt::Display for CoordinateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoordinateMode::Strict => "strict",
            CoordinateMode::Permissive => "permissive",
        })
    }
}

/// Grid cell key in thousandths of a degree.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct GeoPixel {
    pub lat_milli: i64,
    pub lon_milli: i64,
}

impl GeoPixel {
    pub const fn new(lat_milli: i64, lon_milli: i64) -> Self {
        GeoPixel {
            lat_milli,
            lon_milli,
        }
    }

    /// Center of the cell in decimal degrees.
    pub fn center(self) -> (f64, f64) {
        center_of(self)
    }

    /// Checks that the cell center is a valid coordinate under `mode`.
    pub fn validate(self, mode: CoordinateMode) -> Result<(), GeoError> {
        let (lat, lon) = self.center();
        check_range(lat, lon, mode)
    }
}

impl fmt::Display for GeoPixel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat_milli, self.lon_milli)
    }
}

/// Bins a coordinate into its pixel.
pub fn pixel_of(lat: f64, lon: f64, mode: CoordinateMode) -> Result<GeoPixel, GeoError> {
    if !lat.is_finite() || !lon.is_finite() {
        return Err(GeoError::InvalidCoordinate { lat, lon });
    }
    check_range(lat, lon, mode)?;
    let lat_milli = round_scaled(lat, MILLI_PER_DEGREE).ok_or(GeoError::KeyOverflow(lat))?;
    let lon_milli = round_scaled(lon, MILLI_PER_DEGREE).ok_or(GeoError::KeyOverflow(lon))?;
    Ok(GeoPixel {
        lat_milli,
        lon_milli,
    })
}

pub fn center_of(pixel: GeoPixel) -> (f64, f64) {
    (
        pixel.lat_milli as f64 / MILLI_PER_DEGREE as f64,
        pixel.lon_milli as f64 / MILLI_PER_DEGREE as f64,
    )
}

fn check_range(lat: f64, lon: f64, mode: CoordinateMode) -> Result<(), GeoError> {
    if mode == CoordinateMode::Strict {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
    }
    Ok(())
}

/// Exact `round(value * factor)` with ties away from zero.
///
/// Returns `None` for non-finite input or when the result does not fit an
/// `i64`.
pub fn round_scaled(value: f64, factor: i64) -> Option<i64> {
    if !value.is_finite() {
        return None;
    }
    if value == 0.0 || factor == 0 {
        return Some(0);
    }
    let bits = value.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let fraction = bits & ((1u64 << 52) - 1);
    let (mantissa, exponent) = if exp_bits == 0 {
        (fraction, -1074)
    } else {
        (fraction | (1u64 << 52), exp_bits - 1075)
    };
    let negative = (value < 0.0) != (factor < 0);
    // mantissa < 2^53 and |factor| < 2^63, so the product fits in 116 bits.
    let scaled = mantissa as u128 * factor.unsigned_abs() as u128;

    let magnitude: u128 = if exponent >= 0 {
        let shift = exponent as u32;
        if shift >= scaled.leading_zeros() {
            return None;
        }
        scaled << shift
    } else {
        let shift = (-exponent) as u32;
        if shift > 117 {
            // scaled < 2^116 <= half of 2^shift
            0
        } else {
            let quotient = scaled >> shift;
            let remainder = scaled & ((1u128 << shift) - 1);
            let half = 1u128 << (shift - 1);
            if remainder >= half {
                quotient + 1
            } else {
                quotient
            }
        }
    };
    if magnitude > i64::MAX as u128 {
        return None;
    }
    let magnitude = magnitude as i64;
    Some(if negative { -magnitude } else { magnitude })
}

/// Ground size of one pixel at latitude `lat`: `(east_west_m, north_south_m)`.
///
/// North-south is constant; east-west shrinks with the cosine of the latitude.
pub fn pixel_extent_meters(lat: f64) -> Result<(f64, f64), GeoError> {
    if !lat.is_finite() {
        return Err(GeoError::InvalidCoordinate { lat, lon: 0.0 });
    }
    if lat.abs() > 90.0 {
        return Err(GeoError::LatitudeOutOfRange(lat));
    }
    let cell = METERS_PER_DEGREE / MILLI_PER_DEGREE as f64;
    // sin of the colatitude: exactly 1 at the equator and exactly 0 at the poles.
    let east_west = cell * (90.0 - lat.abs()).to_radians().sin();
    Ok((east_west, cell))
}
