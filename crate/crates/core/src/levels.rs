//! Decibel conversions.

/// Floor used by [`linear_to_db`] when no explicit floor is given.
pub const DEFAULT_DB_FLOOR: f64 = -120.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Amplitude to dB, clamped at [`DEFAULT_DB_FLOOR`].
pub fn linear_to_db(x: f64) -> f64 {
    linear_to_db_floor(x, DEFAULT_DB_FLOOR)
}

pub fn linear_to_db_floor(x: f64, floor_db: f64) -> f64 {
    let x = x.abs();
    if x <= 0.0 {
        return floor_db;
    }
    (20.0 * x.log10()).max(floor_db)
}

/// Power to dB (10·log10), clamped at `floor_db`.
pub fn power_to_db_floor(p: f64, floor_db: f64) -> f64 {
    if p <= 0.0 {
        return floor_db;
    }
    (10.0 * p.log10()).max(floor_db)
}
