use crate::error::{Error, Result};

pub const N_LOS_BINS: usize = 10;

/// Ten ordinal length-of-stay classes over whole days: under one day, one
/// class per day for days 1..=7, 8 to 14 days, and 15 days or more.
pub fn assign_los_bin(length_of_stay_days: f64) -> Result<u8> {
    if !length_of_stay_days.is_finite() || length_of_stay_days < 0.0 {
        return Err(Error::domain(format!(
            "length of stay must be finite and non-negative, got {length_of_stay_days}"
        )));
    }
    let days = length_of_stay_days.floor();
    Ok(if days < 1.0 {
        0
    } else if days <= 7.0 {
        days as u8
    } else if days <= 14.0 {
        8
    } else {
        9
    })
}
