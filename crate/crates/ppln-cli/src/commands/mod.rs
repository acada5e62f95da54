pub mod ablate;
pub mod coeffs;
pub mod fit;
pub mod gradcheck;
pub mod synth;
pub mod toy;
pub mod train;

use crate::AppResult;

/// Parses an `on`/`off` switch value.
pub fn parse_switch(flag: &str, value: &str) -> AppResult<bool> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(crate::usage(format!(
            "{flag} expects 'on' or 'off', got '{other}'"
        ))),
    }
}

/// Dense plotting grid on the unit interval (includes both endpoints).
pub fn plot_grid(points: usize) -> Vec<f64> {
    (0..=points).map(|i| i as f64 / points as f64).collect()
}
