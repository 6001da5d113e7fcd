use super::Waveform;
use crate::error::{invalid, Result};

/// Whole-segment signal-to-distortion ratio in dB.
///
/// Returns `f64::INFINITY` when the estimate matches the reference exactly.
pub fn global_sdr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(invalid(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let signal: f64 = reference.samples().iter().map(|r| r * r).sum();
    if signal == 0.0 {
        return Err(invalid("reference is all zeros"));
    }
    let residual: f64 = reference
        .samples()
        .iter()
        .zip(est.samples())
        .map(|(r, e)| (r - e) * (r - e))
        .sum();
    if residual == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / residual).log10())
}

/// Renders a dB value, printing the perfect-reconstruction sentinel as `inf`.
pub fn format_db(value: f64) -> String {
    if value == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{value:.2}")
    }
}
