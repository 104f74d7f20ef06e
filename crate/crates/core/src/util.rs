use sha2::{Digest, Sha256};

/// Formats `x` with exactly `digits` significant digits in plain decimal
/// notation (no exponent), e.g. `format_sig(42.35, 9) == "42.3500000"`.
pub fn format_sig(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".to_string() } else { x.to_string() };
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    // Re-format in fixed point from the rounded value so the digit count is exact.
    let rounded: f64 = format!("{mantissa}e{exp}").parse().expect("valid float");
    format!("{rounded:.decimals$}")
}

/// Rounds `x` to `digits` significant digits, matching [`format_sig`].
pub fn round_sig(x: f64, digits: usize) -> f64 {
    format_sig(x, digits).parse().unwrap_or(x)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
