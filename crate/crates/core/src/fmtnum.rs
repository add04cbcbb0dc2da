//! Numeric text formatting shared by the CSV writers.

/// Nine significant digits in scientific notation; infinities come out as
/// `inf`/`-inf` so degenerate distance sentinels survive a text round
/// trip (`f64::from_str` accepts both spellings).
pub(crate) fn sig9(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v:.8e}")
    }
}
