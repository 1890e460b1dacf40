//! Number formatting shared by the CSV and JSON writers.

/// Formats with at most 12 significant digits, shortest representation.
pub fn sig12(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    format!("{rounded}")
}

/// Rounds to 12 significant digits, for values passed through serde.
pub fn round12(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    format!("{v:.11e}").parse().unwrap_or(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(sig12(15.0002), "15.0002");
        assert_eq!(sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(sig12(2.0f64.ln()), "0.69314718056");
        assert_eq!(sig12(-2.5e12), "-2500000000000");
        assert_eq!(sig12(0.0), "0");
    }
}
