//! Shared text formatting for report files.

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_exactly() {
        for v in [
            0.0,
            -0.0,
            1.0,
            0.1,
            1.0 / 3.0,
            -123456.789e-30,
            f64::MAX,
            f64::MIN_POSITIVE,
        ] {
            let s = fmt_float(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_float(0.5), "5.0000000000000000e-1");
    }
}
