//! Presentation units at the command line; everything past this module is SI.

pub fn mrad_to_rad(x: f64) -> f64 {
    x / 1e3
}

pub fn rad_to_mrad(x: f64) -> f64 {
    x * 1e3
}

pub fn mm_to_m(x: f64) -> f64 {
    x / 1e3
}

pub fn um_to_m(x: f64) -> f64 {
    x / 1e6
}

pub fn nm_to_m(x: f64) -> f64 {
    x / 1e9
}

pub fn ghz_to_hz(x: f64) -> f64 {
    x * 1e9
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> impl Iterator<Item = f64> {
        (0..2000).map(|k| {
            let mantissa = 1.0 + (k as f64 * 0.618_033_988_749_895).fract();
            mantissa * 10f64.powi(k % 13 - 6) * if k % 2 == 0 { 1.0 } else { -1.0 }
        })
    }

    #[test]
    fn conversions_round_trip() {
        let close = |a: f64, b: f64| (a - b).abs() <= f64::EPSILON * a.abs();
        for x in samples() {
            assert!(close(x, rad_to_mrad(mrad_to_rad(x))), "{x}");
            assert!(close(x, mrad_to_rad(rad_to_mrad(x))), "{x}");
            assert!(close(x, ghz_to_hz(x) / 1e9), "{x}");
            assert!(close(x, mm_to_m(x) * 1e3), "{x}");
            assert!(close(x, um_to_m(x) * 1e6), "{x}");
            assert!(close(x, nm_to_m(x) * 1e9), "{x}");
        }
    }

    #[test]
    fn anchors() {
        assert_eq!(mm_to_m(4.0), 4e-3);
        assert_eq!(um_to_m(370.0), 370e-6);
        assert_eq!(nm_to_m(1342.0), 1342e-9);
        assert_eq!(mrad_to_rad(2.0), 2e-3);
    }
}
