#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pts) = vslab::io::parse_points(text) {
        assert!(pts.iter().all(|p| p.x.is_finite() && p.y.is_finite() && p.value.is_finite()));
        let again = vslab::io::parse_points(&vslab::io::format_points(&pts)).expect("formatted points parse");
        assert_eq!(again, pts);
    }
});
