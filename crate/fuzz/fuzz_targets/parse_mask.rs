#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = vslab::io::parse_mask(text) {
        let again = vslab::io::parse_mask(&vslab::io::format_mask(&m)).expect("formatted mask parses");
        assert_eq!(again, m);
    }
});
