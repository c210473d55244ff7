#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = vslab::io::parse_grid(text) {
        let again = vslab::io::parse_grid(&vslab::io::format_grid(&g)).expect("formatted grid parses");
        assert_eq!(again, g);
    }
});
