#![no_main]

use libfuzzer_sys::fuzz_target;
use vslab::config::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = Config::parse(text) {
        let _ = Config::parse(&cfg.to_toml()).expect("serialised config parses");
        // plan construction validates without running anything
        let _ = cfg.plan(0);
    }
});
