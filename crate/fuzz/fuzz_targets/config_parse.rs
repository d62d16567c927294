#![no_main]

use faraday3d::config::RunConfiguration;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfiguration::load(text, &[]) {
        let _ = cfg.density_closure();
        let _ = cfg.scan_spec();
        // a validated configuration survives its own header
        let lines = cfg.header_lines();
        let again = RunConfiguration::load("", &lines).expect("header lines reload");
        assert_eq!(lines, again.header_lines());
    }
});
