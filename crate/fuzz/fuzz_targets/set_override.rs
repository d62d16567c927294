#![no_main]

use faraday3d::config::{apply_override, parse_override, RunConfiguration};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((path, value)) = parse_override(text) {
        assert!(!path.is_empty() && path.iter().all(|s| !s.is_empty()));
        let mut table = toml::Table::new();
        let _ = apply_override(&mut table, &path, value);
    }
    let _ = RunConfiguration::load("[cloud]\nod_eff = 50.0\n", &[text.to_owned()]);
});
