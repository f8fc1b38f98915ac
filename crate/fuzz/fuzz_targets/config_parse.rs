#![no_main]
use libfuzzer_sys::fuzz_target;
use textcue::config::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = Config::parse(s) else { return };
    let text = cfg.to_toml().expect("valid config serializes");
    assert_eq!(Config::parse(&text).expect("serialized config parses"), cfg);
});
