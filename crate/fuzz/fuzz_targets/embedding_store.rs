#![no_main]
use libfuzzer_sys::fuzz_target;
use textcue::embed::PrecomputedStore;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(store) = PrecomputedStore::parse(s) else { return };
    assert!(store.len() <= s.lines().count());
    assert_eq!(store.is_empty(), store.dim() == 0);
});
