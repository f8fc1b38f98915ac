#![no_main]
use libfuzzer_sys::fuzz_target;
use textcue::diff::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(ck) = Checkpoint::from_bytes(data) else { return };
    let again = Checkpoint::from_bytes(&ck.to_bytes()).expect("re-encoded checkpoint decodes");
    assert_eq!(again.config_hash, ck.config_hash);
    assert_eq!(again.header, ck.header);
    assert_eq!(again.tensors.len(), ck.tensors.len());
});
