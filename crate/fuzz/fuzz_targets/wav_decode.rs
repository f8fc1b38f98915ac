#![no_main]
use libfuzzer_sys::fuzz_target;
use textcue::audio::{decode_wav, encode_wav, WavFormat};

fuzz_target!(|data: &[u8]| {
    let Ok(sig) = decode_wav(data) else { return };
    // in-range audio survives a float re-encode bit for bit
    if sig.samples().iter().all(|v| v.abs() <= 1.0) {
        let (bytes, rep) = encode_wav(&sig, WavFormat::Float32);
        assert_eq!(rep.clipped, 0);
        let back = decode_wav(&bytes).expect("re-encoded file decodes");
        assert_eq!(back.sample_rate(), sig.sample_rate());
        assert!(back.samples().iter().zip(sig.samples()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
});
