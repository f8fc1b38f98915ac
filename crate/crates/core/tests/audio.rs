use proptest::prelude::*;
use textcue::audio::*;

fn frames_strategy() -> impl Strategy<Value = (usize, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..5, 1usize..8).prop_flat_map(|(half, t)| {
        let l = 2 * half;
        let m = proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, l), t);
        (Just(l), m.clone(), m)
    })
}

proptest! {
    #[test]
    fn float_wav_round_trip_is_bit_exact(s in proptest::collection::vec(-1.0f32..=1.0, 0..400), rate in 1u32..200_000) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let sig = AudioSignal::new(s.clone(), rate).unwrap();
        let rep = write_wav(&sig, &p, WavFormat::Float32).unwrap();
        prop_assert_eq!(rep.clipped, 0);
        let back = read_wav(&p).unwrap();
        prop_assert_eq!(back.sample_rate(), rate);
        prop_assert_eq!(back.samples().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), s.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn pcm16_round_trip_within_one_step(s in proptest::collection::vec(-1.0f32..=1.0, 1..400)) {
        let sig = AudioSignal::new(s.clone(), 16000).unwrap();
        let (bytes, _) = encode_wav(&sig, WavFormat::Pcm16);
        let back = decode_wav(&bytes).unwrap();
        for (a, b) in back.samples().iter().zip(&s) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn overlap_add_is_linear((l, f1, f2) in frames_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let spec = FrameSpec::new(l).unwrap();
        let mixed: Vec<Vec<f64>> =
            f1.iter().zip(&f2).map(|(x, y)| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()).collect();
        let lhs = overlap_add(&mixed, spec);
        let (o1, o2) = (overlap_add(&f1, spec), overlap_add(&f2, spec));
        prop_assert_eq!(lhs.len(), (f1.len() - 1) * l / 2 + l);
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * o1[i] + b * o2[i])).abs() <= 1e-9);
        }
    }

    #[test]
    fn frame_count_is_monotone(t in 1usize..5000, half in 1usize..50) {
        let spec = FrameSpec::new(2 * half).unwrap();
        prop_assert!(frame_count(t + 1, spec) >= frame_count(t, spec));
        // padded length covers the signal and is a whole number of hops past L
        let p = spec.padded_len(t);
        prop_assert!(p >= t && (p - spec.frame_length()) % spec.hop() == 0);
    }
}

#[test]
fn silence_reads_back_as_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("silence.wav");
    write_wav(&AudioSignal::zeros(16000, 16000), &p, WavFormat::Pcm16).unwrap();
    let s = read_wav(&p).unwrap();
    assert_eq!(s.len(), 16000);
    assert!(s.samples().iter().all(|&v| v == 0.0));
}

#[test]
fn empty_signal_is_a_valid_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.wav");
    write_wav(&AudioSignal::zeros(0, 8000), &p, WavFormat::Float32).unwrap();
    assert!(read_wav(&p).unwrap().is_empty());
}

#[test]
fn missing_file_is_its_own_error() {
    assert!(matches!(
        read_wav(std::path::Path::new("/nonexistent/x.wav")),
        Err(AudioError::Missing(_))
    ));
}

#[test]
fn rms_of_a_whole_period_sine() {
    let n = 800;
    let s: Vec<f32> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / n as f64).sin() as f32)
        .collect();
    let r = rms(&AudioSignal::new(s, 8000).unwrap()).unwrap();
    assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6, "{r}");
}

#[test]
fn overlap_add_trivial_cases() {
    let spec = FrameSpec::new(6).unwrap();
    let one = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]];
    assert_eq!(overlap_add(&one, spec), one[0]);
    let zeros = vec![vec![0.0; 6]; 4];
    let out = overlap_add(&zeros, spec);
    assert_eq!(out.len(), 3 * 3 + 6);
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn slicing_pads_the_tail_with_zeros() {
    let spec = FrameSpec::new(4).unwrap();
    let f = frame_signal(&[1.0, 2.0, 3.0, 4.0, 5.0], spec);
    assert_eq!(f, vec![vec![1.0, 2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0, 0.0]]);
}

#[test]
fn extensible_float_header_is_accepted() {
    // 40-byte fmt chunk with WAVE_FORMAT_EXTENSIBLE and a float subformat
    let samples = [0.25f32, -0.5];
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(4 + 8 + 40 + 8 + 8u32).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&40u32.to_le_bytes());
    b.extend_from_slice(&0xFFFEu16.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&8000u32.to_le_bytes());
    b.extend_from_slice(&32000u32.to_le_bytes());
    b.extend_from_slice(&4u16.to_le_bytes());
    b.extend_from_slice(&32u16.to_le_bytes());
    b.extend_from_slice(&22u16.to_le_bytes());
    b.extend_from_slice(&32u16.to_le_bytes());
    b.extend_from_slice(&4u32.to_le_bytes());
    b.extend_from_slice(&3u16.to_le_bytes());
    b.extend_from_slice(&[0u8; 14]);
    b.extend_from_slice(b"data");
    b.extend_from_slice(&8u32.to_le_bytes());
    for s in samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    assert_eq!(decode_wav(&b).unwrap().samples(), &samples);
}

#[test]
fn truncated_input_is_malformed_not_a_panic() {
    let (b, _) = encode_wav(
        &AudioSignal::new(vec![0.1; 10], 8000).unwrap(),
        WavFormat::Pcm16,
    );
    for cut in [0, 4, 11, 20, 30, 43] {
        assert!(decode_wav(&b[..cut]).is_err(), "cut {cut}");
    }
}
