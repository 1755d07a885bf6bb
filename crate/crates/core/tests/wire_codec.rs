use litevla::bridge::{decode_twist, encode_twist, TwistMessage, FRAME_LEN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn load_hex(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .flat_map(|l| {
            l.split('#').next().unwrap().split_whitespace().map(|h| u8::from_str_radix(h, 16).unwrap()).collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn zero_twist_golden_bytes() {
    let frame = encode_twist(&TwistMessage::ZERO, 0, 0, false);
    let mut expected = vec![0x56, 0x4C, 0x01, 0x00];
    expected.extend([0u8; 60]);
    // CRC-32/IEEE of the 64 bytes above, computed offline
    expected.extend([0x1e, 0x45, 0xbb, 0x81]);
    assert_eq!(frame.to_vec(), expected);
}

#[test]
fn golden_frame_decodes() {
    let bytes = load_hex("twist_frame.hex");
    assert_eq!(bytes.len(), FRAME_LEN);
    let f = decode_twist(&bytes).unwrap();
    assert_eq!((f.seq, f.timestamp_ns, f.stale), (7, 123_456_789, true));
    assert_eq!(f.twist.linear, [0.25, 0.0, 0.0]);
    assert_eq!(f.twist.angular, [0.0, 0.0, -1.0]);
    assert_eq!(f.encode().to_vec(), bytes);
}

#[test]
fn every_single_bit_flip_is_rejected() {
    let golden = load_hex("twist_frame.hex");
    for bit in 0..FRAME_LEN * 8 {
        let mut b = golden.clone();
        b[bit / 8] ^= 1 << (bit % 8);
        let err = decode_twist(&b).unwrap_err();
        assert_eq!(err.class(), "crc", "bit {bit}");
    }
}

#[test]
fn random_frames_round_trip_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        // raw bit patterns cover NaN payloads, infinities and signed zeros
        let mut v = || f64::from_bits(rng.random());
        let twist = TwistMessage {
            linear: [v(), v(), v()],
            angular: [v(), v(), v()],
        };
        let (seq, ts, stale) = (rng.random(), rng.random(), rng.random());
        let f = decode_twist(&encode_twist(&twist, seq, ts, stale)).unwrap();
        assert_eq!((f.seq, f.timestamp_ns, f.stale), (seq, ts, stale));
        for (a, b) in f.twist.linear.iter().chain(&f.twist.angular).zip(twist.linear.iter().chain(&twist.angular)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
