use mtp_core::Rng;

/// First three outputs, wrapping sum, xor and last of the first 10⁴
/// outputs, computed by a separate reference implementation.
const GOLDEN: [(u64, [u64; 3], u64, u64, u64); 2] = [
    (
        0,
        [0x99ec5f36cb75f2b4, 0xbf6e1f784956452a, 0x1a5f849d4933e6e0],
        0xe09f6bc3e0a85ab6,
        0xbb7f6cc7a44417e0,
        0x7e42e7ea9c94ebf3,
    ),
    (
        42,
        [0x15780b2e0c2ec716, 0x6104d9866d113a7e, 0xae17533239e499a1],
        0x365bc8c7bef76b81,
        0xee5557930f3024bb,
        0xeed6344df08981a9,
    ),
];

#[test]
fn first_ten_thousand_outputs_match_reference() {
    for (seed, head, sum, xor, last) in GOLDEN {
        let mut rng = Rng::new(seed);
        let out: Vec<u64> = (0..10_000).map(|_| rng.next_u64()).collect();
        assert_eq!(out[..3], head, "seed {seed}");
        assert_eq!(out.iter().fold(0u64, |a, &v| a.wrapping_add(v)), sum, "seed {seed}");
        assert_eq!(out.iter().fold(0u64, |a, &v| a ^ v), xor, "seed {seed}");
        assert_eq!(out[9_999], last, "seed {seed}");
    }
}
