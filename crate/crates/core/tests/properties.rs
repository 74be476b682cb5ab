mod common;

use std::io::Cursor;

use common::*;
use proptest::prelude::*;
use znn::analysis::{entropy_bits_per_byte, exponent_histogram, model_report};
use znn::pipeline::{compress_bytes, compress_stream, decompress_chunk, decompress_container, CompressConfig};
use znn::safetensors::{parse_safetensors, write_safetensors};
use znn::{Container, DType, Error, Method, SelectionMode};

fn dtype_strategy() -> impl Strategy<Value = DType> {
    prop::sample::select(DType::ALL.to_vec())
}

fn mode_strategy() -> impl Strategy<Value = SelectionMode> {
    prop::sample::select(vec![
        SelectionMode::Model,
        SelectionMode::DeltaAuto,
        SelectionMode::ForceHuffman,
        SelectionMode::ForceLz,
        SelectionMode::ForceStored,
    ])
}

/// Byte soup biased towards the patterns the codecs care about.
fn data_strategy(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop_oneof![
        prop::collection::vec(any::<u8>(), 0..max),
        prop::collection::vec(prop_oneof![4 => Just(0u8), 1 => any::<u8>()], 0..max),
        (0..max, any::<u64>()).prop_map(|(n, s)| gaussian_bf16(n, s)),
    ]
}

fn aligned(mut data: Vec<u8>, dtype: DType) -> Vec<u8> {
    let w = dtype.element_bytes();
    data.truncate(data.len() / w * w);
    data
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip(
        data in data_strategy(40_000),
        dtype in dtype_strategy(),
        mode in mode_strategy(),
        chunk_units in 1u32..64,
        workers in 1usize..5,
    ) {
        let data = aligned(data, dtype);
        let cfg = CompressConfig::new(dtype)
            .with_chunk_size(chunk_units * 32)
            .with_mode(mode)
            .with_workers(workers);
        let c = compress_bytes(&data, &cfg).unwrap();
        let parsed = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(&parsed, &c);
        prop_assert_eq!(decompress_container(&parsed, workers).unwrap(), data);
    }

    #[test]
    fn output_independent_of_worker_count(
        data in data_strategy(60_000),
        dtype in dtype_strategy(),
        workers in 2usize..9,
    ) {
        let data = aligned(data, dtype);
        let cfg = CompressConfig::new(dtype).with_chunk_size(1024);
        let one = compress_bytes(&data, &cfg.clone().with_workers(1)).unwrap().to_bytes().unwrap();
        let many = compress_bytes(&data, &cfg.with_workers(workers)).unwrap().to_bytes().unwrap();
        prop_assert_eq!(one, many);
    }

    #[test]
    fn size_never_exceeds_raw_plus_overhead(data in data_strategy(30_000), dtype in dtype_strategy()) {
        let data = aligned(data, dtype);
        let c = compress_bytes(&data, &CompressConfig::new(dtype).with_chunk_size(4096)).unwrap();
        let overhead = c.header.encoded_len() as u64 + 5 * c.header.chunk_count * dtype.group_count() as u64 + 4;
        prop_assert!(c.encoded_len() <= data.len() as u64 + overhead);
        for r in c.table.iter().flatten() {
            if r.method == Method::ZeroTruncated {
                prop_assert_eq!(r.stored_len, 0);
            }
        }
    }

    #[test]
    fn corruption_is_detected(data in data_strategy(20_000), flip in any::<prop::sample::Index>(), bit in 0u8..8) {
        let data = aligned(data, DType::Bf16);
        let c = compress_bytes(&data, &CompressConfig::new(DType::Bf16).with_chunk_size(2048)).unwrap();
        let mut bytes = c.to_bytes().unwrap();
        let i = flip.index(bytes.len());
        bytes[i] ^= 1 << bit;
        // a flipped bit must never decode silently to different bytes
        let decoded = Container::from_bytes(&bytes).and_then(|c| decompress_container(&c, 1));
        if let Ok(out) = decoded {
            prop_assert_eq!(out, data);
        }
    }

    #[test]
    fn chunks_decode_independently(data in data_strategy(30_000), dtype in dtype_strategy(), pick in any::<prop::sample::Index>()) {
        let data = aligned(data, dtype);
        prop_assume!(!data.is_empty());
        let chunk = 512usize;
        let c = compress_bytes(&data, &CompressConfig::new(dtype).with_chunk_size(chunk as u32)).unwrap();
        let i = pick.index(c.header.chunk_count as usize);
        let end = ((i + 1) * chunk).min(data.len());
        prop_assert_eq!(decompress_chunk(&c, i).unwrap(), &data[i * chunk..end]);
    }

    #[test]
    fn histogram_mass(data in prop::collection::vec(any::<u8>(), 0..4000), dtype in prop::sample::select(vec![DType::Fp32, DType::Bf16, DType::Fp16])) {
        let data = aligned(data, dtype);
        let h = exponent_histogram(&data, dtype).unwrap();
        prop_assert_eq!(h.iter().sum::<u64>(), (data.len() / dtype.element_bytes()) as u64);
    }

    #[test]
    fn entropy_matches_oracle(data in prop::collection::vec(any::<u8>(), 1..4000)) {
        let h = entropy_bits_per_byte(&data).unwrap();
        prop_assert!((0.0..=8.0).contains(&h));
        prop_assert!((h - entropy(&data)).abs() < 1e-9);
    }
}

#[test]
fn streaming_equals_in_memory_for_large_input() {
    let data = gaussian_bf16(5 * MB + 6, 4);
    let cfg = CompressConfig::new(DType::Bf16).with_workers(3);
    let mem = compress_bytes(&data, &cfg).unwrap().to_bytes().unwrap();
    let mut out = Cursor::new(Vec::new());
    compress_stream(Cursor::new(&data), data.len() as u64, &cfg, &mut out).unwrap();
    assert_eq!(out.into_inner(), mem);
}

#[test]
fn truncated_streams_are_errors() {
    let data = gaussian_bf16(MB, 5);
    let bytes = compress_bytes(&data, &CompressConfig::new(DType::Bf16)).unwrap().to_bytes().unwrap();
    for cut in [0, 10, 27, 28, 40, bytes.len() / 2, bytes.len() - 4, bytes.len() - 1] {
        assert!(Container::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Container::from_bytes(&bad), Err(Error::BadMagic(_))));
}

#[test]
fn report_agrees_with_concatenated_container() {
    let t1 = gaussian_bf16(3 * MB, 1);
    let t2 = gaussian_bf16(MB, 2);
    let tensors = vec![
        ("a".to_string(), DType::Bf16, t1.as_slice()),
        ("b".to_string(), DType::Bf16, t2.as_slice()),
    ];
    let report = model_report(&tensors, &CompressConfig::new(DType::Bf16)).unwrap();
    let all = [t1.as_slice(), t2.as_slice()].concat();
    let c = compress_bytes(&all, &CompressConfig::new(DType::Bf16)).unwrap();
    let whole = pct(c.encoded_len(), all.len() as u64);
    assert!((report.total_pct - whole).abs() < 0.5, "{} vs {whole}", report.total_pct);
    let clean = clean_fp32(4 * MB, 3);
    let r = model_report(&[("c".to_string(), DType::Fp32, clean.as_slice())], &CompressConfig::new(DType::Fp32)).unwrap();
    let g = &r.tensors[0].groups_pct;
    assert!(g[0] < 40.0 && g[1] > 98.0 && g[2] == 0.0 && g[3] == 0.0, "{g:?}");
    assert!((33.0..=36.0).contains(&r.total_pct), "{}", r.total_pct);
}

#[test]
fn safetensors_round_trip_in_memory() {
    let w = gaussian_bf16(MB, 8);
    let f = clean_fp32(MB / 2, 9);
    let file = write_safetensors(&[("w", "BF16", &[(MB / 2) as u64], &w), ("f", "F32", &[(MB / 8) as u64], &f)]);
    let layout = parse_safetensors(&file).unwrap();
    assert_eq!(layout.tensors.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let (src, znn_path, back) = (dir.path().join("m"), dir.path().join("m.znn"), dir.path().join("r"));
    std::fs::write(&src, &file).unwrap();
    let cfg = CompressConfig::new(DType::Opaque);
    let stats = znn::compress_file(&src, &znn_path, &cfg, znn::InputFormat::Auto).unwrap();
    // clean fp32 tensor pulls the total below the bf16 level
    assert!(stats.compressed_pct() < 60.0, "{}", stats.compressed_pct());
    znn::decompress_file(&znn_path, &back, 0).unwrap();
    assert_eq!(znn::delta::sha256(&std::fs::read(&back).unwrap()), znn::delta::sha256(&file));
}
