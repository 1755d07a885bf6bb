use litevla::action_space::ActionVocabulary;
use litevla::container::{
    from_bytes, policy_from_model, policy_to_model, to_bytes, validate_container, CheckStatus,
    ContainerError, ContainerModel, ContainerTensor, MetadataValue, TensorData,
};
use litevla::policy::{DecodeConfig, PolicyDims, PolicyParams};
use litevla::quantizer::quantize_policy;
use proptest::prelude::*;

fn load_hex(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .map(|l| l.split('#').next().unwrap())
        .flat_map(|l| l.split_whitespace().map(str::to_owned).collect::<Vec<_>>())
        .map(|h| u8::from_str_radix(&h, 16).unwrap())
        .collect()
}

fn minimal_model() -> ContainerModel {
    ContainerModel {
        metadata: vec![(
            "general.architecture".into(),
            MetadataValue::String("litevla-toy".into()),
        )],
        tensors: vec![],
    }
}

fn one_tensor_model() -> ContainerModel {
    ContainerModel {
        metadata: vec![("a".into(), MetadataValue::U32(7))],
        tensors: vec![ContainerTensor {
            name: "t".into(),
            dims: vec![4],
            data: TensorData::F32(vec![1.0, -2.0, 0.5, 0.0]),
        }],
    }
}

fn small_policy() -> PolicyParams {
    let dims = PolicyDims {
        image_h: 4,
        image_w: 4,
        num_goals: 3,
        d_goal: 32,
        d_tok: 32,
        d_hidden: 8,
    };
    let vocab = ActionVocabulary::new(
        8,
        8,
        litevla::action_space::BinRange::new(-0.5, 0.5),
        litevla::action_space::BinRange::new(-1.5, 1.5),
    )
    .unwrap();
    PolicyParams::random(dims, vocab, 11).unwrap()
}

#[test]
fn golden_minimal_file() {
    let golden = load_hex("minimal.hex");
    assert_eq!(golden.len(), 75);
    assert_eq!(to_bytes(&minimal_model()).unwrap(), golden);
    assert_eq!(from_bytes(&golden).unwrap(), minimal_model());
}

#[test]
fn golden_one_tensor_file() {
    let golden = load_hex("one_tensor.hex");
    assert_eq!(golden.len(), 112);
    assert_eq!(to_bytes(&one_tensor_model()).unwrap(), golden);
    assert_eq!(from_bytes(&golden).unwrap(), one_tensor_model());
}

#[test]
fn f32_payload_size_and_alignment() {
    let model = ContainerModel {
        metadata: vec![("k".into(), MetadataValue::Bool(true))],
        tensors: vec![
            ContainerTensor {
                name: "odd".into(),
                dims: vec![3],
                data: TensorData::F32(vec![1.0; 3]),
            },
            ContainerTensor {
                name: "sixty_four".into(),
                dims: vec![8, 8],
                data: TensorData::F32((0..64).map(|i| i as f32).collect()),
            },
        ],
    };
    let bytes = to_bytes(&model).unwrap();
    // header 24, kv 8+1+4+1, infos (8+3+4+8+4+8) + (8+10+4+16+4+8)
    let header_end = 24 + 14 + 35 + 50;
    let data_start = (header_end as usize).div_ceil(32) * 32;
    // second tensor sits at offset 32 in the data region, first payload is 12 bytes
    assert_eq!(bytes.len(), data_start + 32 + 256);
    let payload = &bytes[data_start + 32..];
    assert_eq!(&payload[4..8], &1.0f32.to_le_bytes());
    assert_eq!(from_bytes(&bytes).unwrap(), model);
}

#[test]
fn writes_are_deterministic() {
    let m = policy_to_model(&small_policy(), &DecodeConfig::default(), None);
    assert_eq!(to_bytes(&m).unwrap(), to_bytes(&m).unwrap());
}

#[test]
fn bad_magic_and_version() {
    let mut bytes = load_hex("minimal.hex");
    bytes[3] = b'X';
    let err = from_bytes(&bytes).unwrap_err();
    assert!(err.to_string().starts_with("bad magic at offset 0"), "{err}");

    let mut bytes = load_hex("minimal.hex");
    bytes[4] = 2;
    let err = from_bytes(&bytes).unwrap_err();
    assert!(matches!(err, ContainerError::UnsupportedVersion { version: 2, .. }));
    assert!(err.to_string().contains("unsupported version"));
}

#[test]
fn unknown_tag_dtype_and_offsets() {
    let golden = load_hex("one_tensor.hex");

    let mut b = golden.clone();
    b[33] = 5; // KV tag
    assert_eq!(from_bytes(&b).unwrap_err().class(), "unknown_kv_tag");

    let mut b = golden.clone();
    b[62] = 2; // dtype
    let err = from_bytes(&b).unwrap_err();
    assert_eq!(err.class(), "unknown_dtype");
    assert!(err.to_string().contains("'t'"));

    let mut b = golden.clone();
    b[66] = 4; // offset 4
    assert_eq!(from_bytes(&b).unwrap_err().class(), "misaligned_offset");

    let mut b = golden.clone();
    b[66] = 32;
    assert_eq!(from_bytes(&b).unwrap_err().class(), "non_canonical_offset");

    let mut b = golden.clone();
    b[80] = 1; // padding
    assert_eq!(from_bytes(&b).unwrap_err().class(), "non_zero_padding");

    let mut b = golden.clone();
    b.push(0);
    assert_eq!(from_bytes(&b).unwrap_err().class(), "trailing_bytes");

    let mut b = golden;
    b[50] = 5; // n_dims
    assert_eq!(from_bytes(&b).unwrap_err().class(), "too_many_dims");
}

#[test]
fn truncation_at_every_offset_is_an_error() {
    let params = small_policy();
    let q = quantize_policy(&params).unwrap();
    let mut golden_files = vec![load_hex("minimal.hex"), load_hex("one_tensor.hex")];
    golden_files.push(to_bytes(&policy_to_model(&params, &DecodeConfig::default(), Some(&q))).unwrap());
    for golden in &golden_files {
        for cut in 0..golden.len() {
            let err = from_bytes(&golden[..cut]).unwrap_err();
            assert_eq!(err.class(), "truncated", "cut at {cut}: {err}");
        }
        assert!(from_bytes(golden).is_ok());
    }
    // cutting inside the last payload names that tensor
    let one = load_hex("one_tensor.hex");
    let err = from_bytes(&one[..100]).unwrap_err();
    assert!(err.to_string().contains("tensor 't' payload"), "{err}");
}

#[test]
fn policy_round_trip_f32_and_quantized() {
    let params = small_policy();
    let decode = DecodeConfig::default();
    let model = policy_to_model(&params, &decode, None);
    let bytes = to_bytes(&model).unwrap();
    let reread = from_bytes(&bytes).unwrap();
    assert_eq!(to_bytes(&reread).unwrap(), bytes);
    let bundle = policy_from_model(&reread).unwrap();
    assert_eq!(bundle.codec, "f32");
    assert_eq!(bundle.decode, decode);
    assert_eq!(bundle.layers, 42);
    for name in ["w1", "w2", "b1", "b2", "goal_embedding", "prev_token_embedding"] {
        let a = params.tensor(name).unwrap();
        let b = bundle.policy.tensor(name).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x as f32 as f64, *y);
        }
    }

    let q = quantize_policy(&params).unwrap();
    let model = policy_to_model(&params, &decode, Some(&q));
    let bundle = policy_from_model(&from_bytes(&to_bytes(&model).unwrap()).unwrap()).unwrap();
    assert_eq!(bundle.codec, "q4b32");
    for name in ["w1", "w2", "b1", "b2", "goal_embedding", "prev_token_embedding"] {
        assert_eq!(bundle.policy.tensor(name), q.params.tensor(name), "{name}");
    }
}

#[test]
fn validation_report() {
    let params = small_policy();
    let bytes = to_bytes(&policy_to_model(&params, &DecodeConfig::default(), None)).unwrap();
    let report = validate_container(&bytes);
    assert!(report.passed(), "{:?}", report.checks);
    assert!(report.checks.iter().all(|c| c.status == CheckStatus::Pass));

    let report = validate_container(&load_hex("minimal.hex"));
    assert!(report.passed());
    assert!(report.checks.iter().any(|c| c.status == CheckStatus::Skipped));

    let report = validate_container(&bytes[..bytes.len() - 1]);
    assert!(!report.passed());
    assert_eq!(report.error_class, Some("truncated"));
}

#[test]
fn writer_rejects_bad_models() {
    let mut m = one_tensor_model();
    m.tensors.push(m.tensors[0].clone());
    assert_eq!(to_bytes(&m).unwrap_err().class(), "duplicate_name");
    let mut m = one_tensor_model();
    m.tensors[0].name = "x".repeat(65);
    assert_eq!(to_bytes(&m).unwrap_err().class(), "invalid_name");
}

fn arb_value() -> impl Strategy<Value = MetadataValue> {
    prop_oneof![
        any::<u32>().prop_map(MetadataValue::U32),
        (-1e6f32..1e6).prop_map(MetadataValue::F32),
        any::<bool>().prop_map(MetadataValue::Bool),
        "[a-z ]{0,12}".prop_map(MetadataValue::String),
        any::<u64>().prop_map(MetadataValue::U64),
    ]
}

proptest! {
    #[test]
    fn random_models_round_trip(
        kvs in prop::collection::vec(("[a-z.]{1,16}", arb_value()), 0..5),
        sizes in prop::collection::vec(0usize..40, 0..4),
    ) {
        let tensors = sizes.iter().enumerate().map(|(i, &n)| ContainerTensor {
            name: format!("t{i}"),
            dims: vec![n as u64],
            data: TensorData::F32((0..n).map(|k| k as f32 * 0.25 - 1.0).collect()),
        }).collect();
        let model = ContainerModel { metadata: kvs, tensors };
        let bytes = to_bytes(&model).unwrap();
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(to_bytes(&back).unwrap(), bytes);
    }
}
