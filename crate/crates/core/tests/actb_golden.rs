use std::fs;
use std::path::{Path, PathBuf};

use ghostalign::actdata::{
    encode_actb, load_calibration_pair, read_actb, write_actb, write_calibration_pair, Dtype,
    DumpMetadata, DumpSource, HEADER_LEN,
};
use ghostalign::{Error, Matrix};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn format_field(name: &str) -> &'static str {
    match read_actb(fixture(name)) {
        Err(Error::Format { field, .. }) => field,
        other => panic!("{name}: expected a format error, got {other:?}"),
    }
}

#[test]
fn scalar_fixture_parses_and_reencodes_byte_exact() {
    let bytes = fs::read(fixture("scalar_f64.actb")).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN + 8);
    let m = read_actb(fixture("scalar_f64.actb")).unwrap();
    assert_eq!(m, Matrix::from_rows(&[[2.5]]));
    assert_eq!(encode_actb(&m, Dtype::F64), bytes);
}

#[test]
fn row_major_fixture_round_trips() {
    let path = fixture("rows2x3_f64.actb");
    let m = read_actb(&path).unwrap();
    assert_eq!(m, Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]));
    assert_eq!(encode_actb(&m, Dtype::F64), fs::read(&path).unwrap());
}

#[test]
fn f32_fixture_widens_exactly_and_reencodes() {
    let path = fixture("rows2x3_f32.actb");
    let m = read_actb(&path).unwrap();
    let want = [0.5f32, -1.25, 3.0, 1e-3, 7.0, -0.0];
    for (got, w) in m.as_slice().iter().zip(want) {
        assert_eq!(got.to_bits(), (w as f64).to_bits());
    }
    assert_eq!(encode_actb(&m, Dtype::F32), fs::read(&path).unwrap());
}

#[test]
fn empty_matrix_fixture() {
    let m = read_actb(fixture("empty_0x4_f64.actb")).unwrap();
    assert_eq!(m.shape(), (0, 4));
}

#[test]
fn malformed_headers_name_the_field() {
    assert_eq!(format_field("bad_magic.actb"), "magic");
    assert_eq!(format_field("bad_version.actb"), "version");
    assert_eq!(format_field("bad_dtype.actb"), "dtype");
    assert_eq!(format_field("short_header.actb"), "header");
}

#[test]
fn payload_size_mismatch_is_a_length_error() {
    for (name, expected, actual) in [
        ("truncated_payload.actb", 32, 24),
        ("trailing_bytes.actb", 8, 16),
    ] {
        match read_actb(fixture(name)) {
            Err(e @ Error::Length { .. }) => {
                let Error::Length {
                    expected: x,
                    actual: a,
                    ..
                } = &e
                else {
                    unreachable!()
                };
                assert_eq!((*x, *a), (expected, actual), "{name}");
                assert_eq!(e.exit_code(), 3);
            }
            other => panic!("{name}: expected a length error, got {other:?}"),
        }
    }
}

#[test]
fn f32_round_trip_is_within_single_rounding() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.actb");
    let m = Matrix::from_fn(17, 9, |i, j| {
        ((i * 31 + j * 7) as f64).sin() * 10f64.powi(j as i32 - 4)
    });
    write_actb(&path, &m, Dtype::F32).unwrap();
    let back = read_actb(&path).unwrap();
    for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
        assert!((a - b).abs() <= a.abs() * 2f64.powi(-24), "{a} vs {b}");
    }
    write_actb(&path, &m, Dtype::F64).unwrap();
    assert_eq!(read_actb(&path).unwrap(), m);
}

fn meta(rows: u64) -> DumpMetadata {
    DumpMetadata {
        model_id: "fixture".into(),
        pre_layer: 2,
        post_layer: 5,
        seq_len: rows,
        num_sequences: 1,
        token_count: rows,
        seed: 0,
        source: DumpSource::Exporter,
    }
}

#[test]
fn calibration_pair_round_trip_and_meta_keys() {
    let dir = tempfile::tempdir().unwrap();
    let pre = Matrix::from_fn(6, 4, |i, j| (i + j) as f64);
    let post = pre.scale(2.0);
    write_calibration_pair(dir.path(), &pre, &post, &meta(6), Dtype::F64).unwrap();
    let (p, q, m) = load_calibration_pair(dir.path()).unwrap();
    assert_eq!((p, q, m), (pre, post, meta(6)));

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    let mut keys: Vec<&str> = json
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        [
            "model_id",
            "num_sequences",
            "post_layer",
            "pre_layer",
            "seed",
            "seq_len",
            "source",
            "token_count"
        ]
    );
    assert_eq!(json["source"], "exporter");
}

#[test]
fn inconsistent_meta_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pre = Matrix::zeros(6, 4);
    assert!(write_calibration_pair(dir.path(), &pre, &pre, &meta(5), Dtype::F64).is_err());

    write_calibration_pair(dir.path(), &pre, &pre, &meta(6), Dtype::F64).unwrap();
    write_actb(
        dir.path().join("post.actb"),
        &Matrix::zeros(5, 4),
        Dtype::F64,
    )
    .unwrap();
    let err = load_calibration_pair(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);

    write_actb(dir.path().join("post.actb"), &pre, Dtype::F64).unwrap();
    let text = fs::read_to_string(dir.path().join("meta.json")).unwrap();
    fs::write(
        dir.path().join("meta.json"),
        text.replacen('{', "{\"extra\": 1,", 1),
    )
    .unwrap();
    assert_eq!(
        load_calibration_pair(dir.path()).unwrap_err().exit_code(),
        3
    );
}
