mod common;

use std::path::Path;

use common::{arb_stack, cli};
use emccd_cal::cli::EXIT_IO;
use emccd_cal::frameio::{
    decode_stack, encode_stack, read_meta, read_stack, write_stack, Provenance, HEADER_LEN,
};
use emccd_cal::readout::render_dark_stack;
use emccd_cal::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn emf1_round_trip(stack in arb_stack()) {
        let bytes = encode_stack(&stack).unwrap();
        let back = decode_stack(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back, stack);
    }

    #[test]
    fn every_truncation_is_rejected(stack in arb_stack(), cut in 0usize..usize::MAX) {
        let bytes = encode_stack(&stack).unwrap();
        let cut = cut % bytes.len();
        prop_assert!(decode_stack(&bytes[..cut], Path::new("mem")).is_err());
    }
}

#[test]
fn files_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dark.emf");
    let stack = render_dark_stack(8, 4, 3, &common::TRUTH, 1).unwrap();
    let prov = Provenance {
        seed: Some(1),
        params: serde_json::json!({"mode": "dark"}),
    };
    write_stack(&stack, &path, &prov).unwrap();
    assert_eq!(read_stack(&path).unwrap(), stack);
    let meta = read_meta(&path).unwrap();
    assert_eq!(
        (meta.kind.as_str(), meta.width, meta.n_frames),
        ("counts", 8, 3)
    );
    assert_eq!(
        std::fs::metadata(&path).unwrap().len() as usize,
        HEADER_LEN + 8 * 4 * 3 * 2
    );
}

fn damaged(bytes: &[u8]) -> Error {
    decode_stack(bytes, Path::new("x.emf")).unwrap_err()
}

#[test]
fn damaged_headers_map_to_errors() {
    let stack = render_dark_stack(4, 4, 2, &common::TRUTH, 2).unwrap();
    let good = encode_stack(&stack).unwrap();

    let mut b = good.clone();
    b[0] = b'X';
    assert!(matches!(damaged(&b), Error::BadMagic { .. }));

    let mut b = good.clone();
    b[4] = 2;
    assert!(matches!(
        damaged(&b),
        Error::UnsupportedVersion { version: 2, .. }
    ));

    let mut b = good.clone();
    b[6] = 7;
    assert!(matches!(damaged(&b), Error::UnknownDtype { dtype: 7, .. }));

    let mut b = good.clone();
    b[8] = 5;
    assert!(matches!(damaged(&b), Error::TruncatedPayload { .. }));

    assert!(matches!(
        damaged(&good[..10]),
        Error::TruncatedPayload { .. }
    ));
    assert!(matches!(
        damaged(&good[..good.len() - 1]),
        Error::TruncatedPayload { .. }
    ));

    let mut b = good;
    b.push(0);
    assert!(matches!(damaged(&b), Error::TrailingData { extra: 1, .. }));
}

#[test]
fn damaged_files_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let stack = render_dark_stack(16, 16, 2, &common::TRUTH, 3).unwrap();
    let bytes = encode_stack(&stack).unwrap();
    let out = dir.path().to_str().unwrap();

    let corrupt = dir.path().join("corrupt.emf");
    let mut b = bytes.clone();
    b[..4].copy_from_slice(b"EMF2");
    std::fs::write(&corrupt, &b).unwrap();
    assert_eq!(
        cli(&["fit", "--dark", corrupt.to_str().unwrap(), "--out", out]),
        EXIT_IO
    );

    let truncated = dir.path().join("truncated.emf");
    std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(
        cli(&["fit", "--dark", truncated.to_str().unwrap(), "--out", out]),
        EXIT_IO
    );

    let missing = dir.path().join("missing.emf");
    assert_eq!(
        cli(&["fit", "--dark", missing.to_str().unwrap(), "--out", out]),
        EXIT_IO
    );
}
