use std::fs;

use proptest::prelude::*;

use fusionkit::embedstore::{
    decode_records, encode_records, manifest_path, read_store, write_store, Embedding, EmbeddingRecord,
    EmbeddingStore, Manifest, Role, FORMAT_VERSION, MAGIC,
};
use fusionkit::{Error, Metric};

fn record_strategy(dim: usize, classes: i32) -> impl Strategy<Value = EmbeddingRecord> {
    (
        "[a-z0-9:_-]{1,12}",
        0u8..3,
        -1..classes,
        prop::collection::vec(-1.0f32..1.0, dim),
        prop::collection::btree_map("[a-z]{1,6}", "[ -~]{0,10}", 0..3),
    )
        .prop_filter_map("query-only unlabeled, nonzero vector", move |(id, role, class, values, tags)| {
            let role = Role::from_code(role)?;
            if class < 0 && role != Role::Query {
                return None;
            }
            let mut rec = EmbeddingRecord::new(id, role, class, Embedding::new(values).ok()?);
            for (k, v) in tags {
                rec = rec.with_tag(k, v);
            }
            Some(rec)
        })
}

fn unique_ids(mut recs: Vec<EmbeddingRecord>) -> Vec<EmbeddingRecord> {
    for (n, r) in recs.iter_mut().enumerate() {
        r.id = format!("{n}-{}", r.id);
    }
    recs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_decode_round_trip(dim in 1usize..24, recs in prop::collection::vec(record_strategy(23, 5), 1..40)) {
        let recs: Vec<EmbeddingRecord> = unique_ids(recs)
            .into_iter()
            .map(|mut r| {
                let v = r.embedding.values()[..dim].to_vec();
                r.embedding = Embedding::new(v).unwrap_or_else(|_| Embedding::new(vec![1.0; dim]).unwrap());
                r
            })
            .collect();
        let bytes = encode_records(dim, &recs).unwrap();
        let (d, back) = decode_records(&bytes).unwrap();
        prop_assert_eq!(d, dim);
        prop_assert_eq!(&back, &recs);
        prop_assert_eq!(encode_records(dim, &back).unwrap(), bytes);
    }

    #[test]
    fn any_truncation_is_rejected(recs in prop::collection::vec(record_strategy(6, 3), 1..8), cut in 0.0f64..1.0) {
        let recs = unique_ids(recs);
        let bytes = encode_records(6, &recs).unwrap();
        let at = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(decode_records(&bytes[..at.min(bytes.len() - 1)]).is_err());
    }
}

fn sample() -> (Manifest, Vec<EmbeddingRecord>) {
    let e = |v: Vec<f32>| Embedding::new(v).unwrap();
    let manifest = Manifest::new("toy", vec!["cat".into(), "dog".into()], Metric::Top1);
    let records = vec![
        EmbeddingRecord::new("t0", Role::ClassText, 0, e(vec![1.0, 0.0])).with_tag("source", "photo_template"),
        EmbeddingRecord::new("t1", Role::ClassText, 1, e(vec![0.0, 1.0])).with_tag("source", "photo_template"),
        EmbeddingRecord::new("i0", Role::ClassImage, 0, e(vec![0.8, 0.6])),
        EmbeddingRecord::new("i1", Role::ClassImage, 1, e(vec![0.6, 0.8])),
        EmbeddingRecord::new("q0", Role::Query, 0, e(vec![0.9, 0.1])),
        EmbeddingRecord::new("q?", Role::Query, -1, e(vec![0.5, 0.5])),
    ];
    (manifest, records)
}

#[test]
fn store_file_and_manifest_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.embs");
    let (manifest, records) = sample();
    write_store(&records, &manifest, &path).unwrap();
    assert!(manifest_path(&path).ends_with("toy.manifest.json"));
    assert!(manifest_path(&path).exists());

    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);

    let store = EmbeddingStore::open(&path).unwrap();
    assert_eq!(store.dim(), 2);
    assert_eq!(store.num_classes(), 2);
    assert_eq!(store.queries().count(), 2);
    let protos = store.class_protos().unwrap();
    assert_eq!(protos.len(), 2);
    assert_eq!(protos[1].class_index, 1);
}

#[test]
fn corrupt_header_fields() {
    let (_, records) = sample();
    let bytes = encode_records(2, &records).unwrap();

    let mut b = bytes.clone();
    b[..4].copy_from_slice(b"SBME");
    assert!(matches!(decode_records(&b), Err(Error::BadMagic)));

    let mut b = bytes.clone();
    b[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(decode_records(&b), Err(Error::VersionUnsupported(2))));

    let mut b = bytes.clone();
    b.extend_from_slice(&[0, 0]);
    assert!(matches!(decode_records(&b), Err(Error::Corrupt(_))));
}

#[test]
fn duplicate_ids_and_bad_labels() {
    let (manifest, mut records) = sample();
    records[1].id = "t0".into();
    let dir = tempfile::tempdir().unwrap();
    let err = write_store(&records, &manifest, &dir.path().join("x.embs")).unwrap_err();
    assert!(matches!(err, Error::DuplicateId(ref id) if id == "t0"), "{err}");

    let (_, mut records) = sample();
    records[0].class_index = 7;
    let err = write_store(&records, &manifest, &dir.path().join("x.embs")).unwrap_err();
    assert!(matches!(err, Error::ClassIndexOutOfRange { index: 7, .. }), "{err}");
}

#[test]
fn manifest_must_match_store() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.embs");
    let (manifest, records) = sample();
    write_store(&records, &manifest, &path).unwrap();
    fs::remove_file(manifest_path(&path)).unwrap();
    assert!(read_store(&path).is_err());

    let bad = Manifest::new("toy", vec!["cat".into(), "cat".into()], Metric::Top1);
    assert!(bad.validate().is_err());
}

#[test]
fn dimension_mismatch_rejected() {
    let (_, mut records) = sample();
    records[2].embedding = Embedding::new(vec![1.0, 0.0, 0.0]).unwrap();
    assert!(matches!(encode_records(2, &records), Err(Error::DimMismatch { .. })));
}
