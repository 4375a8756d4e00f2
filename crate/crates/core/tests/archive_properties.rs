use std::collections::BTreeSet;
use std::sync::Arc;
use std::thread;

use benchforge::config::Scalar;
use benchforge::provenance::{Archive, Op, Predicate, RecordFilter};
use benchforge::testkit::{query_oracle, random_predicate, random_record};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn queries_match_linear_scan() {
    let dir = tempfile::tempdir().unwrap();
    let archive = Archive::open(dir.path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ids = Vec::new();
    for i in 0..200 {
        let id = archive.store(&random_record(&mut rng, i)).unwrap();
        if rng.random_bool(0.4) {
            archive.annotate(&id, "verdict", Scalar::from(*["ok", "slow"].choose(&mut rng).unwrap())).unwrap();
        }
        ids.push(id);
    }
    let records: Vec<_> = ids.iter().map(|id| archive.fetch(id).unwrap()).collect();

    let mut nonempty = 0;
    for round in 0..300 {
        let n = rng.random_range(0..=3);
        let preds: Vec<_> = (0..n).map(|_| random_predicate(&mut rng)).collect();
        let filter = RecordFilter::new(
            preds.iter().map(|(k, op, v)| Predicate::new(k.clone(), op.parse::<Op>().unwrap(), v.clone())).collect(),
        );
        let got: Vec<String> = filter.select(&records).into_iter().map(String::from).collect();
        if round % 10 == 0 {
            assert_eq!(archive.query(&filter).unwrap(), got);
        }
        let want = query_oracle::scan(&records, &preds);
        assert_eq!(got, want, "{preds:?}");
        if !got.is_empty() && n > 0 {
            nonempty += 1;
        }
    }
    assert!(nonempty > 30, "filters too selective to be informative: {nonempty}");
    assert_eq!(archive.query(&RecordFilter::default()).unwrap().len(), 200);
}

#[test]
fn machine_filter_example() {
    let dir = tempfile::tempdir().unwrap();
    let archive = Archive::open(dir.path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ids = Vec::new();
    for machine in ["mock-A", "mock-B", "mock-A"] {
        let mut rec = random_record(&mut rng, 0);
        rec.metadata.machine = machine.into();
        ids.push(archive.store(&rec).unwrap());
    }
    let filter = RecordFilter::parse_all(&["metadata.machine=mock-A"]).unwrap();
    assert_eq!(archive.query(&filter).unwrap(), vec![ids[0].clone(), ids[2].clone()]);
    assert!(RecordFilter::parse_all(&["metadata.machine<true"]).is_err());
}

#[test]
fn concurrent_stores_get_distinct_ids() {
    let dir = tempfile::tempdir().unwrap();
    let archive = Arc::new(Archive::open(dir.path()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let template = Arc::new(random_record(&mut rng, 0));
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let (archive, template) = (archive.clone(), template.clone());
            thread::spawn(move || (0..125).map(|_| archive.store(&template).unwrap()).collect::<Vec<_>>())
        })
        .collect();
    let ids: BTreeSet<String> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    assert_eq!(ids.len(), 1000);
    assert_eq!(archive.list().unwrap().len(), 1000);
    let leftovers = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(".tmp-"))
        .count();
    assert_eq!(leftovers, 0);
}

#[test]
fn stored_bytes_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let archive = Archive::open(dir.path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..20 {
        let mut rec = random_record(&mut rng, i);
        let blob: Vec<u8> = (0..rng.random_range(0..4096)).map(|_| rng.random()).collect();
        rec.raw_files.insert("blob.bin".into(), blob);
        let id = archive.store(&rec).unwrap();
        let got = archive.fetch(&id).unwrap();
        assert_eq!(got.raw_files, rec.raw_files);
        assert_eq!(got.resolved_config.as_bytes(), rec.resolved_config.as_bytes());
        assert_eq!((got.run_id, got.requester, got.combination, got.metadata), (rec.run_id, rec.requester, rec.combination, rec.metadata));
    }
}
