use esci_core::data::{synth_generate, SynthConfig};
use esci_core::sched::{example_sequences, TokenCache, WhitespaceTokenizer};
use esci_core::Exec;

#[test]
fn cache_file_round_trips_and_feeds_sequences() {
    let data = synth_generate(
        &SynthConfig {
            queries: 30,
            ..SynthConfig::default()
        },
        41,
    )
    .unwrap();
    let cache = TokenCache::build(&data.catalog, &WhitespaceTokenizer, Exec::default()).unwrap();
    assert_eq!(cache.len(), data.catalog.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tokens.bin");
    cache.save(&path).unwrap();
    let back = TokenCache::load(&path).unwrap();
    assert_eq!(back.records(), cache.records());

    let a = example_sequences(data.t2t3.examples(), &cache, &WhitespaceTokenizer).unwrap();
    let b = example_sequences(data.t2t3.examples(), &back, &WhitespaceTokenizer).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), data.t2t3.len());
}

#[test]
fn sequential_and_parallel_builds_agree() {
    let data = synth_generate(
        &SynthConfig {
            queries: 30,
            ..SynthConfig::default()
        },
        42,
    )
    .unwrap();
    let a = TokenCache::build(&data.catalog, &WhitespaceTokenizer, Exec::Sequential).unwrap();
    let b = TokenCache::build(&data.catalog, &WhitespaceTokenizer, Exec::Parallel).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn corrupted_cache_is_rejected() {
    let data = synth_generate(
        &SynthConfig {
            queries: 10,
            ..SynthConfig::default()
        },
        43,
    )
    .unwrap();
    let cache = TokenCache::build(&data.catalog, &WhitespaceTokenizer, Exec::default()).unwrap();
    let mut bytes = cache.to_bytes();
    bytes[0] ^= 0xff;
    assert!(TokenCache::from_bytes(&bytes).is_err());
    let bytes = cache.to_bytes();
    assert!(TokenCache::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}
