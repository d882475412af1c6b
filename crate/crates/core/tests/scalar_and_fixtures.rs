mod common;

use common::{fixture, oracle, synthetic_schema};
use toner::ingest::{corpus_stats, parse_bio, read_bio_corpus, to_bio_lines, BioOptions, SplitName};
use toner::objectives::{classification_loss, generation_loss, SignConvention};
use toner::{ClassifierLogits32, TagSet, TokenLogProbs32, TypeSchema};

fn tags(ts: &[&str]) -> TagSet {
    ts.iter().map(|t| t.to_string()).collect()
}

#[test]
fn single_precision_losses_track_the_oracle() {
    let schema = synthetic_schema(3);
    let logits = [1.5f32, -0.25, 3.0];
    let got = classification_loss(
        &ClassifierLogits32::new(logits.to_vec(), &schema).unwrap(),
        &tags(&["T0", "T2"]),
        &tags(&["T1"]),
        &schema,
        SignConvention::Verbatim,
    )
    .unwrap();
    let want = oracle::classification_loss(&[1.5, 3.0], &[-0.25], false);
    assert!((got as f64 - want).abs() < 1e-5, "{got} vs {want}");

    let lp = [-0.5f32, -2.25, -0.125];
    let got = generation_loss(&TokenLogProbs32::new(lp.to_vec()).unwrap()).unwrap();
    assert_eq!(got, 2.875);
}

#[test]
fn fixture_corpora_load_and_reencode() {
    let schema = TypeSchema::conll2003();
    let opts = BioOptions::default();
    for (file, split, n) in [
        ("toy_train.txt", SplitName::Train, 12),
        ("toy_dev.txt", SplitName::Dev, 8),
        ("toy_test.txt", SplitName::Test, 8),
        ("conll50.txt", SplitName::Test, 50),
    ] {
        let corpus = read_bio_corpus(&fixture(file), split, &schema, &opts).unwrap();
        let stats = corpus_stats(&corpus);
        assert_eq!(stats.n_examples, n, "{file}");
        assert_eq!(stats.mentions_per_type.values().sum::<u64>(), stats.n_mentions);
        for ex in &corpus.examples {
            let again = parse_bio(&to_bio_lines(ex).unwrap(), split, &schema, &opts).unwrap();
            assert_eq!(again.examples[0].mentions(), ex.mentions(), "{}", ex.id());
            assert_eq!(again.examples[0].sentence(), ex.sentence());
        }
    }
}
