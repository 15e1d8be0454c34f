use jtcse::data::{
    grade, make_batches, read_corpus, read_sts, synth_corpus, write_sts, Batch, SentenceSpec, StsExample,
    SynthConfig, Vocab, CLS, PAD, SEP,
};
use jtcse::{Error, ErrorClass};
use proptest::prelude::*;

#[test]
fn vocab_is_deterministic_on_a_large_corpus() {
    let corpus = synth_corpus(&SynthConfig::new(3, 12, 1000)).unwrap();
    assert_eq!(corpus.train.len(), 1000);
    let a = Vocab::build(&corpus.train, 2048).unwrap();
    let b = Vocab::build(&corpus.train, 2048).unwrap();
    assert_eq!(a, b);
}

#[test]
fn vocab_examples() {
    let v = Vocab::build(["a b", "a"], 10).unwrap();
    assert_eq!(v.id("a"), 4);
    assert_eq!(v.id("b"), 5);
    let v = Vocab::build(["x y", "y x"], 10).unwrap();
    assert_eq!(v.id("x"), 4);
    assert!(matches!(Vocab::build(Vec::<String>::new(), 10), Err(Error::Data(_))));
    assert!(matches!(Vocab::build(["a"], 4), Err(Error::Config(_))));
}

#[test]
fn batching_examples() {
    let v = Vocab::build(["a b c"], 10).unwrap();
    let sentences: Vec<String> = (0..10).map(|i| "a b c ".repeat(i % 3 + 1)).collect();
    let batches = make_batches(&sentences, &v, 4, 16, 5).unwrap();
    assert_eq!(batches.len(), 2);
    assert_eq!(batches, make_batches(&sentences, &v, 4, 16, 5).unwrap());
    for b in &batches {
        for i in 0..b.batch_size() {
            for (id, m) in b.row_ids(i).iter().zip(b.row_mask(i)) {
                assert_eq!(*m == 0, *id == PAD);
            }
        }
    }
    assert!(matches!(make_batches(&sentences, &v, 1, 16, 5), Err(Error::Config(_))));
}

#[test]
fn sts_round_trip_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dev.tsv");
    let pairs = vec![
        StsExample::new("a b", "b a", 4.5).unwrap(),
        StsExample::new("c", "d e", 0.0).unwrap(),
    ];
    write_sts(&path, &pairs).unwrap();
    assert_eq!(read_sts(&path).unwrap(), pairs);

    let missing = dir.path().join("nope.txt");
    let err = read_corpus(&missing).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Data);
    assert_eq!(err.class().exit_code(), 3);
    assert!(err.to_string().contains("nope.txt"));

    std::fs::write(&path, "a\tb\t7\n").unwrap();
    assert!(matches!(read_sts(&path), Err(Error::Data(_))));
}

#[test]
fn synthetic_corpus_is_deterministic_and_graded() {
    let cfg = SynthConfig::new(9, 16, 200);
    let a = synth_corpus(&cfg).unwrap();
    assert_eq!(a, synth_corpus(&cfg).unwrap());
    assert_ne!(a.train, synth_corpus(&SynthConfig::new(10, 16, 200)).unwrap().train);
    assert!(a.dev.iter().all(|p| (0.0..=5.0).contains(&p.gold)));
    assert!(a.dev.iter().filter(|p| p.gold == 5.0).all(|p| p.sentence_a == p.sentence_b));
}

fn spec() -> impl Strategy<Value = SentenceSpec> {
    (0usize..24, 0usize..20, 0usize..20, 0usize..20).prop_map(|(template, a, n, v)| SentenceSpec {
        template,
        slots: [a, n, v],
    })
}

proptest! {
    #[test]
    fn gold_is_symmetric(a in spec(), b in spec()) {
        prop_assert_eq!(grade(&a, &b), grade(&b, &a));
    }

    #[test]
    fn tokenize_round_trips_in_vocab_words(words in prop::collection::vec("[a-z]{1,6}", 0..12)) {
        let text = words.join(" ");
        let v = Vocab::build([text.as_str(), "filler"], 64).unwrap();
        let ids = v.tokenize(&text.to_uppercase(), 32);
        prop_assert_eq!(ids[0], CLS);
        prop_assert_eq!(*ids.last().unwrap(), SEP);
        let back = v.detokenize(&ids[1..ids.len() - 1]);
        prop_assert_eq!(back, words.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn mask_rows_sum_to_lengths(lengths in prop::collection::vec(2usize..10, 1..6)) {
        let seqs: Vec<Vec<u32>> = lengths
            .iter()
            .map(|&n| {
                let mut s = vec![CLS];
                s.extend(std::iter::repeat_n(4, n - 2));
                s.push(SEP);
                s
            })
            .collect();
        let b = Batch::from_sequences(&seqs).unwrap();
        for (i, &n) in lengths.iter().enumerate() {
            prop_assert_eq!(b.row_mask(i).iter().map(|&m| m as usize).sum::<usize>(), n);
        }
        prop_assert_eq!(b.lengths(), lengths);
    }
}
