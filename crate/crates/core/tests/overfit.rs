use std::path::PathBuf;

use drugtag::corpus::{corpus_stats, load_column_corpus};
use drugtag::models::Architecture;
use drugtag::tags::EntityClass;
use drugtag::training::{train_with_validation, HyperParams};

fn synthetic() -> drugtag::corpus::Corpus {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/synthetic20.iob");
    load_column_corpus(&path).unwrap()
}

#[test]
fn bundled_corpus_shape() {
    let c = synthetic();
    assert_eq!(c.len(), 20);
    let stats = corpus_stats(&c);
    for class in EntityClass::ALL {
        assert!(stats.spans_of(class) >= 3, "{class}");
    }
}

#[test]
fn every_architecture_fits_the_bundled_corpus() {
    let c = synthetic();
    let hp = HyperParams {
        hidden: 25,
        window: 1,
        embedding_dim: 50,
        learning_rate: 0.1,
        dropout_rate: 0.05,
        max_epochs: 100,
        seed: 7,
        clip_norm: None,
    };
    for arch in Architecture::ALL {
        let (ckpt, record) = train_with_validation(arch, &c, &c, &hp).unwrap();
        let f1 = ckpt.evaluate(&c, false).unwrap().micro().f1();
        eprintln!("{arch}: best epoch {} F1 {f1:.2}", record.best_epoch);
        assert_eq!(f1, record.best_f1());
        assert_eq!(f1, 100.0, "{arch}");
    }
}
