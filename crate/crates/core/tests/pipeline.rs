use std::sync::Arc;

use chronolink::eval::ed_accuracy;
use chronolink::features::{FEATURE_NAMES, N_FEATURES};
use chronolink::gbt::{fit, FeatureMatrix, GbtModel, Hyperparams};
use chronolink::index::{EmbeddingMatrix, FileProvider};
use chronolink::linker::{
    default_threshold_grid, link, link_batch, predictions_from_jsonl, predictions_to_jsonl, train, tune_nil_threshold,
    LinkError, LinkPrediction, PipelineConfig, Retriever, Stage,
};
use chronolink::synthetic::{Fixture, BLOCK_SIZE};

fn trained(seed: u64) -> (Fixture, PipelineConfig) {
    let f = Fixture::build(seed);
    let r = f.retriever(BLOCK_SIZE).unwrap();
    let (model, _) = train(&Fixture::mentions(&f.train), &r, &Fixture::hyperparams(), seed).unwrap();
    let config = PipelineConfig::new(r, Arc::new(model), 0.5).unwrap();
    (f, config)
}

fn all_ok(results: Vec<Result<LinkPrediction, LinkError>>) -> Vec<LinkPrediction> {
    results.into_iter().map(|r| r.unwrap()).collect()
}

#[test]
fn fixture_accuracy_holds_across_seeds() {
    for seed in [0u64, 3, 8] {
        let (f, open) = trained(seed);
        let open = PipelineConfig { nil_threshold: 0.0, ..open };
        let dev = Fixture::mentions(&f.dev);
        let threshold = tune_nil_threshold(&all_ok(link_batch(&dev, &open, 2)), &dev, &default_threshold_grid()).unwrap();
        let config = PipelineConfig { nil_threshold: threshold, ..open };
        let test = Fixture::mentions(&f.test);
        let report = ed_accuracy(&all_ok(link_batch(&test, &config, 2)), &test).unwrap();
        assert!(report.micro_accuracy >= 0.95, "seed {seed}: {report:?}");
    }
}

#[test]
fn batch_composes_single_links() {
    let (f, config) = trained(1);
    let test = Fixture::mentions(&f.test);
    assert!(link_batch(&[], &config, 1).is_empty());
    let pair = all_ok(link_batch(&test[..2], &config, 2));
    assert_eq!(pair[0], link(&test[0], &config).unwrap());
    assert_eq!(pair[1], link(&test[1], &config).unwrap());
}

#[test]
fn predictions_satisfy_ranking_invariants() {
    let (f, config) = trained(2);
    let preds = all_ok(link_batch(&Fixture::mentions(&f.test), &config, 4));
    for p in &preds {
        assert!(p.ranked.windows(2).all(|w| w[0].1 >= w[1].1));
        match &p.decision {
            Some(q) => {
                assert_eq!(q, &p.ranked[0].0);
                assert_eq!(p.score, p.ranked[0].1);
                assert!(p.score >= config.nil_threshold);
            }
            None => assert_eq!(p.score, 0.0),
        }
    }
    let text = predictions_to_jsonl(&preds);
    assert_eq!(predictions_from_jsonl(&text).unwrap(), preds);
}

#[test]
fn zero_threshold_never_nil() {
    let (f, config) = trained(4);
    let config = PipelineConfig { nil_threshold: 0.0, ..config };
    assert!(all_ok(link_batch(&Fixture::mentions(&f.test), &config, 1)).iter().all(|p| !p.is_nil()));
}

#[test]
fn provider_failures_are_collected_per_mention() {
    let (f, config) = trained(5);
    let test = Fixture::mentions(&f.test);
    let mut sidecar = EmbeddingMatrix::new(f.provider.dim);
    sidecar.push(test[0].numeric_key(), &f.provider.embed_text(&test[0].surface)).unwrap();
    let retriever = Retriever::new(
        Arc::new(FileProvider::new(sidecar)),
        config.retriever.index.clone(),
        config.retriever.lookup.clone(),
        BLOCK_SIZE,
    )
    .unwrap();
    let partial = PipelineConfig { retriever, ..config };
    let results = link_batch(&test[..3], &partial, 2);
    assert!(results[0].is_ok());
    for r in &results[1..] {
        assert!(matches!(r, Err(LinkError::Stage { stage: Stage::Embed, .. })));
    }
}

#[test]
fn config_validation() {
    let (f, config) = trained(6);
    assert!(matches!(
        PipelineConfig::new(config.retriever.clone(), config.model.clone(), 1.5),
        Err(LinkError::Config(_))
    ));
    assert!(matches!(f.retriever(0), Err(LinkError::Config(_))));
    let narrow = GbtModel {
        feature_names: vec!["x".into()],
        ..(*config.model).clone()
    };
    assert!(matches!(
        PipelineConfig::new(config.retriever.clone(), Arc::new(narrow), 0.4),
        Err(LinkError::Config(_))
    ));
}

#[test]
fn type_match_never_lowers_probability() {
    // Rows where the label follows type agreement; other columns are noise.
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..80u32 {
        let tm = f64::from(i % 2);
        let noise = f64::from((i * 37) % 11);
        let mut r = [noise, 0.1, 0.9, 0.5, 0.5, f64::from(i % 5), 0.5, tm, f64::from(i % 7)];
        r[1] = noise / 20.0;
        rows.push(r);
        labels.push(u8::from(tm == 1.0 && i % 10 != 1));
    }
    let x = FeatureMatrix::from_feature_rows(&rows).unwrap();
    let hp = Hyperparams {
        learning_rate: 0.3,
        max_depth: 1,
        min_samples_leaf: 0.01,
        min_samples_split: 0.02,
        n_estimators: 25,
        block_size: 10,
        c_neg_size: 2,
    };
    let model = fit(&x, &labels, &hp, 0).unwrap();
    assert_eq!(model.feature_names.len(), N_FEATURES);
    let tm_col = FEATURE_NAMES.iter().position(|n| *n == "type_match").unwrap();
    for r in &rows {
        let mut lo = *r;
        let mut hi = *r;
        lo[tm_col] = 0.0;
        hi[tm_col] = 1.0;
        assert!(model.predict_proba(&hi).unwrap() >= model.predict_proba(&lo).unwrap());
    }
}
