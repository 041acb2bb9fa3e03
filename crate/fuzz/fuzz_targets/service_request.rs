#![no_main]

use std::sync::OnceLock;

use edgekg_core::pdqa::ScoreDistribution;
use edgekg_core::{Dictionary, EmbeddingModel, ModelKind};
use edgekg_runtime::config::RuntimeConfig;
use edgekg_runtime::service::InferenceService;
use libfuzzer_sys::fuzz_target;

fn service() -> &'static InferenceService {
    static SERVICE: OnceLock<InferenceService> = OnceLock::new();
    SERVICE.get_or_init(|| {
        let model = EmbeddingModel::init(ModelKind::RotatE, 4, 6, 2, 0).unwrap();
        let entities = Dictionary::from_labels(["a", "b", "c", "d", "e", "f"]).unwrap();
        let relations = Dictionary::from_labels(["r", "s"]).unwrap();
        let reference = ScoreDistribution { mean: -3.0, stddev: 1.0, n: 10 };
        let config = RuntimeConfig {
            max_batch: 8,
            ..RuntimeConfig::default()
        };
        InferenceService::new(model, entities, relations, reference, &config).unwrap()
    })
}

// First byte picks the endpoint; the rest is the request body.
fuzz_target!(|data: &[u8]| {
    let Some((selector, body)) = data.split_first() else { return };
    let (method, path) = match selector % 5 {
        0 => ("POST", "/score"),
        1 => ("POST", "/complete"),
        2 => ("POST", "/pdqa"),
        3 => ("GET", "/health"),
        _ => ("POST", "/unknown"),
    };
    let (status, text) = service().handle(method, path, body);
    assert!(matches!(status, 200 | 400 | 404 | 405 | 413));
    assert!(serde_json_is_object(&text));
});

fn serde_json_is_object(text: &str) -> bool {
    text.starts_with('{') && text.ends_with('}')
}
