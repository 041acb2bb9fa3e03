//! Read-only inference over one loaded model: triple scoring, link
//! completion and compliance checks against a frozen score distribution.
//!
//! Requests and responses are JSON objects keyed by labels. Every endpoint
//! is a pure function of the request, so the HTTP layer is a thin adapter
//! around [`InferenceService::handle`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use edgekg_core::checkpoint;
use edgekg_core::pdqa::{self, fit_distribution, ScoreDistribution};
use edgekg_core::{CandidateScorer, Dictionary, EmbeddingModel, Error, Result, Side, Split, Triple, TripleStore};
use serde::{Deserialize, Serialize};

use crate::config::RuntimeConfig;

pub const OUT_OF_VOCABULARY: &str = "out-of-vocabulary";

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteRequest {
    #[serde(default)]
    pub head: Option<String>,
    pub relation: String,
    #[serde(default)]
    pub tail: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PdqaRequest {
    pub triples: Vec<ScoreRequest>,
    #[serde(default)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreResponse {
    pub status: &'static str,
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub score: Option<f64>,
    pub z: Option<f64>,
    pub flagged: bool,
    /// Labels the model does not know, as `slot:label`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub unknown: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub entity: String,
    pub score: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Query {
    pub head: Option<String>,
    pub relation: String,
    pub tail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionResult {
    pub status: &'static str,
    pub query: Query,
    pub candidates: Vec<Candidate>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub unknown: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdqaRecord {
    pub index: usize,
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub score: Option<f64>,
    pub z: Option<f64>,
    pub flagged: bool,
    pub reason: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdqaResponse {
    pub status: &'static str,
    pub threshold: f64,
    pub flagged: usize,
    /// Ascending by z, out-of-vocabulary records first.
    pub records: Vec<PdqaRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub model: &'static str,
    pub dim: usize,
    pub entities: usize,
    pub relations: usize,
    pub parameters: usize,
    pub nonzero_parameters: usize,
    pub reference_mean: f64,
    pub reference_stddev: f64,
}

/// A rejected request: HTTP status plus message.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestError {
    pub status: u16,
    pub message: String,
}

impl RequestError {
    fn bad(message: impl Into<String>) -> Self {
        Self {
            status: 400,
            message: message.into(),
        }
    }

    fn body(&self) -> String {
        serde_json::json!({ "status": "error", "message": self.message }).to_string()
    }
}

/// Scores beyond the vocabulary sit at `u32::MAX`, which no model covers.
const UNKNOWN_ID: u32 = u32::MAX;

#[derive(Debug)]
pub struct InferenceService {
    model: EmbeddingModel,
    entities: Dictionary,
    relations: Dictionary,
    reference: ScoreDistribution,
    threshold: f64,
    max_batch: usize,
    top_k_default: usize,
}

impl InferenceService {
    pub fn new(
        model: EmbeddingModel,
        entities: Dictionary,
        relations: Dictionary,
        reference: ScoreDistribution,
        config: &RuntimeConfig,
    ) -> Result<Self> {
        config.validate()?;
        if entities.len() != model.num_entities() || relations.len() != model.num_relations() {
            return Err(Error::Shape(format!(
                "dictionaries have {} entities and {} relations, the model {} and {}",
                entities.len(),
                relations.len(),
                model.num_entities(),
                model.num_relations()
            )));
        }
        Ok(Self {
            model,
            entities,
            relations,
            reference,
            threshold: config.pdqa_threshold,
            max_batch: config.max_batch,
            top_k_default: config.top_k_default,
        })
    }

    /// Loads checkpoint, dictionaries and reference distribution. Without a
    /// reference file the distribution is fitted once on the training split
    /// of the dataset.
    pub fn load(config: &RuntimeConfig) -> Result<Self> {
        let need = |p: &Option<std::path::PathBuf>, what: &str| {
            p.clone().ok_or_else(|| Error::Config(format!("{what} is required")))
        };
        let model = checkpoint::load(need(&config.model_checkpoint_path, "model_checkpoint_path")?)?.model;
        let store = TripleStore::open(need(&config.data_path, "data_path")?)?;
        let reference = match &config.reference_distribution_path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read reference {}: {e}", path.display())))?;
                ScoreDistribution::parse(&text)?
            }
            None => fit_reference(&model, &store)?,
        };
        Self::new(model, store.entities().clone(), store.relations().clone(), reference, config)
    }

    pub fn model(&self) -> &EmbeddingModel {
        &self.model
    }

    pub fn reference(&self) -> &ScoreDistribution {
        &self.reference
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok",
            model: self.model.kind().name(),
            dim: self.model.dim(),
            entities: self.model.num_entities(),
            relations: self.model.num_relations(),
            parameters: self.model.parameter_count(),
            nonzero_parameters: self.model.nonzero_count(),
            reference_mean: self.reference.mean,
            reference_stddev: self.reference.stddev,
        }
    }

    fn resolve(&self, req: &ScoreRequest, unknown: &mut Vec<String>) -> Triple {
        let mut id = |dict: &Dictionary, slot: &str, label: &str| {
            dict.id(label).unwrap_or_else(|| {
                unknown.push(format!("{slot}:{label}"));
                UNKNOWN_ID
            })
        };
        Triple::new(
            id(&self.entities, "head", &req.head),
            id(&self.relations, "relation", &req.relation),
            id(&self.entities, "tail", &req.tail),
        )
    }

    pub fn score(&self, req: &ScoreRequest) -> ScoreResponse {
        let mut unknown = Vec::new();
        let t = self.resolve(req, &mut unknown);
        let (status, score, z, flagged) = if unknown.is_empty() {
            let s = self.model.score_triple(&t);
            let z = self.reference.z(s);
            ("ok", Some(s), Some(z), z < self.threshold)
        } else {
            (OUT_OF_VOCABULARY, None, None, true)
        };
        ScoreResponse {
            status,
            head: req.head.clone(),
            relation: req.relation.clone(),
            tail: req.tail.clone(),
            score,
            z,
            flagged,
            unknown,
        }
    }

    /// Top-k entities for the open slot, by descending score (ties by id).
    pub fn complete(&self, req: &CompleteRequest) -> std::result::Result<CompletionResult, RequestError> {
        let (side, anchor_label) = match (&req.head, &req.tail) {
            (Some(h), None) => (Side::Tail, h),
            (None, Some(t)) => (Side::Head, t),
            _ => return Err(RequestError::bad("give exactly one of head or tail")),
        };
        let k = req.k.unwrap_or(self.top_k_default);
        if k == 0 || k > self.max_batch {
            return Err(RequestError::bad(format!("k must be in 1..={}", self.max_batch)));
        }
        let query = Query {
            head: req.head.clone(),
            relation: req.relation.clone(),
            tail: req.tail.clone(),
        };
        let mut unknown = Vec::new();
        let slot = if side == Side::Tail { "head" } else { "tail" };
        let anchor = self.entities.id(anchor_label);
        let relation = self.relations.id(&req.relation);
        if anchor.is_none() {
            unknown.push(format!("{slot}:{anchor_label}"));
        }
        if relation.is_none() {
            unknown.push(format!("relation:{}", req.relation));
        }
        let (Some(anchor), Some(relation)) = (anchor, relation) else {
            return Ok(CompletionResult {
                status: OUT_OF_VOCABULARY,
                query,
                candidates: Vec::new(),
                unknown,
            });
        };
        let mut row = vec![0.0; self.model.num_entities()];
        CandidateScorer::score_candidates(&self.model, side, anchor, relation, &mut row);
        let mut order: Vec<u32> = (0..row.len() as u32).collect();
        let k = k.min(order.len());
        let by_score = |a: &u32, b: &u32| row[*b as usize].total_cmp(&row[*a as usize]).then(a.cmp(b));
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, by_score);
            order.truncate(k);
        }
        order.sort_unstable_by(by_score);
        let candidates = order
            .into_iter()
            .map(|e| Candidate {
                entity: self.entities.label(e).unwrap_or_default().to_owned(),
                score: row[e as usize],
                z_score: self.reference.z(row[e as usize]),
            })
            .collect();
        Ok(CompletionResult {
            status: "ok",
            query,
            candidates,
            unknown,
        })
    }

    /// Compliance check of a batch against the frozen reference.
    pub fn pdqa(&self, req: &PdqaRequest) -> std::result::Result<PdqaResponse, RequestError> {
        if req.triples.len() > self.max_batch {
            return Err(RequestError {
                status: 413,
                message: format!("batch of {} exceeds max_batch {}", req.triples.len(), self.max_batch),
            });
        }
        let threshold = req.threshold.unwrap_or(self.threshold);
        let batch: Vec<Triple> = req.triples.iter().map(|r| self.resolve(r, &mut Vec::new())).collect();
        let report = pdqa::assess_streaming(&self.model, &self.reference, &batch, threshold)
            .map_err(|e| RequestError::bad(e.to_string()))?;
        let records = report
            .records
            .iter()
            .map(|r| {
                let src = &req.triples[r.index];
                PdqaRecord {
                    index: r.index,
                    head: src.head.clone(),
                    relation: src.relation.clone(),
                    tail: src.tail.clone(),
                    score: r.score,
                    z: r.z,
                    flagged: r.flagged,
                    reason: r.reason.map(|x| x.name()),
                }
            })
            .collect();
        Ok(PdqaResponse {
            status: "ok",
            threshold,
            flagged: report.num_flagged(),
            records,
        })
    }

    /// Dispatches one request; returns the HTTP status and JSON body.
    pub fn handle(&self, method: &str, path: &str, body: &[u8]) -> (u16, String) {
        fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> std::result::Result<T, RequestError> {
            serde_json::from_slice(body).map_err(|e| RequestError::bad(format!("invalid request: {e}")))
        }
        fn reply<T: Serialize>(r: std::result::Result<T, RequestError>) -> (u16, String) {
            match r {
                Ok(v) => (200, serde_json::to_string(&v).expect("responses serialize")),
                Err(e) => (e.status, e.body()),
            }
        }
        let routes: [(&str, &str); 4] = [("GET", "/health"), ("POST", "/score"), ("POST", "/complete"), ("POST", "/pdqa")];
        match (method, path) {
            ("GET", "/health") => reply(Ok(self.health())),
            ("POST", "/score") => reply(parse::<ScoreRequest>(body).map(|r| self.score(&r))),
            ("POST", "/complete") => reply(parse::<CompleteRequest>(body).and_then(|r| self.complete(&r))),
            ("POST", "/pdqa") => reply(parse::<PdqaRequest>(body).and_then(|r| self.pdqa(&r))),
            (_, p) if routes.iter().any(|(_, rp)| *rp == p) => reply::<()>(Err(RequestError {
                status: 405,
                message: format!("method {method} not allowed on {p}"),
            })),
            (_, p) => reply::<()>(Err(RequestError {
                status: 404,
                message: format!("no endpoint {p}"),
            })),
        }
    }
}

/// Fits the reference distribution on the model's scores of the training
/// split.
pub fn fit_reference(model: &EmbeddingModel, store: &TripleStore) -> Result<ScoreDistribution> {
    let train = store.split_triples(Split::Train);
    let scores: Vec<f64> = pdqa::score_batch(model, &train).into_iter().flatten().collect();
    fit_distribution(&scores)
}

/// HTTP adapter: every request goes through [`InferenceService::handle`].
pub fn router(service: Arc<InferenceService>) -> Router {
    Router::new().fallback(move |method: Method, uri: Uri, body: Bytes| {
        let service = Arc::clone(&service);
        async move {
            let (status, body) = service.handle(method.as_str(), uri.path(), &body);
            let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            Response::builder()
                .status(status)
                .header("content-type", "application/json")
                .body(axum::body::Body::from(body + "\n"))
                .map_or_else(|_| StatusCode::INTERNAL_SERVER_ERROR.into_response(), IntoResponse::into_response)
        }
    })
}

/// Binds `address` and serves until the process ends.
pub async fn serve(service: Arc<InferenceService>, address: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(address).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
