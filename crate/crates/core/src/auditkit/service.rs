use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    candidate_payload, AnnotationStore, AuditAnnotation, AuditCandidate, AuditError, AuditLabel, CandidatePayload,
    StoreError,
};
use crate::geom::Obb;
use crate::scenekit::Scene;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown candidate {0}")]
    NotFound(String),
    #[error("malformed annotation: {0}")]
    Malformed(String),
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Payload(#[from] AuditError),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            Self::NotFound(_) => 404,
            Self::Malformed(_) => 409,
            Self::UnknownAnnotator(_) => 401,
            Self::Store(_) | Self::Payload(_) => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub candidate_id: String,
    pub annotator_id: String,
    pub label: String,
    #[serde(default)]
    pub frames: Vec<usize>,
    #[serde(default)]
    pub region_3d: Option<Obb>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    pub id: String,
    pub phrase: String,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    /// Candidates with at least one label.
    pub labeled: usize,
    /// Candidates labeled by each annotator.
    pub done: BTreeMap<String, usize>,
}

/// Serves a fixed pool to a fixed set of annotators.
pub struct AuditService {
    pool: Vec<AuditCandidate>,
    index: HashMap<String, usize>,
    scenes: HashMap<String, Scene>,
    annotators: BTreeSet<String>,
    store: AnnotationStore,
}

impl AuditService {
    pub fn new(
        pool: Vec<AuditCandidate>,
        scenes: Vec<Scene>,
        annotators: impl IntoIterator<Item = String>,
        store: AnnotationStore,
    ) -> Result<Self, AuditError> {
        let scenes: HashMap<String, Scene> = scenes.into_iter().map(|s| (s.name.clone(), s)).collect();
        if let Some(c) = pool.iter().find(|c| !scenes.contains_key(&c.scene_id)) {
            return Err(AuditError::Config(format!(
                "candidate {} references unknown scene {}",
                c.id, c.scene_id
            )));
        }
        let index = pool.iter().enumerate().map(|(k, c)| (c.id.clone(), k)).collect();
        Ok(Self {
            pool,
            index,
            scenes,
            annotators: annotators.into_iter().collect(),
            store,
        })
    }

    pub fn pool(&self) -> &[AuditCandidate] {
        &self.pool
    }

    pub fn annotations(&self) -> Vec<AuditAnnotation> {
        self.store.snapshot()
    }

    fn check_annotator(&self, annotator: &str) -> Result<(), ServiceError> {
        if self.annotators.contains(annotator) {
            Ok(())
        } else {
            Err(ServiceError::UnknownAnnotator(annotator.into()))
        }
    }

    fn candidate(&self, id: &str) -> Result<&AuditCandidate, ServiceError> {
        self.index
            .get(id)
            .map(|k| &self.pool[*k])
            .ok_or_else(|| ServiceError::NotFound(id.into()))
    }

    /// The pool in presentation order with this annotator's completion state.
    pub fn list_tasks(&self, annotator: &str) -> Result<Vec<TaskItem>, ServiceError> {
        self.check_annotator(annotator)?;
        let done: BTreeSet<String> = self
            .store
            .snapshot()
            .into_iter()
            .filter(|a| a.annotator_id == annotator)
            .map(|a| a.candidate_id)
            .collect();
        Ok(self
            .pool
            .iter()
            .map(|c| TaskItem {
                id: c.id.clone(),
                phrase: c.phrase.clone(),
                done: done.contains(&c.id),
            })
            .collect())
    }

    pub fn get_candidate(&self, id: &str) -> Result<CandidatePayload, ServiceError> {
        let c = self.candidate(id)?;
        Ok(candidate_payload(c, &self.scenes[&c.scene_id])?)
    }

    /// Validates and durably stores an annotation. A later submission by the
    /// same annotator supersedes the earlier one; both stay in the log.
    pub fn post_annotation(&self, request: AnnotationRequest) -> Result<AuditAnnotation, ServiceError> {
        self.check_annotator(&request.annotator_id)?;
        let c = self.candidate(&request.candidate_id)?;
        let label = AuditLabel::parse(&request.label)
            .ok_or_else(|| ServiceError::Malformed(format!("unknown label {:?}", request.label)))?;
        let frames = self.scenes[&c.scene_id].frames.len();
        if let Some(f) = request.frames.iter().find(|f| **f >= frames) {
            return Err(ServiceError::Malformed(format!("frame {f} out of range")));
        }
        let mut selected = request.frames;
        selected.sort_unstable();
        selected.dedup();
        let annotation = AuditAnnotation {
            candidate_id: request.candidate_id,
            annotator_id: request.annotator_id,
            label,
            frames: selected,
            region_3d: request.region_3d,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
        };
        self.store.append(annotation.clone())?;
        Ok(annotation)
    }

    pub fn progress(&self) -> Progress {
        let mut per: BTreeMap<String, BTreeSet<String>> =
            self.annotators.iter().map(|a| (a.clone(), BTreeSet::new())).collect();
        let mut labeled = BTreeSet::new();
        for a in self.store.snapshot() {
            labeled.insert(a.candidate_id.clone());
            per.entry(a.annotator_id).or_default().insert(a.candidate_id);
        }
        Progress {
            total: self.pool.len(),
            labeled: labeled.len(),
            done: per.into_iter().map(|(k, v)| (k, v.len())).collect(),
        }
    }
}
