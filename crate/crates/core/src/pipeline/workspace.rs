use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    audit_methods, audit_summary, decode, method_from_graphs, method_from_triage, propose, read_json, read_jsonl,
    simulate_annotations, synth, train, triage, witness, write_json, write_jsonl, AuditSummary, Context,
    DecisionCounts, Evaluation, PipelineConfig, PipelineError, TriageRow,
};
use crate::auditkit::{AnnotationStore, AuditAnnotation, AuditService, MethodOutput, PoolOutcome};
use crate::decode::SceneGraph;
use crate::pairprop::RelationCandidate;
use crate::pulearn::{load_checkpoint, logs_to_jsonl, save_checkpoint, Model, TrainOutput};
use crate::scenekit::{scene_from_jsonl, scene_to_jsonl, Scene};
use crate::sha256_hex;
use crate::viewwit::WitnessRecord;

pub const SCENE_MANIFEST: &str = "scenes/manifest.json";
const CANDIDATES: &str = "candidates.jsonl";
const WITNESS: &str = "witness.jsonl";
const TRIAGE: &str = "triage.jsonl";
const STRICT: &str = "train/strict_triage.jsonl";
const EVALUATION: &str = "train/evaluation.json";
const POOL: &str = "audit/pool.json";
const METHODS: &str = "audit/methods.json";
const ANNOTATIONS: &str = "audit/annotations.jsonl";
const SIMULATED: &str = "audit/simulated_annotations.jsonl";
const REPORT: &str = "audit/report.json";
/// Method names in the audit, in pool order.
pub const METHODS_AUDITED: [&str; 3] = ["relwitness", "baseline", "witness_memory"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    file: String,
    sha256: String,
}

/// A data directory holding one run's artifacts.
pub struct Workspace {
    root: PathBuf,
    config: PipelineConfig,
    hash: String,
    force: bool,
    ctx: Context,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, config: PipelineConfig, force: bool) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            root: root.into(),
            hash: config.hash(),
            ctx: Context::new(&config),
            config,
            force,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn context(&self) -> &Context {
        &self.ctx
    }

    fn expected(&self) -> Option<&str> {
        (!self.force).then_some(self.hash.as_str())
    }

    fn io(path: &Path, source: std::io::Error) -> PipelineError {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn write(&self, rel: &str, contents: &[u8]) -> Result<(), PipelineError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Self::io(dir, e))?;
        }
        fs::write(&path, contents).map_err(|e| Self::io(&path, e))
    }

    fn read_bytes(&self, rel: &str) -> Result<Vec<u8>, PipelineError> {
        let path = self.root.join(rel);
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(PipelineError::MissingInput(path.display().to_string()))
            }
            Err(e) => Err(Self::io(&path, e)),
        }
    }

    fn read(&self, rel: &str) -> Result<String, PipelineError> {
        String::from_utf8(self.read_bytes(rel)?).map_err(|e| PipelineError::Artifact {
            kind: rel.into(),
            message: e.to_string(),
        })
    }

    pub fn synth(&self) -> Result<Vec<Scene>, PipelineError> {
        let scenes = synth(&self.config)?;
        let mut manifest = Vec::with_capacity(scenes.len());
        for s in &scenes {
            let file = format!("scenes/{}.jsonl", s.name);
            let text = scene_to_jsonl(s, false);
            self.write(&file, text.as_bytes())?;
            manifest.push(ManifestEntry {
                name: s.name.clone(),
                sha256: sha256_hex(text.as_bytes()),
                file,
            });
        }
        self.write(SCENE_MANIFEST, write_json("scenes", &self.hash, &manifest).as_bytes())?;
        Ok(scenes)
    }

    /// Scenes listed in the manifest, verified against their recorded digests.
    pub fn load_scenes(&self) -> Result<Vec<Scene>, PipelineError> {
        let (_, manifest): (_, Vec<ManifestEntry>) = read_json(&self.read(SCENE_MANIFEST)?, "scenes", self.expected())?;
        manifest
            .iter()
            .map(|m| {
                let text = self.read(&m.file)?;
                if sha256_hex(text.as_bytes()) != m.sha256 {
                    return Err(PipelineError::Artifact {
                        kind: "scenes".into(),
                        message: format!("{} does not match its manifest digest", m.file),
                    });
                }
                scene_from_jsonl(&text).map_err(|e| PipelineError::Artifact {
                    kind: "scenes".into(),
                    message: format!("{}: {e}", m.file),
                })
            })
            .collect()
    }

    pub fn propose(&self) -> Result<usize, PipelineError> {
        let scenes = self.load_scenes()?;
        let cands = propose(&self.ctx, &scenes)?;
        self.write(CANDIDATES, write_jsonl("candidates", &self.hash, &cands).as_bytes())?;
        Ok(cands.len())
    }

    pub fn witness(&self) -> Result<usize, PipelineError> {
        let scenes = self.load_scenes()?;
        let (_, cands): (_, Vec<RelationCandidate>) =
            read_jsonl(&self.read(CANDIDATES)?, "candidates", self.expected())?;
        let records = witness(&self.config, &self.ctx, &scenes, &cands)?;
        self.write(WITNESS, write_jsonl("witness", &self.hash, &records).as_bytes())?;
        Ok(records.len())
    }

    pub fn triage(&self) -> Result<DecisionCounts, PipelineError> {
        let scenes = self.load_scenes()?;
        let (_, records): (_, Vec<WitnessRecord>) = read_jsonl(&self.read(WITNESS)?, "witness", self.expected())?;
        let rows = triage(&self.config, &self.ctx, &scenes, &records)?;
        self.write(TRIAGE, write_jsonl("triage", &self.hash, &rows).as_bytes())?;
        Ok(DecisionCounts::of(rows.iter().map(|r| &r.decision)))
    }

    fn save_model(&self, name: &str, out: &TrainOutput) -> Result<(), PipelineError> {
        let (header, bytes) = save_checkpoint(&out.model, &self.hash);
        self.write(&format!("train/{name}.json"), header.as_bytes())?;
        self.write(&format!("train/{name}.bin"), &bytes)?;
        self.write(&format!("train/{name}_log.jsonl"), logs_to_jsonl(&out.logs).as_bytes())
    }

    pub fn load_model(&self, name: &str) -> Result<Model, PipelineError> {
        let header = self.read(&format!("train/{name}.json"))?;
        let bytes = self.read_bytes(&format!("train/{name}.bin"))?;
        let (model, h) = load_checkpoint(&header, &bytes).map_err(|e| PipelineError::Artifact {
            kind: "checkpoint".into(),
            message: e.to_string(),
        })?;
        match self.expected() {
            Some(hash) if hash != h.config_hash => Err(PipelineError::HashMismatch {
                kind: "checkpoint".into(),
                expected: hash.into(),
                found: h.config_hash,
            }),
            _ => Ok(model),
        }
    }

    /// Trains the full model and the supervised baseline. Triage inside
    /// training uses the trainer's own teacher.
    pub fn train(&self) -> Result<Evaluation, PipelineError> {
        let scenes = self.load_scenes()?;
        let result = train(&self.config, &self.ctx, &scenes)?;
        self.save_model("full", &result.full)?;
        self.save_model("baseline", &result.baseline)?;
        self.write("train/memory.jsonl", result.full.memory.to_jsonl(&self.hash).as_bytes())?;
        self.write(
            STRICT,
            write_jsonl("strict_triage", &self.hash, &result.strict).as_bytes(),
        )?;
        self.write(
            EVALUATION,
            write_json("evaluation", &self.hash, &result.evaluation).as_bytes(),
        )?;
        Ok(result.evaluation)
    }

    pub fn evaluation(&self) -> Result<Evaluation, PipelineError> {
        Ok(read_json(&self.read(EVALUATION)?, "evaluation", self.expected())?.1)
    }

    /// Decodes graphs for the full model and the baseline.
    pub fn decode(&self) -> Result<usize, PipelineError> {
        let scenes = self.load_scenes()?;
        let mut edges = 0;
        for name in ["full", "baseline"] {
            let model = self.load_model(name)?;
            for g in decode(&self.config, &self.ctx, &scenes, &model)? {
                edges += g.edges.len();
                self.write(
                    &format!("graphs/{name}/{}.json", g.header.scene_id),
                    g.to_json().as_bytes(),
                )?;
            }
        }
        Ok(edges)
    }

    fn load_graphs(&self, name: &str, scenes: &[Scene]) -> Result<Vec<SceneGraph>, PipelineError> {
        scenes
            .iter()
            .map(|s| {
                let g = SceneGraph::from_json(&self.read(&format!("graphs/{name}/{}.json", s.name))?)?;
                match self.expected() {
                    Some(h) if h != g.header.config_hash => Err(PipelineError::HashMismatch {
                        kind: "scene_graph".into(),
                        expected: h.into(),
                        found: g.header.config_hash,
                    }),
                    _ => Ok(g),
                }
            })
            .collect()
    }

    /// Builds the blind pool from the decoded graphs of both models and the
    /// strict MissPositive set.
    pub fn audit_pool(&self) -> Result<PoolOutcome, PipelineError> {
        let scenes = self.load_scenes()?;
        let (_, strict): (_, Vec<TriageRow>) = read_jsonl(&self.read(STRICT)?, "strict_triage", self.expected())?;
        let methods = vec![
            method_from_graphs(
                METHODS_AUDITED[0],
                &self.ctx,
                &scenes,
                &self.load_graphs("full", &scenes)?,
            )?,
            method_from_graphs(
                METHODS_AUDITED[1],
                &self.ctx,
                &scenes,
                &self.load_graphs("baseline", &scenes)?,
            )?,
            method_from_triage(METHODS_AUDITED[2], &self.ctx, &scenes, &strict)?,
        ];
        let outcome = audit_methods(&self.config, &methods)?;
        self.write(METHODS, write_json("methods", &self.hash, &methods).as_bytes())?;
        self.write(POOL, write_json("audit_pool", &self.hash, &outcome).as_bytes())?;
        Ok(outcome)
    }

    pub fn load_pool(&self) -> Result<PoolOutcome, PipelineError> {
        Ok(read_json(&self.read(POOL)?, "audit_pool", self.expected())?.1)
    }

    pub fn annotation_store_path(&self) -> PathBuf {
        self.root.join(ANNOTATIONS)
    }

    /// The audit service over the stored pool, appending to the workspace's
    /// annotation log.
    pub fn audit_service(&self) -> Result<AuditService, PipelineError> {
        let scenes = self.load_scenes()?;
        let pool = self.load_pool()?;
        let path = self.annotation_store_path();
        let store = AnnotationStore::open(&path).map_err(|e| PipelineError::Artifact {
            kind: "annotations".into(),
            message: e.to_string(),
        })?;
        Ok(AuditService::new(
            pool.candidates,
            scenes,
            self.config.audit.annotators.clone(),
            store,
        )?)
    }

    /// Metrics for every audited method. With `simulate`, labels come from
    /// the simulated annotators instead of the annotation log.
    pub fn audit_report(&self, simulate: bool) -> Result<AuditSummary, PipelineError> {
        let scenes = self.load_scenes()?;
        let pool = self.load_pool()?;
        let (_, methods): (_, Vec<MethodOutput>) = read_json(&self.read(METHODS)?, "methods", self.expected())?;
        let annotations: Vec<AuditAnnotation> = if simulate {
            let a = simulate_annotations(&self.config.audit, &self.ctx, &scenes, &pool.candidates)?;
            self.write(SIMULATED, write_jsonl("annotations", &self.hash, &a).as_bytes())?;
            a
        } else {
            let path = self.annotation_store_path();
            if !path.exists() {
                return Err(PipelineError::MissingInput(path.display().to_string()));
            }
            AnnotationStore::open(&path)
                .map_err(|e| PipelineError::Artifact {
                    kind: "annotations".into(),
                    message: e.to_string(),
                })?
                .snapshot()
        };
        let summary = audit_summary(
            &self.config.audit,
            &self.ctx,
            &scenes,
            &pool.candidates,
            &annotations,
            &methods,
        )?;
        self.write(REPORT, write_json("audit_report", &self.hash, &summary).as_bytes())?;
        Ok(summary)
    }
}
