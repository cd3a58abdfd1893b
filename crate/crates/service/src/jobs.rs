//! Classification jobs. A job's id is the identity of the run set it writes,
//! so resubmitting while it runs hands back the same job.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use slr_core::classifier::LabelAssignment;
use slr_core::llm::Gateway;
use slr_core::taxonomy::AnswerMode;
use slr_core::workspace::{ClassifyRequest, Workspace, WorkspaceError};
use slr_core::Clock;

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub dimension_id: String,
    pub model: String,
    pub repetitions: u32,
    /// Consolidate into final labels once every assignment exists.
    #[serde(default = "yes")]
    pub consolidate: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Completed,
    Cancelled,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub dimension_id: String,
    pub model_name: String,
    pub repetitions: u32,
    pub status: JobStatus,
    /// Assignments persisted so far, including ones resumed from an earlier run.
    pub done: usize,
    pub total: usize,
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancelOutcome {
    pub id: String,
    /// False when the job had already finished; nothing was changed.
    pub cancelled: bool,
    pub status: JobStatus,
    pub message: String,
}

struct Job {
    id: String,
    spec: JobSpec,
    /// (dimension, model, prompt version): at most one running job per key.
    slot: (String, String, u32),
    done: AtomicUsize,
    total: AtomicUsize,
    cancel: AtomicBool,
    state: Mutex<(JobStatus, Option<String>)>,
}

impl Job {
    fn view(&self) -> JobView {
        let (status, error) = self.state.lock().expect("job state").clone();
        let done = self.done.load(Ordering::SeqCst);
        let total = self.total.load(Ordering::SeqCst);
        JobView {
            id: self.id.clone(),
            dimension_id: self.spec.dimension_id.clone(),
            model_name: self.spec.model.clone(),
            repetitions: self.spec.repetitions,
            status,
            done,
            total,
            progress: if total == 0 { 1.0 } else { done as f64 / total as f64 },
            error,
        }
    }

    fn status(&self) -> JobStatus {
        self.state.lock().expect("job state").0
    }

    fn finish(&self, status: JobStatus, error: Option<String>) {
        *self.state.lock().expect("job state") = (status, error);
    }
}

#[derive(Default)]
pub struct JobRegistry {
    jobs: Mutex<BTreeMap<String, Arc<Job>>>,
}

impl JobRegistry {
    pub fn get(&self, id: &str) -> Option<JobView> {
        self.jobs.lock().expect("jobs").get(id).map(|j| j.view())
    }

    /// Starts a job, or returns the running one with the same identity.
    /// The flag is true when a new job was started.
    pub fn submit(
        &self,
        workspace: Arc<Workspace>,
        gateway: Arc<Gateway>,
        clock: Arc<dyn Clock>,
        spec: JobSpec,
    ) -> Result<(JobView, bool), ApiError> {
        let mut jobs = self.jobs.lock().expect("jobs");
        let registry = workspace.registry()?;
        let dim = registry.get(&spec.dimension_id)?;
        if spec.repetitions == 0 {
            return Err(ApiError::bad_request("repetitions must be at least 1"));
        }
        let request = ClassifyRequest {
            dimension_id: &spec.dimension_id,
            gateway: &gateway,
            repetitions: spec.repetitions,
            clock: clock.as_ref(),
            cancel: None,
            on_assignment: None,
        };
        let id = request.identity(&registry)?;
        if let Some(job) = jobs.get(&id).filter(|j| j.status() == JobStatus::Running) {
            return Ok((job.view(), false));
        }
        let version = dim.prompt_template.as_ref().map_or(0, |t| t.version);
        let slot = (spec.dimension_id.clone(), spec.model.clone(), version);
        if let Some(busy) = jobs.values().find(|j| j.slot == slot && j.status() == JobStatus::Running) {
            return Err(ApiError::conflict(
                "job_active",
                format!("job `{}` is already running for this dimension, model and prompt version", busy.id),
            ));
        }

        let corpus = workspace.corpus()?;
        if corpus.is_empty() {
            return Err(WorkspaceError::EmptyCorpus.into());
        }
        let gate = workspace.gate_for(&registry, &spec.dimension_id)?;
        let targets = corpus
            .papers()
            .filter(|p| gate.as_ref().is_none_or(|g| g.positive.contains(&p.paper_id)))
            .count();
        let reps = if dim.answer_mode == AnswerMode::TextMapped { 1 } else { spec.repetitions as usize };
        let resumed = workspace.run_set(&id)?.map_or(0, |r| r.assignments.len());

        let job = Arc::new(Job {
            id: id.clone(),
            slot,
            done: AtomicUsize::new(resumed),
            total: AtomicUsize::new((targets * reps).max(resumed)),
            cancel: AtomicBool::new(false),
            state: Mutex::new((JobStatus::Running, None)),
            spec,
        });
        jobs.insert(id, job.clone());
        let view = job.view();
        tokio::task::spawn_blocking(move || run(&workspace, &gateway, clock.as_ref(), &job));
        Ok((view, true))
    }

    pub fn cancel(&self, id: &str) -> Option<CancelOutcome> {
        let jobs = self.jobs.lock().expect("jobs");
        let job = jobs.get(id)?;
        let state = job.state.lock().expect("job state");
        let outcome = if state.0 == JobStatus::Running {
            job.cancel.store(true, Ordering::SeqCst);
            CancelOutcome {
                id: id.into(),
                cancelled: true,
                status: state.0,
                message: "cancellation requested; finished assignments are kept".into(),
            }
        } else {
            CancelOutcome {
                id: id.into(),
                cancelled: false,
                status: state.0,
                message: "job already finished; nothing to cancel".into(),
            }
        };
        Some(outcome)
    }
}

fn run(workspace: &Workspace, gateway: &Gateway, clock: &dyn Clock, job: &Job) {
    let count = |_: &LabelAssignment| {
        job.done.fetch_add(1, Ordering::SeqCst);
    };
    let request = ClassifyRequest {
        dimension_id: &job.spec.dimension_id,
        gateway,
        repetitions: job.spec.repetitions,
        clock,
        cancel: Some(&job.cancel),
        on_assignment: Some(&count),
    };
    let outcome = workspace.classify(&request).and_then(|runs| {
        let complete = runs.assignments.len() >= runs.total_expected();
        if complete && job.spec.consolidate {
            workspace.consolidate(&job.spec.dimension_id, Some(&runs.model_name), clock)?;
        }
        Ok(runs)
    });
    match outcome {
        Ok(runs) => {
            job.done.store(runs.assignments.len(), Ordering::SeqCst);
            job.total.store(runs.total_expected(), Ordering::SeqCst);
            let status = if runs.assignments.len() < runs.total_expected() && job.cancel.load(Ordering::SeqCst) {
                JobStatus::Cancelled
            } else {
                JobStatus::Completed
            };
            job.finish(status, None);
        }
        Err(e) => job.finish(JobStatus::Failed, Some(e.to_string())),
    }
}
