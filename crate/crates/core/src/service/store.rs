use std::sync::{Arc, Mutex, MutexGuard};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ErrorBody, JobView};
use crate::carve::MultiTraceResult;
use crate::config::RunConfig;
use crate::dp::ConstraintRegion;
use crate::error::Result;
use crate::ingest::FrameLayout;
use crate::spectrogram::Spectrogram;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    /// Uploaded, never tracked.
    Ready,
    Running,
    Done,
    Failed,
}

#[derive(Debug)]
struct JobState {
    status: JobStatus,
    traces: usize,
    constraints: Vec<ConstraintRegion>,
    result: Option<Arc<MultiTraceResult>>,
    error: Option<ErrorBody>,
    generation: u64,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub status: JobStatus,
    pub result: Option<Arc<MultiTraceResult>>,
    pub error: Option<ErrorBody>,
}

/// An uploaded spectrogram and the tracking state attached to it.
#[derive(Debug)]
pub struct Job {
    id: String,
    spectrogram: Spectrogram,
    layout: Option<FrameLayout>,
    config: RunConfig,
    state: Mutex<JobState>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl Job {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn spectrogram(&self) -> &Spectrogram {
        &self.spectrogram
    }

    pub fn snapshot(&self) -> Snapshot {
        let s = lock(&self.state);
        Snapshot {
            status: s.status,
            result: s.result.clone(),
            error: s.error.clone(),
        }
    }

    pub fn view(&self) -> JobView {
        let s = lock(&self.state);
        JobView {
            id: self.id.clone(),
            status: s.status,
            bins: self.spectrogram.bins(),
            frames: self.spectrogram.frames(),
            freq_axis: self.spectrogram.freq_axis(),
            time_axis: self.spectrogram.time_axis(),
            traces: s.traces,
            constraints: s.constraints.clone(),
            has_result: s.result.is_some(),
            error: s.error.clone(),
            config: self.config.clone(),
        }
    }

    /// Claims the job for a run. `Ok(None)` when a run is already in
    /// progress; an error when the request cannot apply to this job.
    pub fn begin_run(self: &Arc<Self>, traces: Option<usize>, constraints: Vec<ConstraintRegion>) -> Result<Option<PendingRun>> {
        let mut cfg = self.config.clone();
        if let Some(l) = traces {
            cfg.traces = l;
            if cfg.model.per_trace_k.as_ref().is_some_and(|ks| ks.len() != l) {
                cfg.model.per_trace_k = None;
            }
        }
        cfg.constraints = constraints;
        cfg.validate()?;
        for region in &cfg.constraints {
            region.validate(self.spectrogram.bins(), self.spectrogram.frames())?;
        }
        let mut s = lock(&self.state);
        if s.status == JobStatus::Running {
            return Ok(None);
        }
        s.status = JobStatus::Running;
        s.traces = cfg.traces;
        s.constraints = cfg.constraints.clone();
        s.result = None;
        s.error = None;
        s.generation += 1;
        Ok(Some(PendingRun {
            job: Arc::clone(self),
            generation: s.generation,
            cfg,
        }))
    }
}

/// A claimed run, executed off the request path.
pub struct PendingRun {
    job: Arc<Job>,
    generation: u64,
    cfg: RunConfig,
}

impl PendingRun {
    pub fn execute(self) -> Result<Arc<MultiTraceResult>> {
        let job = &self.job;
        let outcome = self.cfg.run_offline(&job.spectrogram, job.layout.as_ref()).map(Arc::new);
        let mut s = lock(&job.state);
        if s.generation == self.generation {
            match &outcome {
                Ok(result) => {
                    s.status = JobStatus::Done;
                    s.result = Some(Arc::clone(result));
                }
                Err(e) => {
                    s.status = JobStatus::Failed;
                    s.error = Some(e.into());
                }
            }
        }
        outcome
    }
}

/// In-memory jobs, evicting the least recently used beyond `capacity`.
#[derive(Debug)]
pub struct JobStore {
    capacity: usize,
    jobs: Mutex<IndexMap<String, Arc<Job>>>,
}

impl JobStore {
    pub fn new(capacity: usize) -> Self {
        JobStore {
            capacity: capacity.max(1),
            jobs: Mutex::new(IndexMap::new()),
        }
    }

    pub fn insert(&self, spectrogram: Spectrogram, layout: Option<FrameLayout>, config: RunConfig) -> Arc<Job> {
        let job = Arc::new(Job {
            id: uuid::Uuid::new_v4().simple().to_string(),
            spectrogram,
            layout,
            state: Mutex::new(JobState {
                status: JobStatus::Ready,
                traces: config.traces,
                constraints: config.constraints.clone(),
                result: None,
                error: None,
                generation: 0,
            }),
            config,
        });
        let mut jobs = lock(&self.jobs);
        while jobs.len() >= self.capacity {
            jobs.shift_remove_index(0);
        }
        jobs.insert(job.id.clone(), Arc::clone(&job));
        job
    }

    /// Looks a job up and marks it most recently used.
    pub fn get(&self, id: &str) -> Option<Arc<Job>> {
        let mut jobs = lock(&self.jobs);
        let index = jobs.get_index_of(id)?;
        let last = jobs.len() - 1;
        jobs.move_index(index, last);
        jobs.get(id).cloned()
    }

    pub fn len(&self) -> usize {
        lock(&self.jobs).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
