//! Single-worker FIFO queue for discovery jobs.

use std::collections::VecDeque;
use std::sync::Arc;

use parking_lot::Mutex;
use tokio::sync::{oneshot, Notify};

use pdprobe_core::scoring::AssociationDistribution;

use crate::AuditRequest;

/// Runs one discovery job. Called from a blocking thread.
pub trait Auditor: Send + Sync + 'static {
    fn audit(&self, request: &AuditRequest) -> Result<AssociationDistribution, String>;
}

pub type JobResult = Result<AssociationDistribution, String>;

struct Job {
    id: u64,
    request: AuditRequest,
    done: oneshot::Sender<JobResult>,
}

#[derive(Default)]
struct State {
    waiting: VecDeque<Job>,
    processing: Option<u64>,
    next_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueFull;

pub struct Ticket {
    pub id: u64,
    pub position: usize,
    pub done: oneshot::Receiver<JobResult>,
}

pub struct JobQueue {
    state: Mutex<State>,
    wake: Notify,
    cap: usize,
}

impl JobQueue {
    pub fn new(cap: usize) -> Arc<Self> {
        Arc::new(Self {
            state: Mutex::new(State::default()),
            wake: Notify::new(),
            cap,
        })
    }

    pub fn enqueue(&self, request: AuditRequest) -> Result<Ticket, QueueFull> {
        let (tx, rx) = oneshot::channel();
        let mut st = self.state.lock();
        let ahead = st.waiting.len() + usize::from(st.processing.is_some());
        if ahead >= self.cap {
            return Err(QueueFull);
        }
        let id = st.next_id;
        st.next_id += 1;
        st.waiting.push_back(Job {
            id,
            request,
            done: tx,
        });
        drop(st);
        self.wake.notify_one();
        Ok(Ticket {
            id,
            position: ahead,
            done: rx,
        })
    }

    /// 0 while being processed, otherwise the number of jobs ahead
    /// (including the one in progress). `None` once finished.
    pub fn position(&self, id: u64) -> Option<usize> {
        let st = self.state.lock();
        if st.processing == Some(id) {
            return Some(0);
        }
        st.waiting
            .iter()
            .position(|j| j.id == id)
            .map(|i| i + usize::from(st.processing.is_some()))
    }

    pub fn len(&self) -> usize {
        let st = self.state.lock();
        st.waiting.len() + usize::from(st.processing.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn take_next(&self) -> Option<Job> {
        let mut st = self.state.lock();
        let job = st.waiting.pop_front()?;
        st.processing = Some(job.id);
        Some(job)
    }

    fn finish(&self) {
        self.state.lock().processing = None;
    }

    /// Drains the queue forever, one job at a time.
    pub async fn run_worker(self: Arc<Self>, auditor: Arc<dyn Auditor>) {
        loop {
            let job = loop {
                if let Some(job) = self.take_next() {
                    break job;
                }
                self.wake.notified().await;
            };
            let auditor = auditor.clone();
            let request = job.request;
            let result = tokio::task::spawn_blocking(move || auditor.audit(&request))
                .await
                .unwrap_or_else(|e| Err(format!("audit task failed: {e}")));
            self.finish();
            let _ = job.done.send(result);
        }
    }
}
