//! Worker pool. Workers pull serialized units from a shared queue and send
//! serialized reports back; they share no mutable state with each other.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::{run_task, BackendSource, EngineError, ReportCache, TaskContext, TaskUnit, WorkerReport};
use crate::model::{BackendFactory, BackendHandle, LongContextPolicy, ModelDescriptor, ModelError};
use crate::prompts::PromptStore;
use crate::registry::{DatasetLoader, Registry};

/// Read-only services handed to every worker.
#[derive(Clone)]
pub struct WorkerContext {
    pub registry: Registry,
    pub datasets: Arc<DatasetLoader>,
    pub prompts: PromptStore,
    pub cache: Option<ReportCache>,
    pub factory: Arc<dyn BackendFactory>,
    pub long_context_policy: LongContextPolicy,
}

impl WorkerContext {
    fn task_context(&self) -> TaskContext<'_> {
        TaskContext {
            registry: &self.registry,
            datasets: &self.datasets,
            prompts: &self.prompts,
            cache: self.cache.as_ref(),
        }
    }
}

/// A worker's single live backend. Created on first use and replaced when
/// a unit asks for a different model.
pub struct BackendSlot {
    factory: Arc<dyn BackendFactory>,
    policy: LongContextPolicy,
    current: Option<BackendHandle>,
}

impl BackendSlot {
    pub fn new(factory: Arc<dyn BackendFactory>, policy: LongContextPolicy) -> Self {
        Self { factory, policy, current: None }
    }

    pub fn is_loaded(&self) -> bool {
        self.current.is_some()
    }
}

impl BackendSource for BackendSlot {
    fn backend(&mut self, descriptor: &ModelDescriptor) -> Result<&mut BackendHandle, ModelError> {
        if self.current.as_ref().is_some_and(|h| h.descriptor() != descriptor) {
            if let Some(mut old) = self.current.take() {
                old.release();
            }
        }
        if self.current.is_none() {
            let mut handle = self.factory.create_backend(descriptor)?;
            handle.set_long_context_policy(self.policy);
            self.current = Some(handle);
        }
        Ok(self.current.as_mut().expect("slot filled above"))
    }
}

enum Message {
    Done { index: usize, report: String },
    Crashed { index: usize, reason: String },
}

fn worker(ctx: &WorkerContext, jobs: Receiver<(usize, String)>, results: Sender<Message>) {
    let mut slot = BackendSlot::new(ctx.factory.clone(), ctx.long_context_policy);
    let task_ctx = ctx.task_context();
    for (index, payload) in jobs {
        let unit: TaskUnit = match serde_json::from_str(&payload) {
            Ok(u) => u,
            Err(err) => {
                let _ = results.send(Message::Crashed { index, reason: format!("bad unit payload: {err}") });
                return;
            }
        };
        match catch_unwind(AssertUnwindSafe(|| run_task(&unit, &mut slot, &task_ctx))) {
            Ok(report) => {
                let report = serde_json::to_string(&report).expect("reports serialize");
                if results.send(Message::Done { index, report }).is_err() {
                    return;
                }
            }
            Err(panic) => {
                let reason = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                    .unwrap_or_else(|| "worker panicked".into());
                let _ = results.send(Message::Crashed { index, reason });
                // The worker's state is suspect after a crash; it exits.
                return;
            }
        }
    }
}

/// Runs every unit exactly once across `num_workers` workers and returns
/// reports in unit order. A crashed unit is requeued once; a second crash
/// yields a failed report. If every worker has died while work remains the
/// run aborts with the reports collected so far.
pub fn run_distributed(
    units: &[TaskUnit],
    num_workers: usize,
    ctx: &WorkerContext,
) -> Result<Vec<WorkerReport>, EngineError> {
    if num_workers < 1 {
        return Err(EngineError::InvalidWorkers);
    }
    if units.is_empty() {
        return Ok(Vec::new());
    }
    let (job_tx, job_rx) = unbounded::<(usize, String)>();
    let (res_tx, res_rx) = unbounded::<Message>();
    let payloads: Vec<String> =
        units.iter().map(|u| serde_json::to_string(u).expect("units serialize")).collect();
    for (i, p) in payloads.iter().enumerate() {
        job_tx.send((i, p.clone())).expect("receiver alive");
    }

    std::thread::scope(|scope| {
        for _ in 0..num_workers.min(units.len()) {
            let (rx, tx) = (job_rx.clone(), res_tx.clone());
            scope.spawn(move || worker(ctx, rx, tx));
        }
        drop(res_tx);
        let mut alive = num_workers.min(units.len());
        let mut reports: Vec<Option<WorkerReport>> = vec![None; units.len()];
        let mut retried = vec![false; units.len()];
        let mut remaining = units.len();

        while remaining > 0 {
            if alive == 0 {
                break;
            }
            let Ok(message) = res_rx.recv() else { break };
            match message {
                Message::Done { index, report } => {
                    let report: WorkerReport = serde_json::from_str(&report).expect("worker report");
                    reports[index] = Some(report);
                    remaining -= 1;
                }
                Message::Crashed { index, reason } => {
                    alive -= 1;
                    if retried[index] {
                        log::warn!("unit {} crashed twice: {reason}", units[index].unit_id);
                        reports[index] = Some(WorkerReport::failed(&units[index], format!("worker crashed: {reason}")));
                        remaining -= 1;
                    } else {
                        log::warn!("worker crashed on unit {}: {reason}; retrying", units[index].unit_id);
                        retried[index] = true;
                        job_tx.send((index, payloads[index].clone())).expect("receiver alive");
                    }
                }
            }
        }
        // Closing the queue lets idle workers exit.
        drop(job_tx);
        while job_rx.try_recv().is_ok() {}

        if remaining > 0 {
            let partial = reports.into_iter().flatten().collect();
            return Err(EngineError::Aborted { partial, total: units.len() });
        }
        Ok(reports.into_iter().map(|r| r.expect("every unit reported")).collect())
    })
}
