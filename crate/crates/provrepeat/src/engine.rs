//! Deterministic workflow execution engine.
//!
//! Plays the workflow-management-system role: accepts a validated
//! workflow together with a cluster of provisioned VMs, assigns a fresh
//! wfID, schedules jobs onto workers as their dependencies complete, runs
//! the task kernels, and records per-job provenance including the
//! executing host's IP.
//!
//! Execution is logically parallel but advanced by an event loop over
//! logical time ticks: every job occupies one worker for one tick, ready
//! jobs are considered in topological order, and the free worker with the
//! lowest IP is assigned first. Identical (workflow, cluster, catalog)
//! triples therefore produce identical traces, digest for digest.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloudsim::{VmId, VmRecord};
use crate::types::{ContentDigest, LogicalTime};
use crate::wfmodel::{kernel_count, kernel_merge, kernel_split, Job, TaskKind, ValidatedWorkflow};

/// Workflow identifier: positive, globally unique, monotonically assigned,
/// never reused.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct WfId(pub u64);

impl std::fmt::Display for WfId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Default first wfID. Chosen so the documented walkthrough starts at 114;
/// no semantic weight.
pub const DEFAULT_WFID_SEED: u64 = 114;

/// The cluster a workflow runs on: a master for bookkeeping and the
/// workers that execute jobs. Jobs never run on the master.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub master: VmRecord,
    pub workers: Vec<VmRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitStatus {
    Success,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkflowStatus {
    Succeeded,
    Failed,
}

impl std::fmt::Display for WorkflowStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WorkflowStatus::Succeeded => f.write_str("SUCCEEDED"),
            WorkflowStatus::Failed => f.write_str("FAILED"),
        }
    }
}

/// Per-job execution record: arguments, log digests, the host that ran the
/// job, logical start/end, and digests of every produced output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobProvenanceRecord {
    pub wf_id: WfId,
    pub job_id: String,
    pub args: Vec<String>,
    pub host_ip: Ipv4Addr,
    pub start: LogicalTime,
    pub end: LogicalTime,
    pub exit_status: ExitStatus,
    pub stdout_digest: ContentDigest,
    pub stderr_digest: ContentDigest,
    pub output_digests: BTreeMap<String, ContentDigest>,
}

/// Everything one run produced: one record per executed job plus the
/// digest of every output the workflow produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub wf_id: WfId,
    pub records: Vec<JobProvenanceRecord>,
    pub final_outputs: BTreeMap<String, ContentDigest>,
    pub status: WorkflowStatus,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown wfID: {wf_id}")]
    UnknownWfId { wf_id: WfId },
    #[error("workflow {wf_id} has not been run yet")]
    NotYetRun { wf_id: WfId },
    #[error("workflow {wf_id} is not pending")]
    NotPending { wf_id: WfId },
    #[error("cluster has no workers")]
    EmptyCluster,
    #[error("cluster member {vm_id} is not active")]
    InactiveClusterMember { vm_id: VmId },
    #[error("master {vm_id} also appears among the workers")]
    MasterAmongWorkers { vm_id: VmId },
}

/// Pure transformation a GENERIC job may invoke, selected by `args[0]`.
/// Takes the declared inputs in order and returns the declared outputs in
/// order.
pub type GenericKernel = fn(inputs: &[&[u8]], args: &[String]) -> Result<Vec<Vec<u8>>, String>;

/// Registry of GENERIC transformations. Keeps the engine extensible
/// without any shell execution.
#[derive(Debug, Clone)]
pub struct KernelRegistry {
    kernels: BTreeMap<String, GenericKernel>,
}

fn generic_identity(inputs: &[&[u8]], _args: &[String]) -> Result<Vec<Vec<u8>>, String> {
    Ok(inputs.iter().map(|b| b.to_vec()).collect())
}

fn generic_upper(inputs: &[&[u8]], _args: &[String]) -> Result<Vec<Vec<u8>>, String> {
    Ok(inputs.iter().map(|b| b.to_ascii_uppercase()).collect())
}

fn generic_concat(inputs: &[&[u8]], _args: &[String]) -> Result<Vec<Vec<u8>>, String> {
    Ok(vec![inputs.join(&b' ')])
}

impl KernelRegistry {
    pub fn with_builtins() -> Self {
        let mut kernels: BTreeMap<String, GenericKernel> = BTreeMap::new();
        kernels.insert("identity".into(), generic_identity);
        kernels.insert("upper".into(), generic_upper);
        kernels.insert("concat".into(), generic_concat);
        KernelRegistry { kernels }
    }

    pub fn register(&mut self, key: impl Into<String>, kernel: GenericKernel) {
        self.kernels.insert(key.into(), kernel);
    }

    pub fn get(&self, key: &str) -> Option<GenericKernel> {
        self.kernels.get(key).copied()
    }
}

impl Default for KernelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Test hook for exercising failure paths: the kernels themselves are
/// total, so a job can only fail or produce wrong bytes through this.
#[derive(Debug, Clone, Default)]
pub struct FaultInjection {
    fail_jobs: BTreeSet<String>,
    corruptions: Vec<OutputCorruption>,
}

#[derive(Debug, Clone)]
pub struct OutputCorruption {
    pub job_id: String,
    pub output_name: String,
    pub byte_index: usize,
}

impl FaultInjection {
    pub fn none() -> Self {
        Self::default()
    }

    /// Force `job_id` to fail instead of running its kernel.
    pub fn fail_job(mut self, job_id: impl Into<String>) -> Self {
        self.fail_jobs.insert(job_id.into());
        self
    }

    /// Flip one byte of `output_name` after `job_id` produces it.
    pub fn corrupt_output(
        mut self,
        job_id: impl Into<String>,
        output_name: impl Into<String>,
        byte_index: usize,
    ) -> Self {
        self.corruptions.push(OutputCorruption {
            job_id: job_id.into(),
            output_name: output_name.into(),
            byte_index,
        });
        self
    }

    fn should_fail(&self, job_id: &str) -> bool {
        self.fail_jobs.contains(job_id)
    }

    fn apply(&self, job_id: &str, output_name: &str, bytes: &mut Vec<u8>) {
        for c in &self.corruptions {
            if c.job_id == job_id && c.output_name == output_name {
                if bytes.is_empty() {
                    bytes.push(0xff);
                } else {
                    let idx = c.byte_index % bytes.len();
                    bytes[idx] ^= 0xff;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunState {
    Pending,
    Completed,
}

#[derive(Debug, Clone)]
struct WorkflowRun {
    workflow: ValidatedWorkflow,
    cluster: Cluster,
    state: RunState,
    trace: Option<ExecutionTrace>,
}

/// The engine owns the wfID counter and every registered run.
#[derive(Debug, Clone)]
pub struct Engine {
    next_wf_id: u64,
    runs: BTreeMap<WfId, WorkflowRun>,
    registry: KernelRegistry,
    faults: FaultInjection,
}

impl Engine {
    pub fn new() -> Self {
        Self::with_seed(DEFAULT_WFID_SEED)
    }

    /// Engine whose first assigned wfID is `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Engine {
            next_wf_id: seed.max(1),
            runs: BTreeMap::new(),
            registry: KernelRegistry::with_builtins(),
            faults: FaultInjection::none(),
        }
    }

    pub fn registry_mut(&mut self) -> &mut KernelRegistry {
        &mut self.registry
    }

    pub fn set_fault_injection(&mut self, faults: FaultInjection) {
        self.faults = faults;
    }

    /// The wfID the next submission will receive.
    pub fn next_wf_id(&self) -> WfId {
        WfId(self.next_wf_id)
    }

    /// Ensure the next assigned wfID is at least `floor`. Never lowers
    /// the counter; ids are never reused.
    pub fn raise_seed(&mut self, floor: u64) {
        self.next_wf_id = self.next_wf_id.max(floor);
    }

    /// Register a workflow on a cluster. Returns a fresh wfID; nothing
    /// runs until [`Engine::run_to_completion`].
    pub fn submit_workflow(
        &mut self,
        workflow: ValidatedWorkflow,
        cluster: Cluster,
    ) -> Result<WfId, EngineError> {
        if cluster.workers.is_empty() {
            return Err(EngineError::EmptyCluster);
        }
        for vm in std::iter::once(&cluster.master).chain(cluster.workers.iter()) {
            if !vm.is_active() {
                return Err(EngineError::InactiveClusterMember { vm_id: vm.vm_id });
            }
        }
        if cluster.workers.iter().any(|w| w.vm_id == cluster.master.vm_id) {
            return Err(EngineError::MasterAmongWorkers {
                vm_id: cluster.master.vm_id,
            });
        }
        let wf_id = WfId(self.next_wf_id);
        self.next_wf_id += 1;
        log::info!("submitted workflow {} as wfID {wf_id}", workflow.spec().name);
        self.runs.insert(
            wf_id,
            WorkflowRun {
                workflow,
                cluster,
                state: RunState::Pending,
                trace: None,
            },
        );
        Ok(wf_id)
    }

    /// Run every job of a pending workflow, respecting dependencies.
    ///
    /// A job failure aborts scheduling of its successors; the trace is
    /// still returned with status FAILED and the records of the jobs that
    /// did run.
    pub fn run_to_completion(&mut self, wf_id: WfId) -> Result<ExecutionTrace, EngineError> {
        let run = self
            .runs
            .get(&wf_id)
            .ok_or(EngineError::UnknownWfId { wf_id })?;
        if run.state != RunState::Pending {
            return Err(EngineError::NotPending { wf_id });
        }
        let workflow = run.workflow.clone();
        let cluster = run.cluster.clone();

        let preds = workflow.predecessors();
        let total_jobs = workflow.spec().jobs.len();
        let mut data: BTreeMap<String, Vec<u8>> = workflow.spec().workflow_inputs.clone();
        let mut records: Vec<JobProvenanceRecord> = Vec::with_capacity(total_jobs);
        let mut final_outputs: BTreeMap<String, ContentDigest> = BTreeMap::new();
        let mut succeeded: BTreeSet<&str> = BTreeSet::new();
        let mut started: BTreeSet<&str> = BTreeSet::new();
        let mut tick: u64 = 0;
        let mut any_failed = false;

        loop {
            let ready: Vec<&str> = workflow
                .topo_order()
                .iter()
                .map(String::as_str)
                .filter(|id| {
                    !started.contains(*id) && preds[*id].iter().all(|p| succeeded.contains(*p))
                })
                .collect();
            if ready.is_empty() {
                break;
            }
            // All workers are free at the top of each tick: a job holds
            // its 1-vCPU slot for exactly one tick.
            let free: Vec<&VmRecord> = cluster.workers.iter().collect();
            let assignments = schedule_ready_jobs(&ready, &free);
            for (job_id, worker) in &assignments {
                let job = workflow.job(job_id).expect("validated job id");
                let outcome = if self.faults.should_fail(job_id) {
                    Err("fault injected".to_string())
                } else {
                    execute_kernel(job, &data, &self.registry)
                };
                let start = LogicalTime(tick);
                let end = LogicalTime(tick + 1);
                started.insert(job.job_id.as_str());
                match outcome {
                    Ok((outputs, stdout)) => {
                        let mut output_digests = BTreeMap::new();
                        for (name, mut bytes) in outputs {
                            self.faults.apply(job_id, &name, &mut bytes);
                            let digest = ContentDigest::of(&bytes);
                            output_digests.insert(name.clone(), digest.clone());
                            final_outputs.insert(name.clone(), digest);
                            data.insert(name, bytes);
                        }
                        records.push(JobProvenanceRecord {
                            wf_id,
                            job_id: job.job_id.clone(),
                            args: job.args.clone(),
                            host_ip: worker.ip,
                            start,
                            end,
                            exit_status: ExitStatus::Success,
                            stdout_digest: ContentDigest::of(stdout.as_bytes()),
                            stderr_digest: ContentDigest::of(b""),
                            output_digests,
                        });
                        succeeded.insert(job.job_id.as_str());
                    }
                    Err(message) => {
                        log::warn!("wfID {wf_id} job {job_id} failed: {message}");
                        records.push(JobProvenanceRecord {
                            wf_id,
                            job_id: job.job_id.clone(),
                            args: job.args.clone(),
                            host_ip: worker.ip,
                            start,
                            end,
                            exit_status: ExitStatus::Failed,
                            stdout_digest: ContentDigest::of(b""),
                            stderr_digest: ContentDigest::of(message.as_bytes()),
                            output_digests: BTreeMap::new(),
                        });
                        any_failed = true;
                    }
                }
            }
            tick += 1;
            if any_failed {
                break;
            }
        }

        let status = if !any_failed && succeeded.len() == total_jobs {
            WorkflowStatus::Succeeded
        } else {
            WorkflowStatus::Failed
        };
        let trace = ExecutionTrace {
            wf_id,
            records,
            final_outputs,
            status,
        };
        let run = self.runs.get_mut(&wf_id).expect("checked above");
        run.state = RunState::Completed;
        run.trace = Some(trace.clone());
        log::info!("wfID {wf_id} finished: {status}");
        Ok(trace)
    }

    /// Stored definition and trace of a run, sufficient to resubmit the
    /// identical workflow.
    pub fn get_workflow_record(
        &self,
        wf_id: WfId,
    ) -> Result<(&ValidatedWorkflow, &ExecutionTrace), EngineError> {
        let run = self
            .runs
            .get(&wf_id)
            .ok_or(EngineError::UnknownWfId { wf_id })?;
        match &run.trace {
            Some(trace) => Ok((&run.workflow, trace)),
            None => Err(EngineError::NotYetRun { wf_id }),
        }
    }
}

impl Default for Engine {
    fn default() -> Self {
        Self::new()
    }
}

/// Assign ready jobs (already in topological order) to free workers:
/// first ready job gets the free worker with the lowest IP, and so on.
/// Jobs beyond the free worker count wait for a later tick.
fn schedule_ready_jobs<'a, 'b>(
    ready_in_topo_order: &[&'a str],
    free_workers: &[&'b VmRecord],
) -> Vec<(&'a str, &'b VmRecord)> {
    let mut workers: Vec<&VmRecord> = free_workers.to_vec();
    workers.sort_by_key(|vm| vm.ip);
    ready_in_topo_order
        .iter()
        .zip(workers)
        .map(|(job, vm)| (*job, vm))
        .collect()
}

fn decimal(value: u64) -> Vec<u8> {
    value.to_string().into_bytes()
}

fn parse_count(name: &str, bytes: &[u8]) -> Result<i64, String> {
    let text = std::str::from_utf8(bytes).map_err(|_| format!("{name}: not valid UTF-8"))?;
    text.trim()
        .parse::<i64>()
        .map_err(|e| format!("{name}: not an integer: {e}"))
}

type KernelOutputs = Vec<(String, Vec<u8>)>;

/// Run one job's kernel over the in-flight data set. Returns the produced
/// outputs (in declared order) and the job's stdout text.
fn execute_kernel(
    job: &Job,
    data: &BTreeMap<String, Vec<u8>>,
    registry: &KernelRegistry,
) -> Result<(KernelOutputs, String), String> {
    let fetch = |name: &String| -> Result<&[u8], String> {
        data.get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| format!("missing input {name}"))
    };
    let arity = |n_in: usize, n_out: usize| -> Result<(), String> {
        if job.input_names.len() != n_in || job.output_names.len() != n_out {
            return Err(format!(
                "{:?} job takes {n_in} input(s) and {n_out} output(s), declared {}/{}",
                job.task_kind,
                job.input_names.len(),
                job.output_names.len()
            ));
        }
        Ok(())
    };
    match job.task_kind {
        TaskKind::Split => {
            arity(1, 2)?;
            let text = fetch(&job.input_names[0])?;
            let (p1, p2) = kernel_split(text);
            let stdout = format!(
                "split {}: {}+{} words\n",
                job.input_names[0],
                kernel_count(&p1),
                kernel_count(&p2)
            );
            Ok((
                vec![
                    (job.output_names[0].clone(), p1),
                    (job.output_names[1].clone(), p2),
                ],
                stdout,
            ))
        }
        TaskKind::Count => {
            arity(1, 1)?;
            let text = fetch(&job.input_names[0])?;
            let n = kernel_count(text);
            let stdout = format!("count {}: {n} words\n", job.input_names[0]);
            Ok((vec![(job.output_names[0].clone(), decimal(n))], stdout))
        }
        TaskKind::Merge => {
            if job.output_names.len() != 1 {
                return Err("merge job produces exactly one output".into());
            }
            let mut counts = Vec::with_capacity(job.input_names.len());
            for name in &job.input_names {
                counts.push(parse_count(name, fetch(name)?)?);
            }
            let total = kernel_merge(&counts).map_err(|e| e.to_string())?;
            let stdout = format!("merge: total {total} words\n");
            Ok((vec![(job.output_names[0].clone(), decimal(total))], stdout))
        }
        TaskKind::Generic => {
            let key = job
                .args
                .first()
                .ok_or_else(|| "generic job needs a kernel key in args[0]".to_string())?;
            let kernel = registry
                .get(key)
                .ok_or_else(|| format!("no registered kernel: {key}"))?;
            let mut inputs = Vec::with_capacity(job.input_names.len());
            for name in &job.input_names {
                inputs.push(fetch(name)?);
            }
            let outputs = kernel(&inputs, &job.args)?;
            if outputs.len() != job.output_names.len() {
                return Err(format!(
                    "kernel {key} produced {} output(s), job declares {}",
                    outputs.len(),
                    job.output_names.len()
                ));
            }
            let stdout = format!("{key}: ok\n");
            Ok((
                job.output_names.iter().cloned().zip(outputs).collect(),
                stdout,
            ))
        }
    }
}
