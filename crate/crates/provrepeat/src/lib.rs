//! Cloud-aware provenance capture and workflow repeatability.
//!
//! `provrepeat` runs DAG workflows on a deterministic in-process IaaS
//! simulator, records each job's provenance interlinked with the VM
//! configuration (flavor + image) it executed on, and uses that record to
//! re-provision equivalent resources and repeat the run, verifying
//! repeatability by configuration comparison and output digests.
//!
//! The library is the primary interface; each major capability has a
//! runnable example:
//!
//! ```text
//! examples/
//! ├── provision_vms.rs      # catalog, provision/list/release, capacity accounting
//! ├── define_workflow.rs    # building and validating workflow DAGs, the task kernels
//! ├── run_workflow.rs       # submitting to a cluster and reading the execution trace
//! ├── collect_and_store.rs  # joining jobs to VMs by IP, the durable store
//! ├── repeat_run.rs         # re-provisioning and repeating by wfID
//! └── compare_runs.rs       # configuration equivalence and output identity
//! ```
//!
//! ```bash
//! cargo run -p provrepeat --example provision_vms
//! cargo run -p provrepeat --example define_workflow
//! cargo run -p provrepeat --example run_workflow
//! cargo run -p provrepeat --example collect_and_store
//! cargo run -p provrepeat --example repeat_run
//! cargo run -p provrepeat --example compare_runs
//! ```
//!
//! A thin `provrepeat` binary exposes the same flows as batch commands
//! (`submit`, `show`, `repeat`, `compare`, `list`); see the README.
//!
//! # Modules
//!
//! * [`cloudsim`]: the IaaS middleware stand-in: flavors, images, VM
//!   lifecycle, capacity limits, sequential IP allocation.
//! * [`wfmodel`]: workflow DAGs, validation, the wordcount reference
//!   workflow and its deterministic kernels.
//! * [`engine`]: the workflow-management role: wfID assignment,
//!   dependency-respecting scheduling onto workers, per-job provenance.
//! * [`provenance`]: the job-to-VM join keyed by host IP, and the
//!   append-only provenance store.
//! * [`repeat`]: re-provisioning from stored rows, repeat execution, and
//!   the two repeatability comparisons.
//! * [`cli`]: the batch command layer used by the binary.
//!
//! # Quick start
//!
//! ```
//! use provrepeat::cloudsim::CloudSim;
//! use provrepeat::engine::{Cluster, Engine};
//! use provrepeat::provenance::collect_cloud_mapping;
//! use provrepeat::types::Owner;
//! use provrepeat::wfmodel::{build_wordcount_workflow, validate_workflow};
//!
//! let owner = Owner::new("demo");
//! let mut cloud = CloudSim::with_default_catalog();
//! let image = "f102960c-557c-4253-8277-2df5ffe3c169";
//! let master = cloud.provision_vm(&owner, "master.novalocal", "2", image).unwrap();
//! let w1 = cloud.provision_vm(&owner, "worker1.novalocal", "2", image).unwrap();
//! let w2 = cloud.provision_vm(&owner, "worker2.novalocal", "2", image).unwrap();
//!
//! let workflow = validate_workflow(build_wordcount_workflow(b"six words make a tiny corpus")).unwrap();
//! let mut engine = Engine::new();
//! let wf_id = engine.submit_workflow(workflow, Cluster { master, workers: vec![w1, w2] }).unwrap();
//! let trace = engine.run_to_completion(wf_id).unwrap();
//! assert_eq!(trace.records.len(), 4);
//!
//! let rows = collect_cloud_mapping(&engine, &cloud, wf_id, &owner).unwrap();
//! assert_eq!(rows.len(), 4);
//! ```

pub mod cli;
pub mod cloudsim;
pub mod engine;
pub mod provenance;
pub mod repeat;
pub mod types;
pub mod wfmodel;

pub use cloudsim::{CloudCatalog, CloudSim, Flavor, Image, VmRecord};
pub use engine::{Cluster, Engine, ExecutionTrace, JobProvenanceRecord, WfId};
pub use provenance::{CloudAwareProvenance, ProvenanceStore, ResourceMappingRow};
pub use repeat::{repeat_workflow, RepeatReport};
pub use types::{ContentDigest, LogicalTime, Owner};
pub use wfmodel::{build_wordcount_workflow, validate_workflow, ValidatedWorkflow, WorkflowSpec};
