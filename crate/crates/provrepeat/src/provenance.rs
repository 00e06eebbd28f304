//! Cloud-aware provenance: joining job provenance to VM configurations by
//! IP, and persisting the result.
//!
//! The aggregator walks the jobs of a finished workflow and looks each
//! job's host IP up in the owner's live VM inventory. The join happens
//! eagerly at workflow completion, before any VM is released; a released
//! or foreign address surfaces as [`CollectError::StaleMapping`] instead
//! of silently dropping the row.
//!
//! The store is an append-only record log: one self-describing JSON
//! record per line, with an in-memory index rebuilt on open. An OS
//! advisory lock guards against concurrent writers on the same path.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloudsim::{CloudSim, VmRecord};
use crate::engine::{Engine, EngineError, ExecutionTrace, JobProvenanceRecord, WfId, WorkflowStatus};
use crate::types::{LogicalTime, Owner};
use crate::wfmodel::ValidatedWorkflow;

/// Version stamped into every stored record.
pub const STORE_SCHEMA_VERSION: u32 = 1;

/// One row of the job-to-VM mapping: which job of which workflow ran on
/// which address, and the full resource configuration behind that address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceMappingRow {
    pub wf_id: WfId,
    pub job_id: String,
    pub host_ip: Ipv4Addr,
    pub nodename: String,
    pub flavor_id: String,
    pub ram_mb: u32,
    pub disk_gb: u32,
    pub vcpus: u32,
    pub image_name: String,
    pub image_id: String,
    pub collected_at: LogicalTime,
}

/// Workflow provenance interlinked with the VM configurations its jobs ran
/// on: definition, trace, and one mapping row per job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudAwareProvenance {
    pub wf_id: WfId,
    pub workflow: ValidatedWorkflow,
    pub trace: ExecutionTrace,
    pub mappings: Vec<ResourceMappingRow>,
}

impl CloudAwareProvenance {
    /// Check the structural invariants: ids agree, the mappings cover
    /// exactly the traced jobs, and every mapping repeats its record's
    /// host IP.
    pub fn validate(&self) -> Result<(), String> {
        if self.trace.wf_id != self.wf_id {
            return Err(format!(
                "trace wfID {} does not match record wfID {}",
                self.trace.wf_id, self.wf_id
            ));
        }
        let traced: BTreeSet<&str> = self
            .trace
            .records
            .iter()
            .map(|r| r.job_id.as_str())
            .collect();
        let mapped: BTreeSet<&str> = self.mappings.iter().map(|m| m.job_id.as_str()).collect();
        if traced != mapped || self.mappings.len() != self.trace.records.len() {
            return Err(format!(
                "mappings cover jobs {mapped:?} but the trace recorded {traced:?}"
            ));
        }
        for m in &self.mappings {
            let record = self
                .trace
                .records
                .iter()
                .find(|r| r.job_id == m.job_id)
                .expect("covered above");
            if record.host_ip != m.host_ip {
                return Err(format!(
                    "job {} mapped to {} but executed on {}",
                    m.job_id, m.host_ip, record.host_ip
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("unknown wfID: {wf_id}")]
    UnknownWfId { wf_id: WfId },
    #[error("workflow {wf_id} has not been run yet")]
    NotYetRun { wf_id: WfId },
    #[error("job {job_id} ran on {ip}, which matches no active VM of the owner (released or never owned)")]
    StaleMapping { job_id: String, ip: Ipv4Addr },
    #[error("inventory lists more than one active VM at {ip}")]
    AmbiguousIp { ip: Ipv4Addr },
}

/// Join job records against a VM inventory by IP address.
///
/// The inventory is expected to be the owner's ACTIVE VM list as the
/// middleware reports it; a duplicated address there cannot happen through
/// the simulator's own invariants and signals a corrupted import.
pub fn map_jobs_to_vms(
    records: &[JobProvenanceRecord],
    inventory: &[VmRecord],
    collected_at: LogicalTime,
) -> Result<Vec<ResourceMappingRow>, CollectError> {
    let mut by_ip: BTreeMap<Ipv4Addr, &VmRecord> = BTreeMap::new();
    for vm in inventory.iter().filter(|vm| vm.is_active()) {
        if by_ip.insert(vm.ip, vm).is_some() {
            return Err(CollectError::AmbiguousIp { ip: vm.ip });
        }
    }
    records
        .iter()
        .map(|record| {
            let vm = by_ip
                .get(&record.host_ip)
                .ok_or_else(|| CollectError::StaleMapping {
                    job_id: record.job_id.clone(),
                    ip: record.host_ip,
                })?;
            Ok(ResourceMappingRow {
                wf_id: record.wf_id,
                job_id: record.job_id.clone(),
                host_ip: record.host_ip,
                nodename: vm.nodename.clone(),
                flavor_id: vm.flavor.flavor_id.clone(),
                ram_mb: vm.flavor.ram_mb,
                disk_gb: vm.flavor.disk_gb,
                vcpus: vm.flavor.vcpus,
                image_name: vm.image.image_name.clone(),
                image_id: vm.image.image_id.clone(),
                collected_at,
            })
        })
        .collect()
}

/// Retrieve the trace for `wf_id` and join it against the owner's current
/// VM list. Must run before the cluster is released.
pub fn collect_cloud_mapping(
    engine: &Engine,
    cloud: &CloudSim,
    wf_id: WfId,
    owner: &Owner,
) -> Result<Vec<ResourceMappingRow>, CollectError> {
    let (_, trace) = engine.get_workflow_record(wf_id).map_err(|e| match e {
        EngineError::NotYetRun { wf_id } => CollectError::NotYetRun { wf_id },
        _ => CollectError::UnknownWfId { wf_id },
    })?;
    map_jobs_to_vms(&trace.records, &cloud.list_vms(owner), cloud.now())
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("wfID {wf_id} is already stored")]
    DuplicateWfId { wf_id: WfId },
    #[error("unknown wfID: {wf_id}")]
    UnknownWfId { wf_id: WfId },
    #[error("invalid provenance record: {reason}")]
    InvalidRecord { reason: String },
    #[error("store {path} is locked by another process")]
    Locked { path: PathBuf },
    #[error("corrupt store {path} at line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("storage failure on {path}: {source}")]
    StorageFailure {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Summary row for workflow listings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowSummary {
    pub wf_id: WfId,
    pub name: String,
    pub status: WorkflowStatus,
    pub job_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredRecord {
    schema_version: u32,
    record_type: String,
    payload: CloudAwareProvenance,
}

const RECORD_TYPE: &str = "cloud_aware_provenance";

/// Exclusive lock on a store path, held for the lifetime of the store
/// handle: an OS advisory lock on a sibling `.lock` file. The OS releases
/// it when the process exits, however it exits, so no stale lock can
/// wedge the store.
#[derive(Debug)]
struct StoreLock {
    _file: File,
}

impl StoreLock {
    fn acquire(store_path: &Path) -> Result<Self, StoreError> {
        let path = lock_path(store_path);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|source| StoreError::StorageFailure {
                path: path.clone(),
                source,
            })?;
        match file.try_lock() {
            Ok(()) => Ok(StoreLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(StoreError::Locked {
                path: store_path.to_path_buf(),
            }),
            Err(fs::TryLockError::Error(source)) => {
                Err(StoreError::StorageFailure { path, source })
            }
        }
    }
}

fn lock_path(store_path: &Path) -> PathBuf {
    let mut name = store_path.as_os_str().to_os_string();
    name.push(".lock");
    PathBuf::from(name)
}

/// Durable workflow provenance store.
///
/// Records are never rewritten: `store` appends one line and updates the
/// index, `open` rebuilds the index by replaying the log.
#[derive(Debug)]
pub struct ProvenanceStore {
    path: PathBuf,
    file: File,
    index: BTreeMap<WfId, CloudAwareProvenance>,
    _lock: StoreLock,
}

impl ProvenanceStore {
    /// Open (creating if absent) the store at `path` and rebuild its
    /// index.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|source| StoreError::StorageFailure {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
        }
        let lock = StoreLock::acquire(&path)?;
        let mut index = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(|source| {
                StoreError::StorageFailure {
                    path: path.clone(),
                    source,
                }
            })?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(|source| StoreError::StorageFailure {
                    path: path.clone(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: StoredRecord =
                    serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                        path: path.clone(),
                        line: i + 1,
                        reason: e.to_string(),
                    })?;
                if record.schema_version != STORE_SCHEMA_VERSION {
                    return Err(StoreError::Corrupt {
                        path: path.clone(),
                        line: i + 1,
                        reason: format!("unsupported schema_version {}", record.schema_version),
                    });
                }
                if record.record_type != RECORD_TYPE {
                    return Err(StoreError::Corrupt {
                        path: path.clone(),
                        line: i + 1,
                        reason: format!("unsupported record_type {}", record.record_type),
                    });
                }
                let wf_id = record.payload.wf_id;
                if index.insert(wf_id, record.payload).is_some() {
                    return Err(StoreError::Corrupt {
                        path: path.clone(),
                        line: i + 1,
                        reason: format!("wfID {wf_id} appears twice"),
                    });
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| StoreError::StorageFailure {
                path: path.clone(),
                source,
            })?;
        Ok(ProvenanceStore {
            path,
            file,
            index,
            _lock: lock,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one Cloud-aware provenance record. Storing a wfID twice is
    /// rejected; previously stored records are never touched.
    pub fn store_provenance(&mut self, p: &CloudAwareProvenance) -> Result<(), StoreError> {
        p.validate()
            .map_err(|reason| StoreError::InvalidRecord { reason })?;
        if self.index.contains_key(&p.wf_id) {
            return Err(StoreError::DuplicateWfId { wf_id: p.wf_id });
        }
        let record = StoredRecord {
            schema_version: STORE_SCHEMA_VERSION,
            record_type: RECORD_TYPE.to_string(),
            payload: p.clone(),
        };
        let mut line = serde_json::to_string(&record).map_err(|e| StoreError::InvalidRecord {
            reason: e.to_string(),
        })?;
        line.push('\n');
        let io_err = |source| StoreError::StorageFailure {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io_err)?;
        self.file.flush().map_err(io_err)?;
        self.index.insert(p.wf_id, record.payload);
        log::info!("stored provenance for wfID {}", p.wf_id);
        Ok(())
    }

    pub fn get_provenance(&self, wf_id: WfId) -> Result<&CloudAwareProvenance, StoreError> {
        self.index
            .get(&wf_id)
            .ok_or(StoreError::UnknownWfId { wf_id })
    }

    pub fn contains(&self, wf_id: WfId) -> bool {
        self.index.contains_key(&wf_id)
    }

    /// Summaries of every stored workflow in ascending wfID order.
    pub fn list_workflows(&self) -> Vec<WorkflowSummary> {
        self.index
            .values()
            .map(|p| WorkflowSummary {
                wf_id: p.wf_id,
                name: p.workflow.spec().name.clone(),
                status: p.trace.status,
                job_count: p.workflow.spec().jobs.len(),
            })
            .collect()
    }

    /// Highest stored wfID, if any. Used to seed the engine counter so
    /// new ids never collide with stored ones.
    pub fn max_wf_id(&self) -> Option<WfId> {
        self.index.keys().next_back().copied()
    }

    /// Flush buffered writes to disk.
    pub fn sync(&mut self) -> Result<(), StoreError> {
        self.file.sync_all().map_err(|source| StoreError::StorageFailure {
            path: self.path.clone(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Cluster;
    use crate::wfmodel::{build_wordcount_workflow, validate_workflow};
    use tempfile::tempdir;

    const IMAGE_ID: &str = "f102960c-557c-4253-8277-2df5ffe3c169";

    struct Scenario {
        cloud: CloudSim,
        engine: Engine,
        owner: Owner,
        wf_id: WfId,
        cluster: Cluster,
    }

    /// Submit and run wordcount on two workers with the walkthrough
    /// nodenames, then hand everything back for joining.
    fn run_wordcount(text: &[u8], seed: u64) -> Scenario {
        let owner = Owner::new("u1");
        let mut cloud = CloudSim::with_default_catalog();
        let master = cloud
            .provision_vm(&owner, "master.novalocal", "2", IMAGE_ID)
            .unwrap();
        let w1 = cloud
            .provision_vm(&owner, "osdc-vm3.novalocal", "2", IMAGE_ID)
            .unwrap();
        let w2 = cloud
            .provision_vm(&owner, "mynode.novalocal", "2", IMAGE_ID)
            .unwrap();
        let cluster = Cluster {
            master,
            workers: vec![w1, w2],
        };
        let mut engine = Engine::with_seed(seed);
        let wf = validate_workflow(build_wordcount_workflow(text)).unwrap();
        let wf_id = engine.submit_workflow(wf, cluster.clone()).unwrap();
        engine.run_to_completion(wf_id).unwrap();
        Scenario {
            cloud,
            engine,
            owner,
            wf_id,
            cluster,
        }
    }

    fn provenance_of(s: &Scenario) -> CloudAwareProvenance {
        let mappings =
            collect_cloud_mapping(&s.engine, &s.cloud, s.wf_id, &s.owner).unwrap();
        let (workflow, trace) = s.engine.get_workflow_record(s.wf_id).unwrap();
        CloudAwareProvenance {
            wf_id: s.wf_id,
            workflow: workflow.clone(),
            trace: trace.clone(),
            mappings,
        }
    }

    #[test]
    fn join_produces_one_row_per_job_with_vm_configuration() {
        let s = run_wordcount(b"a b c d e f", 114);
        let rows = collect_cloud_mapping(&s.engine, &s.cloud, s.wf_id, &s.owner).unwrap();
        assert_eq!(rows.len(), 4);
        let jobs: BTreeSet<&str> = rows.iter().map(|r| r.job_id.as_str()).collect();
        assert_eq!(jobs, BTreeSet::from(["split", "analysis1", "analysis2", "merge"]));
        for row in &rows {
            assert_eq!(row.wf_id, WfId(114));
            assert_eq!(row.flavor_id, "2");
            assert_eq!(row.ram_mb, 2048);
            assert_eq!(row.disk_gb, 20);
            assert_eq!(row.vcpus, 1);
            assert_eq!(row.image_name, "wf_peg_repeat");
            assert_eq!(row.image_id, IMAGE_ID);
            // Join consistency: the row repeats exactly the VM the
            // middleware reports at that address.
            let vm = s
                .cloud
                .list_vms(&s.owner)
                .into_iter()
                .find(|vm| vm.ip == row.host_ip)
                .unwrap();
            assert_eq!(row.nodename, vm.nodename);
        }
        // Jobs ran only on the two workers.
        let ips: BTreeSet<Ipv4Addr> = rows.iter().map(|r| r.host_ip).collect();
        assert_eq!(ips.len(), 2);
        assert!(ips.iter().all(|ip| s.cluster.workers.iter().any(|w| w.ip == *ip)));
    }

    #[test]
    fn zero_job_workflow_yields_empty_mapping() {
        let rows = map_jobs_to_vms(&[], &[], LogicalTime(0)).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn released_worker_surfaces_as_stale_mapping() {
        let mut s = run_wordcount(b"a b c d", 114);
        let released = s.cluster.workers[0].clone();
        s.cloud.release_vm(released.vm_id).unwrap();
        match collect_cloud_mapping(&s.engine, &s.cloud, s.wf_id, &s.owner) {
            Err(CollectError::StaleMapping { ip, .. }) => assert_eq!(ip, released.ip),
            other => panic!("expected StaleMapping, got {other:?}"),
        }
    }

    #[test]
    fn foreign_owner_inventory_is_stale() {
        let s = run_wordcount(b"a b c d", 114);
        let stranger = Owner::new("someone-else");
        assert!(matches!(
            collect_cloud_mapping(&s.engine, &s.cloud, s.wf_id, &stranger),
            Err(CollectError::StaleMapping { .. })
        ));
    }

    #[test]
    fn duplicate_inventory_ip_is_ambiguous() {
        let s = run_wordcount(b"a b c d", 114);
        let mut inventory = s.cloud.list_vms(&s.owner);
        let ip = inventory[1].ip;
        inventory[2].ip = ip;
        let (_, trace) = s.engine.get_workflow_record(s.wf_id).unwrap();
        match map_jobs_to_vms(&trace.records, &inventory, LogicalTime(9)) {
            Err(CollectError::AmbiguousIp { ip: dup }) => assert_eq!(dup, ip),
            other => panic!("expected AmbiguousIp, got {other:?}"),
        }
    }

    #[test]
    fn unknown_wfid_is_reported() {
        let s = run_wordcount(b"a b", 114);
        assert!(matches!(
            collect_cloud_mapping(&s.engine, &s.cloud, WfId(999), &s.owner),
            Err(CollectError::UnknownWfId { .. })
        ));
    }

    #[test]
    fn store_round_trips_field_for_field() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("provenance.jsonl");
        let p = provenance_of(&run_wordcount(b"x y z", 114));
        let mut store = ProvenanceStore::open(&path).unwrap();
        store.store_provenance(&p).unwrap();
        assert_eq!(store.get_provenance(WfId(114)).unwrap(), &p);
        assert!(matches!(
            store.store_provenance(&p),
            Err(StoreError::DuplicateWfId { .. })
        ));
        assert!(matches!(
            store.get_provenance(WfId(999)),
            Err(StoreError::UnknownWfId { .. })
        ));
    }

    #[test]
    fn listing_is_ascending_regardless_of_insertion_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("provenance.jsonl");
        let mut store = ProvenanceStore::open(&path).unwrap();
        // Insert out of order on purpose.
        for seed in [122u64, 114, 117] {
            let p = provenance_of(&run_wordcount(b"a b c", seed));
            store.store_provenance(&p).unwrap();
        }
        let ids: Vec<u64> = store.list_workflows().iter().map(|s| s.wf_id.0).collect();
        assert_eq!(ids, vec![114, 117, 122]);
        let first = &store.list_workflows()[0];
        assert_eq!(first.name, "wordcount");
        assert_eq!(first.status, WorkflowStatus::Succeeded);
        assert_eq!(first.job_count, 4);
        assert_eq!(store.max_wf_id(), Some(WfId(122)));
    }

    #[test]
    fn empty_store_lists_nothing() {
        let dir = tempdir().unwrap();
        let store = ProvenanceStore::open(dir.path().join("p.jsonl")).unwrap();
        assert!(store.list_workflows().is_empty());
        assert_eq!(store.max_wf_id(), None);
    }

    #[test]
    fn reopening_rebuilds_the_index() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("provenance.jsonl");
        let p = provenance_of(&run_wordcount(b"persist me", 114));
        {
            let mut store = ProvenanceStore::open(&path).unwrap();
            store.store_provenance(&p).unwrap();
        }
        let store = ProvenanceStore::open(&path).unwrap();
        assert_eq!(store.get_provenance(WfId(114)).unwrap(), &p);
    }

    #[test]
    fn storing_never_mutates_previous_records() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("provenance.jsonl");
        let mut store = ProvenanceStore::open(&path).unwrap();
        store
            .store_provenance(&provenance_of(&run_wordcount(b"first", 114)))
            .unwrap();
        let before = fs::read_to_string(&path).unwrap();
        store
            .store_provenance(&provenance_of(&run_wordcount(b"second", 200)))
            .unwrap();
        let after = fs::read_to_string(&path).unwrap();
        assert!(after.starts_with(&before), "existing lines were rewritten");
    }

    #[test]
    fn corrupt_line_is_reported_with_its_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("provenance.jsonl");
        fs::write(&path, "not json\n").unwrap();
        match ProvenanceStore::open(&path) {
            Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected Corrupt, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_mappings_are_rejected_on_store() {
        let dir = tempdir().unwrap();
        let mut store = ProvenanceStore::open(dir.path().join("p.jsonl")).unwrap();
        let mut p = provenance_of(&run_wordcount(b"a b", 114));
        p.mappings.pop();
        assert!(matches!(
            store.store_provenance(&p),
            Err(StoreError::InvalidRecord { .. })
        ));
    }

    #[test]
    fn second_writer_on_same_path_is_locked_out() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("provenance.jsonl");
        let _store = ProvenanceStore::open(&path).unwrap();
        assert!(matches!(
            ProvenanceStore::open(&path),
            Err(StoreError::Locked { .. })
        ));
        drop(_store);
        assert!(ProvenanceStore::open(&path).is_ok());
    }
}
