//! Repeat a stored workflow on freshly provisioned, configuration-
//! equivalent resources, and verify repeatability.
//!
//! Given an old wfID, the stored mapping rows drive re-provisioning: one
//! fresh worker per distinct original nodename (named with a
//! `-rep.novalocal` postfix) plus a master of the same flavor. The stored
//! definition is resubmitted under a new wfID, its Cloud-aware provenance
//! is collected and stored, the repeat cluster is released, and the run
//! is judged on two axes: infrastructure equivalence (exact equality of
//! ram_mb, disk_gb, vcpus and image_id per job, deliberately ignoring
//! IP, nodename and flavor id) and output identity by digest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloudsim::{CloudError, CloudSim};
use crate::engine::{Cluster, Engine, EngineError, WfId, WorkflowStatus};
use crate::provenance::{
    collect_cloud_mapping, CloudAwareProvenance, CollectError, ProvenanceStore,
    ResourceMappingRow, StoreError,
};
use crate::types::{ContentDigest, Owner};

/// Configuration fields that take part in the equivalence test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigField {
    RamMb,
    DiskGb,
    Vcpus,
    ImageId,
}

impl fmt::Display for ConfigField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ConfigField::RamMb => "ram_mb",
            ConfigField::DiskGb => "disk_gb",
            ConfigField::Vcpus => "vcpus",
            ConfigField::ImageId => "image_id",
        };
        f.write_str(name)
    }
}

/// One differing field between an old and a new mapping row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDiff {
    pub field: ConfigField,
    pub old_value: String,
    pub new_value: String,
}

impl fmt::Display for FieldDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}→{}", self.field, self.old_value, self.new_value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobConfigComparison {
    pub job_id: String,
    pub matched: bool,
    pub diffs: Vec<FieldDiff>,
}

/// Per-job infrastructure comparison between two stored workflows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigComparison {
    pub old_wf: WfId,
    pub new_wf: WfId,
    pub per_job: Vec<JobConfigComparison>,
    pub equivalent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub name: String,
    pub old_digest: ContentDigest,
    pub new_digest: ContentDigest,
    pub equal: bool,
}

/// Per-output digest comparison between two stored workflows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputComparison {
    pub old_wf: WfId,
    pub new_wf: WfId,
    pub per_output: Vec<OutputEntry>,
    pub identical: bool,
}

/// The outcome of one repeat: the fresh wfID plus both verdicts. Judgment
/// when the two verdicts disagree is left to the caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub old_wf: WfId,
    pub new_wf: WfId,
    pub config: ConfigComparison,
    pub outputs: OutputComparison,
}

#[derive(Debug, Error)]
pub enum RepeatError {
    #[error("unknown wfID: {wf_id}")]
    UnknownWfId { wf_id: WfId },
    #[error("workflow {wf_id} did not succeed, nothing to repeat")]
    OriginalFailed { wf_id: WfId },
    #[error("repeated run {wf_id} failed")]
    RepeatRunFailed { wf_id: WfId },
    #[error("no mapping rows to re-provision from")]
    EmptyMapping,
    #[error("job sets differ: only in old {only_old:?}, only in new {only_new:?}")]
    JobSetMismatch {
        only_old: Vec<String>,
        only_new: Vec<String>,
    },
    #[error("output sets differ: only in old {only_old:?}, only in new {only_new:?}")]
    OutputSetMismatch {
        only_old: Vec<String>,
        only_new: Vec<String>,
    },
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// `<base>-rep.novalocal` for an original nodename, stripping one
/// `.novalocal` suffix if present.
fn rep_nodename(original: &str) -> String {
    let base = original.strip_suffix(".novalocal").unwrap_or(original);
    format!("{base}-rep.novalocal")
}

/// Resolve a mapping row to a catalog flavor: by id when the id still
/// carries the recorded resources, otherwise by the resource triple.
fn resolve_flavor_id(cloud: &CloudSim, row: &ResourceMappingRow) -> Result<String, CloudError> {
    if let Ok(f) = cloud.get_flavor(&row.flavor_id) {
        if f.ram_mb == row.ram_mb && f.disk_gb == row.disk_gb && f.vcpus == row.vcpus {
            return Ok(f.flavor_id.clone());
        }
    }
    cloud
        .find_flavor_by_spec(row.ram_mb, row.disk_gb, row.vcpus)
        .map(|f| f.flavor_id.clone())
}

/// Release every cluster VM, ignoring individual release errors.
pub fn release_cluster(cloud: &mut CloudSim, cluster: &Cluster) {
    for vm in std::iter::once(&cluster.master).chain(cluster.workers.iter()) {
        let _ = cloud.release_vm(vm.vm_id);
    }
}

/// Provision a configuration-equivalent cluster from stored mapping rows.
///
/// One fresh worker per distinct original nodename in first-appearance
/// order, plus one master of the first worker's flavor. All-or-nothing:
/// on any failure every VM provisioned here is released again.
pub fn reprovision(
    cloud: &mut CloudSim,
    mappings: &[ResourceMappingRow],
    owner: &Owner,
) -> Result<Cluster, RepeatError> {
    if mappings.is_empty() {
        return Err(RepeatError::EmptyMapping);
    }
    let mut seen = BTreeSet::new();
    let worker_rows: Vec<&ResourceMappingRow> = mappings
        .iter()
        .filter(|row| seen.insert(row.nodename.as_str()))
        .collect();

    let mut provisioned = Vec::new();
    let mut build = || -> Result<Cluster, RepeatError> {
        let first = worker_rows[0];
        let master_flavor = resolve_flavor_id(cloud, first)?;
        let master = cloud.provision_vm(owner, "master-rep.novalocal", &master_flavor, &first.image_id)?;
        provisioned.push(master.vm_id);
        let mut workers = Vec::with_capacity(worker_rows.len());
        for row in &worker_rows {
            let flavor_id = resolve_flavor_id(cloud, row)?;
            let vm = cloud.provision_vm(owner, &rep_nodename(&row.nodename), &flavor_id, &row.image_id)?;
            provisioned.push(vm.vm_id);
            workers.push(vm);
        }
        Ok(Cluster { master, workers })
    };
    match build() {
        Ok(cluster) => Ok(cluster),
        Err(e) => {
            for vm_id in provisioned {
                let _ = cloud.release_vm(vm_id);
            }
            Err(e)
        }
    }
}

/// Repeat `old_wf` end to end: re-provision, resubmit under a fresh wfID,
/// run, re-collect and store Cloud-aware provenance, release the repeat
/// cluster, and return both comparisons.
///
/// On any error the repeat cluster is fully released; a repeat is never
/// left holding VMs.
pub fn repeat_workflow(
    engine: &mut Engine,
    cloud: &mut CloudSim,
    store: &mut ProvenanceStore,
    old_wf: WfId,
    owner: &Owner,
) -> Result<RepeatReport, RepeatError> {
    let old = store
        .get_provenance(old_wf)
        .map_err(|_| RepeatError::UnknownWfId { wf_id: old_wf })?
        .clone();
    if old.trace.status != WorkflowStatus::Succeeded {
        return Err(RepeatError::OriginalFailed { wf_id: old_wf });
    }
    if let Some(max) = store.max_wf_id() {
        engine.raise_seed(max.0 + 1);
    }
    engine.raise_seed(old_wf.0 + 1);

    let cluster = reprovision(cloud, &old.mappings, owner)?;
    log::info!(
        "repeat of wfID {old_wf}: provisioned {} worker(s) plus master",
        cluster.workers.len()
    );

    let mut run = || -> Result<WfId, RepeatError> {
        let new_wf = engine.submit_workflow(old.workflow.clone(), cluster.clone())?;
        let trace = engine.run_to_completion(new_wf)?;
        if trace.status != WorkflowStatus::Succeeded {
            return Err(RepeatError::RepeatRunFailed { wf_id: new_wf });
        }
        let mappings = collect_cloud_mapping(engine, cloud, new_wf, owner)?;
        store.store_provenance(&CloudAwareProvenance {
            wf_id: new_wf,
            workflow: old.workflow.clone(),
            trace,
            mappings,
        })?;
        Ok(new_wf)
    };
    let outcome = run();
    release_cluster(cloud, &cluster);
    let new_wf = outcome?;

    let config = compare_infrastructure(store, old_wf, new_wf)?;
    let outputs = compare_outputs(store, old_wf, new_wf)?;
    Ok(RepeatReport {
        old_wf,
        new_wf,
        config,
        outputs,
    })
}

fn get_stored(
    store: &ProvenanceStore,
    wf_id: WfId,
) -> Result<&CloudAwareProvenance, RepeatError> {
    store
        .get_provenance(wf_id)
        .map_err(|_| RepeatError::UnknownWfId { wf_id })
}

/// Pair mapping rows by job id and compare resource configurations.
///
/// A job matches when (ram_mb, disk_gb, vcpus, image_id) are all equal;
/// host IP, nodename, flavor id and collection time are excluded; those
/// are exactly the columns expected to differ between a run and its
/// repeat.
pub fn compare_infrastructure(
    store: &ProvenanceStore,
    old_wf: WfId,
    new_wf: WfId,
) -> Result<ConfigComparison, RepeatError> {
    let old = get_stored(store, old_wf)?;
    let new = get_stored(store, new_wf)?;
    let old_rows: BTreeMap<&str, &ResourceMappingRow> =
        old.mappings.iter().map(|r| (r.job_id.as_str(), r)).collect();
    let new_rows: BTreeMap<&str, &ResourceMappingRow> =
        new.mappings.iter().map(|r| (r.job_id.as_str(), r)).collect();
    if old_rows.keys().ne(new_rows.keys()) {
        return Err(RepeatError::JobSetMismatch {
            only_old: old_rows
                .keys()
                .filter(|k| !new_rows.contains_key(**k))
                .map(|k| k.to_string())
                .collect(),
            only_new: new_rows
                .keys()
                .filter(|k| !old_rows.contains_key(**k))
                .map(|k| k.to_string())
                .collect(),
        });
    }

    let per_job: Vec<JobConfigComparison> = old
        .mappings
        .iter()
        .map(|old_row| {
            let new_row = new_rows[old_row.job_id.as_str()];
            let mut diffs = Vec::new();
            let mut diff = |field, old_value: String, new_value: String| {
                if old_value != new_value {
                    diffs.push(FieldDiff {
                        field,
                        old_value,
                        new_value,
                    });
                }
            };
            diff(ConfigField::RamMb, old_row.ram_mb.to_string(), new_row.ram_mb.to_string());
            diff(ConfigField::DiskGb, old_row.disk_gb.to_string(), new_row.disk_gb.to_string());
            diff(ConfigField::Vcpus, old_row.vcpus.to_string(), new_row.vcpus.to_string());
            diff(ConfigField::ImageId, old_row.image_id.clone(), new_row.image_id.clone());
            JobConfigComparison {
                job_id: old_row.job_id.clone(),
                matched: diffs.is_empty(),
                diffs,
            }
        })
        .collect();
    let equivalent = per_job.iter().all(|j| j.matched);
    Ok(ConfigComparison {
        old_wf,
        new_wf,
        per_job,
        equivalent,
    })
}

/// Pair final outputs by logical name and compare digests.
pub fn compare_outputs(
    store: &ProvenanceStore,
    old_wf: WfId,
    new_wf: WfId,
) -> Result<OutputComparison, RepeatError> {
    let old = get_stored(store, old_wf)?;
    let new = get_stored(store, new_wf)?;
    let old_outputs = &old.trace.final_outputs;
    let new_outputs = &new.trace.final_outputs;
    if old_outputs.keys().ne(new_outputs.keys()) {
        return Err(RepeatError::OutputSetMismatch {
            only_old: old_outputs
                .keys()
                .filter(|k| !new_outputs.contains_key(*k))
                .cloned()
                .collect(),
            only_new: new_outputs
                .keys()
                .filter(|k| !old_outputs.contains_key(*k))
                .cloned()
                .collect(),
        });
    }
    let per_output: Vec<OutputEntry> = old_outputs
        .iter()
        .map(|(name, old_digest)| {
            let new_digest = &new_outputs[name];
            OutputEntry {
                name: name.clone(),
                old_digest: old_digest.clone(),
                new_digest: new_digest.clone(),
                equal: old_digest == new_digest,
            }
        })
        .collect();
    let identical = per_output.iter().all(|o| o.equal);
    Ok(OutputComparison {
        old_wf,
        new_wf,
        per_output,
        identical,
    })
}
