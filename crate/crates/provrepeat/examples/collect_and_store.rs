//! Joining job provenance to VM configurations by IP, and persisting the
//! Cloud-aware result in the append-only store.
//!
//! Run with: `cargo run -p provrepeat --example collect_and_store`

use provrepeat::cli::render_mapping_table;
use provrepeat::cloudsim::CloudSim;
use provrepeat::engine::{Cluster, Engine};
use provrepeat::provenance::{collect_cloud_mapping, CloudAwareProvenance, ProvenanceStore};
use provrepeat::types::Owner;
use provrepeat::wfmodel::{build_wordcount_workflow, validate_workflow};

const IMAGE_ID: &str = "f102960c-557c-4253-8277-2df5ffe3c169";

fn main() {
    let owner = Owner::new("carol");
    let mut cloud = CloudSim::with_default_catalog();
    let master = cloud.provision_vm(&owner, "master.novalocal", "2", IMAGE_ID).unwrap();
    let w1 = cloud.provision_vm(&owner, "osdc-vm3.novalocal", "2", IMAGE_ID).unwrap();
    let w2 = cloud.provision_vm(&owner, "mynode.novalocal", "2", IMAGE_ID).unwrap();
    let cluster = Cluster { master, workers: vec![w1.clone(), w2] };

    let mut engine = Engine::new();
    let wf_id = engine
        .submit_workflow(
            validate_workflow(build_wordcount_workflow(b"count these words on the cloud")).unwrap(),
            cluster.clone(),
        )
        .unwrap();
    let trace = engine.run_to_completion(wf_id).unwrap();

    // Join each job's host IP against the owner's live VM list. This must
    // happen before the cluster is released.
    let mappings = collect_cloud_mapping(&engine, &cloud, wf_id, &owner).unwrap();
    println!("{}", render_mapping_table(&mappings));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("provenance.jsonl");
    let record = CloudAwareProvenance {
        wf_id,
        workflow: engine.get_workflow_record(wf_id).unwrap().0.clone(),
        trace,
        mappings,
    };
    {
        let mut store = ProvenanceStore::open(&path).unwrap();
        store.store_provenance(&record).unwrap();
        println!("stored wfID {wf_id} in {}", path.display());
        println!("storing again: {}", store.store_provenance(&record).unwrap_err());
    }

    // Reopen: the index is rebuilt from the log.
    let store = ProvenanceStore::open(&path).unwrap();
    for s in store.list_workflows() {
        println!(
            "reloaded wfID {}: {} ({m} jobs, {status})",
            s.wf_id,
            s.name,
            m = s.job_count,
            status = s.status
        );
    }
    assert_eq!(store.get_provenance(wf_id).unwrap(), &record);
    println!("round trip is structurally equal");

    // Releasing a worker first makes the join fail loudly instead of
    // producing a silent partial mapping.
    let mut engine2 = Engine::with_seed(300);
    let wf2 = engine2
        .submit_workflow(
            validate_workflow(build_wordcount_workflow(b"too late to look up")).unwrap(),
            cluster,
        )
        .unwrap();
    engine2.run_to_completion(wf2).unwrap();
    cloud.release_vm(w1.vm_id).unwrap();
    println!(
        "\ncollecting after a release: {}",
        collect_cloud_mapping(&engine2, &cloud, wf2, &owner).unwrap_err()
    );
}
