//! Repeating a stored workflow by wfID: re-provisioning equivalent VMs
//! from the stored mapping, re-running, and re-collecting provenance.
//!
//! Run with: `cargo run -p provrepeat --example repeat_run`

use provrepeat::cli::render_mapping_table;
use provrepeat::cloudsim::CloudSim;
use provrepeat::engine::{Cluster, Engine};
use provrepeat::provenance::{collect_cloud_mapping, CloudAwareProvenance, ProvenanceStore};
use provrepeat::repeat::{release_cluster, repeat_workflow};
use provrepeat::types::Owner;
use provrepeat::wfmodel::{build_wordcount_workflow, validate_workflow};

const IMAGE_ID: &str = "f102960c-557c-4253-8277-2df5ffe3c169";

fn main() {
    let owner = Owner::new("dave");
    let mut cloud = CloudSim::with_default_catalog();
    let mut engine = Engine::new();
    let dir = tempfile::tempdir().unwrap();
    let mut store = ProvenanceStore::open(dir.path().join("provenance.jsonl")).unwrap();

    // Original run, collected and stored, cluster released afterwards:
    // exactly the situation a later repeat starts from.
    let master = cloud.provision_vm(&owner, "master.novalocal", "2", IMAGE_ID).unwrap();
    let w1 = cloud.provision_vm(&owner, "osdc-vm3.novalocal", "2", IMAGE_ID).unwrap();
    let w2 = cloud.provision_vm(&owner, "mynode.novalocal", "2", IMAGE_ID).unwrap();
    let cluster = Cluster { master, workers: vec![w1, w2] };
    let wf_id = engine
        .submit_workflow(
            validate_workflow(build_wordcount_workflow(b"what happened once shall happen again"))
                .unwrap(),
            cluster.clone(),
        )
        .unwrap();
    let trace = engine.run_to_completion(wf_id).unwrap();
    let mappings = collect_cloud_mapping(&engine, &cloud, wf_id, &owner).unwrap();
    store
        .store_provenance(&CloudAwareProvenance {
            wf_id,
            workflow: engine.get_workflow_record(wf_id).unwrap().0.clone(),
            trace,
            mappings,
        })
        .unwrap();
    release_cluster(&mut cloud, &cluster);
    println!("original wfID {wf_id} stored; cluster released\n");

    // Repeat by wfID. The stored rows drive re-provisioning; the repeat
    // cluster is released before the report comes back.
    let report = repeat_workflow(&mut engine, &mut cloud, &mut store, wf_id, &owner).unwrap();
    println!(
        "repeat finished: new wfID {}, infrastructure equivalent: {}, outputs identical: {}",
        report.new_wf, report.config.equivalent, report.outputs.identical
    );
    println!(
        "active VMs after repeat: {} (repeat clusters never outlive the run)\n",
        cloud.list_vms(&owner).len()
    );

    println!("original rows:");
    print!(
        "{}",
        render_mapping_table(&store.get_provenance(wf_id).unwrap().mappings)
    );
    println!("\nrepeated rows (same configuration, -rep nodenames):");
    print!(
        "{}",
        render_mapping_table(&store.get_provenance(report.new_wf).unwrap().mappings)
    );
}
