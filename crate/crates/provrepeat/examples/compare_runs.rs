//! Judging repeatability: configuration equivalence and output identity
//! between two stored runs, including what a mismatch looks like.
//!
//! Run with: `cargo run -p provrepeat --example compare_runs`

use provrepeat::cli::render_comparison;
use provrepeat::cloudsim::CloudSim;
use provrepeat::engine::{Cluster, Engine, WfId};
use provrepeat::provenance::{collect_cloud_mapping, CloudAwareProvenance, ProvenanceStore};
use provrepeat::repeat::{compare_infrastructure, compare_outputs, release_cluster, repeat_workflow};
use provrepeat::types::Owner;
use provrepeat::wfmodel::{build_wordcount_workflow, validate_workflow};

const IMAGE_ID: &str = "f102960c-557c-4253-8277-2df5ffe3c169";

fn main() {
    let owner = Owner::new("erin");
    let mut cloud = CloudSim::with_default_catalog();
    let mut engine = Engine::new();
    let dir = tempfile::tempdir().unwrap();
    let mut store = ProvenanceStore::open(dir.path().join("provenance.jsonl")).unwrap();

    // Original run.
    let master = cloud.provision_vm(&owner, "master.novalocal", "2", IMAGE_ID).unwrap();
    let w1 = cloud.provision_vm(&owner, "worker1.novalocal", "2", IMAGE_ID).unwrap();
    let w2 = cloud.provision_vm(&owner, "worker2.novalocal", "2", IMAGE_ID).unwrap();
    let cluster = Cluster { master, workers: vec![w1, w2] };
    let old_wf = engine
        .submit_workflow(
            validate_workflow(build_wordcount_workflow(b"compare me to my repetition")).unwrap(),
            cluster.clone(),
        )
        .unwrap();
    let trace = engine.run_to_completion(old_wf).unwrap();
    let mappings = collect_cloud_mapping(&engine, &cloud, old_wf, &owner).unwrap();
    store
        .store_provenance(&CloudAwareProvenance {
            wf_id: old_wf,
            workflow: engine.get_workflow_record(old_wf).unwrap().0.clone(),
            trace,
            mappings,
        })
        .unwrap();
    release_cluster(&mut cloud, &cluster);

    // A faithful repeat compares clean on both axes.
    let report = repeat_workflow(&mut engine, &mut cloud, &mut store, old_wf, &owner).unwrap();
    let config = compare_infrastructure(&store, old_wf, report.new_wf).unwrap();
    let outputs = compare_outputs(&store, old_wf, report.new_wf).unwrap();
    print!("{}", render_comparison(&config, &outputs));

    // A run on a weaker configuration does not: store a copy of the
    // repeat with one row's RAM halved, as if it had run on a 1 GB VM.
    let mut weaker = store.get_provenance(report.new_wf).unwrap().clone();
    let fake = WfId(900);
    weaker.wf_id = fake;
    weaker.trace.wf_id = fake;
    for r in &mut weaker.trace.records {
        r.wf_id = fake;
    }
    for m in &mut weaker.mappings {
        m.wf_id = fake;
    }
    weaker.mappings[0].ram_mb = 1024;
    store.store_provenance(&weaker).unwrap();

    println!();
    let config = compare_infrastructure(&store, old_wf, fake).unwrap();
    let outputs = compare_outputs(&store, old_wf, fake).unwrap();
    print!("{}", render_comparison(&config, &outputs));
}
