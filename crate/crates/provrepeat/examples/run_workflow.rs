//! Submitting a workflow to a provisioned cluster and reading its
//! execution trace: wfID assignment, scheduling, per-job records.
//!
//! Run with: `cargo run -p provrepeat --example run_workflow`

use provrepeat::cloudsim::CloudSim;
use provrepeat::engine::{Cluster, Engine};
use provrepeat::types::Owner;
use provrepeat::wfmodel::{build_wordcount_workflow, validate_workflow};

const IMAGE_ID: &str = "f102960c-557c-4253-8277-2df5ffe3c169";

fn main() {
    let owner = Owner::new("bob");
    let mut cloud = CloudSim::with_default_catalog();
    let master = cloud.provision_vm(&owner, "master.novalocal", "2", IMAGE_ID).unwrap();
    let w1 = cloud.provision_vm(&owner, "worker1.novalocal", "2", IMAGE_ID).unwrap();
    let w2 = cloud.provision_vm(&owner, "worker2.novalocal", "2", IMAGE_ID).unwrap();
    let cluster = Cluster { master, workers: vec![w1, w2] };

    let workflow = validate_workflow(build_wordcount_workflow(
        b"a workflow is a graph of jobs stitched together by data",
    ))
    .unwrap();

    let mut engine = Engine::new();
    let wf_id = engine.submit_workflow(workflow, cluster).unwrap();
    println!("submitted as wfID {wf_id}");

    let trace = engine.run_to_completion(wf_id).unwrap();
    println!("status: {}\n", trace.status);
    println!("{:<10} {:<12} {:>5} {:>4}  outputs", "job", "host", "start", "end");
    for r in &trace.records {
        let outputs: Vec<String> = r
            .output_digests
            .iter()
            .map(|(name, digest)| format!("{name}={}", digest.short()))
            .collect();
        println!(
            "{:<10} {:<12} {:>5} {:>4}  {}",
            r.job_id,
            r.host_ip.to_string(),
            r.start.value(),
            r.end.value(),
            outputs.join(" ")
        );
    }

    println!("\nworkflow outputs:");
    for (name, digest) in &trace.final_outputs {
        println!("  {name}: sha256 {digest}");
    }

    // The engine keeps the definition; it can be fetched and resubmitted.
    let (stored, _) = engine.get_workflow_record(wf_id).unwrap();
    println!(
        "\nstored definition has {} jobs and can be resubmitted verbatim",
        stored.spec().jobs.len()
    );
}
