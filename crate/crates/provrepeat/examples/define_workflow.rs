//! Building and validating workflow DAGs, and the deterministic task
//! kernels behind the built-in wordcount workflow.
//!
//! Run with: `cargo run -p provrepeat --example define_workflow`

use provrepeat::wfmodel::{
    build_wordcount_workflow, kernel_count, kernel_merge, kernel_split, validate_workflow,
};

fn main() {
    let text = b"six geese a-laying five gold rings four calling birds";

    let spec = build_wordcount_workflow(text);
    println!("workflow {:?}: {} jobs, {} edges", spec.name, spec.jobs.len(), spec.edges.len());
    for job in &spec.jobs {
        println!(
            "  {:<9} {:?}  consumes {:?}  produces {:?}",
            job.job_id, job.task_kind, job.input_names, job.output_names
        );
    }

    let validated = validate_workflow(spec).unwrap();
    println!("topological order: {:?}\n", validated.topo_order());

    // The kernels the jobs will run, on their own.
    let (part1, part2) = kernel_split(text);
    println!("split  -> {:?} | {:?}", String::from_utf8_lossy(&part1), String::from_utf8_lossy(&part2));
    let (c1, c2) = (kernel_count(&part1), kernel_count(&part2));
    println!("count  -> {c1} and {c2} words");
    println!("merge  -> {} words total\n", kernel_merge(&[c1 as i64, c2 as i64]).unwrap());

    // Validation catches malformed graphs before anything runs.
    let mut cyclic = build_wordcount_workflow(text);
    cyclic.edges.push(("merge".into(), "split".into()));
    println!("cyclic variant: {}", validate_workflow(cyclic).unwrap_err());

    let mut orphaned = build_wordcount_workflow(text);
    orphaned.workflow_inputs.clear();
    println!("missing input: {}", validate_workflow(orphaned).unwrap_err());
}
