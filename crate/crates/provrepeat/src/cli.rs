//! Command-line interface wiring all modules together.
//!
//! Commands: `submit`, `show`, `repeat`, `compare`, `list`. Every command
//! builds a fresh simulator from the cloud config, opens the provenance
//! store (path from `--store` or `PROVREPEAT_STORE`), and seeds the wfID
//! counter above everything already stored, so identical invocations over
//! the same store produce byte-identical output.
//!
//! Exit codes: 0 success; 1 a repeat/compare verification verdict failed;
//! 2 usage error; 3 domain error; 4 storage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use thiserror::Error;

use crate::cloudsim::{CloudCatalog, CloudError, CloudSim};
use crate::engine::{Cluster, Engine, EngineError, WfId};
use crate::provenance::{
    collect_cloud_mapping, CloudAwareProvenance, CollectError, ProvenanceStore,
    ResourceMappingRow, StoreError, WorkflowSummary,
};
use crate::repeat::{
    compare_infrastructure, compare_outputs, release_cluster, repeat_workflow, ConfigComparison,
    OutputComparison, RepeatError, RepeatReport,
};
use crate::types::Owner;
use crate::wfmodel::{load_workflow_file, validate_workflow, WorkflowError};

#[derive(Debug, Parser)]
#[command(
    name = "provrepeat",
    version,
    about = "Capture Cloud-aware provenance for workflow runs and repeat them on equivalent resources"
)]
pub struct Cli {
    /// Provenance store path.
    #[arg(long, global = true, env = "PROVREPEAT_STORE", default_value = "provenance.jsonl")]
    store: PathBuf,

    /// Cloud catalog config file (JSON); built-in catalog when omitted.
    #[arg(long, global = true)]
    cloud_config: Option<PathBuf>,

    /// First wfID to assign when the store is empty.
    #[arg(long, global = true, default_value_t = 114, value_parser = clap::value_parser!(u64).range(1..))]
    wfid_seed: u64,

    /// Principal owning the provisioned VMs.
    #[arg(long, global = true, default_value = "wfuser")]
    owner: String,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Provision a cluster, run a workflow on it, and store its
    /// Cloud-aware provenance.
    Submit {
        /// Workflow definition file (JSON).
        #[arg(long)]
        workflow: PathBuf,
        /// Number of worker VMs.
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
        workers: u32,
        /// Flavor id for every cluster VM.
        #[arg(long, default_value = "2")]
        flavor: String,
        /// Image id for every cluster VM.
        #[arg(long, default_value = "f102960c-557c-4253-8277-2df5ffe3c169")]
        image: String,
    },
    /// Print the job-to-VM mapping rows of a stored workflow.
    Show { wf_id: u64 },
    /// Re-provision equivalent resources, re-run a stored workflow, and
    /// verify repeatability.
    Repeat { wf_id: u64 },
    /// Compare two stored workflows by configuration and outputs.
    Compare { old_id: u64, new_id: u64 },
    /// List stored workflows.
    List,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Storage(String),
    #[error("verification failed")]
    VerificationFailed,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::VerificationFailed => 1,
            CliError::Domain(_) => 3,
            CliError::Storage(_) => 4,
        }
    }
}

impl From<CloudError> for CliError {
    fn from(e: CloudError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<WorkflowError> for CliError {
    fn from(e: WorkflowError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<CollectError> for CliError {
    fn from(e: CollectError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Storage(e.to_string())
    }
}

impl From<RepeatError> for CliError {
    fn from(e: RepeatError) -> Self {
        match e {
            RepeatError::Store(inner) => CliError::Storage(inner.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

/// Entry point used by the `provrepeat` binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Submit {
            workflow,
            workers,
            flavor,
            image,
        } => cmd_submit(cli, workflow, *workers, flavor, image),
        Command::Show { wf_id } => cmd_show(cli, WfId(*wf_id)),
        Command::Repeat { wf_id } => cmd_repeat(cli, WfId(*wf_id)),
        Command::Compare { old_id, new_id } => cmd_compare(cli, WfId(*old_id), WfId(*new_id)),
        Command::List => cmd_list(cli),
    }
}

fn load_cloud(cli: &Cli) -> Result<CloudSim, CliError> {
    let catalog = match &cli.cloud_config {
        Some(path) => CloudCatalog::from_file(path)?,
        None => CloudCatalog::default_catalog(),
    };
    Ok(CloudSim::new(catalog)?)
}

fn open_store(cli: &Cli) -> Result<ProvenanceStore, CliError> {
    Ok(ProvenanceStore::open(&cli.store)?)
}

fn seeded_engine(cli: &Cli, store: &ProvenanceStore) -> Engine {
    let mut engine = Engine::with_seed(cli.wfid_seed);
    if let Some(max) = store.max_wf_id() {
        engine.raise_seed(max.0 + 1);
    }
    engine
}

/// Provision master plus `workers` workers, all of one flavor and image.
/// All-or-nothing: partial resources are released on failure.
fn provision_cluster(
    cloud: &mut CloudSim,
    owner: &Owner,
    workers: u32,
    flavor: &str,
    image: &str,
) -> Result<Cluster, CloudError> {
    let mut provisioned = Vec::new();
    let mut build = || -> Result<Cluster, CloudError> {
        let master = cloud.provision_vm(owner, "master.novalocal", flavor, image)?;
        provisioned.push(master.vm_id);
        let mut worker_vms = Vec::with_capacity(workers as usize);
        for i in 1..=workers {
            let vm = cloud.provision_vm(owner, &format!("worker{i}.novalocal"), flavor, image)?;
            provisioned.push(vm.vm_id);
            worker_vms.push(vm);
        }
        Ok(Cluster {
            master,
            workers: worker_vms,
        })
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

fn cmd_submit(
    cli: &Cli,
    workflow_path: &Path,
    workers: u32,
    flavor: &str,
    image: &str,
) -> Result<(), CliError> {
    let mut cloud = load_cloud(cli)?;
    let mut store = open_store(cli)?;
    let mut engine = seeded_engine(cli, &store);
    let owner = Owner::new(cli.owner.clone());

    let spec = load_workflow_file(workflow_path)?;
    let workflow = validate_workflow(spec)?;

    let cluster = provision_cluster(&mut cloud, &owner, workers, flavor, image)?;
    let result = (|| -> Result<(WfId, crate::engine::WorkflowStatus), CliError> {
        let wf_id = engine.submit_workflow(workflow, cluster.clone())?;
        let trace = engine.run_to_completion(wf_id)?;
        let status = trace.status;
        let mappings = collect_cloud_mapping(&engine, &cloud, wf_id, &owner)?;
        let (stored_wf, _) = engine.get_workflow_record(wf_id)?;
        store.store_provenance(&CloudAwareProvenance {
            wf_id,
            workflow: stored_wf.clone(),
            trace,
            mappings,
        })?;
        Ok((wf_id, status))
    })();
    release_cluster(&mut cloud, &cluster);
    let (wf_id, status) = result?;
    println!("wfID {wf_id} {status}");
    Ok(())
}

fn cmd_show(cli: &Cli, wf_id: WfId) -> Result<(), CliError> {
    let store = open_store(cli)?;
    let p = store.get_provenance(wf_id).map_err(|e| match e {
        StoreError::UnknownWfId { .. } => CliError::Domain(e.to_string()),
        other => CliError::Storage(other.to_string()),
    })?;
    print!("{}", render_mapping_table(&p.mappings));
    Ok(())
}

fn report_path(store_path: &Path, report: &RepeatReport) -> PathBuf {
    let dir = store_path.parent().unwrap_or(Path::new("."));
    dir.join(format!("repeat-{}-{}.json", report.old_wf, report.new_wf))
}

fn cmd_repeat(cli: &Cli, wf_id: WfId) -> Result<(), CliError> {
    let mut cloud = load_cloud(cli)?;
    let mut store = open_store(cli)?;
    let mut engine = seeded_engine(cli, &store);
    let owner = Owner::new(cli.owner.clone());

    let report = repeat_workflow(&mut engine, &mut cloud, &mut store, wf_id, &owner)?;
    println!(
        "new wfID {}; infrastructure {}; outputs {}",
        report.new_wf,
        equivalence_verdict(&report.config),
        identity_verdict(&report.outputs)
    );
    let new_rows = &store.get_provenance(report.new_wf)?.mappings;
    print!("{}", render_mapping_table(new_rows));

    let path = report_path(&cli.store, &report);
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Storage(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| {
        CliError::Storage(format!("cannot write report {}: {e}", path.display()))
    })?;
    println!("report: {}", path.display());

    if report.config.equivalent && report.outputs.identical {
        Ok(())
    } else {
        Err(CliError::VerificationFailed)
    }
}

fn cmd_compare(cli: &Cli, old_id: WfId, new_id: WfId) -> Result<(), CliError> {
    let store = open_store(cli)?;
    let config = compare_infrastructure(&store, old_id, new_id)?;
    let outputs = compare_outputs(&store, old_id, new_id)?;
    print!("{}", render_comparison(&config, &outputs));
    if config.equivalent && outputs.identical {
        Ok(())
    } else {
        Err(CliError::VerificationFailed)
    }
}

fn cmd_list(cli: &Cli) -> Result<(), CliError> {
    let store = open_store(cli)?;
    print!("{}", render_summary_table(&store.list_workflows()));
    Ok(())
}

/// Column labels of the mapping table, in documented order.
pub const MAPPING_HEADERS: [&str; 9] = [
    "WF ID",
    "Host IP",
    "nodename",
    "Flavour Id",
    "minRAM (MB)",
    "minHD (GB)",
    "vCPU",
    "Image name",
    "Image id",
];

fn render_table<const N: usize>(headers: [&str; N], rows: Vec<[String; N]>) -> String {
    let mut widths: [usize; N] = [0; N];
    for (i, h) in headers.iter().enumerate() {
        widths[i] = h.chars().count();
    }
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let push_row = |cells: &[String; N], out: &mut String| {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if i + 1 < N {
                for _ in cell.chars().count()..widths[i] {
                    line.push(' ');
                }
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    };
    let header_cells: [String; N] = headers.map(String::from);
    push_row(&header_cells, &mut out);
    for row in &rows {
        push_row(row, &mut out);
    }
    out
}

/// Render mapping rows under the exact documented column labels.
pub fn render_mapping_table(rows: &[ResourceMappingRow]) -> String {
    let cells: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            [
                r.wf_id.to_string(),
                r.host_ip.to_string(),
                r.nodename.clone(),
                r.flavor_id.clone(),
                r.ram_mb.to_string(),
                r.disk_gb.to_string(),
                r.vcpus.to_string(),
                r.image_name.clone(),
                r.image_id.clone(),
            ]
        })
        .collect();
    render_table(MAPPING_HEADERS, cells)
}

/// Render workflow summaries in ascending wfID order.
pub fn render_summary_table(summaries: &[WorkflowSummary]) -> String {
    let cells: Vec<[String; 4]> = summaries
        .iter()
        .map(|s| {
            [
                s.wf_id.to_string(),
                s.name.clone(),
                s.status.to_string(),
                s.job_count.to_string(),
            ]
        })
        .collect();
    render_table(["WF ID", "Name", "Status", "Jobs"], cells)
}

fn equivalence_verdict(config: &ConfigComparison) -> &'static str {
    if config.equivalent {
        "EQUIVALENT"
    } else {
        "NOT EQUIVALENT"
    }
}

fn identity_verdict(outputs: &OutputComparison) -> &'static str {
    if outputs.identical {
        "IDENTICAL"
    } else {
        "DIFFERENT"
    }
}

/// Render per-job config diffs and per-output digest equality, ending
/// with the two verdict lines.
pub fn render_comparison(config: &ConfigComparison, outputs: &OutputComparison) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "comparing wfID {} with wfID {}\n",
        config.old_wf, config.new_wf
    ));
    for job in &config.per_job {
        if job.matched {
            out.push_str(&format!("job {}: MATCH\n", job.job_id));
        } else {
            let diffs: Vec<String> = job.diffs.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("job {}: DIFF {}\n", job.job_id, diffs.join(", ")));
        }
    }
    for entry in &outputs.per_output {
        if entry.equal {
            out.push_str(&format!(
                "output {}: MATCH ({})\n",
                entry.name,
                entry.old_digest.short()
            ));
        } else {
            out.push_str(&format!(
                "output {}: DIFF (old {} new {})\n",
                entry.name,
                entry.old_digest.short(),
                entry.new_digest.short()
            ));
        }
    }
    out.push_str(&format!(
        "infrastructure {}\n",
        equivalence_verdict(config)
    ));
    out.push_str(&format!("outputs {}\n", identity_verdict(outputs)));
    out
}
