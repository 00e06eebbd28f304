//! VM lifecycle against the in-process middleware: catalog inventory,
//! provisioning, per-owner listings, capacity accounting and address
//! reuse.
//!
//! Run with: `cargo run -p provrepeat --example provision_vms`

use provrepeat::cloudsim::{CloudCatalog, CloudSim};
use provrepeat::types::Owner;

const IMAGE_ID: &str = "f102960c-557c-4253-8277-2df5ffe3c169";

fn main() {
    let mut cloud = CloudSim::with_default_catalog();
    let owner = Owner::new("alice");

    println!("flavor catalog:");
    for f in cloud.list_flavors() {
        println!(
            "  id {:<3} {:>5} MB RAM  {:>3} GB disk  {} vCPU",
            f.flavor_id, f.ram_mb, f.disk_gb, f.vcpus
        );
    }
    println!("images:");
    for img in cloud.list_images() {
        println!("  {} ({})", img.image_name, img.image_id);
    }
    println!(
        "capacity: {} vCPUs, {} in use\n",
        cloud.capacity_vcpus(),
        cloud.active_vcpus()
    );

    println!("provisioning a three-node cluster for {owner}:");
    let master = cloud
        .provision_vm(&owner, "master.novalocal", "2", IMAGE_ID)
        .unwrap();
    let w1 = cloud
        .provision_vm(&owner, "worker1.novalocal", "2", IMAGE_ID)
        .unwrap();
    let w2 = cloud
        .provision_vm(&owner, "worker2.novalocal", "2", IMAGE_ID)
        .unwrap();
    for vm in cloud.list_vms(&owner) {
        println!(
            "  {} {:<18} {}  flavor {} ({} MB / {} GB / {} vCPU)",
            vm.vm_id, vm.nodename, vm.ip, vm.flavor.flavor_id, vm.flavor.ram_mb,
            vm.flavor.disk_gb, vm.flavor.vcpus
        );
    }
    println!("{} of {} vCPUs in use\n", cloud.active_vcpus(), cloud.capacity_vcpus());

    // Unknown catalog entries and duplicate nodenames are rejected.
    println!("error handling:");
    println!("  {}", cloud.provision_vm(&owner, "x", "99", IMAGE_ID).unwrap_err());
    println!("  {}", cloud.provision_vm(&owner, "x", "2", "missing").unwrap_err());
    println!(
        "  {}",
        cloud
            .provision_vm(&owner, "master.novalocal", "2", IMAGE_ID)
            .unwrap_err()
    );

    // A small catalog fills up; releasing returns cores and addresses.
    let mut small = CloudSim::new(CloudCatalog {
        capacity_vcpus: 1,
        ..CloudCatalog::default_catalog()
    })
    .unwrap();
    let only = small.provision_vm(&owner, "only.novalocal", "2", IMAGE_ID).unwrap();
    println!(
        "  {}",
        small
            .provision_vm(&owner, "more.novalocal", "2", IMAGE_ID)
            .unwrap_err()
    );
    small.release_vm(only.vm_id).unwrap();
    let again = small.provision_vm(&owner, "more.novalocal", "2", IMAGE_ID).unwrap();
    println!(
        "\nreleased {} at {}; new VM reuses the lowest free address: {}",
        only.nodename, only.ip, again.ip
    );

    // Tidiness: release the demo cluster.
    for vm in [master, w1, w2] {
        cloud.release_vm(vm.vm_id).unwrap();
    }
    println!("released everything; {} vCPUs in use", cloud.active_vcpus());
}
