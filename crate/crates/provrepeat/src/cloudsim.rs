//! Deterministic in-process IaaS middleware.
//!
//! Provides a flavor/image catalog and VM provision/list/release with
//! per-owner scoping, vCPU capacity accounting and sequential IP
//! allocation. All identifiers, addresses and timestamps are assigned from
//! monotonic counters, so the same operation sequence against the same
//! catalog always yields the same [`VmRecord`]s.

use std::collections::BTreeMap;
use std::fs;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{LogicalClock, LogicalTime, Owner};

/// VM hardware configuration: RAM, disk and virtual CPU count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flavor {
    pub flavor_id: String,
    pub ram_mb: u32,
    pub disk_gb: u32,
    pub vcpus: u32,
}

/// Operating-system disk image identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub image_id: String,
    pub image_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VmState {
    Active,
    Released,
}

/// Opaque VM identifier, allocated sequentially.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct VmId(pub u64);

impl std::fmt::Display for VmId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "vm-{}", self.0)
    }
}

/// A provisioned virtual machine as the middleware reports it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmRecord {
    pub vm_id: VmId,
    pub owner: Owner,
    pub nodename: String,
    pub ip: Ipv4Addr,
    pub flavor: Flavor,
    pub image: Image,
    pub state: VmState,
    pub provisioned_at: LogicalTime,
}

impl VmRecord {
    pub fn is_active(&self) -> bool {
        self.state == VmState::Active
    }
}

/// Catalog the middleware is initialized from: available flavors and
/// images plus the total vCPU capacity of the infrastructure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CloudCatalog {
    pub capacity_vcpus: u32,
    pub flavors: Vec<Flavor>,
    pub images: Vec<Image>,
}

impl CloudCatalog {
    /// Catalog mirroring the reference walkthrough: a 20-core
    /// infrastructure with flavor `2` (2048 MB / 20 GB / 1 vCPU) and the
    /// `wf_peg_repeat` image.
    pub fn default_catalog() -> Self {
        CloudCatalog {
            capacity_vcpus: 20,
            flavors: vec![
                Flavor {
                    flavor_id: "1".into(),
                    ram_mb: 1024,
                    disk_gb: 10,
                    vcpus: 1,
                },
                Flavor {
                    flavor_id: "2".into(),
                    ram_mb: 2048,
                    disk_gb: 20,
                    vcpus: 1,
                },
                Flavor {
                    flavor_id: "3".into(),
                    ram_mb: 4096,
                    disk_gb: 40,
                    vcpus: 2,
                },
            ],
            images: vec![Image {
                image_id: "f102960c-557c-4253-8277-2df5ffe3c169".into(),
                image_name: "wf_peg_repeat".into(),
            }],
        }
    }

    /// Load a catalog from a JSON config file.
    pub fn from_file(path: &Path) -> Result<Self, CloudError> {
        let text = fs::read_to_string(path).map_err(|e| CloudError::InvalidCatalog {
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        serde_json::from_str(&text).map_err(|e| CloudError::InvalidCatalog {
            reason: format!("cannot parse {}: {e}", path.display()),
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CloudError {
    #[error("unknown flavor: {flavor_id}")]
    UnknownFlavor { flavor_id: String },
    #[error("unknown image: {image_id}")]
    UnknownImage { image_id: String },
    #[error("capacity exceeded: {requested} vCPUs requested, {active} of {capacity} in use")]
    CapacityExceeded {
        requested: u32,
        active: u32,
        capacity: u32,
    },
    #[error("nodename already in use by an active VM of {owner}: {nodename}")]
    DuplicateNodename { owner: Owner, nodename: String },
    #[error("unknown vm: {vm_id}")]
    UnknownVm { vm_id: VmId },
    #[error("vm already released: {vm_id}")]
    AlreadyReleased { vm_id: VmId },
    #[error("no flavor matches ({ram_mb} MB, {disk_gb} GB, {vcpus} vCPU)")]
    NoMatchingFlavor {
        ram_mb: u32,
        disk_gb: u32,
        vcpus: u32,
    },
    #[error("address pool 172.16.1.0/24 exhausted")]
    IpPoolExhausted,
    #[error("invalid catalog: {reason}")]
    InvalidCatalog { reason: String },
}

const IP_FIRST_HOST: u8 = 2;
const IP_LAST_HOST: u8 = 254;

/// The middleware itself: catalog plus live VM inventory.
///
/// Single logical owner of all state; mutations are serialized by `&mut`.
/// Cloned [`VmRecord`] snapshots are safe to hand out and keep.
#[derive(Debug, Clone)]
pub struct CloudSim {
    flavors: BTreeMap<String, Flavor>,
    images: BTreeMap<String, Image>,
    capacity_vcpus: u32,
    vms: BTreeMap<VmId, VmRecord>,
    next_vm_id: u64,
    clock: LogicalClock,
}

impl CloudSim {
    pub fn new(catalog: CloudCatalog) -> Result<Self, CloudError> {
        if catalog.capacity_vcpus < 1 {
            return Err(CloudError::InvalidCatalog {
                reason: "capacity_vcpus must be >= 1".into(),
            });
        }
        let mut flavors = BTreeMap::new();
        for f in catalog.flavors {
            if f.ram_mb == 0 || f.disk_gb == 0 || f.vcpus < 1 {
                return Err(CloudError::InvalidCatalog {
                    reason: format!("flavor {} has non-positive resources", f.flavor_id),
                });
            }
            if flavors.insert(f.flavor_id.clone(), f).is_some() {
                return Err(CloudError::InvalidCatalog {
                    reason: "duplicate flavor_id in catalog".into(),
                });
            }
        }
        let mut images = BTreeMap::new();
        for img in catalog.images {
            if images.insert(img.image_id.clone(), img).is_some() {
                return Err(CloudError::InvalidCatalog {
                    reason: "duplicate image_id in catalog".into(),
                });
            }
        }
        Ok(CloudSim {
            flavors,
            images,
            capacity_vcpus: catalog.capacity_vcpus,
            vms: BTreeMap::new(),
            next_vm_id: 1,
            clock: LogicalClock::new(),
        })
    }

    /// Middleware with the default catalog. Never fails.
    pub fn with_default_catalog() -> Self {
        Self::new(CloudCatalog::default_catalog()).expect("default catalog is valid")
    }

    /// Full flavor catalog in ascending `flavor_id` order.
    pub fn list_flavors(&self) -> Vec<Flavor> {
        self.flavors.values().cloned().collect()
    }

    /// Full image catalog in ascending `image_id` order.
    pub fn list_images(&self) -> Vec<Image> {
        self.images.values().cloned().collect()
    }

    pub fn capacity_vcpus(&self) -> u32 {
        self.capacity_vcpus
    }

    /// Sum of vCPUs over all ACTIVE VMs.
    pub fn active_vcpus(&self) -> u32 {
        self.vms
            .values()
            .filter(|vm| vm.is_active())
            .map(|vm| vm.flavor.vcpus)
            .sum()
    }

    pub fn get_flavor(&self, flavor_id: &str) -> Result<&Flavor, CloudError> {
        self.flavors
            .get(flavor_id)
            .ok_or_else(|| CloudError::UnknownFlavor {
                flavor_id: flavor_id.to_string(),
            })
    }

    pub fn get_image(&self, image_id: &str) -> Result<&Image, CloudError> {
        self.images
            .get(image_id)
            .ok_or_else(|| CloudError::UnknownImage {
                image_id: image_id.to_string(),
            })
    }

    /// The unique flavor whose (ram_mb, disk_gb, vcpus) triple matches
    /// exactly; the smallest `flavor_id` wins if several match.
    pub fn find_flavor_by_spec(
        &self,
        ram_mb: u32,
        disk_gb: u32,
        vcpus: u32,
    ) -> Result<&Flavor, CloudError> {
        // BTreeMap iteration is ascending by id, so the first hit wins.
        self.flavors
            .values()
            .find(|f| f.ram_mb == ram_mb && f.disk_gb == disk_gb && f.vcpus == vcpus)
            .ok_or(CloudError::NoMatchingFlavor {
                ram_mb,
                disk_gb,
                vcpus,
            })
    }

    /// Provision a VM for `owner`. Allocates the lowest unused address in
    /// 172.16.1.0/24 starting at 172.16.1.2; released addresses are
    /// eligible for reuse.
    pub fn provision_vm(
        &mut self,
        owner: &Owner,
        nodename: &str,
        flavor_id: &str,
        image_id: &str,
    ) -> Result<VmRecord, CloudError> {
        let flavor = self.get_flavor(flavor_id)?.clone();
        let image = self.get_image(image_id)?.clone();
        let active = self.active_vcpus();
        if active + flavor.vcpus > self.capacity_vcpus {
            return Err(CloudError::CapacityExceeded {
                requested: flavor.vcpus,
                active,
                capacity: self.capacity_vcpus,
            });
        }
        if self
            .vms
            .values()
            .any(|vm| vm.is_active() && vm.owner == *owner && vm.nodename == nodename)
        {
            return Err(CloudError::DuplicateNodename {
                owner: owner.clone(),
                nodename: nodename.to_string(),
            });
        }
        let ip = self.allocate_ip()?;
        let vm = VmRecord {
            vm_id: VmId(self.next_vm_id),
            owner: owner.clone(),
            nodename: nodename.to_string(),
            ip,
            flavor,
            image,
            state: VmState::Active,
            provisioned_at: self.clock.tick(),
        };
        self.next_vm_id += 1;
        log::debug!("provisioned {} ({}) at {}", vm.vm_id, vm.nodename, vm.ip);
        self.vms.insert(vm.vm_id, vm.clone());
        Ok(vm)
    }

    fn allocate_ip(&self) -> Result<Ipv4Addr, CloudError> {
        let in_use: Vec<Ipv4Addr> = self
            .vms
            .values()
            .filter(|vm| vm.is_active())
            .map(|vm| vm.ip)
            .collect();
        (IP_FIRST_HOST..=IP_LAST_HOST)
            .map(|host| Ipv4Addr::new(172, 16, 1, host))
            .find(|ip| !in_use.contains(ip))
            .ok_or(CloudError::IpPoolExhausted)
    }

    /// All ACTIVE VMs of `owner`, in provisioning order.
    pub fn list_vms(&self, owner: &Owner) -> Vec<VmRecord> {
        let mut vms: Vec<VmRecord> = self
            .vms
            .values()
            .filter(|vm| vm.is_active() && vm.owner == *owner)
            .cloned()
            .collect();
        vms.sort_by_key(|vm| vm.provisioned_at);
        vms
    }

    pub fn get_vm(&self, vm_id: VmId) -> Result<&VmRecord, CloudError> {
        self.vms
            .get(&vm_id)
            .ok_or(CloudError::UnknownVm { vm_id })
    }

    /// Release a VM, returning its vCPUs to capacity and its address to
    /// the pool. Only ACTIVE -> RELEASED is a legal transition.
    pub fn release_vm(&mut self, vm_id: VmId) -> Result<(), CloudError> {
        let vm = self
            .vms
            .get_mut(&vm_id)
            .ok_or(CloudError::UnknownVm { vm_id })?;
        if vm.state == VmState::Released {
            return Err(CloudError::AlreadyReleased { vm_id });
        }
        vm.state = VmState::Released;
        self.clock.tick();
        log::debug!("released {} ({})", vm_id, vm.nodename);
        Ok(())
    }

    /// Current logical instant of the middleware clock.
    pub fn now(&self) -> LogicalTime {
        self.clock.now()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn owner(name: &str) -> Owner {
        Owner::new(name)
    }

    const IMAGE_ID: &str = "f102960c-557c-4253-8277-2df5ffe3c169";

    #[test]
    fn default_catalog_contains_flavor_2() {
        let cloud = CloudSim::with_default_catalog();
        let flavors = cloud.list_flavors();
        assert!(flavors.contains(&Flavor {
            flavor_id: "2".into(),
            ram_mb: 2048,
            disk_gb: 20,
            vcpus: 1,
        }));
        assert_eq!(cloud.get_image(IMAGE_ID).unwrap().image_name, "wf_peg_repeat");
    }

    #[test]
    fn empty_catalog_lists_nothing() {
        let cloud = CloudSim::new(CloudCatalog {
            capacity_vcpus: 1,
            flavors: vec![],
            images: vec![],
        })
        .unwrap();
        assert!(cloud.list_flavors().is_empty());
    }

    #[test]
    fn flavors_listed_in_ascending_id_order() {
        // Oracle: sort the inserted ids by hand.
        let cloud = CloudSim::new(CloudCatalog {
            capacity_vcpus: 4,
            flavors: vec![
                Flavor { flavor_id: "9".into(), ram_mb: 512, disk_gb: 5, vcpus: 1 },
                Flavor { flavor_id: "2".into(), ram_mb: 2048, disk_gb: 20, vcpus: 1 },
                Flavor { flavor_id: "5".into(), ram_mb: 1024, disk_gb: 10, vcpus: 1 },
            ],
            images: vec![],
        })
        .unwrap();
        let ids: Vec<String> = cloud.list_flavors().into_iter().map(|f| f.flavor_id).collect();
        assert_eq!(ids, vec!["2", "5", "9"]);
    }

    #[test]
    fn provision_returns_active_vm_with_flavor_resources() {
        let mut cloud = CloudSim::with_default_catalog();
        let vm = cloud
            .provision_vm(&owner("u1"), "mynode.novalocal", "2", IMAGE_ID)
            .unwrap();
        assert_eq!(vm.state, VmState::Active);
        assert_eq!(vm.flavor.ram_mb, 2048);
        assert_eq!(vm.flavor.disk_gb, 20);
        assert_eq!(vm.flavor.vcpus, 1);
        assert_eq!(vm.image.image_name, "wf_peg_repeat");
    }

    #[test]
    fn provision_rejects_unknown_flavor_and_image() {
        let mut cloud = CloudSim::with_default_catalog();
        assert!(matches!(
            cloud.provision_vm(&owner("u1"), "n1", "99", IMAGE_ID),
            Err(CloudError::UnknownFlavor { .. })
        ));
        assert!(matches!(
            cloud.provision_vm(&owner("u1"), "n1", "2", "nope"),
            Err(CloudError::UnknownImage { .. })
        ));
    }

    #[test]
    fn provision_on_full_single_core_catalog_fails() {
        let mut catalog = CloudCatalog::default_catalog();
        catalog.capacity_vcpus = 1;
        let mut cloud = CloudSim::new(catalog).unwrap();
        cloud.provision_vm(&owner("u1"), "n1", "2", IMAGE_ID).unwrap();
        assert!(matches!(
            cloud.provision_vm(&owner("u1"), "n2", "2", IMAGE_ID),
            Err(CloudError::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn twenty_core_catalog_takes_exactly_twenty_single_core_vms() {
        // Brute-force accounting oracle: count successes one by one.
        let mut cloud = CloudSim::with_default_catalog();
        let mut provisioned = 0u32;
        for i in 0..20 {
            cloud
                .provision_vm(&owner("u1"), &format!("n{i}"), "2", IMAGE_ID)
                .unwrap();
            provisioned += 1;
            assert_eq!(cloud.active_vcpus(), provisioned);
        }
        assert_eq!(provisioned, 20);
        assert!(matches!(
            cloud.provision_vm(&owner("u1"), "n20", "2", IMAGE_ID),
            Err(CloudError::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn duplicate_nodename_rejected_per_owner() {
        let mut cloud = CloudSim::with_default_catalog();
        cloud.provision_vm(&owner("u1"), "n1", "2", IMAGE_ID).unwrap();
        assert!(matches!(
            cloud.provision_vm(&owner("u1"), "n1", "2", IMAGE_ID),
            Err(CloudError::DuplicateNodename { .. })
        ));
        // A different owner may reuse the name.
        cloud.provision_vm(&owner("u2"), "n1", "2", IMAGE_ID).unwrap();
    }

    #[test]
    fn list_vms_scopes_by_owner_and_orders_by_provisioning() {
        let mut cloud = CloudSim::with_default_catalog();
        let a = cloud.provision_vm(&owner("u1"), "a", "2", IMAGE_ID).unwrap();
        let b = cloud.provision_vm(&owner("u1"), "b", "2", IMAGE_ID).unwrap();
        cloud.provision_vm(&owner("u2"), "c", "2", IMAGE_ID).unwrap();

        let u1_vms = cloud.list_vms(&owner("u1"));
        assert_eq!(u1_vms.len(), 2);
        assert_eq!(u1_vms[0].vm_id, a.vm_id);
        assert_eq!(u1_vms[1].vm_id, b.vm_id);

        assert!(cloud.list_vms(&owner("nobody")).is_empty());

        cloud.release_vm(a.vm_id).unwrap();
        assert_eq!(cloud.list_vms(&owner("u1")).len(), 1);
    }

    #[test]
    fn release_transitions_and_double_release_fails() {
        let mut cloud = CloudSim::with_default_catalog();
        let vm = cloud.provision_vm(&owner("u1"), "n1", "2", IMAGE_ID).unwrap();
        cloud.release_vm(vm.vm_id).unwrap();
        assert_eq!(cloud.get_vm(vm.vm_id).unwrap().state, VmState::Released);
        assert_eq!(
            cloud.release_vm(vm.vm_id),
            Err(CloudError::AlreadyReleased { vm_id: vm.vm_id })
        );
        assert!(matches!(
            cloud.release_vm(VmId(999)),
            Err(CloudError::UnknownVm { .. })
        ));
    }

    #[test]
    fn provision_release_cycle_never_exhausts_single_core_catalog() {
        // Accounting oracle over the cycle: capacity returns to zero each
        // release, so every provision must succeed.
        let mut catalog = CloudCatalog::default_catalog();
        catalog.capacity_vcpus = 1;
        let mut cloud = CloudSim::new(catalog).unwrap();
        for i in 0..50 {
            let vm = cloud
                .provision_vm(&owner("u1"), &format!("n{i}"), "2", IMAGE_ID)
                .unwrap();
            assert_eq!(cloud.active_vcpus(), 1);
            cloud.release_vm(vm.vm_id).unwrap();
            assert_eq!(cloud.active_vcpus(), 0);
        }
    }

    #[test]
    fn ip_allocation_is_sequential_and_reuses_released_addresses() {
        let mut cloud = CloudSim::with_default_catalog();
        let a = cloud.provision_vm(&owner("u1"), "a", "2", IMAGE_ID).unwrap();
        let b = cloud.provision_vm(&owner("u1"), "b", "2", IMAGE_ID).unwrap();
        assert_eq!(a.ip, Ipv4Addr::new(172, 16, 1, 2));
        assert_eq!(b.ip, Ipv4Addr::new(172, 16, 1, 3));
        cloud.release_vm(a.vm_id).unwrap();
        let c = cloud.provision_vm(&owner("u1"), "c", "2", IMAGE_ID).unwrap();
        // Lowest unused address first, so the released .2 comes back.
        assert_eq!(c.ip, Ipv4Addr::new(172, 16, 1, 2));
    }

    #[test]
    fn find_flavor_by_spec_matches_table_walkthrough() {
        let cloud = CloudSim::with_default_catalog();
        assert_eq!(cloud.find_flavor_by_spec(2048, 20, 1).unwrap().flavor_id, "2");
        assert_eq!(
            cloud.find_flavor_by_spec(1, 1, 1),
            Err(CloudError::NoMatchingFlavor { ram_mb: 1, disk_gb: 1, vcpus: 1 })
        );
    }

    #[test]
    fn find_flavor_by_spec_breaks_ties_by_smallest_id() {
        // Tie-break rule applied by hand: ids {7, 3} with identical specs
        // resolve to 3.
        let cloud = CloudSim::new(CloudCatalog {
            capacity_vcpus: 4,
            flavors: vec![
                Flavor { flavor_id: "7".into(), ram_mb: 2048, disk_gb: 20, vcpus: 1 },
                Flavor { flavor_id: "3".into(), ram_mb: 2048, disk_gb: 20, vcpus: 1 },
            ],
            images: vec![],
        })
        .unwrap();
        assert_eq!(cloud.find_flavor_by_spec(2048, 20, 1).unwrap().flavor_id, "3");
    }

    #[test]
    fn identical_operation_sequences_produce_identical_records() {
        let run = || {
            let mut cloud = CloudSim::with_default_catalog();
            let a = cloud.provision_vm(&owner("u1"), "a", "2", IMAGE_ID).unwrap();
            let b = cloud.provision_vm(&owner("u1"), "b", "1", IMAGE_ID).unwrap();
            cloud.release_vm(a.vm_id).unwrap();
            let c = cloud.provision_vm(&owner("u2"), "c", "2", IMAGE_ID).unwrap();
            (a, b, c)
        };
        assert_eq!(run(), run());
    }
}
