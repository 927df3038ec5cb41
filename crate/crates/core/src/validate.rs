//! Requirement well-formedness checks run before layout planning.

use crate::model::*;
use crate::report::{Subject, VerificationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationOptions {
    /// Reject blocks that are both writable and executable at one privilege.
    pub strict_wx: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions { strict_wx: true }
    }
}

pub fn validate_requirements(reqs: &RequirementSet, map: &SystemMemoryMap, mmu: &MmuModel) -> VerificationReport {
    validate_requirements_with(reqs, map, mmu, ValidationOptions::default())
}

/// Every finding is attributable to one block or one pair of blocks, so
/// adding a block can never remove an existing finding.
pub fn validate_requirements_with(
    reqs: &RequirementSet,
    map: &SystemMemoryMap,
    mmu: &MmuModel,
    opts: ValidationOptions,
) -> VerificationReport {
    let mut report = VerificationReport::new();
    let gran = granule(map, mmu);
    let known = |o: &Owner| match o {
        Owner::Kernel => true,
        Owner::Partition(p) => reqs.partitions.contains(p),
    };

    for b in &reqs.blocks {
        let subject = || Subject::block(&b.owner, &b.logical_name);
        if !known(&b.owner) {
            report.error("UNKNOWN_OWNER", subject(), format!("owner `{}` is not a declared partition", b.owner));
        }
        if b.size == 0 {
            report.error("ZERO_SIZE", subject(), "block size is zero");
        } else if b.size % gran != 0 {
            report.error(
                "SIZE_GRANULARITY",
                subject(),
                format!("size {:#x} is not a multiple of the {:#x} mapping granule", b.size, gran),
            );
        }
        if let Some(a) = b.alignment {
            if !a.is_power_of_two() {
                report.error("BAD_ALIGNMENT", subject(), format!("alignment {a:#x} is not a power of two"));
            }
        }
        if !b.permissions.is_well_formed() {
            report.error(
                "BAD_PERMISSIONS",
                subject(),
                format!("permissions `{}` are empty or grant user access without kernel access", b.permissions),
            );
        }
        if opts.strict_wx && b.permissions.write_and_exec() {
            report.error("WX_VIOLATION", subject(), format!("permissions `{}` are writable and executable", b.permissions));
        }
        for s in &b.shared_with {
            if !known(s) || *s == b.owner {
                report.error("UNKNOWN_SHARER", subject(), format!("shared_with names unknown owner `{s}`"));
            }
        }
        for (what, addr) in [("virtual", b.virtual_address), ("physical", b.physical_address)] {
            let Some(addr) = addr else { continue };
            let align = b.alignment.filter(|a| a.is_power_of_two()).unwrap_or(1).max(gran);
            if addr % align != 0 {
                report.error(
                    "MISALIGNED_ADDRESS",
                    subject(),
                    format!("{what} address {addr:#x} is not a multiple of {align:#x}"),
                );
            }
            if addr.checked_add(b.size).is_none() {
                report.error("ADDRESS_WRAP", subject(), format!("{what} range at {addr:#x} wraps"));
            }
        }
        if let Some(p) = b.physical_address {
            if b.size > 0 && !map.covers(p, b.size, !b.physically_contiguous) {
                report.error(
                    "OUT_OF_MAP",
                    subject(),
                    format!("physical range [{p:#x}, +{:#x}) is outside the memory map", b.size),
                );
            }
            if let Some(r) = map.region_at(p) {
                if r.class == RegionClass::Device && b.cache_policy != CachePolicy::IO {
                    report.error(
                        "CACHE_REGION",
                        subject(),
                        format!("device memory requires the io cache policy, found {}", b.cache_policy),
                    );
                }
            }
        }
    }

    // Pairwise checks over fixed addresses.
    for (i, a) in reqs.blocks.iter().enumerate() {
        for b in &reqs.blocks[..i] {
            if let (Some(va), Some(vb)) = (a.virtual_address, b.virtual_address) {
                let a_spaces = visible_spaces(&a.owner, &a.shared_with, &reqs.partitions);
                let b_spaces = visible_spaces(&b.owner, &b.shared_with, &reqs.partitions);
                let same_space = a.owner == b.owner || a_spaces.iter().any(|s| b_spaces.contains(s));
                if same_space && ranges_overlap(va, a.size, vb, b.size) {
                    report.error(
                        "VIRTUAL_OVERLAP",
                        Subject::block(&a.owner, &a.logical_name),
                        format!("virtual range overlaps {}", b.id()),
                    );
                }
            }
            if let (Some(pa), Some(pb)) = (a.physical_address, b.physical_address) {
                if ranges_overlap(pa, a.size, pb, b.size) {
                    if sharing_authorized(&a.owner, &a.shared_with, &b.owner, &b.shared_with) {
                        let differs = match (a.virtual_address, b.virtual_address) {
                            (Some(va), Some(vb)) => va.wrapping_sub(pa) != vb.wrapping_sub(pb),
                            _ => false,
                        };
                        if differs {
                            report.info(
                                "SHARED_VADDR_DIFFERS",
                                Subject::block(&a.owner, &a.logical_name),
                                format!("shared memory is mapped at a different virtual address than in {}", b.id()),
                            );
                        }
                    } else {
                        report.error(
                            "PHYS_OVERLAP",
                            Subject::block(&a.owner, &a.logical_name),
                            format!("physical range overlaps {} without mutual sharing", b.id()),
                        );
                    }
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn p1010_map() -> SystemMemoryMap {
        SystemMemoryMap {
            regions: vec![PhysicalRegion {
                base: 0,
                size: 0x1000_0000,
                class: RegionClass::ExternalRam,
                access_cost: 10,
            }],
            min_page_size: 4096,
        }
    }

    pub(crate) fn tlb16() -> MmuModel {
        MmuModel::TlbFixed(TlbModel {
            entry_count: 16,
            min_entry_size: 4096,
            max_entry_size: 1 << 28,
            associativity: Associativity::FullyAssociative,
            pid_bits: 8,
        })
    }

    fn block(owner: Owner, name: &str, size: u64, perms: &str) -> MemoryBlockRequirement {
        MemoryBlockRequirement::new(owner, name, size, Permissions::parse(perms).unwrap(), CachePolicy::Normal)
    }

    fn p1010_reqs() -> RequirementSet {
        RequirementSet {
            partitions: vec!["P1".into()],
            blocks: vec![
                block(Owner::Kernel, "code", 0x10000, "KR|KX"),
                block(Owner::Kernel, "data", 0x10000, "KR|KW"),
                block(Owner::partition("P1"), "code", 0x10000, "UR|UX|KR|KX"),
                block(Owner::partition("P1"), "data", 0x10000, "UR|UW|KR|KW"),
            ],
        }
    }

    #[test]
    fn well_formed_p1010_set_is_clean() {
        let r = validate_requirements(&p1010_reqs(), &p1010_map(), &tlb16());
        assert!(r.findings.is_empty(), "{}", r.render_text());
        assert!(r.passed);
    }

    #[test]
    fn physical_address_outside_map() {
        let mut reqs = p1010_reqs();
        reqs.blocks[0].physical_address = Some(0xFFFF_0000);
        let r = validate_requirements(&reqs, &p1010_map(), &tlb16());
        assert!(r.has_code("OUT_OF_MAP"));
        assert!(!r.passed);
    }

    #[test]
    fn kernel_blocks_fixed_at_same_virtual_address() {
        let mut reqs = p1010_reqs();
        reqs.blocks[0].virtual_address = Some(0x8000_0000);
        reqs.blocks[1].virtual_address = Some(0x8000_0000);
        let r = validate_requirements(&reqs, &p1010_map(), &tlb16());
        assert!(r.has_code("VIRTUAL_OVERLAP"));
    }

    #[test]
    fn partitions_do_not_collide_virtually() {
        let mut reqs = p1010_reqs();
        reqs.partitions.push("P2".into());
        let mut other = reqs.blocks[2].clone();
        other.owner = Owner::partition("P2");
        reqs.blocks.push(other);
        reqs.blocks[2].virtual_address = Some(0x4000_0000);
        reqs.blocks[4].virtual_address = Some(0x4000_0000);
        let r = validate_requirements(&reqs, &p1010_map(), &tlb16());
        assert!(!r.has_code("VIRTUAL_OVERLAP"), "{}", r.render_text());
    }

    #[test]
    fn malformed_blocks() {
        let mut reqs = p1010_reqs();
        reqs.blocks[0].size = 0;
        reqs.blocks[1].alignment = Some(0x3000);
        reqs.blocks[2].permissions = Permissions::parse("UR").unwrap();
        reqs.blocks[3].permissions = Permissions::parse("KW|KX").unwrap();
        reqs.blocks[3].shared_with = vec![Owner::partition("P9")];
        let r = validate_requirements(&reqs, &p1010_map(), &tlb16());
        for code in ["ZERO_SIZE", "BAD_ALIGNMENT", "BAD_PERMISSIONS", "WX_VIOLATION", "UNKNOWN_SHARER"] {
            assert!(r.has_code(code), "missing {code}: {}", r.render_text());
        }
        let lax = validate_requirements_with(&reqs, &p1010_map(), &tlb16(), ValidationOptions { strict_wx: false });
        assert!(!lax.has_code("WX_VIOLATION"));
    }

    #[test]
    fn shared_physical_overlap_needs_mutual_consent() {
        let mut reqs = p1010_reqs();
        reqs.partitions.push("P2".into());
        let mut a = block(Owner::partition("P1"), "mbox", 0x1000, "UR|UW|KR|KW");
        let mut b = block(Owner::partition("P2"), "mbox", 0x1000, "UR|KR");
        a.physical_address = Some(0x100_0000);
        b.physical_address = Some(0x100_0000);
        a.virtual_address = Some(0x200_0000);
        b.virtual_address = Some(0x300_0000);
        a.shared_with = vec![Owner::partition("P2")];
        reqs.blocks.push(a);
        reqs.blocks.push(b);
        let r = validate_requirements(&reqs, &p1010_map(), &tlb16());
        assert!(r.has_code("PHYS_OVERLAP"));
        reqs.blocks.last_mut().unwrap().shared_with = vec![Owner::partition("P1")];
        let r = validate_requirements(&reqs, &p1010_map(), &tlb16());
        assert!(!r.has_code("PHYS_OVERLAP"));
        assert!(r.has_code("SHARED_VADDR_DIFFERS"));
        assert!(r.passed);
    }

    #[test]
    fn device_region_needs_io_policy() {
        let mut map = p1010_map();
        map.regions.push(PhysicalRegion {
            base: 0xF000_0000,
            size: 0x10_0000,
            class: RegionClass::Device,
            access_cost: 50,
        });
        let mut reqs = p1010_reqs();
        let mut uart = block(Owner::Kernel, "uart", 0x1000, "KR|KW");
        uart.physical_address = Some(0xF000_0000);
        reqs.blocks.push(uart);
        assert!(validate_requirements(&reqs, &map, &tlb16()).has_code("CACHE_REGION"));
        reqs.blocks.last_mut().unwrap().cache_policy = CachePolicy::IO;
        assert!(validate_requirements(&reqs, &map, &tlb16()).passed);
    }
}
