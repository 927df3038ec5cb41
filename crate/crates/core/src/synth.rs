//! Seeded generator of random, well-formed projects.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::doc::Project;
use crate::layout::{plan_layout, MemoryLayout};
use crate::model::*;
use crate::validate::validate_requirements;

/// Environment variable that overrides the base seed of generative runs.
pub const SEED_ENV: &str = "MEMLAYOUT_SEED";

/// Base seed from `MEMLAYOUT_SEED`, or `default` when unset or unparsable.
pub fn seed_from_env(default: u64) -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|s| crate::doc::parse_number(s.trim()).ok())
        .unwrap_or(default)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub max_partitions: usize,
    pub max_blocks: usize,
    /// Largest block, in pages.
    pub max_pages: u64,
    pub backend: MmuKind,
}

impl SynthOptions {
    pub fn new(backend: MmuKind) -> Self {
        SynthOptions {
            max_partitions: 4,
            max_blocks: 12,
            max_pages: 64,
            backend,
        }
    }

    /// Small projects whose full mutation space stays cheap to enumerate.
    pub fn desk(backend: MmuKind) -> Self {
        SynthOptions {
            max_partitions: 3,
            max_blocks: 6,
            max_pages: 8,
            backend,
        }
    }
}

const PAGE: u64 = 0x1000;
const DEVICE_BASE: Addr = 0x4000_0000;

pub fn memory_map() -> SystemMemoryMap {
    SystemMemoryMap {
        regions: vec![
            PhysicalRegion {
                base: 0x1000_0000,
                size: 0x10_0000,
                class: RegionClass::InternalRam,
                access_cost: 4,
            },
            PhysicalRegion {
                base: DEVICE_BASE,
                size: 0x10_0000,
                class: RegionClass::Device,
                access_cost: 40,
            },
            PhysicalRegion {
                base: 0x8000_0000,
                size: 0x400_0000,
                class: RegionClass::ExternalRam,
                access_cost: 20,
            },
        ],
        min_page_size: PAGE,
    }
}

pub fn mmu_model(kind: MmuKind) -> MmuModel {
    match kind {
        MmuKind::TlbFixed => MmuModel::TlbFixed(TlbModel {
            entry_count: 64,
            min_entry_size: PAGE,
            max_entry_size: 1 << 24,
            associativity: Associativity::FullyAssociative,
            pid_bits: 8,
        }),
        MmuKind::PageTable => MmuModel::PageTable(PageTableModel {
            geometry: PageTableGeometry::default_4k(),
            tlb_capacity: 64,
            asid_bits: 8,
            has_global_bit: true,
            zero_miss: false,
        }),
    }
}

const PARTITION_PERMS: &[&str] = &["UR|KR", "UR|UW|KR|KW", "UR|UX|KR|KX", "UR|KR|KX", "KR|KW", "UR|KR|KW"];
const KERNEL_PERMS: &[&str] = &["KR|KX", "KR|KW", "KR"];

fn pages<R: Rng>(rng: &mut R, max: u64) -> u64 {
    if rng.gen_bool(0.6) {
        1 << rng.gen_range(0..=max.ilog2())
    } else {
        rng.gen_range(1..=max)
    }
}

fn cache<R: Rng>(rng: &mut R) -> CachePolicy {
    *[CachePolicy::Normal, CachePolicy::Normal, CachePolicy::Normal, CachePolicy::NormalCoherent, CachePolicy::WriteThrough]
        .choose(rng)
        .expect("non-empty")
}

/// One random project; it validates but may not be plannable.
pub fn random_project<R: Rng>(rng: &mut R, opts: &SynthOptions) -> Project {
    let n_parts = rng.gen_range(1..=opts.max_partitions);
    let partitions: Vec<String> = (1..=n_parts).map(|i| format!("P{i}")).collect();
    let n_blocks = rng.gen_range(n_parts + 1..=opts.max_blocks.max(n_parts + 1));
    let n_kernel = rng.gen_range(1..=2.min(n_blocks - n_parts));
    let mut blocks = Vec::new();
    let mut device_slot = 0u64;
    for i in 0..n_blocks {
        let owner = if i < n_kernel {
            Owner::Kernel
        } else if i - n_kernel < n_parts {
            Owner::partition(partitions[i - n_kernel].clone())
        } else {
            Owner::partition(partitions.choose(rng).expect("non-empty").clone())
        };
        let perms = if owner.is_kernel() { KERNEL_PERMS } else { PARTITION_PERMS };
        let mut b = MemoryBlockRequirement::new(
            owner.clone(),
            format!("b{i}"),
            pages(rng, opts.max_pages) * PAGE,
            Permissions::parse(perms.choose(rng).expect("non-empty")).expect("valid flags"),
            cache(rng),
        );
        if !owner.is_kernel() && rng.gen_bool(0.15) {
            let n = rng.gen_range(1..=4);
            b.size = n * PAGE;
            b.cache_policy = CachePolicy::IO;
            b.permissions = Permissions::parse("UR|UW|KR|KW").expect("valid flags");
            b.physical_address = Some(DEVICE_BASE + device_slot * 0x1_0000);
            device_slot += 1;
        } else {
            b.physically_contiguous = rng.gen_bool(0.2);
            if rng.gen_bool(0.1) {
                b.alignment = Some(0x1_0000);
            }
        }
        if let Owner::Partition(me) = &owner {
            if partitions.len() > 1 && rng.gen_bool(0.15) {
                let other = partitions.iter().filter(|p| *p != me).collect::<Vec<_>>();
                b.shared_with = vec![Owner::partition((*other.choose(rng).expect("non-empty")).clone())];
            }
        }
        blocks.push(b);
    }
    Project {
        requirements: RequirementSet { partitions, blocks },
        memmap: memory_map(),
        mmu: mmu_model(opts.backend),
    }
}

/// Draws projects until one validates and plans, returning it with its layout.
pub fn random_feasible_project<R: Rng>(rng: &mut R, opts: &SynthOptions) -> (Project, MemoryLayout) {
    loop {
        let p = random_project(rng, opts);
        if !validate_requirements(&p.requirements, &p.memmap, &p.mmu).passed {
            continue;
        }
        if let Ok(layout) = plan_layout(&p.requirements, &p.memmap, &p.mmu) {
            return (p, layout);
        }
    }
}
