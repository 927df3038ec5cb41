//! Pre-computed page-table images, ASID plan and TLB warm-up lists.
//!
//! Descriptor format (one little-endian `u64`):
//!
//! | bits | meaning |
//! |------|---------|
//! | 0 | valid |
//! | 1 | table (1) or leaf (0) |
//! | 11 | global (leaves only) |
//! | 47..12 | output address |
//! | 58..53 | UR, UW, UX, KR, KW, KX (leaves only) |
//! | 62..60 | cache policy code (leaves only) |
//!
//! All other bits are reserved and must be zero. Table descriptors carry no
//! attribute bits.

use serde::Serialize;
use thiserror::Error;

use crate::bytes::Reader;
use crate::interval::IntervalSet;
use crate::layout::{AddressSpacePlan, MemoryLayout};
use crate::model::*;
use crate::report::{Subject, VerificationReport};
use crate::tlb::FormatError;

pub const DESC_VALID: u64 = 1;
pub const DESC_TABLE: u64 = 1 << 1;
pub const DESC_GLOBAL: u64 = 1 << 11;
pub const ADDR_MASK: u64 = ((1u64 << 48) - 1) & !0xFFF;
pub const PERM_SHIFT: u32 = 53;
pub const CACHE_SHIFT: u32 = 60;
const PERM_MASK: u64 = 0x3F << PERM_SHIFT;
const CACHE_MASK: u64 = 0x7 << CACHE_SHIFT;
pub const LEAF_RESERVED: u64 = !(DESC_VALID | DESC_TABLE | DESC_GLOBAL | ADDR_MASK | PERM_MASK | CACHE_MASK);
pub const TABLE_RESERVED: u64 = !(DESC_VALID | DESC_TABLE | ADDR_MASK);

pub const MLPT_MAGIC: &[u8; 4] = b"MLPT";
pub const MLPT_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PageTableError {
    #[error("block {block}: range is not aligned to the {page:#x} page size")]
    Unaligned { block: String, page: u64 },
    #[error("no memory region has room for the {bytes:#x}-byte page-table image of {space}")]
    NoTableRoom { space: String, bytes: u64 },
    #[error("{partitions} partitions exhaust a {bits}-bit ASID space")]
    AsidExhausted { partitions: usize, bits: u32 },
    #[error("mapping conflict at {0:#x}")]
    Conflict(Addr),
    #[error("layout targets a fixed-TLB MMU")]
    WrongBackend,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed page-table image at byte {offset:#x}: {reason}")]
pub struct MalformedImageError {
    pub offset: u64,
    pub reason: String,
}

/// One leaf mapping: `(virtual base, physical base, level)`.
pub type LeafPiece = (Addr, Addr, u32);

/// Greedy largest-leaf-first cover of a block. Each piece uses the largest
/// permitted leaf level whose size fits the remainder and divides both the
/// virtual and physical cursor.
pub fn leaf_decompose(v: Addr, p: Addr, size: u64, g: &PageTableGeometry) -> Result<Vec<LeafPiece>, PageTableError> {
    let levels = g.leaf_levels();
    let mut out = Vec::new();
    let mut done = 0u64;
    while done < size {
        let rem = size - done;
        let (va, pa) = (v + done, p + done);
        let level = levels
            .iter()
            .copied()
            .find(|&l| {
                let s = g.leaf_size(l);
                s <= rem && (va | pa) & (s - 1) == 0
            })
            .ok_or(PageTableError::Unaligned {
                block: String::new(),
                page: g.page_size,
            })?;
        out.push((va, pa, level));
        done += g.leaf_size(level);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Leaf {
    pub virtual_base: Addr,
    pub physical_base: Addr,
    pub level: u32,
    pub permissions: Permissions,
    pub cache_policy: CachePolicy,
    pub global: bool,
}

pub fn plan_leaves(plan: &AddressSpacePlan, model: &PageTableModel) -> Result<Vec<Leaf>, PageTableError> {
    let mut out = Vec::new();
    for b in &plan.blocks {
        let pieces = leaf_decompose(b.virtual_address, b.physical_address, b.size, &model.geometry).map_err(|_| {
            PageTableError::Unaligned {
                block: b.id().to_string(),
                page: model.geometry.page_size,
            }
        })?;
        let global = b.owner.is_kernel() && model.has_global_bit;
        out.extend(pieces.into_iter().map(|(v, p, level)| Leaf {
            virtual_base: v,
            physical_base: p,
            level,
            permissions: b.permissions,
            cache_policy: b.cache_policy,
            global,
        }));
    }
    out.sort_by_key(|l| l.virtual_base);
    Ok(out)
}

pub fn leaf_descriptor(l: &Leaf) -> u64 {
    DESC_VALID
        | (l.physical_base & ADDR_MASK)
        | if l.global { DESC_GLOBAL } else { 0 }
        | (l.permissions.bits() as u64) << PERM_SHIFT
        | (l.cache_policy.code() as u64) << CACHE_SHIFT
}

pub fn table_descriptor(addr: Addr) -> u64 {
    DESC_VALID | DESC_TABLE | (addr & ADDR_MASK)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageTableImage {
    pub space: Owner,
    pub asid: u32,
    /// Physical address of the first image byte.
    pub base_physical: Addr,
    pub root_offset: u64,
    pub bytes: Vec<u8>,
    pub page_count: usize,
}

impl PageTableImage {
    pub fn root_physical(&self) -> Addr {
        self.base_physical + self.root_offset
    }

    pub fn end_physical(&self) -> u128 {
        self.base_physical as u128 + self.bytes.len() as u128
    }

    pub fn table_region<'m>(&self, map: &'m SystemMemoryMap) -> Option<&'m PhysicalRegion> {
        map.region_containing(self.base_physical, self.bytes.len() as u64)
    }

    pub fn read_u64(&self, phys: Addr) -> Option<u64> {
        let off = phys.checked_sub(self.base_physical)? as usize;
        let b = self.bytes.get(off..off.checked_add(8)?)?;
        Some(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AsidPlan {
    pub kernel_global: bool,
    pub partition_asids: Vec<(String, u32)>,
    pub flush_on_switch: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarmupList {
    pub space: Owner,
    /// One page base per leaf of the space's image.
    pub addresses: Vec<Addr>,
    /// Subset of `addresses` that a kernel read cannot reach.
    pub unreachable: Vec<Addr>,
}

/// Everything the page-table artifact carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageTableConfig {
    pub geometry: PageTableGeometry,
    pub asids: AsidPlan,
    pub images: Vec<PageTableImage>,
    pub warmups: Vec<WarmupList>,
}

struct Table {
    level: u32,
    offset: u64,
    slots: Vec<Slot>,
}

#[derive(Clone, Copy)]
enum Slot {
    Empty,
    Table(usize),
    Leaf(Leaf),
}

/// Tree shape with image-relative table offsets; descriptors are resolved
/// once the image base is known.
struct Tree {
    tables: Vec<Table>,
    len: u64,
    align: u64,
}

impl Tree {
    fn new(g: &PageTableGeometry) -> Self {
        let mut t = Tree {
            tables: Vec::new(),
            len: 0,
            align: (1..=g.levels).map(|l| g.table_align(l)).max().unwrap_or(4096),
        };
        t.alloc(g, 1);
        t
    }

    fn alloc(&mut self, g: &PageTableGeometry, level: u32) -> usize {
        let offset = align_up(self.len as u128, g.table_align(level)) as u64;
        self.len = offset + g.table_bytes(level);
        self.tables.push(Table {
            level,
            offset,
            slots: vec![Slot::Empty; g.entries_at(level)],
        });
        self.tables.len() - 1
    }

    fn insert(&mut self, g: &PageTableGeometry, leaf: Leaf) -> Result<(), PageTableError> {
        let mut t = 0;
        for level in 1..leaf.level {
            let idx = g.index_at(level, leaf.virtual_base);
            t = match self.tables[t].slots[idx] {
                Slot::Table(child) => child,
                Slot::Empty => {
                    let child = self.alloc(g, level + 1);
                    self.tables[t].slots[idx] = Slot::Table(child);
                    child
                }
                Slot::Leaf(_) => return Err(PageTableError::Conflict(leaf.virtual_base)),
            };
        }
        let idx = g.index_at(leaf.level, leaf.virtual_base);
        match self.tables[t].slots[idx] {
            Slot::Empty => {
                self.tables[t].slots[idx] = Slot::Leaf(leaf);
                Ok(())
            }
            _ => Err(PageTableError::Conflict(leaf.virtual_base)),
        }
    }

    fn serialize(&self, base: Addr) -> Vec<u8> {
        let mut bytes = vec![0u8; self.len as usize];
        for table in &self.tables {
            for (i, slot) in table.slots.iter().enumerate() {
                let desc = match *slot {
                    Slot::Empty => 0,
                    Slot::Table(child) => table_descriptor(base + self.tables[child].offset),
                    Slot::Leaf(l) => leaf_descriptor(&l),
                };
                let at = (table.offset + 8 * i as u64) as usize;
                bytes[at..at + 8].copy_from_slice(&desc.to_le_bytes());
            }
        }
        debug_assert!(self.tables.iter().all(|t| t.level >= 1));
        bytes
    }
}

fn model_of(layout: &MemoryLayout) -> Result<&PageTableModel, PageTableError> {
    match &layout.mmu {
        MmuModel::PageTable(p) => Ok(p),
        MmuModel::TlbFixed(_) => Err(PageTableError::WrongBackend),
    }
}

/// Regions eligible for tables, most preferred first: internal RAM, then
/// cheapest access cost, then lowest base.
fn table_regions(map: &SystemMemoryMap) -> Vec<&PhysicalRegion> {
    let mut regs: Vec<&PhysicalRegion> = map.regions.iter().filter(|r| r.class.is_ram()).collect();
    regs.sort_by_key(|r| (r.class != RegionClass::InternalRam, r.access_cost, r.base));
    regs
}

pub fn build_page_tables(layout: &MemoryLayout) -> Result<(Vec<PageTableImage>, AsidPlan), PageTableError> {
    let model = model_of(layout)?;
    let g = &model.geometry;
    let plans = layout.partition_plans();
    if plans.len() as u64 >= 1u64 << model.asid_bits {
        return Err(PageTableError::AsidExhausted {
            partitions: plans.len(),
            bits: model.asid_bits,
        });
    }

    let mut occupied = IntervalSet::new();
    for b in layout.all_blocks() {
        occupied.insert(b.physical_address as u128, b.physical_end());
    }
    let regions = table_regions(&layout.memmap);

    let kernel_pages = plan_leaves(layout.kernel_plan(), model)?.len();
    // Global kernel translations occupy one slot each across all spaces;
    // without a global bit every space holds its own copy.
    let shared_kernel = if model.has_global_bit { kernel_pages } else { 0 };
    let mut total_pages = shared_kernel;
    let mut images = Vec::with_capacity(plans.len());
    let mut asids = Vec::with_capacity(plans.len());
    for (i, plan) in plans.iter().enumerate() {
        let asid = i as u32 + 1;
        let leaves = plan_leaves(plan, model)?;
        total_pages += leaves.len() - shared_kernel;
        let mut tree = Tree::new(g);
        for leaf in &leaves {
            tree.insert(g, *leaf)?;
        }
        let base = regions
            .iter()
            .find_map(|r| occupied.first_fit(r.base as u128, r.end(), tree.len, tree.align))
            .ok_or_else(|| PageTableError::NoTableRoom {
                space: plan.space.to_string(),
                bytes: tree.len,
            })? as Addr;
        occupied.insert(base as u128, base as u128 + tree.len as u128);
        images.push(PageTableImage {
            space: plan.space.clone(),
            asid,
            base_physical: base,
            root_offset: tree.tables[0].offset,
            bytes: tree.serialize(base),
            page_count: leaves.len(),
        });
        asids.push((plan.space.name().to_string(), asid));
    }
    Ok((
        images,
        AsidPlan {
            kernel_global: model.has_global_bit,
            partition_asids: asids,
            flush_on_switch: total_pages > model.tlb_capacity as usize,
        },
    ))
}

pub fn generate_warmup(layout: &MemoryLayout, images: &[PageTableImage]) -> Result<Vec<WarmupList>, PageTableError> {
    let model = model_of(layout)?;
    let mut out = Vec::with_capacity(images.len());
    for image in images {
        let plan = layout
            .plan(&image.space)
            .ok_or(PageTableError::Conflict(image.base_physical))?;
        let leaves = plan_leaves(plan, model)?;
        let addresses = leaves.iter().map(|l| l.virtual_base).collect();
        let unreachable = leaves
            .iter()
            .filter(|l| !l.permissions.kernel_read)
            .map(|l| l.virtual_base)
            .collect();
        out.push(WarmupList {
            space: image.space.clone(),
            addresses,
            unreachable,
        });
    }
    Ok(out)
}

pub fn build_config(layout: &MemoryLayout) -> Result<PageTableConfig, PageTableError> {
    let model = model_of(layout)?;
    let (images, asids) = build_page_tables(layout)?;
    let warmups = generate_warmup(layout, &images)?;
    Ok(PageTableConfig {
        geometry: model.geometry.clone(),
        asids,
        images,
        warmups,
    })
}

/// Pages each partition needs resident (its own plus the kernel's) against
/// the TLB capacity.
pub fn zero_miss_budget(layout: &MemoryLayout, mmu: &MmuModel) -> VerificationReport {
    let mut report = VerificationReport::new();
    let MmuModel::PageTable(model) = mmu else {
        report.error("BACKEND_MISMATCH", Subject::none(), "zero-miss budget applies to page-table MMUs");
        return report;
    };
    for plan in layout.partition_plans() {
        match plan_leaves(plan, model) {
            Ok(leaves) if leaves.len() > model.tlb_capacity as usize => report.error(
                "ZERO_MISS_UNACHIEVABLE",
                Subject::owner(&plan.space),
                format!("{} pages exceed {} TLB slots", leaves.len(), model.tlb_capacity),
            ),
            Ok(leaves) => report.info(
                "ZERO_MISS_BUDGET",
                Subject::owner(&plan.space),
                format!("{} of {} TLB slots", leaves.len(), model.tlb_capacity),
            ),
            Err(e) => report.error("UNMAPPABLE_BLOCK", Subject::owner(&plan.space), e.to_string()),
        }
    }
    report
}

/// Decoded leaf mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageMapping {
    pub virtual_base: Addr,
    pub physical_base: Addr,
    pub size: u64,
    pub permissions: Permissions,
    pub cache_policy: CachePolicy,
    pub global: bool,
}

/// Full software walk of an image, in virtual-address order.
pub fn decode_page_tables(image: &PageTableImage, g: &PageTableGeometry) -> Result<Vec<PageMapping>, MalformedImageError> {
    let mut out = Vec::new();
    let mut visited = std::collections::HashSet::new();
    walk_table(image, g, image.root_physical(), 1, 0, &mut visited, &mut out)?;
    Ok(out)
}

fn walk_table(
    image: &PageTableImage,
    g: &PageTableGeometry,
    table: Addr,
    level: u32,
    va_prefix: Addr,
    visited: &mut std::collections::HashSet<Addr>,
    out: &mut Vec<PageMapping>,
) -> Result<(), MalformedImageError> {
    let bad = |offset: u64, reason: String| MalformedImageError { offset, reason };
    let rel = table.wrapping_sub(image.base_physical);
    if table < image.base_physical || rel + g.table_bytes(level) > image.bytes.len() as u64 {
        return Err(bad(rel, format!("table at {table:#x} lies outside the image")));
    }
    if !visited.insert(table) {
        return Err(bad(rel, format!("table at {table:#x} is referenced twice")));
    }
    for i in 0..g.entries_at(level) as u64 {
        let at = table + 8 * i;
        let desc = image.read_u64(at).expect("bounds checked");
        if desc & DESC_VALID == 0 {
            continue;
        }
        let va = va_prefix | i << g.level_shift(level);
        if desc & DESC_TABLE != 0 {
            if level == g.levels {
                return Err(bad(at - image.base_physical, "table descriptor at the page level".into()));
            }
            if desc & TABLE_RESERVED != 0 {
                return Err(bad(at - image.base_physical, format!("reserved bits set in table descriptor {desc:#018x}")));
            }
            walk_table(image, g, desc & ADDR_MASK, level + 1, va, visited, out)?;
        } else {
            if !g.leaf_allowed(level) {
                return Err(bad(at - image.base_physical, format!("leaf descriptor at non-leaf level {level}")));
            }
            if desc & LEAF_RESERVED != 0 {
                return Err(bad(at - image.base_physical, format!("reserved bits set in leaf descriptor {desc:#018x}")));
            }
            let size = g.leaf_size(level);
            let pa = desc & ADDR_MASK;
            if pa & (size - 1) != 0 {
                return Err(bad(at - image.base_physical, format!("output address {pa:#x} not aligned to {size:#x}")));
            }
            let code = ((desc & CACHE_MASK) >> CACHE_SHIFT) as u8;
            let cache_policy = CachePolicy::from_code(code)
                .ok_or_else(|| bad(at - image.base_physical, format!("reserved cache code {code}")))?;
            out.push(PageMapping {
                virtual_base: va,
                physical_base: pa,
                size,
                permissions: Permissions::from_bits(((desc & PERM_MASK) >> PERM_SHIFT) as u8),
                cache_policy,
                global: desc & DESC_GLOBAL != 0,
            });
        }
    }
    Ok(())
}

pub fn write_mlpt(cfg: &PageTableConfig) -> Vec<u8> {
    let g = &cfg.geometry;
    let mut out = Vec::new();
    out.extend_from_slice(MLPT_MAGIC);
    out.extend_from_slice(&MLPT_VERSION.to_le_bytes());
    out.extend_from_slice(&g.page_size.to_le_bytes());
    out.push(g.levels as u8);
    out.extend(g.index_bits_per_level.iter().map(|&b| b as u8));
    let mask: u8 = g.large_page_levels.iter().fold(0, |m, &l| m | 1 << (l - 1));
    out.push(mask);
    out.push(cfg.asids.kernel_global as u8);
    out.push(cfg.asids.flush_on_switch as u8);
    out.extend_from_slice(&(cfg.images.len() as u16).to_le_bytes());
    for (image, warm) in cfg.images.iter().zip(&cfg.warmups) {
        out.extend_from_slice(&(image.asid as u16).to_le_bytes());
        out.extend_from_slice(&image.base_physical.to_le_bytes());
        out.extend_from_slice(&image.root_offset.to_le_bytes());
        out.extend_from_slice(&(image.bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&image.bytes);
        out.extend_from_slice(&(warm.addresses.len() as u32).to_le_bytes());
        for a in &warm.addresses {
            out.extend_from_slice(&a.to_le_bytes());
        }
    }
    out
}

/// One space as stored in an `MLPT` artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSpace {
    pub asid: u16,
    pub base_physical: Addr,
    pub root_offset: u64,
    pub bytes: Vec<u8>,
    pub warmup: Vec<Addr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPageTables {
    pub geometry: PageTableGeometry,
    pub kernel_global: bool,
    pub flush_on_switch: bool,
    pub spaces: Vec<RawSpace>,
}

pub fn read_mlpt(bytes: &[u8]) -> Result<RawPageTables, FormatError> {
    let mut r = Reader::new(bytes);
    let t = |r: &Reader| FormatError::Truncated(r.pos());
    if r.take(4).ok_or_else(|| t(&r))? != MLPT_MAGIC {
        return Err(FormatError::Magic);
    }
    let version = r.u16().ok_or_else(|| t(&r))?;
    if version != MLPT_VERSION {
        return Err(FormatError::Version(version));
    }
    let page_size = r.u64().ok_or_else(|| t(&r))?;
    let levels = r.u8().ok_or_else(|| t(&r))? as u32;
    let bits = r.take(levels as usize).ok_or_else(|| t(&r))?.iter().map(|&b| b as u32).collect();
    let mask = r.u8().ok_or_else(|| t(&r))?;
    let geometry = PageTableGeometry {
        page_size,
        levels,
        index_bits_per_level: bits,
        large_page_levels: (1..=8u32).filter(|l| mask & 1 << (l - 1) != 0).collect(),
    };
    let kernel_global = r.u8().ok_or_else(|| t(&r))? != 0;
    let flush_on_switch = r.u8().ok_or_else(|| t(&r))? != 0;
    let count = r.u16().ok_or_else(|| t(&r))?;
    let mut spaces = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let asid = r.u16().ok_or_else(|| t(&r))?;
        let base_physical = r.u64().ok_or_else(|| t(&r))?;
        let root_offset = r.u64().ok_or_else(|| t(&r))?;
        let len = r.u64().ok_or_else(|| t(&r))?;
        let img = r.take(usize::try_from(len).map_err(|_| t(&r))?).ok_or_else(|| t(&r))?.to_vec();
        let n = r.u32().ok_or_else(|| t(&r))?;
        let mut warmup = Vec::with_capacity(n.min(1 << 16) as usize);
        for _ in 0..n {
            warmup.push(r.u64().ok_or_else(|| t(&r))?);
        }
        spaces.push(RawSpace {
            asid,
            base_physical,
            root_offset,
            bytes: img,
            warmup,
        });
    }
    if r.remaining() != 0 {
        return Err(FormatError::Trailing(r.remaining()));
    }
    Ok(RawPageTables {
        geometry,
        kernel_global,
        flush_on_switch,
        spaces,
    })
}

#[derive(Serialize)]
struct ManifestSpace<'a> {
    space: &'a str,
    asid: u32,
    root_physical: String,
    image_bytes: String,
    page_count: usize,
    warmup: Vec<String>,
    warmup_unreachable: Vec<String>,
}

/// Human-auditable companion of the binary artifact.
pub fn manifest_json(cfg: &PageTableConfig) -> String {
    let spaces: Vec<ManifestSpace> = cfg
        .images
        .iter()
        .zip(&cfg.warmups)
        .map(|(i, w)| ManifestSpace {
            space: i.space.name(),
            asid: i.asid,
            root_physical: crate::doc::hex(i.root_physical()),
            image_bytes: crate::doc::hex(i.bytes.len() as u64),
            page_count: i.page_count,
            warmup: w.addresses.iter().map(|&a| crate::doc::hex(a)).collect(),
            warmup_unreachable: w.unreachable.iter().map(|&a| crate::doc::hex(a)).collect(),
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "format": "MLPT",
        "version": MLPT_VERSION,
        "asids": cfg.asids,
        "spaces": spaces,
    }))
    .expect("manifest serializes")
}

/// Findings for execute-only or write-only pages a warm-up read cannot load.
pub fn warmup_findings(cfg: &PageTableConfig) -> VerificationReport {
    let mut report = VerificationReport::new();
    for w in &cfg.warmups {
        for a in &w.unreachable {
            report.warn(
                "WARMUP_UNREACHABLE",
                Subject::block(&w.space, crate::doc::hex(*a)),
                "page is not kernel-readable; warm-up read may not load it",
            );
        }
    }
    report
}
