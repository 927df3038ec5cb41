//! Static verification: the resolved layout against the requirements, and
//! the generated MMU configuration against the layout.
//!
//! Configuration checks parse and decode artifact bytes with their own code
//! path and never call the backend decoders, so a backend bug cannot certify
//! itself. Mappings are compared as interval sets over virtual addresses, so
//! one large leaf and many small ones describing the same translation are
//! equal.

use std::collections::HashSet;

use thiserror::Error;

use crate::layout::{AddressSpacePlan, MemoryLayout, ResolvedBlock};
use crate::model::*;
use crate::report::{Subject, VerificationReport};

/// Mismatch findings beyond this count are summarized.
pub const MISMATCH_LIMIT: usize = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArtifactError {
    #[error("artifact is empty or has an unknown magic number")]
    UnknownFormat,
    #[error("unsupported {format} version {version}")]
    Version { format: &'static str, version: u16 },
    #[error("{format} artifact truncated at byte {at}")]
    Truncated { format: &'static str, at: usize },
    #[error("{format} artifact has {extra} trailing bytes")]
    Trailing { format: &'static str, extra: usize },
}

pub fn verify_layout(layout: &MemoryLayout, reqs: &RequirementSet) -> VerificationReport {
    let mut report = VerificationReport::new();
    let gran = granule(&layout.memmap, &layout.mmu);
    let blocks = layout.all_blocks();
    let sub = |b: &ResolvedBlock| Subject::block(&b.owner, &b.logical_name);

    for r in &reqs.blocks {
        let id = r.id();
        let Some(b) = blocks.iter().find(|b| b.id() == id) else {
            report.error(
                "REQ_UNRESOLVED",
                Subject::block(&r.owner, &r.logical_name),
                "requirement has no resolved block",
            );
            continue;
        };
        let mut violated = Vec::new();
        if r.virtual_address.is_some_and(|v| v != b.virtual_address) {
            violated.push("virtual_address");
        }
        if r.physical_address.is_some_and(|p| p != b.physical_address) {
            violated.push("physical_address");
        }
        if r.size != b.size {
            violated.push("size");
        }
        if r.cache_policy != b.cache_policy {
            violated.push("cache_policy");
        }
        if r.physically_contiguous != b.physically_contiguous {
            violated.push("physically_contiguous");
        }
        if r.shared_with != b.shared_with {
            violated.push("shared_with");
        }
        if r.alignment.is_some_and(|a| b.alignment < a) {
            violated.push("alignment");
        }
        if b.permissions != r.permissions {
            let widened = b.permissions.contains(r.permissions);
            let extra = Permissions::from_bits(b.permissions.bits() & !r.permissions.bits());
            let within_owner = b.shared_with.is_empty() && !(b.owner.is_kernel() && extra.any_user());
            if widened && within_owner {
                report.warn(
                    "MIN_PERM",
                    sub(b),
                    format!("grants `{}` beyond the required `{}`", extra, r.permissions),
                );
            } else {
                violated.push("permissions");
            }
        }
        if !violated.is_empty() {
            report.error(
                "FIXED_ATTR_VIOLATED",
                sub(b),
                format!("resolved {} contradict the requirement", violated.join(", ")),
            );
        }
    }

    for b in &blocks {
        if reqs.find(&b.id()).is_none() {
            report.error("UNKNOWN_BLOCK", sub(b), "resolved block has no requirement");
        }
        let align = b.alignment.max(1);
        if !align.is_power_of_two()
            || b.virtual_address % align != 0
            || b.physical_address % align != 0
            || b.virtual_address % gran != 0
            || b.physical_address % gran != 0
            || b.size % gran != 0
        {
            report.error(
                "MISALIGNED",
                sub(b),
                format!("addresses or size violate alignment {align:#x} or granule {gran:#x}"),
            );
        }
        if b.virtual_end() > 1u128 << layout.mmu.va_bits() {
            report.error("OUT_OF_MAP", sub(b), "virtual range exceeds the backend address width");
        }
        if !layout.memmap.covers(b.physical_address, b.size, !b.physically_contiguous) {
            report.error("OUT_OF_MAP", sub(b), "physical range is outside the memory map");
        }
        if let Some(r) = layout.memmap.region_at(b.physical_address) {
            if r.class != b.region_class {
                report.error(
                    "REGION_CLASS",
                    sub(b),
                    format!("recorded region class {} but placed in {}", b.region_class.name(), r.class.name()),
                );
            }
            if r.class == RegionClass::Device && b.cache_policy != CachePolicy::IO {
                report.error("CACHE_REGION", sub(b), "device memory requires the io cache policy");
            }
        }
    }

    // Physical isolation across distinct blocks.
    for (i, a) in blocks.iter().enumerate() {
        for b in &blocks[..i] {
            let overlap = (a.physical_address as u128) < b.physical_end() && (b.physical_address as u128) < a.physical_end();
            if !overlap {
                continue;
            }
            if sharing_authorized(&a.owner, &a.shared_with, &b.owner, &b.shared_with) {
                if a.virtual_address.wrapping_sub(a.physical_address) != b.virtual_address.wrapping_sub(b.physical_address) {
                    report.info(
                        "SHARED_VADDR_DIFFERS",
                        sub(a),
                        format!("shared memory is mapped at a different virtual address than in {}", b.id()),
                    );
                }
            } else {
                report.error("PHYS_ISOLATION", sub(a), format!("physical range overlaps {}", b.id()));
            }
        }
    }

    check_plans(layout, &blocks, &mut report);
    report
}

fn check_plans(layout: &MemoryLayout, blocks: &[&ResolvedBlock], report: &mut VerificationReport) {
    let partitions = layout.partitions();
    if layout.plans.first().map(|p| &p.space) != Some(&Owner::Kernel) {
        report.error("KERNEL_INCONSISTENT", Subject::none(), "first plan is not the kernel plan");
    }
    for plan in &layout.plans {
        // Every copy of a block must agree with its first occurrence.
        for b in &plan.blocks {
            if let Some(first) = blocks.iter().find(|x| x.id() == b.id()) {
                if *first != b {
                    let code = if b.owner.is_kernel() { "KERNEL_INCONSISTENT" } else { "PLAN_INCONSISTENT" };
                    report.error(code, Subject::block(&plan.space, b.id().to_string()), "copy differs from other plans");
                }
            }
        }
        let present: HashSet<BlockId> = plan.blocks.iter().map(|b| b.id()).collect();
        let expected: HashSet<BlockId> = blocks
            .iter()
            .filter(|b| match &plan.space {
                Owner::Kernel => b.owner.is_kernel(),
                space => visible_spaces(&b.owner, &b.shared_with, &partitions).contains(space),
            })
            .map(|b| b.id())
            .collect();
        let mut missing: Vec<_> = expected.difference(&present).collect();
        let mut extra: Vec<_> = present.difference(&expected).collect();
        missing.sort();
        extra.sort();
        for id in missing.into_iter().chain(extra) {
            let code = if id.owner.is_kernel() { "KERNEL_INCONSISTENT" } else { "PLAN_INCONSISTENT" };
            report.error(
                code,
                Subject::block(&plan.space, id.to_string()),
                "block visibility in this address space contradicts ownership and sharing",
            );
        }
        for (i, a) in plan.blocks.iter().enumerate() {
            for b in &plan.blocks[..i] {
                if a.id() != b.id() && (a.virtual_address as u128) < b.virtual_end() && (b.virtual_address as u128) < a.virtual_end() {
                    report.error(
                        "VIRTUAL_OVERLAP",
                        Subject::block(&plan.space, a.id().to_string()),
                        format!("virtual range overlaps {}", b.id()),
                    );
                }
            }
        }
    }
}

/// One translation run: `[start, end)` virtual maps to `phys` onward.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Seg {
    start: u128,
    end: u128,
    phys: u128,
    perms: u8,
    cache: CachePolicy,
    global: bool,
}

fn expected_segments(plan: &AddressSpacePlan, kernel_global: bool) -> Vec<Seg> {
    let mut out: Vec<Seg> = plan
        .blocks
        .iter()
        .map(|b| Seg {
            start: b.virtual_address as u128,
            end: b.virtual_end(),
            phys: b.physical_address as u128,
            perms: b.permissions.bits(),
            cache: b.cache_policy,
            global: b.owner.is_kernel() && kernel_global,
        })
        .collect();
    out.sort_by_key(|s| s.start);
    out
}

/// Sorts and reports overlapping actual segments, keeping the earliest.
fn disjoint(mut segs: Vec<Seg>, space: &Owner, report: &mut VerificationReport) -> Vec<Seg> {
    segs.sort_by_key(|s| (s.start, s.end));
    let mut out: Vec<Seg> = Vec::with_capacity(segs.len());
    for s in segs {
        if let Some(last) = out.last() {
            if s.start < last.end {
                report.error(
                    "ENTRY_OVERLAP",
                    Subject::block(space, format!("{:#x}", s.start)),
                    format!("translation overlaps another at {:#x}", last.start),
                );
                continue;
            }
        }
        out.push(s);
    }
    out
}

fn seg_at(segs: &[Seg], addr: u128) -> Option<&Seg> {
    let idx = segs.partition_point(|s| s.end <= addr);
    segs.get(idx).filter(|s| s.start <= addr)
}

/// Exact interval-set comparison; one finding per differing elementary run.
fn compare(space: &Owner, expected: &[Seg], actual: &[Seg], report: &mut VerificationReport, budget: &mut usize) {
    let mut cuts: Vec<u128> = expected
        .iter()
        .chain(actual)
        .flat_map(|s| [s.start, s.end])
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut codes: Vec<(&str, String)> = Vec::new();
        match (seg_at(expected, a), seg_at(actual, a)) {
            (None, None) => {}
            (Some(_), None) => codes.push(("MISSING_MAPPING", "mapped in the layout but not in the configuration".into())),
            (None, Some(_)) => codes.push(("EXTRA_MAPPING", "mapped by the configuration but not in the layout".into())),
            (Some(e), Some(x)) => {
                let (pe, px) = (e.phys + (a - e.start), x.phys + (a - x.start));
                if pe != px {
                    codes.push(("PHYS_MISMATCH", format!("translates to {px:#x}, layout says {pe:#x}")));
                }
                if e.perms != x.perms {
                    codes.push((
                        "PERM_MISMATCH",
                        format!("permissions `{}`, layout says `{}`", Permissions::from_bits(x.perms), Permissions::from_bits(e.perms)),
                    ));
                }
                if e.cache != x.cache {
                    codes.push(("CACHE_MISMATCH", format!("cache policy {}, layout says {}", x.cache, e.cache)));
                }
                if e.global != x.global {
                    codes.push(("ATTRIB_MISMATCH", format!("global flag {}, layout says {}", x.global, e.global)));
                }
            }
        }
        for (code, msg) in codes {
            if *budget == 0 {
                return;
            }
            *budget -= 1;
            report.error(code, Subject::block(space, format!("{a:#x}..{b:#x}")), msg);
        }
    }
}

/// Verifies an `MLTC` or `MLPT` artifact against the layout.
pub fn verify_mmu_config(artifact: &[u8], layout: &MemoryLayout) -> Result<VerificationReport, ArtifactError> {
    let mut report = match (artifact.get(..4), &layout.mmu) {
        (Some(b"MLTC"), MmuModel::TlbFixed(t)) => verify_tlb(artifact, layout, t)?,
        (Some(b"MLPT"), MmuModel::PageTable(p)) => verify_pt(artifact, layout, p)?,
        (Some(b"MLTC"), _) | (Some(b"MLPT"), _) => {
            let mut r = VerificationReport::new();
            r.error("BACKEND_MISMATCH", Subject::none(), "artifact kind does not match the layout's MMU model");
            r
        }
        _ => return Err(ArtifactError::UnknownFormat),
    };
    let mismatches = report.findings.iter().filter(|f| f.severity == crate::report::Severity::Error).count();
    if mismatches >= MISMATCH_LIMIT {
        report.info("MISMATCH_LIMIT", Subject::none(), format!("reporting stopped after {MISMATCH_LIMIT} mismatches"));
    }
    Ok(report)
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
    format: &'static str,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: u64) -> Result<&'a [u8], ArtifactError> {
        let end = usize::try_from(n)
            .ok()
            .and_then(|n| self.at.checked_add(n))
            .filter(|&e| e <= self.buf.len())
            .ok_or(ArtifactError::Truncated {
                format: self.format,
                at: self.at,
            })?;
        let out = &self.buf[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn le(&mut self, n: usize) -> Result<u64, ArtifactError> {
        Ok(self.bytes(n as u64)?.iter().rev().fold(0u64, |acc, &b| acc << 8 | b as u64))
    }

    fn finish(&self) -> Result<(), ArtifactError> {
        match self.buf.len() - self.at {
            0 => Ok(()),
            extra => Err(ArtifactError::Trailing {
                format: self.format,
                extra,
            }),
        }
    }
}

fn verify_tlb(artifact: &[u8], layout: &MemoryLayout, t: &TlbModel) -> Result<VerificationReport, ArtifactError> {
    let mut c = Cursor {
        buf: artifact,
        at: 4,
        format: "MLTC",
    };
    let version = c.le(2)? as u16;
    if version != 1 {
        return Err(ArtifactError::Version { format: "MLTC", version });
    }
    let count = c.le(2)?;
    let mut seqs = Vec::new();
    for _ in 0..count {
        let id = c.le(2)? as u32;
        let n = c.le(2)?;
        let mut words = Vec::new();
        for _ in 0..n {
            let mut w = [0u32; 5];
            for x in &mut w {
                *x = c.le(4)? as u32;
            }
            words.push(w);
        }
        seqs.push((id, words));
    }
    c.finish()?;

    let mut report = VerificationReport::new();
    let plans = layout.partition_plans();
    if seqs.len() != plans.len() {
        report.error(
            "SPACE_MISMATCH",
            Subject::none(),
            format!("{} sequences for {} partitions", seqs.len(), plans.len()),
        );
    }
    let min_log2 = t.min_entry_size.trailing_zeros();
    let max_log2 = t.max_entry_size.trailing_zeros();
    let mut budget = MISMATCH_LIMIT;
    for (i, plan) in plans.iter().enumerate() {
        let want = i as u32 + 1;
        let Some((id, words)) = seqs.get(i) else { continue };
        if *id != want {
            report.error(
                "SPACE_MISMATCH",
                Subject::owner(&plan.space),
                format!("sequence carries identifier {id}, expected {want}"),
            );
        }
        if words.len() > t.entry_count as usize {
            report.error(
                "ENTRY_BUDGET_EXCEEDED",
                Subject::owner(&plan.space),
                format!("{} entries exceed {} TLB entries", words.len(), t.entry_count),
            );
        }
        let mut actual = Vec::new();
        for (k, w) in words.iter().enumerate() {
            let entry = Subject::block(&plan.space, format!("entry {k}"));
            let reserved = [w[0] & 0x0000_07C0, w[1] & 0x0000_0FF0, w[2] & !0x3F, w[3] & !0xF, w[4] & 0x7FFF_C000];
            if reserved.iter().any(|&r| r != 0) {
                report.error("RESERVED_BITS", entry.clone(), format!("reserved bits set in {:#010x?}", w));
                continue;
            }
            if w[0] & 0x800 == 0 {
                continue;
            }
            let log2 = w[0] & 0x3F;
            let cache = match w[3] {
                0 => CachePolicy::Normal,
                1 => CachePolicy::IO,
                2 => CachePolicy::WriteThrough,
                3 => CachePolicy::Uncached,
                8 => CachePolicy::NormalCoherent,
                other => {
                    report.error("RESERVED_BITS", entry, format!("reserved cache encoding {other:#x}"));
                    continue;
                }
            };
            if log2 < min_log2 || log2 > max_log2 {
                report.error("ATTRIB_MISMATCH", entry, format!("entry size 2^{log2} outside the model's range"));
                continue;
            }
            let size = 1u128 << log2;
            let v = (w[0] & 0xFFFF_F000) as u128;
            let p = (w[1] & 0xFFFF_F000) as u128 | ((w[1] & 0xF) as u128) << 32;
            if !v.is_multiple_of(size) || !p.is_multiple_of(size) || v + size > 1 << 32 {
                report.error("MISALIGNED", entry, format!("entry at {v:#x} is not aligned by its size {size:#x}"));
                continue;
            }
            let global = w[4] & 0x8000_0000 != 0;
            let pid = w[4] & 0x3FFF;
            if (global && pid != 0) || (!global && pid != want) {
                report.error(
                    "ATTRIB_MISMATCH",
                    entry,
                    format!("pid {pid} with global={global} in the sequence of space {want}"),
                );
                continue;
            }
            actual.push(Seg {
                start: v,
                end: v + size,
                phys: p,
                perms: (w[2] & 0x3F) as u8,
                cache,
                global,
            });
        }
        let actual = disjoint(actual, &plan.space, &mut report);
        compare(&plan.space, &expected_segments(plan, true), &actual, &mut report, &mut budget);
    }
    Ok(report)
}

struct PtSpace {
    asid: u64,
    base: u64,
    root: u64,
    image: Vec<u8>,
    warmup: Vec<u64>,
}

fn verify_pt(artifact: &[u8], layout: &MemoryLayout, model: &PageTableModel) -> Result<VerificationReport, ArtifactError> {
    let mut c = Cursor {
        buf: artifact,
        at: 4,
        format: "MLPT",
    };
    let version = c.le(2)? as u16;
    if version != 1 {
        return Err(ArtifactError::Version { format: "MLPT", version });
    }
    let page_size = c.le(8)?;
    let levels = c.le(1)?;
    let bits: Vec<u32> = c.bytes(levels)?.iter().map(|&b| b as u32).collect();
    let large_mask = c.le(1)?;
    let kernel_global = c.le(1)? != 0;
    let flush = c.le(1)? != 0;
    let count = c.le(2)?;
    let mut spaces = Vec::new();
    for _ in 0..count {
        let asid = c.le(2)?;
        let base = c.le(8)?;
        let root = c.le(8)?;
        let len = c.le(8)?;
        let image = c.bytes(len)?.to_vec();
        let n = c.le(4)?;
        let mut warmup = Vec::new();
        for _ in 0..n {
            warmup.push(c.le(8)?);
        }
        spaces.push(PtSpace {
            asid,
            base,
            root,
            image,
            warmup,
        });
    }
    c.finish()?;

    let mut report = VerificationReport::new();
    let g = &model.geometry;
    let want_mask = g.large_page_levels.iter().fold(0u64, |m, &l| m | 1 << (l - 1));
    if page_size != g.page_size || levels != g.levels as u64 || bits != g.index_bits_per_level || large_mask != want_mask {
        report.error("ATTRIB_MISMATCH", Subject::none(), "artifact geometry differs from the MMU model");
        return Ok(report);
    }
    if kernel_global != model.has_global_bit {
        report.error("ATTRIB_MISMATCH", Subject::none(), "kernel global marking differs from the MMU model");
    }
    let plans = layout.partition_plans();
    if spaces.len() != plans.len() {
        report.error(
            "SPACE_MISMATCH",
            Subject::none(),
            format!("{} page-table images for {} partitions", spaces.len(), plans.len()),
        );
    }

    // Table memory must not alias any block, other tables, or leave RAM.
    let mut claimed: Vec<(u128, u128, String)> = layout
        .all_blocks()
        .iter()
        .map(|b| (b.physical_address as u128, b.physical_end(), b.id().to_string()))
        .collect();
    for (i, s) in spaces.iter().enumerate() {
        let (start, end) = (s.base as u128, s.base as u128 + s.image.len() as u128);
        let name = format!("image {}", i + 1);
        if !layout.memmap.regions.iter().any(|r| r.class.is_ram() && r.base as u128 <= start && end <= r.end()) {
            report.error("TABLE_OVERLAP", Subject::block(&Owner::Kernel, &name), "page tables lie outside RAM regions");
        }
        if let Some(other) = claimed.iter().find(|c| start < c.1 && c.0 < end) {
            report.error(
                "TABLE_OVERLAP",
                Subject::block(&Owner::Kernel, &name),
                format!("page tables overlap {}", other.2),
            );
        }
        claimed.push((start, end, name));
    }

    let mut total_pages = 0usize;
    let mut budget = MISMATCH_LIMIT;
    let mut kernel_pages = None;
    for (i, plan) in plans.iter().enumerate() {
        let Some(s) = spaces.get(i) else { continue };
        if s.asid != i as u64 + 1 || s.asid >= 1 << model.asid_bits {
            report.error(
                "ATTRIB_MISMATCH",
                Subject::owner(&plan.space),
                format!("ASID {} where {} was expected", s.asid, i + 1),
            );
        }
        let leaves = match PtWalker::new(g, s).walk() {
            Ok(l) => l,
            Err(why) => {
                report.error("DECODE_ERROR", Subject::owner(&plan.space), why);
                continue;
            }
        };
        let kp = plan
            .blocks
            .iter()
            .filter(|b| b.owner.is_kernel())
            .map(|b| (b.virtual_address as u128, b.virtual_end()))
            .collect::<Vec<_>>();
        let in_kernel = |v: u128| kp.iter().any(|&(a, b)| a <= v && v < b);
        let own = leaves.iter().filter(|l| !in_kernel(l.start)).count();
        if model.has_global_bit {
            kernel_pages.get_or_insert(leaves.len() - own);
            total_pages += own;
        } else {
            total_pages += leaves.len();
        }

        let mut bases: Vec<u64> = leaves.iter().map(|l| l.start as u64).collect();
        bases.sort_unstable();
        if s.warmup != bases {
            report.error(
                "WARMUP_MISMATCH",
                Subject::owner(&plan.space),
                "warm-up list is not exactly one address per mapped page",
            );
        }
        let actual = disjoint(leaves, &plan.space, &mut report);
        compare(&plan.space, &expected_segments(plan, model.has_global_bit), &actual, &mut report, &mut budget);
    }
    total_pages += kernel_pages.unwrap_or(0);
    if flush != (total_pages > model.tlb_capacity as usize) {
        report.error(
            "ATTRIB_MISMATCH",
            Subject::none(),
            format!("flush-on-switch flag {flush} contradicts {total_pages} pages for {} slots", model.tlb_capacity),
        );
    }
    Ok(report)
}

struct PtWalker<'a> {
    g: &'a PageTableGeometry,
    space: &'a PtSpace,
    seen: HashSet<u64>,
    out: Vec<Seg>,
}

impl<'a> PtWalker<'a> {
    fn new(g: &'a PageTableGeometry, space: &'a PtSpace) -> Self {
        PtWalker {
            g,
            space,
            seen: HashSet::new(),
            out: Vec::new(),
        }
    }

    fn walk(mut self) -> Result<Vec<Seg>, String> {
        let root = self.space.base.checked_add(self.space.root).ok_or("root offset overflows")?;
        self.table(root, 0, 0)?;
        Ok(self.out)
    }

    /// `depth` is zero-based: the root table sits at depth 0.
    fn table(&mut self, phys: u64, depth: usize, prefix: u128) -> Result<(), String> {
        let g = self.g;
        let entries = 1u64 << g.index_bits_per_level[depth];
        let rel = phys.wrapping_sub(self.space.base);
        if phys < self.space.base || rel.saturating_add(entries * 8) > self.space.image.len() as u64 {
            return Err(format!("table at {phys:#x} points outside the image"));
        }
        if !self.seen.insert(phys) {
            return Err(format!("table at {phys:#x} is reachable twice"));
        }
        let shift = g.page_size.trailing_zeros() + g.index_bits_per_level[depth + 1..].iter().sum::<u32>();
        let last = depth + 1 == g.levels as usize;
        let leaf_ok = last || g.large_page_levels.contains(&(depth as u32 + 1));
        for i in 0..entries {
            let at = (rel + i * 8) as usize;
            let d = u64::from_le_bytes(self.space.image[at..at + 8].try_into().unwrap());
            if d & 1 == 0 {
                continue;
            }
            let out_addr = d & 0x0000_FFFF_FFFF_F000;
            let va = prefix | (i as u128) << shift;
            if d & 2 != 0 {
                if last {
                    return Err(format!("table descriptor at page level, byte {at:#x}"));
                }
                if d & !(0x3 | 0x0000_FFFF_FFFF_F000) != 0 {
                    return Err(format!("reserved bits in table descriptor at byte {at:#x}"));
                }
                self.table(out_addr, depth + 1, va)?;
            } else {
                if !leaf_ok {
                    return Err(format!("leaf descriptor at level {} which forbids leaves", depth + 1));
                }
                if d & (1 << 63 | 1 << 59 | 0x001F_0000_0000_0000 | 0x7FC) != 0 {
                    return Err(format!("reserved bits in leaf descriptor at byte {at:#x}"));
                }
                let size = 1u128 << shift;
                if !(out_addr as u128).is_multiple_of(size) {
                    return Err(format!("leaf output {out_addr:#x} not aligned by {size:#x}"));
                }
                let cache = CachePolicy::from_code(((d >> 60) & 7) as u8)
                    .ok_or_else(|| format!("reserved cache code at byte {at:#x}"))?;
                self.out.push(Seg {
                    start: va,
                    end: va + size,
                    phys: out_addr as u128,
                    perms: ((d >> 53) & 0x3F) as u8,
                    cache,
                    global: d & (1 << 11) != 0,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::plan_layout;
    use crate::{pagetable, tlb};

    fn p1010() -> (RequirementSet, SystemMemoryMap, MmuModel) {
        let blk = |o: Owner, n: &str, size: u64, perms: &str| {
            MemoryBlockRequirement::new(o, n, size, Permissions::parse(perms).unwrap(), CachePolicy::Normal)
        };
        (
            RequirementSet {
                partitions: vec!["P1".into()],
                blocks: vec![
                    blk(Owner::Kernel, "code", 0x10000, "KR|KX"),
                    blk(Owner::Kernel, "data", 0x10000, "KR|KW"),
                    blk(Owner::partition("P1"), "code", 0x10000, "UR|UX|KR|KX"),
                    blk(Owner::partition("P1"), "data", 0x10000, "UR|UW|KR|KW"),
                ],
            },
            SystemMemoryMap {
                regions: vec![PhysicalRegion {
                    base: 0,
                    size: 0x1000_0000,
                    class: RegionClass::ExternalRam,
                    access_cost: 10,
                }],
                min_page_size: 4096,
            },
            MmuModel::TlbFixed(TlbModel {
                entry_count: 16,
                min_entry_size: 4096,
                max_entry_size: 1 << 28,
                associativity: Associativity::FullyAssociative,
                pid_bits: 8,
            }),
        )
    }

    #[test]
    fn generated_layout_and_config_pass() {
        let (reqs, map, mmu) = p1010();
        let l = plan_layout(&reqs, &map, &mmu).unwrap();
        let r = verify_layout(&l, &reqs);
        assert!(r.findings.is_empty(), "{}", r.render_text());
        let bytes = tlb::write_mltc(&tlb::build_sequences(&l).unwrap());
        let r = verify_mmu_config(&bytes, &l).unwrap();
        assert!(r.findings.is_empty(), "{}", r.render_text());
    }

    #[test]
    fn partition_moved_into_kernel_memory() {
        let (reqs, map, mmu) = p1010();
        let mut l = plan_layout(&reqs, &map, &mmu).unwrap();
        let kp = l.kernel_plan().blocks[0].physical_address;
        for plan in &mut l.plans {
            for b in &mut plan.blocks {
                if b.owner == Owner::partition("P1") && b.logical_name == "code" {
                    b.physical_address = kp;
                }
            }
        }
        assert!(verify_layout(&l, &reqs).has_code("PHYS_ISOLATION"));
    }

    #[test]
    fn fixed_virtual_address_moved() {
        let (mut reqs, map, mmu) = p1010();
        reqs.blocks[2].virtual_address = Some(0x4000_0000);
        let mut l = plan_layout(&reqs, &map, &mmu).unwrap();
        for plan in &mut l.plans {
            for b in &mut plan.blocks {
                if b.virtual_address == 0x4000_0000 {
                    b.virtual_address = 0x4000_1000;
                }
            }
        }
        assert!(verify_layout(&l, &reqs).has_code("FIXED_ATTR_VIOLATED"));
    }

    #[test]
    fn missing_requirement_and_widened_permission() {
        let (mut reqs, map, mmu) = p1010();
        let mut l = plan_layout(&reqs, &map, &mmu).unwrap();
        for plan in &mut l.plans {
            for b in &mut plan.blocks {
                if b.owner == Owner::partition("P1") && b.logical_name == "code" {
                    b.permissions = Permissions::parse("UR|UX|KR|KX|KW").unwrap();
                }
            }
        }
        let r = verify_layout(&l, &reqs);
        assert!(r.has_code("MIN_PERM") && r.passed, "{}", r.render_text());
        reqs.blocks.push(MemoryBlockRequirement::new(
            Owner::Kernel,
            "late",
            0x1000,
            Permissions::parse("KR").unwrap(),
            CachePolicy::Normal,
        ));
        assert!(verify_layout(&l, &reqs).has_code("REQ_UNRESOLVED"));
    }

    #[test]
    fn flipped_permission_word() {
        let (reqs, map, mmu) = p1010();
        let l = plan_layout(&reqs, &map, &mmu).unwrap();
        let mut bytes = tlb::write_mltc(&tlb::build_sequences(&l).unwrap());
        // First entry's word 2 is KR|KX (0x28); add KW.
        let w2 = 8 + 4 + 8;
        assert_eq!(bytes[w2], 0x28);
        bytes[w2] |= 0x10;
        let r = verify_mmu_config(&bytes, &l).unwrap();
        assert!(r.has_code("PERM_MISMATCH"), "{}", r.render_text());
    }

    #[test]
    fn neighbouring_leaf_is_phys_mismatch() {
        let (reqs, map, _) = p1010();
        let mmu = MmuModel::PageTable(PageTableModel {
            geometry: PageTableGeometry::default_4k(),
            tlb_capacity: 512,
            asid_bits: 16,
            has_global_bit: true,
            zero_miss: false,
        });
        let l = plan_layout(&reqs, &map, &mmu).unwrap();
        let mut cfg = pagetable::build_config(&l).unwrap();
        let bytes = pagetable::write_mlpt(&cfg);
        assert!(verify_mmu_config(&bytes, &l).unwrap().findings.is_empty());
        let img = &mut cfg.images[0];
        let pos = (0..img.bytes.len() / 8)
            .map(|i| i * 8)
            .find(|&o| {
                let d = u64::from_le_bytes(img.bytes[o..o + 8].try_into().unwrap());
                d & 3 == 1
            })
            .unwrap();
        let d = u64::from_le_bytes(img.bytes[pos..pos + 8].try_into().unwrap()) ^ 0x1000;
        img.bytes[pos..pos + 8].copy_from_slice(&d.to_le_bytes());
        let r = verify_mmu_config(&pagetable::write_mlpt(&cfg), &l).unwrap();
        assert!(r.has_code("PHYS_MISMATCH"), "{}", r.render_text());
    }

    #[test]
    fn unknown_artifact() {
        let (reqs, map, mmu) = p1010();
        let l = plan_layout(&reqs, &map, &mmu).unwrap();
        assert_eq!(verify_mmu_config(b"JUNK", &l), Err(ArtifactError::UnknownFormat));
        assert!(matches!(verify_mmu_config(b"MLTC\x01", &l), Err(ArtifactError::Truncated { .. })));
    }
}
