//! Deterministic MMU simulator with an abstract operation-count cost model.
//!
//! The simulator interprets configuration artifacts the way hardware would:
//! raw bits, masked by entry size, with no validation beyond the container
//! format. A TLB of exact-LRU slots caches translations; page-table mode walks
//! the loaded images on a miss.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::MemoryLayout;
use crate::model::*;
use crate::pagetable::{self, RawPageTables};
use crate::tlb::{self, FormatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Fixed sequences written at switch time, or page tables with warm-up.
    Static,
    /// Software refill on every miss (fixed-TLB) or on-demand walks without
    /// warm-up (page tables).
    NaiveRefill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkCosts {
    pub external_ram: u64,
    pub internal_ram: u64,
    pub device: u64,
}

/// Abstract unit weights for each counted operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub tlb_hit_cost: u64,
    pub tlb_write_cost: u64,
    pub walk_access_cost: WalkCosts,
    pub interrupt_overhead: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            tlb_hit_cost: 1,
            tlb_write_cost: 4,
            walk_access_cost: WalkCosts {
                external_ram: 20,
                internal_ram: 4,
                device: 40,
            },
            interrupt_overhead: 60,
        }
    }
}

#[derive(Debug, Error)]
pub enum CostModelError {
    #[error("cost model: {0}")]
    Parse(String),
    #[error("cost model: {0} must be positive")]
    NotPositive(&'static str),
}

impl CostModel {
    pub fn walk_cost(&self, class: Option<RegionClass>) -> u64 {
        match class {
            Some(RegionClass::InternalRam) => self.walk_access_cost.internal_ram,
            Some(RegionClass::Device) => self.walk_access_cost.device,
            _ => self.walk_access_cost.external_ram,
        }
    }

    pub fn check(&self) -> Result<(), CostModelError> {
        for (name, v) in [
            ("tlb_hit_cost", self.tlb_hit_cost),
            ("tlb_write_cost", self.tlb_write_cost),
            ("walk_access_cost.external_ram", self.walk_access_cost.external_ram),
            ("walk_access_cost.internal_ram", self.walk_access_cost.internal_ram),
            ("walk_access_cost.device", self.walk_access_cost.device),
            ("interrupt_overhead", self.interrupt_overhead),
        ] {
            if v == 0 {
                return Err(CostModelError::NotPositive(name));
            }
        }
        Ok(())
    }

    /// Accepts JSON (leading `{`) or TOML.
    pub fn parse(text: &str) -> Result<CostModel, CostModelError> {
        let m: CostModel = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| CostModelError::Parse(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| CostModelError::Parse(e.to_string()))?
        };
        m.check()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub tlb_lookups: u64,
    pub tlb_writes: u64,
    pub walk_memory_accesses: u64,
    pub interrupts: u64,
    pub total: u64,
}

impl std::ops::AddAssign for CostBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.tlb_lookups += o.tlb_lookups;
        self.tlb_writes += o.tlb_writes;
        self.walk_memory_accesses += o.walk_memory_accesses;
        self.interrupts += o.interrupts;
        self.total += o.total;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    NoMapping,
    PermissionViolation,
    PrivilegeViolation,
    /// More than one valid translation matched.
    MultiHit,
}

impl FaultKind {
    pub fn name(self) -> &'static str {
        match self {
            FaultKind::NoMapping => "NoMapping",
            FaultKind::PermissionViolation => "PermissionViolation",
            FaultKind::PrivilegeViolation => "PrivilegeViolation",
            FaultKind::MultiHit => "MultiHit",
        }
    }

    pub fn parse(s: &str) -> Option<FaultKind> {
        [
            FaultKind::NoMapping,
            FaultKind::PermissionViolation,
            FaultKind::PrivilegeViolation,
            FaultKind::MultiHit,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRequest {
    pub space: Owner,
    pub vaddr: Addr,
    pub size: u32,
    pub op: AccessOp,
    pub privilege: Privilege,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessResult {
    Translated { paddr: Addr },
    Fault { kind: FaultKind, addr: Addr },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessOutcome {
    pub result: AccessResult,
    pub cost: CostBreakdown,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("artifact: {0}")]
    Format(#[from] FormatError),
    #[error("artifact kind does not match the MMU model")]
    BackendMismatch,
    #[error("unknown address space `{0}`")]
    UnknownSpace(String),
    #[error("no address space is current")]
    NoCurrentSpace,
    #[error("request for `{0}` while another space is current")]
    WrongSpace(String),
    #[error("access size {0} is not 1, 2, 4 or 8")]
    BadSize(u32),
    #[error("access at {0:#x} wraps the address space")]
    Wrap(Addr),
}

/// Translation as cached in a TLB slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cached {
    vbase: Addr,
    size: u64,
    pbase: Addr,
    perms: Permissions,
    global: bool,
    tag: u32,
    stamp: u64,
}

impl Cached {
    fn matches(&self, vaddr: Addr, tag: u32) -> bool {
        (self.global || self.tag == tag) && vaddr >= self.vbase && (vaddr - self.vbase) < self.size
    }
}

/// Hardware reading of the five entry words: masks, no validation.
fn hw_entry(w: &[u32; 5]) -> Option<Cached> {
    if w[0] & tlb::VALID_BIT == 0 {
        return None;
    }
    let log2 = (w[0] & 0x3F).min(63);
    let size = 1u64 << log2;
    let mask = !(size - 1);
    let v = (w[0] & 0xFFFF_F000) as u64 & mask;
    let p = ((w[1] & 0xFFFF_F000) as u64 | ((w[1] & 0xF) as u64) << 32) & mask;
    Some(Cached {
        vbase: v,
        size,
        pbase: p,
        perms: Permissions::from_bits((w[2] & 0x3F) as u8),
        global: w[4] & tlb::GLOBAL_BIT != 0,
        tag: w[4] & tlb::PID_MASK,
        stamp: 0,
    })
}

enum Config {
    Tlb {
        model: TlbModel,
        sequences: BTreeMap<u32, Vec<[u32; 5]>>,
    },
    PageTable {
        model: PageTableModel,
        tables: RawPageTables,
    },
}

pub struct SimulatedMmu {
    config: Config,
    mode: SimMode,
    cost: CostModel,
    memmap: SystemMemoryMap,
    spaces: BTreeMap<String, u32>,
    tlb: Vec<Cached>,
    /// Fixed-TLB static mode writes sequence entry `i` to slot `i`.
    slots: Vec<Option<Cached>>,
    current: Option<(Owner, u32)>,
    clock: u64,
}

pub fn load(artifact: &[u8], layout: &MemoryLayout, mode: SimMode, cost: CostModel) -> Result<SimulatedMmu, SimError> {
    let config = match (&layout.mmu, artifact.get(..4)) {
        (MmuModel::TlbFixed(t), Some(b"MLTC")) => Config::Tlb {
            model: t.clone(),
            sequences: tlb::read_mltc(artifact)?.into_iter().map(|(id, w)| (id as u32, w)).collect(),
        },
        (MmuModel::PageTable(p), Some(b"MLPT")) => Config::PageTable {
            model: p.clone(),
            tables: pagetable::read_mlpt(artifact)?,
        },
        (_, Some(b"MLTC")) | (_, Some(b"MLPT")) => return Err(SimError::BackendMismatch),
        (_, Some(_)) => return Err(FormatError::Magic.into()),
        (_, None) => return Err(FormatError::Truncated(artifact.len()).into()),
    };
    let slots = match &config {
        Config::Tlb { model, .. } => vec![None; model.entry_count as usize],
        Config::PageTable { .. } => Vec::new(),
    };
    Ok(SimulatedMmu {
        config,
        mode,
        cost,
        memmap: layout.memmap.clone(),
        spaces: layout
            .partitions()
            .into_iter()
            .enumerate()
            .map(|(i, p)| (p, i as u32 + 1))
            .collect(),
        tlb: Vec::new(),
        slots,
        current: None,
        clock: 0,
    })
}

impl SimulatedMmu {
    pub fn mode(&self) -> SimMode {
        self.mode
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn current_space(&self) -> Option<&Owner> {
        self.current.as_ref().map(|c| &c.0)
    }

    pub fn capacity(&self) -> usize {
        match &self.config {
            Config::Tlb { model, .. } => model.entry_count as usize,
            Config::PageTable { model, .. } => model.tlb_capacity as usize,
        }
    }

    /// Valid cached translations (slots plus LRU contents).
    pub fn tlb_occupancy(&self) -> usize {
        self.slots.iter().flatten().count() + self.tlb.len()
    }

    /// Number of levels a walk may visit, or zero for fixed-TLB models.
    pub fn walk_depth(&self) -> u32 {
        match &self.config {
            Config::Tlb { .. } => 0,
            Config::PageTable { model, .. } => model.geometry.levels,
        }
    }

    fn finish(&self, mut c: CostBreakdown) -> CostBreakdown {
        c.total += c.tlb_lookups * self.cost.tlb_hit_cost + c.tlb_writes * self.cost.tlb_write_cost + c.interrupts * self.cost.interrupt_overhead;
        c
    }

    pub fn switch_space(&mut self, target: &Owner) -> Result<CostBreakdown, SimError> {
        let tag = *self
            .spaces
            .get(target.name())
            .filter(|_| !target.is_kernel())
            .ok_or_else(|| SimError::UnknownSpace(target.name().to_string()))?;
        let mut cost = CostBreakdown::default();
        match (&self.config, self.mode) {
            (Config::Tlb { sequences, .. }, SimMode::Static) => {
                let seq = sequences.get(&tag).cloned().unwrap_or_default();
                for s in self.slots.iter_mut() {
                    if s.is_some_and(|c| !c.global) {
                        *s = None;
                    }
                }
                for (i, w) in seq.iter().enumerate() {
                    if let Some(slot) = self.slots.get_mut(i) {
                        *slot = hw_entry(w);
                    }
                    cost.tlb_writes += 1;
                }
                self.current = Some((target.clone(), tag));
            }
            (Config::Tlb { .. }, SimMode::NaiveRefill) => {
                self.tlb.clear();
                self.current = Some((target.clone(), tag));
            }
            (Config::PageTable { tables, .. }, mode) => {
                if mode == SimMode::NaiveRefill {
                    self.tlb.clear();
                } else if tables.flush_on_switch {
                    self.tlb.retain(|c| c.global);
                }
                self.current = Some((target.clone(), tag));
                if mode == SimMode::Static {
                    let warm = tables
                        .spaces
                        .iter()
                        .find(|s| s.asid as u32 == tag)
                        .map(|s| s.warmup.clone())
                        .unwrap_or_default();
                    for v in warm {
                        cost.tlb_lookups += 1;
                        let mut c = CostBreakdown::default();
                        // Warm-up loads translations regardless of the
                        // outcome of the permission check.
                        let _ = self.lookup_or_walk(v, tag, &mut c);
                        cost += c;
                    }
                }
            }
        }
        Ok(self.finish(cost))
    }

    pub fn access(&mut self, req: &AccessRequest) -> Result<AccessOutcome, SimError> {
        let (space, tag) = self.current.clone().ok_or(SimError::NoCurrentSpace)?;
        if space != req.space {
            return Err(SimError::WrongSpace(req.space.name().to_string()));
        }
        if ![1, 2, 4, 8].contains(&req.size) {
            return Err(SimError::BadSize(req.size));
        }
        let last = req.vaddr.checked_add(req.size as u64 - 1).ok_or(SimError::Wrap(req.vaddr))?;
        let mut cost = CostBreakdown::default();
        let first = self.translate(req.vaddr, tag, req, &mut cost);
        let result = match first {
            Ok((paddr, entry_end)) if (last as u128) < entry_end => AccessResult::Translated { paddr },
            Ok((paddr, _)) => match self.translate(last, tag, req, &mut cost) {
                Ok(_) => AccessResult::Translated { paddr },
                Err(kind) => AccessResult::Fault { kind, addr: last },
            },
            Err(kind) => AccessResult::Fault { kind, addr: req.vaddr },
        };
        Ok(AccessOutcome {
            result,
            cost: self.finish(cost),
        })
    }

    /// Translates one address and applies the permission check. Returns the
    /// physical address and the end of the covering translation.
    fn translate(&mut self, vaddr: Addr, tag: u32, req: &AccessRequest, cost: &mut CostBreakdown) -> Result<(Addr, u128), FaultKind> {
        cost.tlb_lookups += 1;
        let hit = match (&self.config, self.mode) {
            (Config::Tlb { .. }, SimMode::Static) => self.slot_lookup(vaddr, tag)?,
            (Config::Tlb { .. }, SimMode::NaiveRefill) => match self.lru_lookup(vaddr, tag)? {
                Some(c) => c,
                None => {
                    cost.interrupts += 1;
                    let c = self.refill(vaddr, tag).ok_or(FaultKind::NoMapping)?;
                    cost.tlb_writes += 1;
                    c
                }
            },
            (Config::PageTable { .. }, _) => self.lookup_or_walk(vaddr, tag, cost)?,
        };
        if !hit.perms.allows(req.op, req.privilege) {
            return Err(if req.privilege == Privilege::User && !hit.perms.any_user() {
                FaultKind::PrivilegeViolation
            } else {
                FaultKind::PermissionViolation
            });
        }
        Ok((hit.pbase + (vaddr - hit.vbase), hit.vbase as u128 + hit.size as u128))
    }

    fn slot_lookup(&self, vaddr: Addr, tag: u32) -> Result<Cached, FaultKind> {
        let mut hits = self.slots.iter().flatten().filter(|c| c.matches(vaddr, tag));
        match (hits.next(), hits.next()) {
            (Some(c), None) => Ok(*c),
            (Some(_), Some(_)) => Err(FaultKind::MultiHit),
            (None, _) => Err(FaultKind::NoMapping),
        }
    }

    fn lru_lookup(&mut self, vaddr: Addr, tag: u32) -> Result<Option<Cached>, FaultKind> {
        let idx: Vec<usize> = (0..self.tlb.len()).filter(|&i| self.tlb[i].matches(vaddr, tag)).collect();
        match idx.as_slice() {
            [] => Ok(None),
            [i] => {
                self.clock += 1;
                self.tlb[*i].stamp = self.clock;
                Ok(Some(self.tlb[*i]))
            }
            _ => Err(FaultKind::MultiHit),
        }
    }

    fn insert(&mut self, mut c: Cached) {
        self.clock += 1;
        c.stamp = self.clock;
        if self.tlb.len() >= self.capacity() {
            let victim = (0..self.tlb.len()).min_by_key(|&i| self.tlb[i].stamp).expect("tlb non-empty");
            self.tlb.swap_remove(victim);
        }
        self.tlb.push(c);
    }

    /// Software refill handler: finds the entry in the current sequence.
    fn refill(&mut self, vaddr: Addr, tag: u32) -> Option<Cached> {
        let Config::Tlb { sequences, .. } = &self.config else { return None };
        let found = sequences
            .get(&tag)?
            .iter()
            .filter_map(hw_entry)
            .find(|c| c.matches(vaddr, tag))?;
        self.insert(found);
        Some(found)
    }

    fn lookup_or_walk(&mut self, vaddr: Addr, tag: u32, cost: &mut CostBreakdown) -> Result<Cached, FaultKind> {
        if let Some(c) = self.lru_lookup(vaddr, tag)? {
            return Ok(c);
        }
        let c = self.walk(vaddr, tag, cost)?;
        self.insert(c);
        Ok(c)
    }

    fn read_phys(&self, tables: &RawPageTables, addr: Addr) -> u64 {
        tables
            .spaces
            .iter()
            .find_map(|s| {
                let off = addr.checked_sub(s.base_physical)? as usize;
                let b = s.bytes.get(off..off.checked_add(8)?)?;
                Some(u64::from_le_bytes(b.try_into().unwrap()))
            })
            .unwrap_or(0)
    }

    fn walk(&self, vaddr: Addr, tag: u32, cost: &mut CostBreakdown) -> Result<Cached, FaultKind> {
        let Config::PageTable { tables, model } = &self.config else {
            return Err(FaultKind::NoMapping);
        };
        let g = &model.geometry;
        if (vaddr as u128) >> g.va_bits() != 0 {
            return Err(FaultKind::NoMapping);
        }
        let space = tables.spaces.iter().find(|s| s.asid as u32 == tag).ok_or(FaultKind::NoMapping)?;
        let mut table = space.base_physical.wrapping_add(space.root_offset);
        for level in 1..=g.levels {
            let at = table.wrapping_add(8 * g.index_at(level, vaddr) as u64);
            cost.walk_memory_accesses += 1;
            cost.total += self.cost.walk_cost(self.memmap.region_at(at).map(|r| r.class));
            let d = self.read_phys(tables, at);
            if d & pagetable::DESC_VALID == 0 {
                return Err(FaultKind::NoMapping);
            }
            let out = d & pagetable::ADDR_MASK;
            if d & pagetable::DESC_TABLE != 0 {
                if level == g.levels {
                    return Err(FaultKind::NoMapping);
                }
                table = out;
                continue;
            }
            if !g.leaf_allowed(level) {
                return Err(FaultKind::NoMapping);
            }
            let size = g.leaf_size(level);
            return Ok(Cached {
                vbase: vaddr & !(size - 1),
                size,
                pbase: out & !(size - 1),
                perms: Permissions::from_bits(((d >> pagetable::PERM_SHIFT) & 0x3F) as u8),
                global: d & pagetable::DESC_GLOBAL != 0,
                tag,
                stamp: 0,
            });
        }
        Err(FaultKind::NoMapping)
    }
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceRecord {
    Switch(Owner),
    Access(AccessRequest),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

/// Parses `<space> <R|W|X> <U|K> <hex vaddr> <size>` and `SWITCH <space>`
/// lines. Blank lines and `#` comments are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| TraceError { line: i + 1, message: m };
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["SWITCH", space] => out.push(TraceRecord::Switch(Owner::from_name(space))),
            [space, op, privilege, addr, size] => {
                let op = AccessOp::from_letter(op).ok_or_else(|| err(format!("bad operation `{op}`")))?;
                let privilege = Privilege::from_letter(privilege).ok_or_else(|| err(format!("bad privilege `{privilege}`")))?;
                let hex = addr.strip_prefix("0x").or_else(|| addr.strip_prefix("0X")).unwrap_or(addr);
                let vaddr = u64::from_str_radix(hex, 16).map_err(|_| err(format!("bad address `{addr}`")))?;
                let size: u32 = size.parse().map_err(|_| err(format!("bad size `{size}`")))?;
                if ![1, 2, 4, 8].contains(&size) {
                    return Err(err(format!("size {size} is not 1, 2, 4 or 8")));
                }
                out.push(TraceRecord::Access(AccessRequest {
                    space: Owner::from_name(space),
                    vaddr,
                    size,
                    op,
                    privilege,
                }));
            }
            _ => return Err(err(format!("unrecognized record `{line}`"))),
        }
    }
    Ok(out)
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        match r {
            TraceRecord::Switch(o) => s.push_str(&format!("SWITCH {o}\n")),
            TraceRecord::Access(a) => s.push_str(&format!(
                "{} {} {} {:#x} {}\n",
                a.space,
                a.op.letter(),
                a.privilege.letter(),
                a.vaddr,
                a.size
            )),
        }
    }
    s
}

/// Costs between one switch and the next.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Window {
    pub space: String,
    pub switch: CostBreakdown,
    pub accesses: CostBreakdown,
    pub access_count: u64,
    pub faults: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplayStats {
    pub total: CostBreakdown,
    pub windows: Vec<Window>,
}

/// Replays a trace. An access naming a space other than the current one
/// switches implicitly.
pub fn replay(mmu: &mut SimulatedMmu, records: &[TraceRecord]) -> Result<ReplayStats, SimError> {
    let mut stats = ReplayStats::default();
    let switch_to = |mmu: &mut SimulatedMmu, stats: &mut ReplayStats, space: &Owner| -> Result<(), SimError> {
        let c = mmu.switch_space(space)?;
        stats.total += c;
        stats.windows.push(Window {
            space: space.name().to_string(),
            switch: c,
            ..Window::default()
        });
        Ok(())
    };
    for r in records {
        match r {
            TraceRecord::Switch(space) => switch_to(mmu, &mut stats, space)?,
            TraceRecord::Access(req) => {
                if mmu.current_space() != Some(&req.space) {
                    switch_to(mmu, &mut stats, &req.space)?;
                }
                let out = mmu.access(req)?;
                stats.total += out.cost;
                let w = stats.windows.last_mut().expect("a window is open after a switch");
                w.accesses += out.cost;
                w.access_count += 1;
                if let AccessResult::Fault { kind, .. } = out.result {
                    *w.faults.entry(kind.name().to_string()).or_default() += 1;
                }
            }
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Comparison {
    pub static_total: u64,
    pub naive_total: u64,
    pub static_cost: CostBreakdown,
    pub naive_cost: CostBreakdown,
}

/// Replays the trace on two fresh simulators, one per mode.
pub fn compare_static_vs_naive(
    artifact: &[u8],
    layout: &MemoryLayout,
    cost: CostModel,
    trace: &[TraceRecord],
) -> Result<Comparison, SimError> {
    let mut s = load(artifact, layout, SimMode::Static, cost)?;
    let mut n = load(artifact, layout, SimMode::NaiveRefill, cost)?;
    let st = replay(&mut s, trace)?.total;
    let nt = replay(&mut n, trace)?.total;
    Ok(Comparison {
        static_total: st.total,
        naive_total: nt.total,
        static_cost: st,
        naive_cost: nt,
    })
}
