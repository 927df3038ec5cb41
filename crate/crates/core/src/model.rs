//! Domain vocabulary: memory blocks, the system memory map and MMU models.

use std::fmt;

/// Physical or virtual address in bytes.
pub type Addr = u64;

/// Six independent access bits. Bit order matches every binary format in
/// this crate: UR, UW, UX, KR, KW, KX in bits 0..=5.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permissions {
    pub user_read: bool,
    pub user_write: bool,
    pub user_exec: bool,
    pub kernel_read: bool,
    pub kernel_write: bool,
    pub kernel_exec: bool,
}

const PERM_NAMES: [&str; 6] = ["UR", "UW", "UX", "KR", "KW", "KX"];

impl Permissions {
    pub const NONE: Permissions = Permissions::from_bits(0);

    pub const fn from_bits(bits: u8) -> Self {
        Permissions {
            user_read: bits & 0x01 != 0,
            user_write: bits & 0x02 != 0,
            user_exec: bits & 0x04 != 0,
            kernel_read: bits & 0x08 != 0,
            kernel_write: bits & 0x10 != 0,
            kernel_exec: bits & 0x20 != 0,
        }
    }

    pub const fn bits(self) -> u8 {
        (self.user_read as u8)
            | (self.user_write as u8) << 1
            | (self.user_exec as u8) << 2
            | (self.kernel_read as u8) << 3
            | (self.kernel_write as u8) << 4
            | (self.kernel_exec as u8) << 5
    }

    pub fn is_empty(self) -> bool {
        self.bits() == 0
    }

    pub fn any_user(self) -> bool {
        self.bits() & 0x07 != 0
    }

    /// User-accessible memory must also be kernel-visible, and something must
    /// be granted at all.
    pub fn is_well_formed(self) -> bool {
        let b = self.bits();
        b != 0 && (b & 0x07) & !(b >> 3) == 0
    }

    pub fn contains(self, other: Permissions) -> bool {
        self.bits() & other.bits() == other.bits()
    }

    pub fn allows(self, op: AccessOp, privilege: Privilege) -> bool {
        match (privilege, op) {
            (Privilege::User, AccessOp::Read) => self.user_read,
            (Privilege::User, AccessOp::Write) => self.user_write,
            (Privilege::User, AccessOp::Execute) => self.user_exec,
            (Privilege::Kernel, AccessOp::Read) => self.kernel_read,
            (Privilege::Kernel, AccessOp::Write) => self.kernel_write,
            (Privilege::Kernel, AccessOp::Execute) => self.kernel_exec,
        }
    }

    pub fn write_and_exec(self) -> bool {
        (self.user_write && self.user_exec) || (self.kernel_write && self.kernel_exec)
    }

    /// Parses `"KR|KX"`-style flag lists. `|`, `,`, `+` and whitespace all
    /// separate flags.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut bits = 0u8;
        for flag in text
            .split(|c: char| c == '|' || c == ',' || c == '+' || c.is_whitespace())
            .filter(|s| !s.is_empty())
        {
            let upper = flag.to_ascii_uppercase();
            match PERM_NAMES.iter().position(|n| *n == upper) {
                Some(i) => bits |= 1 << i,
                None => return Err(format!("unknown permission flag `{flag}`")),
            }
        }
        Ok(Permissions::from_bits(bits))
    }
}

impl fmt::Display for Permissions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits = self.bits();
        let names: Vec<&str> = (0..6)
            .filter(|i| bits & (1 << i) != 0)
            .map(|i| PERM_NAMES[i])
            .collect();
        f.write_str(&names.join("|"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessOp {
    Read,
    Write,
    Execute,
}

impl AccessOp {
    pub const ALL: [AccessOp; 3] = [AccessOp::Read, AccessOp::Write, AccessOp::Execute];

    pub fn letter(self) -> char {
        match self {
            AccessOp::Read => 'R',
            AccessOp::Write => 'W',
            AccessOp::Execute => 'X',
        }
    }

    pub fn from_letter(s: &str) -> Option<Self> {
        match s {
            "R" => Some(AccessOp::Read),
            "W" => Some(AccessOp::Write),
            "X" => Some(AccessOp::Execute),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Privilege {
    User,
    Kernel,
}

impl Privilege {
    pub const ALL: [Privilege; 2] = [Privilege::Kernel, Privilege::User];

    pub fn letter(self) -> char {
        match self {
            Privilege::User => 'U',
            Privilege::Kernel => 'K',
        }
    }

    pub fn from_letter(s: &str) -> Option<Self> {
        match s {
            "U" => Some(Privilege::User),
            "K" => Some(Privilege::Kernel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CachePolicy {
    Normal,
    NormalCoherent,
    IO,
    WriteThrough,
    Uncached,
}

impl CachePolicy {
    pub const ALL: [CachePolicy; 5] = [
        CachePolicy::Normal,
        CachePolicy::NormalCoherent,
        CachePolicy::IO,
        CachePolicy::WriteThrough,
        CachePolicy::Uncached,
    ];

    /// Dense code used by the page descriptor format (3 bits).
    pub fn code(self) -> u8 {
        match self {
            CachePolicy::Normal => 0,
            CachePolicy::NormalCoherent => 1,
            CachePolicy::IO => 2,
            CachePolicy::WriteThrough => 3,
            CachePolicy::Uncached => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        CachePolicy::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CachePolicy::Normal => "normal",
            CachePolicy::NormalCoherent => "normal+coherent",
            CachePolicy::IO => "io",
            CachePolicy::WriteThrough => "write-through",
            CachePolicy::Uncached => "uncached",
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        match text.to_ascii_lowercase().as_str() {
            "normal" => Ok(CachePolicy::Normal),
            "normal+coherent" | "normal_coherent" | "coherent" => Ok(CachePolicy::NormalCoherent),
            "io" => Ok(CachePolicy::IO),
            "write-through" | "write_through" | "writethrough" => Ok(CachePolicy::WriteThrough),
            "uncached" => Ok(CachePolicy::Uncached),
            other => Err(format!("unknown cache policy `{other}`")),
        }
    }
}

impl fmt::Display for CachePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Entity that owns a memory block. The kernel sorts before every partition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Owner {
    Kernel,
    Partition(String),
}

impl Owner {
    pub const KERNEL_NAME: &'static str = "kernel";

    pub fn partition(name: impl Into<String>) -> Self {
        Owner::Partition(name.into())
    }

    pub fn is_kernel(&self) -> bool {
        matches!(self, Owner::Kernel)
    }

    pub fn name(&self) -> &str {
        match self {
            Owner::Kernel => Owner::KERNEL_NAME,
            Owner::Partition(name) => name,
        }
    }

    pub fn from_name(name: &str) -> Self {
        if name == Owner::KERNEL_NAME {
            Owner::Kernel
        } else {
            Owner::Partition(name.to_string())
        }
    }
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Partition names travel through the line-oriented agent protocol and trace
/// files, so they are restricted to a whitespace-free identifier alphabet.
pub fn is_valid_partition_name(name: &str) -> bool {
    !name.is_empty()
        && name != Owner::KERNEL_NAME
        && !name.eq_ignore_ascii_case("SWITCH")
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryBlockRequirement {
    pub owner: Owner,
    pub logical_name: String,
    pub virtual_address: Option<Addr>,
    pub physical_address: Option<Addr>,
    pub size: u64,
    pub permissions: Permissions,
    pub cache_policy: CachePolicy,
    pub alignment: Option<u64>,
    pub physically_contiguous: bool,
    pub shared_with: Vec<Owner>,
}

impl MemoryBlockRequirement {
    /// Convenience constructor for a block with no fixed addresses.
    pub fn new(
        owner: Owner,
        logical_name: impl Into<String>,
        size: u64,
        permissions: Permissions,
        cache_policy: CachePolicy,
    ) -> Self {
        MemoryBlockRequirement {
            owner,
            logical_name: logical_name.into(),
            virtual_address: None,
            physical_address: None,
            size,
            permissions,
            cache_policy,
            alignment: None,
            physically_contiguous: false,
            shared_with: Vec::new(),
        }
    }

    pub fn id(&self) -> BlockId {
        BlockId {
            owner: self.owner.clone(),
            name: self.logical_name.clone(),
        }
    }
}

/// Project-wide identity of a block: `(owner, logical name)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId {
    pub owner: Owner,
    pub name: String,
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.owner, self.name)
    }
}

/// The requirement list of an integration project together with the
/// declared partitions, in declaration order. A partition's position in
/// `partitions` fixes its address-space identifier (index + 1).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RequirementSet {
    pub partitions: Vec<String>,
    pub blocks: Vec<MemoryBlockRequirement>,
}

impl RequirementSet {
    pub fn partition_owners(&self) -> impl Iterator<Item = Owner> + '_ {
        self.partitions.iter().map(|p| Owner::Partition(p.clone()))
    }

    pub fn find(&self, id: &BlockId) -> Option<&MemoryBlockRequirement> {
        self.blocks
            .iter()
            .find(|b| b.owner == id.owner && b.logical_name == id.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionClass {
    ExternalRam,
    InternalRam,
    Device,
}

impl RegionClass {
    pub fn name(self) -> &'static str {
        match self {
            RegionClass::ExternalRam => "external_ram",
            RegionClass::InternalRam => "internal_ram",
            RegionClass::Device => "device",
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        match text.to_ascii_lowercase().as_str() {
            "external_ram" | "ram" => Ok(RegionClass::ExternalRam),
            "internal_ram" | "sram" => Ok(RegionClass::InternalRam),
            "device" | "io" => Ok(RegionClass::Device),
            other => Err(format!("unknown region class `{other}`")),
        }
    }

    pub fn is_ram(self) -> bool {
        !matches!(self, RegionClass::Device)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhysicalRegion {
    pub base: Addr,
    pub size: u64,
    pub class: RegionClass,
    pub access_cost: u32,
}

impl PhysicalRegion {
    pub fn end(&self) -> u128 {
        self.base as u128 + self.size as u128
    }

    pub fn contains_range(&self, base: Addr, size: u64) -> bool {
        base >= self.base && base as u128 + size as u128 <= self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemMemoryMap {
    pub regions: Vec<PhysicalRegion>,
    pub min_page_size: u64,
}

impl SystemMemoryMap {
    pub fn region_containing(&self, base: Addr, size: u64) -> Option<&PhysicalRegion> {
        self.regions.iter().find(|r| r.contains_range(base, size))
    }

    pub fn region_at(&self, addr: Addr) -> Option<&PhysicalRegion> {
        self.regions.iter().find(|r| r.contains_range(addr, 1))
    }

    /// Maximal runs of address-adjacent regions sharing one class, as
    /// `(base, end, class)` sorted by base.
    pub fn class_runs(&self) -> Vec<(Addr, u128, RegionClass)> {
        let mut regions: Vec<&PhysicalRegion> = self.regions.iter().collect();
        regions.sort_by_key(|r| r.base);
        let mut runs: Vec<(Addr, u128, RegionClass)> = Vec::new();
        for r in regions {
            match runs.last_mut() {
                Some(last) if last.2 == r.class && last.1 == r.base as u128 => last.1 = r.end(),
                _ => runs.push((r.base, r.end(), r.class)),
            }
        }
        runs
    }

    /// True when `[base, base+size)` lies inside one region, or, when
    /// `allow_union`, inside one run of adjacent same-class regions.
    pub fn covers(&self, base: Addr, size: u64, allow_union: bool) -> bool {
        if self.region_containing(base, size).is_some() {
            return true;
        }
        allow_union
            && self
                .class_runs()
                .iter()
                .any(|&(b, e, _)| base >= b && base as u128 + size as u128 <= e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Associativity {
    FullyAssociative,
    SetAssociative {
        ways: u32,
        sets: u32,
        index_hook: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlbModel {
    pub entry_count: u32,
    pub min_entry_size: u64,
    pub max_entry_size: u64,
    pub associativity: Associativity,
    pub pid_bits: u32,
}

/// Page-table tree shape. Levels are numbered from 1 (root) to `levels`
/// (the level whose leaves map `page_size` pages).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageTableGeometry {
    pub page_size: u64,
    pub levels: u32,
    pub index_bits_per_level: Vec<u32>,
    pub large_page_levels: Vec<u32>,
}

impl PageTableGeometry {
    /// 4 KiB pages, 4 levels of 9 index bits, 1 GiB and 2 MiB leaves allowed.
    pub fn default_4k() -> Self {
        PageTableGeometry {
            page_size: 4096,
            levels: 4,
            index_bits_per_level: vec![9, 9, 9, 9],
            large_page_levels: vec![2, 3],
        }
    }

    pub fn page_shift(&self) -> u32 {
        self.page_size.trailing_zeros()
    }

    pub fn va_bits(&self) -> u32 {
        self.page_shift() + self.index_bits_per_level.iter().sum::<u32>()
    }

    /// Bit position of the lowest index bit used at `level`.
    pub fn level_shift(&self, level: u32) -> u32 {
        let below: u32 = self.index_bits_per_level[level as usize..].iter().sum();
        self.page_shift() + below
    }

    /// Bytes mapped by one leaf at `level`.
    pub fn leaf_size(&self, level: u32) -> u64 {
        1u64 << self.level_shift(level)
    }

    pub fn entries_at(&self, level: u32) -> usize {
        1usize << self.index_bits_per_level[level as usize - 1]
    }

    /// Table size in bytes at `level` (8-byte descriptors).
    pub fn table_bytes(&self, level: u32) -> u64 {
        8 * self.entries_at(level) as u64
    }

    /// Tables are placed on `max(table size, 4 KiB)` boundaries because
    /// descriptor output addresses carry bits 47..12 only.
    pub fn table_align(&self, level: u32) -> u64 {
        self.table_bytes(level).max(4096)
    }

    pub fn leaf_allowed(&self, level: u32) -> bool {
        level == self.levels || self.large_page_levels.contains(&level)
    }

    /// Levels that may hold leaves, largest mapping first.
    pub fn leaf_levels(&self) -> Vec<u32> {
        (1..=self.levels).filter(|&l| self.leaf_allowed(l)).collect()
    }

    pub fn index_at(&self, level: u32, vaddr: Addr) -> usize {
        let bits = self.index_bits_per_level[level as usize - 1];
        ((vaddr >> self.level_shift(level)) & ((1u64 << bits) - 1)) as usize
    }

    pub fn check(&self) -> Result<(), String> {
        if !self.page_size.is_power_of_two() || self.page_size < 4096 {
            return Err(format!(
                "page_size {:#x} must be a power of two of at least 4 KiB",
                self.page_size
            ));
        }
        if !(1..=5).contains(&self.levels) {
            return Err(format!("levels {} outside 1..=5", self.levels));
        }
        if self.index_bits_per_level.len() != self.levels as usize {
            return Err(format!(
                "index_bits_per_level has {} entries for {} levels",
                self.index_bits_per_level.len(),
                self.levels
            ));
        }
        if self.index_bits_per_level.iter().any(|&b| b == 0 || b > 16) {
            return Err("index bits per level must be within 1..=16".into());
        }
        if self.va_bits() > 48 {
            return Err(format!(
                "virtual address width {} exceeds the 48-bit descriptor format",
                self.va_bits()
            ));
        }
        if let Some(l) = self
            .large_page_levels
            .iter()
            .find(|&&l| l == 0 || l >= self.levels)
        {
            return Err(format!(
                "large page level {l} must be a table level in 1..{}",
                self.levels
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageTableModel {
    pub geometry: PageTableGeometry,
    pub tlb_capacity: u32,
    pub asid_bits: u32,
    pub has_global_bit: bool,
    /// When set, layout planning rejects plans whose page count exceeds the
    /// TLB capacity.
    pub zero_miss: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MmuModel {
    TlbFixed(TlbModel),
    PageTable(PageTableModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmuKind {
    TlbFixed,
    PageTable,
}

impl MmuModel {
    pub fn kind(&self) -> MmuKind {
        match self {
            MmuModel::TlbFixed(_) => MmuKind::TlbFixed,
            MmuModel::PageTable(_) => MmuKind::PageTable,
        }
    }

    /// Width of virtual addresses the backend can express.
    pub fn va_bits(&self) -> u32 {
        match self {
            MmuModel::TlbFixed(_) => 32,
            MmuModel::PageTable(pt) => pt.geometry.va_bits(),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        match self {
            MmuModel::TlbFixed(t) => {
                if t.entry_count == 0 {
                    return Err("entry_count must be positive".into());
                }
                if !t.min_entry_size.is_power_of_two() || !t.max_entry_size.is_power_of_two() {
                    return Err("entry sizes must be powers of two".into());
                }
                if t.min_entry_size > t.max_entry_size {
                    return Err("min_entry_size exceeds max_entry_size".into());
                }
                if t.min_entry_size < 4096 {
                    return Err("min_entry_size below 4 KiB cannot be encoded".into());
                }
                if t.pid_bits == 0 || t.pid_bits > 14 {
                    return Err("pid_bits must be within 1..=14".into());
                }
                if let Associativity::SetAssociative { ways, sets, .. } = &t.associativity {
                    if *ways == 0 || *sets == 0 {
                        return Err("set-associative ways and sets must be positive".into());
                    }
                }
                Ok(())
            }
            MmuModel::PageTable(p) => {
                p.geometry.check()?;
                if p.tlb_capacity == 0 {
                    return Err("tlb_capacity must be positive".into());
                }
                if p.asid_bits == 0 || p.asid_bits > 16 {
                    return Err("asid_bits must be within 1..=16".into());
                }
                Ok(())
            }
        }
    }
}

/// Partition address spaces in which a block owned by `owner` and shared
/// with `shared_with` is mapped. Kernel blocks are mapped everywhere.
pub fn visible_spaces(owner: &Owner, shared_with: &[Owner], partitions: &[String]) -> Vec<Owner> {
    match owner {
        Owner::Kernel => partitions.iter().map(|p| Owner::Partition(p.clone())).collect(),
        Owner::Partition(name) => partitions
            .iter()
            .filter(|p| *p == name || shared_with.iter().any(|s| s.name() == p.as_str()))
            .map(|p| Owner::Partition(p.clone()))
            .collect(),
    }
}

/// Physical overlap between blocks of two owners is allowed only when each
/// block names the other's owner in `shared_with`.
pub fn sharing_authorized(a_owner: &Owner, a_shared: &[Owner], b_owner: &Owner, b_shared: &[Owner]) -> bool {
    a_owner != b_owner && a_shared.contains(b_owner) && b_shared.contains(a_owner)
}

/// Smallest mapping granule the backend can express on this platform.
pub fn granule(map: &SystemMemoryMap, mmu: &MmuModel) -> u64 {
    let backend = match mmu {
        MmuModel::TlbFixed(t) => t.min_entry_size,
        MmuModel::PageTable(p) => p.geometry.page_size,
    };
    map.min_page_size.max(backend)
}

pub(crate) fn ranges_overlap(a: Addr, a_size: u64, b: Addr, b_size: u64) -> bool {
    (a as u128) < b as u128 + b_size as u128 && (b as u128) < a as u128 + a_size as u128
}

pub(crate) fn align_up(value: u128, align: u64) -> u128 {
    let a = align as u128;
    value.div_ceil(a) * a
}

/// Largest power of two dividing `addr`; `u64::MAX` stands in for 2^64 at 0.
pub(crate) fn low_bit(addr: Addr) -> u64 {
    if addr == 0 {
        u64::MAX
    } else {
        1u64 << addr.trailing_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permission_bits_round_trip() {
        for bits in 0..64u8 {
            assert_eq!(Permissions::from_bits(bits).bits(), bits);
        }
        let p = Permissions::parse("KR|KX").unwrap();
        assert_eq!(p.bits(), 0x28);
        assert_eq!(p.to_string(), "KR|KX");
        assert_eq!(Permissions::parse("ur, kr + kw").unwrap().bits(), 0x19);
        assert!(Permissions::parse("RX").is_err());
    }

    #[test]
    fn user_bits_require_kernel_bits() {
        assert!(Permissions::parse("UR|KR").unwrap().is_well_formed());
        assert!(!Permissions::parse("UR").unwrap().is_well_formed());
        assert!(!Permissions::NONE.is_well_formed());
        assert!(!Permissions::parse("UW|KR").unwrap().is_well_formed());
    }

    #[test]
    fn default_geometry_shape() {
        let g = PageTableGeometry::default_4k();
        assert!(g.check().is_ok());
        assert_eq!(g.va_bits(), 48);
        assert_eq!(g.leaf_size(4), 4096);
        assert_eq!(g.leaf_size(3), 2 << 20);
        assert_eq!(g.leaf_size(2), 1 << 30);
        assert_eq!(g.leaf_levels(), vec![2, 3, 4]);
        assert_eq!(g.index_at(1, 0x0000_8000_0000_0000), 256);
    }

    #[test]
    fn geometry_rejects_deep_trees() {
        let g = PageTableGeometry {
            page_size: 4096,
            levels: 6,
            index_bits_per_level: vec![6; 6],
            large_page_levels: vec![],
        };
        assert!(g.check().is_err());
    }

    #[test]
    fn class_runs_merge_adjacent_regions() {
        let map = SystemMemoryMap {
            regions: vec![
                PhysicalRegion { base: 0x1_0000, size: 0x1_0000, class: RegionClass::ExternalRam, access_cost: 1 },
                PhysicalRegion { base: 0x0, size: 0x1_0000, class: RegionClass::ExternalRam, access_cost: 1 },
                PhysicalRegion { base: 0x2_0000, size: 0x1000, class: RegionClass::Device, access_cost: 1 },
            ],
            min_page_size: 4096,
        };
        assert_eq!(map.class_runs().len(), 2);
        assert!(map.covers(0x8000, 0x1_0000, true));
        assert!(!map.covers(0x8000, 0x1_0000, false));
    }
}
