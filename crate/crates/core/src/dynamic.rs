//! Dynamic verification: a positive/negative access matrix derived from the
//! layout, executed through a tool agent.
//!
//! Agents speak a line protocol:
//!
//! ```text
//! SWITCH <space>                                  -> OK
//! ACCESS <R|W|X> <U|K> <hex addr> <size> [hex data] -> OK <hex paddr> [hex data] | FAULT <kind> <hex addr>
//! SNAPSHOT                                        -> OK <id>
//! RESTORE <id>                                    -> OK
//! ```
//!
//! Any request may instead be answered with `ERR <message>`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use crate::layout::{AddressSpacePlan, MemoryLayout, ResolvedBlock};
use crate::model::*;
use crate::sim::{AccessRequest, AccessResult, SimError, SimulatedMmu};

/// Probe width for every case.
pub const PROBE_SIZE: u32 = 4;
/// Blocks with more pages than this are probed on a sample of pages.
const PAGE_PROBE_LIMIT: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Expectation {
    MustSucceed,
    MustFault,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Case {
    pub request: AccessRequest,
    pub expectation: Expectation,
    /// Block id; `foreign <id>` for another space's block; `outside` or
    /// `unmapped` for probes beyond every block.
    pub provenance: String,
    pub expected_paddr: Option<Addr>,
    /// Writes are bracketed by a snapshot and a restore.
    pub restore: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessMatrix {
    pub cases: Vec<Case>,
}

impl AccessMatrix {
    /// Splits the matrix into one sub-matrix per space, in order.
    pub fn per_space(&self) -> Vec<AccessMatrix> {
        let mut out: Vec<AccessMatrix> = Vec::new();
        for c in &self.cases {
            match out.last_mut() {
                Some(m) if m.cases[0].request.space == c.request.space => m.cases.push(c.clone()),
                _ => out.push(AccessMatrix { cases: vec![c.clone()] }),
            }
        }
        out
    }
}

fn probe_offsets(size: u64, page: u64) -> Vec<u64> {
    let last = size - PROBE_SIZE as u64;
    let mut offs = vec![0, (size / 2) & !(PROBE_SIZE as u64 - 1), last];
    let pages = size / page;
    let step = pages.div_ceil(PAGE_PROBE_LIMIT).max(1);
    let mut i = 0;
    while i < pages {
        offs.push(i * page);
        offs.push((i + 1) * page - PROBE_SIZE as u64);
        i += step;
    }
    offs.sort_unstable();
    offs.dedup();
    offs
}

fn push_all(cases: &mut Vec<Case>, space: &Owner, addr: Addr, provenance: &str, expect: impl Fn(AccessOp, Privilege) -> Option<Addr>) {
    for privilege in Privilege::ALL {
        for op in AccessOp::ALL {
            let paddr = expect(op, privilege);
            cases.push(Case {
                request: AccessRequest {
                    space: space.clone(),
                    vaddr: addr,
                    size: PROBE_SIZE,
                    op,
                    privilege,
                },
                expectation: if paddr.is_some() { Expectation::MustSucceed } else { Expectation::MustFault },
                provenance: provenance.to_string(),
                expected_paddr: paddr,
                restore: op == AccessOp::Write,
            });
        }
    }
}

fn plan_cases(plan: &AddressSpacePlan, foreign: &[&ResolvedBlock], gran: u64, va_limit: u128, cases: &mut Vec<Case>) {
    let inside = |a: u128| plan.blocks.iter().any(|b| (b.virtual_address as u128) <= a && a < b.virtual_end());
    for b in &plan.blocks {
        let id = b.id().to_string();
        for off in probe_offsets(b.size, gran) {
            push_all(cases, &plan.space, b.virtual_address + off, &id, |op, privilege| {
                b.permissions.allows(op, privilege).then_some(b.physical_address + off)
            });
        }
    }
    // Isolation: other spaces' blocks must not be reachable from this one.
    for b in foreign {
        let provenance = format!("foreign {}", b.id());
        for off in probe_offsets(b.size, gran) {
            let a = b.virtual_address + off;
            if !inside(a as u128) && !inside(a as u128 + PROBE_SIZE as u128 - 1) {
                push_all(cases, &plan.space, a, &provenance, |_, _| None);
            }
        }
    }
    let mut outside: Vec<u128> = Vec::new();
    for b in &plan.blocks {
        if let Some(before) = (b.virtual_address as u128).checked_sub(gran as u128) {
            outside.push(before);
        }
        outside.push(b.virtual_end());
    }
    outside.retain(|&a| a + PROBE_SIZE as u128 <= va_limit && !inside(a));
    outside.sort_unstable();
    outside.dedup();
    for a in outside {
        push_all(cases, &plan.space, a as Addr, "outside", |_, _| None);
    }
    // Lowest unmapped granule, so every plan has a probe into unmapped space.
    let mut a: u128 = 0;
    while a + gran as u128 <= va_limit {
        if !plan.blocks.iter().any(|b| (b.virtual_address as u128) < a + gran as u128 && a < b.virtual_end()) {
            push_all(cases, &plan.space, a as Addr, "unmapped", |_, _| None);
            break;
        }
        a = plan
            .blocks
            .iter()
            .filter(|b| (b.virtual_address as u128) < a + gran as u128 && a < b.virtual_end())
            .map(|b| align_up(b.virtual_end(), gran))
            .max()
            .unwrap_or(a + gran as u128);
    }
}

/// Cases for every partition address space, grouped by space.
pub fn build_matrix(layout: &MemoryLayout) -> AccessMatrix {
    let gran = granule(&layout.memmap, &layout.mmu);
    let va_limit = 1u128 << layout.mmu.va_bits();
    let mut cases = Vec::new();
    let all = layout.all_blocks();
    for plan in layout.partition_plans() {
        let foreign: Vec<&ResolvedBlock> = all
            .iter()
            .copied()
            .filter(|b| !plan.blocks.iter().any(|own| own.id() == b.id()))
            .collect();
        plan_cases(plan, &foreign, gran, va_limit, &mut cases);
    }
    AccessMatrix { cases }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentReply {
    Ok { paddr: Addr, data: Option<Vec<u8>> },
    Fault { kind: String, addr: Addr },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("agent channel: {0}")]
    Channel(String),
    #[error("agent protocol violation: {0}")]
    Protocol(String),
    #[error("agent refused: {0}")]
    Refused(String),
}

/// In-target component that performs accesses and recovers from faults.
pub trait ToolAgent {
    fn switch(&mut self, space: &Owner) -> Result<(), AgentError>;
    fn access(&mut self, op: AccessOp, privilege: Privilege, addr: Addr, size: u32, data: Option<&[u8]>) -> Result<AgentReply, AgentError>;
    fn snapshot(&mut self) -> Result<u64, AgentError>;
    fn restore(&mut self, id: u64) -> Result<(), AgentError>;
    /// Whether execute probes are safe on this target.
    fn supports_execute(&self) -> bool {
        true
    }
}

/// Agent backed by the simulator, with a sparse byte-addressed memory.
pub struct SimAgent {
    mmu: SimulatedMmu,
    memory: BTreeMap<Addr, u8>,
    snapshots: Vec<BTreeMap<Addr, u8>>,
}

impl SimAgent {
    pub fn new(mmu: SimulatedMmu) -> Self {
        SimAgent {
            mmu,
            memory: BTreeMap::new(),
            snapshots: Vec::new(),
        }
    }

    pub fn mmu(&self) -> &SimulatedMmu {
        &self.mmu
    }

    pub fn read_phys(&self, addr: Addr, len: usize) -> Vec<u8> {
        (0..len as u64).map(|i| self.memory.get(&(addr + i)).copied().unwrap_or(0)).collect()
    }

    pub fn write_phys(&mut self, addr: Addr, data: &[u8]) {
        for (i, &b) in data.iter().enumerate() {
            self.memory.insert(addr + i as u64, b);
        }
    }
}

fn sim_err(e: SimError) -> AgentError {
    AgentError::Refused(e.to_string())
}

impl ToolAgent for SimAgent {
    fn switch(&mut self, space: &Owner) -> Result<(), AgentError> {
        self.mmu.switch_space(space).map(|_| ()).map_err(sim_err)
    }

    fn access(&mut self, op: AccessOp, privilege: Privilege, addr: Addr, size: u32, data: Option<&[u8]>) -> Result<AgentReply, AgentError> {
        let space = self.mmu.current_space().cloned().ok_or_else(|| AgentError::Refused("no current space".into()))?;
        let out = self
            .mmu
            .access(&AccessRequest {
                space,
                vaddr: addr,
                size,
                op,
                privilege,
            })
            .map_err(sim_err)?;
        Ok(match out.result {
            AccessResult::Translated { paddr } => match (op, data) {
                (AccessOp::Write, Some(d)) => {
                    self.write_phys(paddr, d);
                    AgentReply::Ok { paddr, data: None }
                }
                (AccessOp::Read, _) => AgentReply::Ok {
                    paddr,
                    data: Some(self.read_phys(paddr, size as usize)),
                },
                _ => AgentReply::Ok { paddr, data: None },
            },
            AccessResult::Fault { kind, addr } => AgentReply::Fault {
                kind: kind.name().to_string(),
                addr,
            },
        })
    }

    fn snapshot(&mut self) -> Result<u64, AgentError> {
        self.snapshots.push(self.memory.clone());
        Ok(self.snapshots.len() as u64 - 1)
    }

    fn restore(&mut self, id: u64) -> Result<(), AgentError> {
        let snap = self
            .snapshots
            .get(id as usize)
            .ok_or_else(|| AgentError::Refused(format!("unknown snapshot {id}")))?;
        self.memory = snap.clone();
        self.snapshots.truncate(id as usize);
        Ok(())
    }
}

fn hex_bytes(data: &[u8]) -> String {
    data.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_hex_bytes(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok()).collect()
}

fn parse_hex_addr(s: &str) -> Option<Addr> {
    u64::from_str_radix(s.strip_prefix("0x").unwrap_or(s), 16).ok()
}

/// Client side of the wire protocol.
pub struct LineAgent<R, W> {
    reader: R,
    writer: W,
    execute: bool,
}

impl<R: BufRead, W: Write> LineAgent<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        LineAgent {
            reader,
            writer,
            execute: true,
        }
    }

    /// Marks execute probes as unsafe on this target.
    pub fn without_execute(mut self) -> Self {
        self.execute = false;
        self
    }

    fn call(&mut self, line: &str) -> Result<Vec<String>, AgentError> {
        let chan = |e: std::io::Error| AgentError::Channel(e.to_string());
        writeln!(self.writer, "{line}").map_err(chan)?;
        self.writer.flush().map_err(chan)?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply).map_err(chan)? == 0 {
            return Err(AgentError::Channel("connection closed".into()));
        }
        let fields: Vec<String> = reply.split_whitespace().map(str::to_string).collect();
        match fields.first().map(String::as_str) {
            Some("OK") | Some("FAULT") => Ok(fields),
            Some("ERR") => Err(AgentError::Refused(fields[1..].join(" "))),
            _ => Err(AgentError::Protocol(format!("unexpected reply `{}`", reply.trim_end()))),
        }
    }
}

impl<R: BufRead, W: Write> ToolAgent for LineAgent<R, W> {
    fn switch(&mut self, space: &Owner) -> Result<(), AgentError> {
        match self.call(&format!("SWITCH {space}"))?.as_slice() {
            [ok] if ok == "OK" => Ok(()),
            other => Err(AgentError::Protocol(format!("SWITCH answered {other:?}"))),
        }
    }

    fn access(&mut self, op: AccessOp, privilege: Privilege, addr: Addr, size: u32, data: Option<&[u8]>) -> Result<AgentReply, AgentError> {
        let mut line = format!("ACCESS {} {} {addr:#x} {size}", op.letter(), privilege.letter());
        if let Some(d) = data {
            line.push(' ');
            line.push_str(&hex_bytes(d));
        }
        let f = self.call(&line)?;
        let bad = || AgentError::Protocol(format!("ACCESS answered {f:?}"));
        match f.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["OK", paddr] => Ok(AgentReply::Ok {
                paddr: parse_hex_addr(paddr).ok_or_else(bad)?,
                data: None,
            }),
            ["OK", paddr, data] => Ok(AgentReply::Ok {
                paddr: parse_hex_addr(paddr).ok_or_else(bad)?,
                data: Some(parse_hex_bytes(data).ok_or_else(bad)?),
            }),
            ["FAULT", kind, addr] => Ok(AgentReply::Fault {
                kind: kind.to_string(),
                addr: parse_hex_addr(addr).ok_or_else(bad)?,
            }),
            _ => Err(bad()),
        }
    }

    fn snapshot(&mut self) -> Result<u64, AgentError> {
        match self.call("SNAPSHOT")?.as_slice() {
            [ok, id] if ok == "OK" => id.parse().map_err(|_| AgentError::Protocol(format!("bad snapshot id `{id}`"))),
            other => Err(AgentError::Protocol(format!("SNAPSHOT answered {other:?}"))),
        }
    }

    fn restore(&mut self, id: u64) -> Result<(), AgentError> {
        match self.call(&format!("RESTORE {id}"))?.as_slice() {
            [ok] if ok == "OK" => Ok(()),
            other => Err(AgentError::Protocol(format!("RESTORE answered {other:?}"))),
        }
    }

    fn supports_execute(&self) -> bool {
        self.execute
    }
}

/// Target side of the wire protocol: answers requests until end of input.
pub fn serve<A: ToolAgent, R: BufRead, W: Write>(agent: &mut A, reader: R, mut writer: W) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let reply = match f.as_slice() {
            [] => continue,
            ["SWITCH", space] => agent.switch(&Owner::from_name(space)).map(|_| "OK".to_string()),
            ["ACCESS", op, privilege, addr, size, rest @ ..] if rest.len() <= 1 => {
                match (
                    AccessOp::from_letter(op),
                    Privilege::from_letter(privilege),
                    parse_hex_addr(addr),
                    size.parse::<u32>(),
                    rest.first().map(|d| parse_hex_bytes(d)),
                ) {
                    (Some(op), Some(p), Some(a), Ok(s), data) if !matches!(data, Some(None)) => {
                        let data = data.flatten();
                        agent.access(op, p, a, s, data.as_deref()).map(|r| match r {
                            AgentReply::Ok { paddr, data: None } => format!("OK {paddr:#x}"),
                            AgentReply::Ok { paddr, data: Some(d) } => format!("OK {paddr:#x} {}", hex_bytes(&d)),
                            AgentReply::Fault { kind, addr } => format!("FAULT {kind} {addr:#x}"),
                        })
                    }
                    _ => Err(AgentError::Protocol(format!("malformed ACCESS `{line}`"))),
                }
            }
            ["SNAPSHOT"] => agent.snapshot().map(|id| format!("OK {id}")),
            ["RESTORE", id] => match id.parse() {
                Ok(id) => agent.restore(id).map(|_| "OK".to_string()),
                Err(_) => Err(AgentError::Protocol(format!("bad snapshot id `{id}`"))),
            },
            _ => Err(AgentError::Protocol(format!("unknown request `{line}`"))),
        };
        match reply {
            Ok(r) => writeln!(writer, "{r}")?,
            Err(e) => writeln!(writer, "ERR {e}")?,
        }
        writer.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DynamicFinding {
    pub space: String,
    pub op: char,
    pub privilege: char,
    pub vaddr: String,
    pub provenance: String,
    pub expected: String,
    pub observed: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DynamicReport {
    pub findings: Vec<DynamicFinding>,
    pub passed: bool,
    pub cases_run: usize,
    pub cases_skipped: usize,
    /// Set when the agent failed before every case ran.
    pub incomplete: Option<String>,
}

impl DynamicReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        for f in &self.findings {
            s.push_str(&format!(
                "MISMATCH {} {} {} {} [{}]: expected {}, observed {}\n",
                f.space, f.op, f.privilege, f.vaddr, f.provenance, f.expected, f.observed
            ));
        }
        if let Some(why) = &self.incomplete {
            s.push_str(&format!("INCOMPLETE: {why}\n"));
        }
        s.push_str(&format!(
            "{}: {} cases run, {} skipped, {} mismatch(es)\n",
            if self.passed { "PASSED" } else { "FAILED" },
            self.cases_run,
            self.cases_skipped,
            self.findings.len()
        ));
        s
    }
}

const WRITE_PATTERN: u8 = 0xA5;

fn run_case(agent: &mut dyn ToolAgent, case: &Case) -> Result<AgentReply, AgentError> {
    let r = &case.request;
    if case.restore {
        let id = agent.snapshot()?;
        let data = vec![WRITE_PATTERN; r.size as usize];
        let reply = agent.access(r.op, r.privilege, r.vaddr, r.size, Some(&data))?;
        agent.restore(id)?;
        Ok(reply)
    } else {
        agent.access(r.op, r.privilege, r.vaddr, r.size, None)
    }
}

/// Executes every case, switching once per group of same-space cases.
pub fn run_matrix(matrix: &AccessMatrix, agent: &mut dyn ToolAgent) -> DynamicReport {
    let mut report = DynamicReport::default();
    let mut current: Option<&Owner> = None;
    for case in &matrix.cases {
        let r = &case.request;
        if r.op == AccessOp::Execute && !agent.supports_execute() {
            report.cases_skipped += 1;
            continue;
        }
        if current != Some(&r.space) {
            if let Err(e) = agent.switch(&r.space) {
                report.incomplete = Some(e.to_string());
                break;
            }
            current = Some(&r.space);
        }
        let reply = match run_case(agent, case) {
            Ok(reply) => reply,
            Err(e) => {
                report.incomplete = Some(e.to_string());
                break;
            }
        };
        report.cases_run += 1;
        let observed = match &reply {
            AgentReply::Ok { paddr, .. } => format!("OK {paddr:#x}"),
            AgentReply::Fault { kind, addr } => format!("FAULT {kind} {addr:#x}"),
        };
        let ok = match (case.expectation, &reply) {
            (Expectation::MustSucceed, AgentReply::Ok { paddr, .. }) => case.expected_paddr.is_none_or(|p| p == *paddr),
            (Expectation::MustFault, AgentReply::Fault { .. }) => true,
            _ => false,
        };
        if !ok {
            report.findings.push(DynamicFinding {
                space: r.space.name().to_string(),
                op: r.op.letter(),
                privilege: r.privilege.letter(),
                vaddr: format!("{:#x}", r.vaddr),
                provenance: case.provenance.clone(),
                expected: match (case.expectation, case.expected_paddr) {
                    (Expectation::MustSucceed, Some(p)) => format!("OK {p:#x}"),
                    (Expectation::MustSucceed, None) => "OK".into(),
                    (Expectation::MustFault, _) => "FAULT".into(),
                },
                observed,
            });
        }
    }
    report.passed = report.findings.is_empty() && report.incomplete.is_none();
    report
}
