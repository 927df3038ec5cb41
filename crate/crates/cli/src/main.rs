//! `memlayout`: layout planning, MMU configuration generation, verification
//! and simulation from the command line.
//!
//! Exit status: 0 when everything passed, 1 when a report holds ERROR
//! findings, 2 when the tool itself could not complete.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command as Process, ExitCode, Stdio};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use memlayout::dynamic::{build_matrix, run_matrix, serve, DynamicReport, LineAgent, SimAgent, ToolAgent};
use memlayout::layout::{plan_mapping_units, MemoryLayout};
use memlayout::mutation::{run_harness, MutationError, MutationReport};
use memlayout::pagetable::{self, PageTableError};
use memlayout::sim::{self, parse_trace, replay, CostModel, ReplayStats, SimMode};
use memlayout::synth::seed_from_env;
use memlayout::tlb::{self, TlbError};
use memlayout::verify::{verify_layout, verify_mmu_config};
use memlayout::*;

#[derive(Parser)]
#[command(name = "memlayout", version, about = "Static memory layout and MMU configuration toolchain")]
struct Cli {
    /// Output style on stdout.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Machine,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    #[value(alias = "tlb_fixed")]
    Tlb,
    #[value(alias = "page_table")]
    Pagetable,
}

impl Backend {
    fn kind(self) -> MmuKind {
        match self {
            Backend::Tlb => MmuKind::TlbFixed,
            Backend::Pagetable => MmuKind::PageTable,
        }
    }
}

#[derive(Args)]
struct ProjectArgs {
    /// One document holding `memory_map`, `mmu`, `partitions` and `blocks`.
    #[arg(long, short = 'p')]
    project: Option<PathBuf>,
    /// Requirements document (overrides `--project` for `partitions`/`blocks`).
    #[arg(long)]
    requirements: Option<PathBuf>,
    /// Memory map document.
    #[arg(long)]
    memmap: Option<PathBuf>,
    /// MMU model document.
    #[arg(long)]
    mmu: Option<PathBuf>,
}

#[derive(Args)]
struct BackendArg {
    /// Expected MMU backend; a model of the other kind is rejected.
    #[arg(long, value_enum)]
    backend: Option<Backend>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate requirements and plan the memory layout.
    Layout {
        #[command(flatten)]
        project: ProjectArgs,
        #[command(flatten)]
        backend: BackendArg,
        /// Reject writable+executable blocks.
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        strict_wx: bool,
        #[arg(long, short = 'o', default_value = ".")]
        out: PathBuf,
    },
    /// Generate the MMU configuration artifact for a planned layout.
    Generate {
        #[arg(long, short = 'l')]
        layout: PathBuf,
        #[command(flatten)]
        backend: BackendArg,
        #[arg(long, short = 'o', default_value = ".")]
        out: PathBuf,
    },
    /// Verify a layout and configuration statically and/or dynamically.
    Verify {
        #[command(flatten)]
        project: ProjectArgs,
        #[command(flatten)]
        backend: BackendArg,
        #[arg(long, short = 'l')]
        layout: PathBuf,
        #[arg(long, short = 'c')]
        config: PathBuf,
        /// Run the static checks (default when neither mode is given).
        #[arg(long = "static")]
        static_: bool,
        /// Run the access matrix (default when neither mode is given).
        #[arg(long)]
        dynamic: bool,
        /// Run the mutation harness on N sampled bit flips (0 = all).
        #[arg(long, value_name = "N")]
        mutate: Option<usize>,
        /// Drive an external agent over stdin/stdout instead of the simulator.
        #[arg(long, value_name = "COMMAND")]
        agent_cmd: Option<String>,
        /// Skip execute probes.
        #[arg(long)]
        no_exec: bool,
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
    },
    /// Replay an access trace and compare static against naive refill.
    Simulate {
        #[arg(long, short = 'l')]
        layout: PathBuf,
        #[arg(long, short = 'c')]
        config: PathBuf,
        #[arg(long, short = 't')]
        trace: PathBuf,
        #[arg(long, value_name = "FILE")]
        cost_model: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArg,
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
    },
    /// Serve the agent wire protocol on stdin/stdout with the simulator.
    Agent {
        #[arg(long, short = 'l')]
        layout: PathBuf,
        #[arg(long, short = 'c')]
        config: PathBuf,
    },
    /// layout, generate and verify in one go.
    Run {
        #[command(flatten)]
        project: ProjectArgs,
        #[command(flatten)]
        backend: BackendArg,
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        strict_wx: bool,
        #[arg(long, value_name = "N")]
        mutate: Option<usize>,
        #[arg(long, short = 'o', default_value = ".")]
        out: PathBuf,
    },
}

/// Result of a command that completed: whether its reports passed.
struct Done {
    passed: bool,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn check_backend(arg: &BackendArg, mmu: &MmuModel) -> Result<()> {
    match arg.backend {
        Some(b) if b.kind() != mmu.kind() => bail!(
            "BACKEND_MISMATCH: --backend {} but the MMU model is {}",
            b.to_possible_value().expect("named").get_name(),
            match mmu.kind() {
                MmuKind::TlbFixed => "tlb_fixed",
                MmuKind::PageTable => "page_table",
            }
        ),
        _ => Ok(()),
    }
}

fn load_project(args: &ProjectArgs) -> Result<Project> {
    let pick = |own: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
        own.clone()
            .or_else(|| args.project.clone())
            .with_context(|| format!("no {what} document: pass --project or --{what}"))
    };
    let (r, m, u) = (pick(&args.requirements, "requirements")?, pick(&args.memmap, "memmap")?, pick(&args.mmu, "mmu")?);
    let (rt, mt, ut) = (read_text(&r)?, read_text(&m)?, read_text(&u)?);
    let (rn, mn, un) = (r.display().to_string(), m.display().to_string(), u.display().to_string());
    Ok(parse_project(SourceDoc::new(&rn, &rt), SourceDoc::new(&mn, &mt), SourceDoc::new(&un, &ut))?)
}

fn load_layout(path: &Path) -> Result<MemoryLayout> {
    MemoryLayout::from_json(&read_text(path)?).with_context(|| format!("{}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Writes `<stem>.txt` and `<stem>.json` into `dir`.
fn write_reports(dir: Option<&Path>, stem: &str, text: &str, machine: &Value) -> Result<()> {
    if let Some(dir) = dir {
        ensure_dir(dir)?;
        write(&dir.join(format!("{stem}.txt")), text)?;
        write(&dir.join(format!("{stem}.json")), format!("{}\n", serde_json::to_string_pretty(machine)?))?;
    }
    Ok(())
}

fn emit(format: Format, text: &str, machine: &Value) {
    // A closed stdout (e.g. `| head`) must not turn a verdict into a panic.
    let mut out = std::io::stdout().lock();
    let _ = match format {
        Format::Text => out.write_all(text.as_bytes()),
        Format::Machine => writeln!(out, "{}", serde_json::to_string_pretty(machine).expect("json")),
    };
}

fn report_value(r: &VerificationReport) -> Value {
    serde_json::from_str(&r.to_json()).expect("report json")
}

fn subject_of(e: &InfeasibleError) -> Subject {
    match (&e.block, &e.space) {
        (Some(b), _) => Subject::block(&b.owner, &b.name),
        (None, Some(o)) => Subject::owner(o),
        (None, None) => Subject::none(),
    }
}

// layout ---------------------------------------------------------------------

struct SpaceUsage {
    space: String,
    blocks: usize,
    used: usize,
    budget: Option<usize>,
}

fn usage(layout: &MemoryLayout) -> Vec<SpaceUsage> {
    let budget = match &layout.mmu {
        MmuModel::TlbFixed(t) => Some(t.entry_count as usize),
        MmuModel::PageTable(m) if m.zero_miss => Some(m.tlb_capacity as usize),
        MmuModel::PageTable(_) => None,
    };
    layout
        .plans
        .iter()
        .map(|p| SpaceUsage {
            space: p.space.name().to_string(),
            blocks: p.blocks.len(),
            used: plan_mapping_units(p, &layout.mmu).unwrap_or(0),
            budget,
        })
        .collect()
}

fn usage_table(layout: &MemoryLayout) -> String {
    let unit = match layout.mmu {
        MmuModel::TlbFixed(_) => "entries",
        MmuModel::PageTable(_) => "pages",
    };
    let mut s = format!("{:<16} {:>6} {:>8} {:>8} {:>6}\n", "space", "blocks", unit, "budget", "spare");
    for u in usage(layout) {
        let (budget, spare) = match u.budget {
            Some(b) => (b.to_string(), (b as i64 - u.used as i64).to_string()),
            None => ("-".into(), "-".into()),
        };
        s.push_str(&format!("{:<16} {:>6} {:>8} {:>8} {:>6}\n", u.space, u.blocks, u.used, budget, spare));
    }
    s
}

fn usage_json(layout: &MemoryLayout) -> Value {
    Value::Array(
        usage(layout)
            .into_iter()
            .map(|u| json!({"space": u.space, "blocks": u.blocks, "used": u.used, "budget": u.budget}))
            .collect(),
    )
}

/// Returns the planned layout, or `None` after reporting why there is none.
fn do_layout(project: &Project, strict_wx: bool, out: &Path, format: Format) -> Result<Option<MemoryLayout>> {
    let mut report = validate_requirements_with(&project.requirements, &project.memmap, &project.mmu, ValidationOptions { strict_wx });
    let layout = if report.passed {
        match plan_layout(&project.requirements, &project.memmap, &project.mmu) {
            Ok(l) => {
                report.merge(feasibility_check(&l));
                Some(l)
            }
            Err(e) => {
                report.error("INFEASIBLE", subject_of(&e), e.to_string());
                None
            }
        }
    } else {
        None
    };
    let layout = layout.filter(|_| report.passed);
    let path = out.join("layout.json");
    let mut text = report.render_text();
    let mut machine = json!({"report": report_value(&report)});
    if let Some(l) = &layout {
        ensure_dir(out)?;
        write(&path, format!("{}\n", l.to_json()))?;
        text.push_str(&usage_table(l));
        text.push_str(&format!("layout written to {}\n", path.display()));
        machine["layout"] = json!(path.display().to_string());
        machine["usage"] = usage_json(l);
    }
    write_reports(Some(out), "layout-report", &text, &machine)?;
    emit(format, &text, &machine);
    Ok(layout)
}

// generate -------------------------------------------------------------------

fn tlb_error_code(e: &TlbError) -> &'static str {
    match e {
        TlbError::Budget { .. } => "ENTRY_BUDGET_EXCEEDED",
        TlbError::Alignment { .. } => "UNMAPPABLE_BLOCK",
        TlbError::WrongBackend => "BACKEND_MISMATCH",
        _ => "GENERATION_FAILED",
    }
}

fn pt_error_code(e: &PageTableError) -> &'static str {
    match e {
        PageTableError::NoTableRoom { .. } => "NO_TABLE_ROOM",
        PageTableError::AsidExhausted { .. } => "ASID_EXHAUSTED",
        PageTableError::Unaligned { .. } => "UNMAPPABLE_BLOCK",
        PageTableError::WrongBackend => "BACKEND_MISMATCH",
        PageTableError::Conflict(_) => "GENERATION_FAILED",
    }
}

/// Returns the artifact path, or `None` when generation produced findings.
fn do_generate(layout: &MemoryLayout, out: &Path, format: Format) -> Result<Option<PathBuf>> {
    let mut report = VerificationReport::new();
    let generated = match &layout.mmu {
        MmuModel::TlbFixed(t) => match tlb::build_sequences(layout) {
            Ok(seqs) => Some(("mmu.mltc", tlb::write_mltc(&seqs), tlb::manifest_json(&seqs, t))),
            Err(e) => {
                report.error(tlb_error_code(&e), Subject::none(), e.to_string());
                None
            }
        },
        MmuModel::PageTable(m) => match pagetable::build_config(layout) {
            Ok(cfg) => {
                report.merge(pagetable::warmup_findings(&cfg));
                if m.zero_miss {
                    report.merge(pagetable::zero_miss_budget(layout, &layout.mmu));
                }
                Some(("mmu.mlpt", pagetable::write_mlpt(&cfg), pagetable::manifest_json(&cfg)))
            }
            Err(e) => {
                report.error(pt_error_code(&e), Subject::none(), e.to_string());
                None
            }
        },
    };
    let mut text = report.render_text();
    let mut machine = json!({"report": report_value(&report)});
    let mut written = None;
    if let Some((name, bytes, manifest)) = generated.filter(|_| report.passed) {
        ensure_dir(out)?;
        let path = out.join(name);
        write(&path, &bytes)?;
        write(&out.join("manifest.json"), format!("{manifest}\n"))?;
        text.push_str(&format!("configuration written to {} ({} bytes)\n", path.display(), bytes.len()));
        machine["config"] = json!(path.display().to_string());
        machine["manifest"] = serde_json::from_str(&manifest)?;
        written = Some(path);
    }
    write_reports(Some(out), "generate-report", &text, &machine)?;
    emit(format, &text, &machine);
    Ok(written)
}

// verify ---------------------------------------------------------------------

struct VerifyPlan<'a> {
    requirements: Option<&'a RequirementSet>,
    layout: &'a MemoryLayout,
    config: &'a [u8],
    static_: bool,
    dynamic: bool,
    mutate: Option<usize>,
    agent_cmd: Option<&'a str>,
    no_exec: bool,
}

fn run_dynamic(v: &VerifyPlan<'_>) -> Result<DynamicReport> {
    let matrix = build_matrix(v.layout);
    match v.agent_cmd {
        Some(cmd) => {
            let mut words = cmd.split_whitespace();
            let prog = words.next().context("empty --agent-cmd")?;
            let mut child = Process::new(prog)
                .args(words)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .with_context(|| format!("cannot start agent `{cmd}`"))?;
            let stdin = child.stdin.take().expect("piped");
            let stdout = BufReader::new(child.stdout.take().expect("piped"));
            let mut agent = LineAgent::new(stdout, stdin);
            if v.no_exec {
                agent = agent.without_execute();
            }
            let report = run_matrix(&matrix, &mut agent);
            drop(agent);
            let _ = child.wait();
            Ok(report)
        }
        None => {
            let mmu = sim::load(v.config, v.layout, SimMode::Static, CostModel::default())?;
            let mut agent = SimAgent::new(mmu);
            let mut agent: &mut dyn ToolAgent = &mut agent;
            let mut skip = NoExec(&mut agent);
            Ok(run_matrix(&matrix, if v.no_exec { &mut skip } else { agent }))
        }
    }
}

/// Wraps an agent so that execute probes are skipped.
struct NoExec<'a, 'b>(&'a mut &'b mut dyn ToolAgent);

impl ToolAgent for NoExec<'_, '_> {
    fn switch(&mut self, space: &Owner) -> std::result::Result<(), memlayout::dynamic::AgentError> {
        self.0.switch(space)
    }
    fn access(
        &mut self,
        op: AccessOp,
        privilege: Privilege,
        addr: Addr,
        size: u32,
        data: Option<&[u8]>,
    ) -> std::result::Result<memlayout::dynamic::AgentReply, memlayout::dynamic::AgentError> {
        self.0.access(op, privilege, addr, size, data)
    }
    fn snapshot(&mut self) -> std::result::Result<u64, memlayout::dynamic::AgentError> {
        self.0.snapshot()
    }
    fn restore(&mut self, id: u64) -> std::result::Result<(), memlayout::dynamic::AgentError> {
        self.0.restore(id)
    }
    fn supports_execute(&self) -> bool {
        false
    }
}

fn do_verify(v: &VerifyPlan<'_>, out: Option<&Path>, format: Format) -> Result<Done> {
    let (run_static, run_dynamic_) = if v.static_ || v.dynamic { (v.static_, v.dynamic) } else { (true, true) };
    let mut passed = true;
    let mut text = String::new();
    let mut machine = json!({});

    if run_static {
        let mut r = match v.requirements {
            Some(reqs) => verify_layout(v.layout, reqs),
            None => VerificationReport::new(),
        };
        r.merge(verify_mmu_config(v.config, v.layout)?);
        passed &= r.passed;
        text.push_str("static verification\n");
        text.push_str(&r.render_text());
        machine["static"] = report_value(&r);
    }
    if run_dynamic_ {
        let r = run_dynamic(v)?;
        passed &= r.passed;
        text.push_str("dynamic verification\n");
        text.push_str(&r.render_text());
        machine["dynamic"] = serde_json::to_value(&r)?;
    }
    if let Some(n) = v.mutate {
        let limit = (n > 0).then_some(n);
        let r: MutationReport = match run_harness(v.layout, v.config, limit, seed_from_env(0)) {
            Ok(r) => r,
            Err(MutationError::Baseline(why)) => {
                let mut r = VerificationReport::new();
                r.error("MUTATION_BASELINE", Subject::none(), format!("unmutated configuration fails: {}", why.trim_end()));
                text.push_str(&r.render_text());
                machine["mutation"] = report_value(&r);
                passed = false;
                return finish_verify(passed, text, machine, out, format);
            }
            Err(e) => return Err(e.into()),
        };
        passed &= r.complete();
        text.push_str("mutation harness\n");
        text.push_str(&r.render_text());
        machine["mutation"] = serde_json::to_value(&r)?;
    }
    finish_verify(passed, text, machine, out, format)
}

fn finish_verify(passed: bool, mut text: String, mut machine: Value, out: Option<&Path>, format: Format) -> Result<Done> {
    text.push_str(if passed { "verification PASSED\n" } else { "verification FAILED\n" });
    machine["passed"] = json!(passed);
    write_reports(out, "verify-report", &text, &machine)?;
    emit(format, &text, &machine);
    Ok(Done { passed })
}

// simulate -------------------------------------------------------------------

fn stats_row(name: &str, s: &ReplayStats) -> String {
    let t = &s.total;
    format!(
        "{:<8} {:>10} {:>10} {:>10} {:>10} {:>12}\n",
        name, t.tlb_lookups, t.tlb_writes, t.walk_memory_accesses, t.interrupts, t.total
    )
}

fn do_simulate(layout: &MemoryLayout, config: &[u8], trace_text: &str, cost: CostModel, out: Option<&Path>, format: Format) -> Result<Done> {
    let trace = parse_trace(trace_text)?;
    let st = replay(&mut sim::load(config, layout, SimMode::Static, cost)?, &trace)?;
    let nv = replay(&mut sim::load(config, layout, SimMode::NaiveRefill, cost)?, &trace)?;
    let mut text = format!("{:<8} {:>10} {:>10} {:>10} {:>10} {:>12}\n", "mode", "lookups", "writes", "walks", "interrupts", "total");
    text.push_str(&stats_row("static", &st));
    text.push_str(&stats_row("naive", &nv));
    text.push_str(&format!(
        "static_total {} {} naive_total {}\n",
        st.total.total,
        if st.total.total <= nv.total.total { "<=" } else { ">" },
        nv.total.total
    ));
    text.push_str("\nstatic windows\n");
    for w in &st.windows {
        let faults: Vec<String> = w.faults.iter().map(|(k, n)| format!("{k}={n}")).collect();
        text.push_str(&format!(
            "{:<16} switch[writes {} walks {}] accesses {} [lookups {} walks {} interrupts {}] {}\n",
            w.space,
            w.switch.tlb_writes,
            w.switch.walk_memory_accesses,
            w.access_count,
            w.accesses.tlb_lookups,
            w.accesses.walk_memory_accesses,
            w.accesses.interrupts,
            faults.join(" ")
        ));
    }
    let machine = json!({
        "cost_model": cost,
        "static": st,
        "naive": nv,
        "comparison": {"static_total": st.total.total, "naive_total": nv.total.total},
    });
    write_reports(out, "simulate-report", &text, &machine)?;
    emit(format, &text, &machine);
    Ok(Done { passed: true })
}

// dispatch -------------------------------------------------------------------

fn run(cli: Cli) -> Result<Done> {
    let format = cli.format;
    match cli.command {
        Command::Layout { project, backend, strict_wx, out } => {
            let p = load_project(&project)?;
            check_backend(&backend, &p.mmu)?;
            Ok(Done {
                passed: do_layout(&p, strict_wx, &out, format)?.is_some(),
            })
        }
        Command::Generate { layout, backend, out } => {
            let l = load_layout(&layout)?;
            check_backend(&backend, &l.mmu)?;
            Ok(Done {
                passed: do_generate(&l, &out, format)?.is_some(),
            })
        }
        Command::Verify { project, backend, layout, config, static_, dynamic, mutate, agent_cmd, no_exec, out } => {
            let have_project = project.project.is_some() || project.requirements.is_some();
            let p = if have_project { Some(load_project(&project)?) } else { None };
            let l = load_layout(&layout)?;
            let bytes = read(&config)?;
            check_backend(&backend, &l.mmu)?;
            let plan = VerifyPlan {
                requirements: p.as_ref().map(|p| &p.requirements),
                layout: &l,
                config: &bytes,
                static_,
                dynamic,
                mutate,
                agent_cmd: agent_cmd.as_deref(),
                no_exec,
            };
            do_verify(&plan, out.as_deref(), format)
        }
        Command::Simulate { layout, config, trace, cost_model, backend, out } => {
            let l = load_layout(&layout)?;
            let bytes = read(&config)?;
            let trace_text = read_text(&trace)?;
            let cost = match &cost_model {
                Some(path) => CostModel::parse(&read_text(path)?).with_context(|| format!("{}", path.display()))?,
                None => CostModel::default(),
            };
            check_backend(&backend, &l.mmu)?;
            do_simulate(&l, &bytes, &trace_text, cost, out.as_deref(), format).with_context(|| format!("{}", trace.display()))
        }
        Command::Agent { layout, config } => {
            let l = load_layout(&layout)?;
            let bytes = read(&config)?;
            let mut agent = SimAgent::new(sim::load(&bytes, &l, SimMode::Static, CostModel::default())?);
            let stdin = std::io::stdin();
            serve(&mut agent, stdin.lock(), std::io::stdout().lock())?;
            Ok(Done { passed: true })
        }
        Command::Run { project, backend, strict_wx, mutate, out } => {
            let p = load_project(&project)?;
            check_backend(&backend, &p.mmu)?;
            let Some(l) = do_layout(&p, strict_wx, &out, format)? else {
                return Ok(Done { passed: false });
            };
            let Some(config) = do_generate(&l, &out, format)? else {
                return Ok(Done { passed: false });
            };
            let bytes = read(&config)?;
            let plan = VerifyPlan {
                requirements: Some(&p.requirements),
                layout: &l,
                config: &bytes,
                static_: true,
                dynamic: true,
                mutate,
                agent_cmd: None,
                no_exec: false,
            };
            do_verify(&plan, Some(&out), format)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Done { passed: true }) => ExitCode::SUCCESS,
        Ok(Done { passed: false }) => ExitCode::from(1),
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
