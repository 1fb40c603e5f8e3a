//! Command-line front end: `elaborate`, `typecheck`, `run` and `ast`.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::ast::{Pos, Surface, SurfaceTerm};
use crate::eval::{RunOptions, Runtime};
use crate::infer::{check_program, CheckedProgram};
use crate::parser::{parse_program, DeclItem, Program};

#[derive(Debug, Parser)]
#[command(name = "clamp", version, about = "Elaborate, typecheck and run Clamp programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print each definition with its inserted dup/drop annotations and its
    /// lowered internal form.
    Elaborate { file: PathBuf },
    /// Print `name :: scheme` for every definition.
    Typecheck { file: PathBuf },
    /// Evaluate an entry point and print its value and the final store.
    Run {
        file: PathBuf,
        #[arg(long, default_value = "main")]
        entry: String,
        /// Print every configuration.
        #[arg(long)]
        trace: bool,
        /// Check typing and reference counts at every step.
        #[arg(long)]
        checked: bool,
        #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
        step_limit: u64,
    },
    /// Print the parsed program.
    Ast {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = Emit::Tree)]
        emit: Emit,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Tree,
    Pretty,
}

/// Result of one invocation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the command line `args`, whose first element is the program name.
pub fn main<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli.command),
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                Output { code: 2, stdout: String::new(), stderr: text }
            } else {
                Output { code: 0, stdout: text, stderr: String::new() }
            }
        }
    }
}

struct Diag {
    file: String,
}

impl Diag {
    /// `file:line:col: error: message`. Messages from the library start with
    /// their own position, which is moved into the prefix.
    fn error(&self, pos: Pos, message: &str) -> Output {
        let prefix = format!("{pos}: ");
        let body = message.strip_prefix(&prefix).unwrap_or(message);
        Output { code: 1, stdout: String::new(), stderr: format!("{}:{pos}: error: {body}\n", self.file) }
    }
}

pub fn execute(cmd: &Command) -> Output {
    let file = match cmd {
        Command::Elaborate { file } | Command::Typecheck { file } | Command::Run { file, .. } | Command::Ast { file, .. } => {
            file
        }
    };
    let diag = Diag { file: file.display().to_string() };
    let src = match std::fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => {
            return Output { code: 1, stdout: String::new(), stderr: format!("{}: error: {e}\n", diag.file) };
        }
    };
    let program = match parse_program(&src) {
        Ok(p) => p,
        Err(e) => return diag.error(e.pos(), &e.to_string()),
    };
    if let Command::Ast { emit, .. } = cmd {
        let stdout = match emit {
            Emit::Pretty => program.to_string(),
            Emit::Tree => program_tree(&program),
        };
        return Output { code: 0, stdout, stderr: String::new() };
    }
    let checked = match check_program(&program) {
        Ok(c) => c,
        Err(e) => return diag.error(e.pos(), &e.to_string()),
    };
    match cmd {
        Command::Elaborate { .. } => ok(elaboration(&checked)),
        Command::Typecheck { .. } => ok(checked.to_string()),
        Command::Run { entry, trace, checked: check, step_limit, .. } => {
            let pos = checked.def(entry).map_or(Pos::new(1, 1), |d| d.pos);
            let opts = RunOptions { step_limit: *step_limit as usize, trace: *trace, expect: None };
            match Runtime::from_program(&checked).run_entry(entry, opts, *check) {
                Ok(out) => {
                    let mut s = String::new();
                    for line in &out.trace {
                        writeln!(s, "{line}").unwrap();
                    }
                    writeln!(s, "{}", out.value).unwrap();
                    writeln!(s, "store: {}", out.store).unwrap();
                    ok(s)
                }
                Err(e) => diag.error(pos, &e.to_string()),
            }
        }
        Command::Ast { .. } => unreachable!(),
    }
}

fn ok(stdout: String) -> Output {
    Output { code: 0, stdout, stderr: String::new() }
}

fn elaboration(p: &CheckedProgram) -> String {
    let mut s = String::new();
    for d in &p.defs {
        writeln!(s, "{} =", d.name).unwrap();
        writeln!(s, "  annotated: {}", d.annotated).unwrap();
        writeln!(s, "  internal:  {}", d.internal).unwrap();
    }
    s
}

/// One node per line, children indented under their parent.
pub fn program_tree(p: &Program) -> String {
    let mut s = String::new();
    for d in &p.decls {
        match &d.item {
            DeclItem::Sig(scheme) => writeln!(s, "Signature {} :: {scheme} @{}", d.name, d.pos).unwrap(),
            DeclItem::Def(e) => {
                writeln!(s, "Definition {} @{}", d.name, d.pos).unwrap();
                term_tree(&mut s, e, 1);
            }
        }
    }
    s
}

pub fn term_tree(s: &mut String, e: &SurfaceTerm, depth: usize) {
    let label = match &e.kind {
        Surface::Var(x) => format!("Var {x}"),
        Surface::Unit => "Unit".to_string(),
        Surface::Lam(q, p, _) => format!("Lam {q} {p}"),
        Surface::App(..) => "App".to_string(),
        Surface::Pair(..) => "Pair".to_string(),
        Surface::Let(x, ..) => format!("Let {x}"),
        Surface::LetPair(x, y, ..) => format!("LetPair {x} {y}"),
        Surface::Inl(_) => "Inl".to_string(),
        Surface::Inr(_) => "Inr".to_string(),
        Surface::Case { left, right, .. } => format!("Case {} {}", left.0, right.0),
        Surface::New(rq, _) => format!("New {}", rq.suffix()),
        Surface::Release(rq, _) => format!("Release {}", rq.suffix()),
        Surface::Swap(rq, ..) => format!("Swap {}", rq.suffix()),
    };
    writeln!(s, "{}{label} @{}", "  ".repeat(depth), e.pos).unwrap();
    let children: Vec<&SurfaceTerm> = match &e.kind {
        Surface::Var(_) | Surface::Unit => vec![],
        Surface::Lam(_, _, b) | Surface::Inl(b) | Surface::Inr(b) | Surface::New(_, b) | Surface::Release(_, b) => {
            vec![b]
        }
        Surface::App(a, b) | Surface::Pair(a, b) | Surface::Let(_, a, b) | Surface::LetPair(_, _, a, b) | Surface::Swap(_, a, b) => {
            vec![a, b]
        }
        Surface::Case { scrut, left, right } => vec![scrut, &left.1, &right.1],
    };
    for c in children {
        term_tree(s, c, depth + 1);
    }
}
