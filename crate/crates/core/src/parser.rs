//! Lexer and recursive-descent parser for `.clamp` source.
//!
//! A program is a sequence of declarations, each starting in column 1:
//!
//! ```text
//! fst :: Drop b => (a, b) -U> a
//! fst  = \(x, y) -U> x
//! ```
//!
//! Continuation lines of a declaration must be indented. Comments run from
//! `--` to the end of the line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ast::{
    ArrowQual, Class, ConstraintSet, Name, Pattern, Pos, Pred, RefQual, Scheme, Surface, SurfaceTerm, Type,
};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{pos}: lexical error: unexpected character `{ch}`")]
    Lexical { pos: Pos, ch: char },
    #[error("{pos}: syntax error: expected {}, found {found}", .expected.join(" or "))]
    Syntax { pos: Pos, expected: Vec<String>, found: String },
    #[error("{pos}: `{name}` is bound twice in the same pattern")]
    DuplicateBinder { pos: Pos, name: Name },
    #[error("{pos}: duplicate definition of `{name}`")]
    DuplicateDefinition { pos: Pos, name: Name },
    #[error("{pos}: duplicate signature for `{name}`")]
    DuplicateSignature { pos: Pos, name: Name },
    #[error("{pos}: signature for `{name}` has no definition")]
    SignatureWithoutDefinition { pos: Pos, name: Name },
}

impl ParseError {
    pub fn pos(&self) -> Pos {
        match self {
            ParseError::Lexical { pos, .. }
            | ParseError::Syntax { pos, .. }
            | ParseError::DuplicateBinder { pos, .. }
            | ParseError::DuplicateDefinition { pos, .. }
            | ParseError::DuplicateSignature { pos, .. }
            | ParseError::SignatureWithoutDefinition { pos, .. } => *pos,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DeclItem {
    Sig(Scheme),
    Def(SurfaceTerm),
}

#[derive(Clone, Debug)]
pub struct Decl {
    pub name: Name,
    pub item: DeclItem,
    pub pos: Pos,
}

impl PartialEq for Decl {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.item == other.item
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Program {
    pub decls: Vec<Decl>,
}

impl Program {
    pub fn defs(&self) -> impl Iterator<Item = (&Name, &SurfaceTerm, Pos)> {
        self.decls.iter().filter_map(|d| match &d.item {
            DeclItem::Def(t) => Some((&d.name, t, d.pos)),
            DeclItem::Sig(_) => None,
        })
    }

    pub fn signature(&self, name: &str) -> Option<(&Scheme, Pos)> {
        self.decls.iter().find_map(|d| match &d.item {
            DeclItem::Sig(s) if d.name == name => Some((s, d.pos)),
            _ => None,
        })
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.decls {
            match &d.item {
                DeclItem::Sig(s) => writeln!(f, "{} :: {}", d.name, s)?,
                DeclItem::Def(t) => writeln!(f, "{} = {}", d.name, t)?,
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(Name),
    Upper(Name),
    Let,
    In,
    Case,
    Of,
    Inl,
    Inr,
    New(RefQual),
    Release(RefQual),
    Swap(RefQual),
    Backslash,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Equals,
    ColonColon,
    FatArrow,
    Arrow,
    QArrow(ArrowQual),
    Plus,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(x) | Tok::Upper(x) => write!(f, "`{x}`"),
            Tok::Let => write!(f, "`let`"),
            Tok::In => write!(f, "`in`"),
            Tok::Case => write!(f, "`case`"),
            Tok::Of => write!(f, "`of`"),
            Tok::Inl => write!(f, "`inl`"),
            Tok::Inr => write!(f, "`inr`"),
            Tok::New(q) => write!(f, "`new_{}`", q.suffix()),
            Tok::Release(q) => write!(f, "`release_{}`", q.suffix()),
            Tok::Swap(q) => write!(f, "`swap_{}`", q.suffix()),
            Tok::Backslash => write!(f, "`\\`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Semi => write!(f, "`;`"),
            Tok::Equals => write!(f, "`=`"),
            Tok::ColonColon => write!(f, "`::`"),
            Tok::FatArrow => write!(f, "`=>`"),
            Tok::Arrow => write!(f, "`->`"),
            Tok::QArrow(q) => write!(f, "`{q}`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    pos: Pos,
}

fn keyword(word: &str) -> Option<Tok> {
    Some(match word {
        "let" => Tok::Let,
        "in" => Tok::In,
        "case" => Tok::Case,
        "of" => Tok::Of,
        "inl" => Tok::Inl,
        "inr" => Tok::Inr,
        "new_s" => Tok::New(RefQual::S),
        "new_w" => Tok::New(RefQual::W),
        "release_s" => Tok::Release(RefQual::S),
        "release_w" => Tok::Release(RefQual::W),
        "swap_s" => Tok::Swap(RefQual::S),
        "swap_w" => Tok::Swap(RefQual::W),
        _ => return None,
    })
}

/// True for names that may be used as term or type variables.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() || c == '_' => {}
        _ => return false,
    }
    chars.all(is_ident_char) && keyword(s).is_none()
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

fn lex(src: &str) -> Result<(Vec<Token>, Pos), ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let mut last = Pos::new(1, 1);

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos::new(line, col);
        last = pos;
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let next = chars.get(i + 1).copied();
        let advance = |n: usize, toks: &mut Vec<Token>, tok: Tok| {
            toks.push(Token { tok, pos });
            n
        };
        let n = match c {
            '-' if next == Some('-') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                    col += 1;
                }
                continue;
            }
            '-' if next == Some('>') => advance(2, &mut toks, Tok::Arrow),
            '-' => match (next.and_then(ArrowQual::from_letter), chars.get(i + 2)) {
                (Some(q), Some('>')) => advance(3, &mut toks, Tok::QArrow(q)),
                _ => return Err(ParseError::Lexical { pos, ch: c }),
            },
            '\\' => advance(1, &mut toks, Tok::Backslash),
            '(' => advance(1, &mut toks, Tok::LParen),
            ')' => advance(1, &mut toks, Tok::RParen),
            '{' => advance(1, &mut toks, Tok::LBrace),
            '}' => advance(1, &mut toks, Tok::RBrace),
            ',' => advance(1, &mut toks, Tok::Comma),
            ';' => advance(1, &mut toks, Tok::Semi),
            '+' => advance(1, &mut toks, Tok::Plus),
            '=' if next == Some('>') => advance(2, &mut toks, Tok::FatArrow),
            '=' => advance(1, &mut toks, Tok::Equals),
            ':' if next == Some(':') => advance(2, &mut toks, Tok::ColonColon),
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                let mut j = i;
                while j < chars.len() && is_ident_char(chars[j]) {
                    j += 1;
                }
                let word: String = chars[start..j].iter().collect();
                let tok = if c.is_ascii_uppercase() {
                    Tok::Upper(word)
                } else {
                    keyword(&word).unwrap_or(Tok::Ident(word))
                };
                advance(j - start, &mut toks, tok)
            }
            _ => return Err(ParseError::Lexical { pos, ch: c }),
        };
        i += n;
        col += n as u32;
    }
    Ok((toks, last))
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<Token>,
    idx: usize,
    eof: Pos,
    /// Inside a declaration: a token in column 1 ends it.
    fenced: bool,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn new(src: &str) -> PResult<Self> {
        let (toks, eof) = lex(src)?;
        Ok(Parser { toks, idx: 0, eof, fenced: false })
    }

    fn peek(&self) -> &Tok {
        match self.toks.get(self.idx) {
            Some(t) if !(self.fenced && t.pos.col == 1) => &t.tok,
            _ => &Tok::Eof,
        }
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let fenced = self.fenced && self.toks.iter().skip(self.idx).take(k + 1).any(|t| t.pos.col == 1);
        match self.toks.get(self.idx + k) {
            Some(t) if !fenced => &t.tok,
            _ => &Tok::Eof,
        }
    }

    fn pos(&self) -> Pos {
        match self.toks.get(self.idx) {
            Some(t) => t.pos,
            None => self.eof,
        }
    }

    fn bump(&mut self) -> Tok {
        let t = self.peek().clone();
        if t != Tok::Eof {
            self.idx += 1;
        }
        t
    }

    fn error<T>(&self, expected: &[&str]) -> PResult<T> {
        Err(ParseError::Syntax {
            pos: self.pos(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().to_string(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.error(&[what])
        }
    }

    fn ident(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Ident(x) => {
                self.bump();
                Ok(x)
            }
            _ => self.error(&["identifier"]),
        }
    }

    // -- programs ----------------------------------------------------------

    fn program(&mut self) -> PResult<Program> {
        let mut decls = Vec::new();
        while self.idx < self.toks.len() {
            let pos = self.pos();
            if pos.col != 1 {
                return Err(ParseError::Syntax {
                    pos,
                    expected: vec!["declaration starting in column 1".into()],
                    found: self.toks[self.idx].tok.to_string(),
                });
            }
            let name = self.ident()?;
            self.fenced = true;
            let item = match self.peek() {
                Tok::ColonColon => {
                    self.bump();
                    DeclItem::Sig(self.scheme()?)
                }
                Tok::Equals => {
                    self.bump();
                    DeclItem::Def(self.expr()?)
                }
                _ => return self.error(&["`::`", "`=`"]),
            };
            if *self.peek() != Tok::Eof {
                return self.error(&["end of declaration"]);
            }
            self.fenced = false;
            decls.push(Decl { name, item, pos });
        }
        check_declarations(&decls)?;
        Ok(Program { decls })
    }

    // -- types -------------------------------------------------------------

    fn scheme(&mut self) -> PResult<Scheme> {
        let constraints = if self.context_ahead() { self.context()? } else { ConstraintSet::new() };
        let ty = self.ty()?;
        Ok(Scheme::closed(constraints, ty))
    }

    fn context_ahead(&self) -> bool {
        match self.peek() {
            Tok::Upper(c) => c == "Dup" || c == "Drop",
            Tok::LParen => match self.peek_at(1) {
                Tok::Upper(c) => c == "Dup" || c == "Drop",
                Tok::RParen => *self.peek_at(2) == Tok::FatArrow,
                _ => false,
            },
            _ => false,
        }
    }

    fn context(&mut self) -> PResult<ConstraintSet> {
        let mut cs = ConstraintSet::new();
        if *self.peek() == Tok::LParen {
            self.bump();
            if *self.peek() != Tok::RParen {
                cs.insert(self.pred()?);
                while *self.peek() == Tok::Comma {
                    self.bump();
                    cs.insert(self.pred()?);
                }
            }
            self.expect(Tok::RParen, "`)`")?;
        } else {
            cs.insert(self.pred()?);
        }
        self.expect(Tok::FatArrow, "`=>`")?;
        Ok(cs)
    }

    fn pred(&mut self) -> PResult<Pred> {
        let class = match self.peek() {
            Tok::Upper(c) if c == "Dup" => Class::Dup,
            Tok::Upper(c) if c == "Drop" => Class::Drop,
            _ => return self.error(&["`Dup`", "`Drop`"]),
        };
        self.bump();
        Ok(Pred::new(class, self.atom_ty()?))
    }

    fn ty(&mut self) -> PResult<Type> {
        let dom = self.sum_ty()?;
        if let Tok::QArrow(q) = *self.peek() {
            self.bump();
            let cod = self.ty()?;
            return Ok(Type::arrow(dom, cod, q));
        }
        Ok(dom)
    }

    fn sum_ty(&mut self) -> PResult<Type> {
        let mut t = self.app_ty()?;
        while *self.peek() == Tok::Plus {
            self.bump();
            let r = self.app_ty()?;
            t = Type::sum(t, r);
        }
        Ok(t)
    }

    fn app_ty(&mut self) -> PResult<Type> {
        match self.peek() {
            Tok::Upper(c) if c == "Ref_s" || c == "Ref_w" => {
                let rq = if c == "Ref_s" { RefQual::S } else { RefQual::W };
                self.bump();
                Ok(Type::reference(rq, self.atom_ty()?))
            }
            _ => self.atom_ty(),
        }
    }

    fn atom_ty(&mut self) -> PResult<Type> {
        match self.peek().clone() {
            Tok::Ident(x) => {
                self.bump();
                Ok(Type::Var(x))
            }
            Tok::Upper(c) if c == "Unit" => {
                self.bump();
                Ok(Type::Unit)
            }
            Tok::LParen => {
                self.bump();
                if *self.peek() == Tok::RParen {
                    self.bump();
                    return Ok(Type::Unit);
                }
                let a = self.ty()?;
                match self.peek() {
                    Tok::Comma => {
                        self.bump();
                        let b = self.ty()?;
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(Type::prod(a, b))
                    }
                    Tok::RParen => {
                        self.bump();
                        Ok(a)
                    }
                    _ => self.error(&["`,`", "`)`"]),
                }
            }
            _ => self.error(&["type"]),
        }
    }

    // -- expressions -------------------------------------------------------

    fn expr(&mut self) -> PResult<SurfaceTerm> {
        let pos = self.pos();
        match self.peek() {
            Tok::Backslash => {
                self.bump();
                let pat = self.pattern()?;
                let q = match *self.peek() {
                    Tok::QArrow(q) => q,
                    _ => return self.error(&["qualified arrow"]),
                };
                self.bump();
                let body = self.expr()?;
                Ok(SurfaceTerm::at(Surface::Lam(q, pat, Box::new(body)), pos))
            }
            Tok::Let => {
                self.bump();
                let kind = if *self.peek() == Tok::LParen {
                    let (x, y) = self.pair_binders()?;
                    self.expect(Tok::Equals, "`=`")?;
                    let rhs = self.expr()?;
                    self.expect(Tok::In, "`in`")?;
                    let body = self.expr()?;
                    Surface::LetPair(x, y, Box::new(rhs), Box::new(body))
                } else {
                    let x = self.ident()?;
                    self.expect(Tok::Equals, "`=`")?;
                    let rhs = self.expr()?;
                    self.expect(Tok::In, "`in`")?;
                    let body = self.expr()?;
                    Surface::Let(x, Box::new(rhs), Box::new(body))
                };
                Ok(SurfaceTerm::at(kind, pos))
            }
            Tok::Case => {
                self.bump();
                let scrut = self.expr()?;
                self.expect(Tok::Of, "`of`")?;
                self.expect(Tok::LBrace, "`{`")?;
                self.expect(Tok::Inl, "`inl`")?;
                let x = self.ident()?;
                self.expect(Tok::Arrow, "`->`")?;
                let left = self.expr()?;
                self.expect(Tok::Semi, "`;`")?;
                self.expect(Tok::Inr, "`inr`")?;
                let y = self.ident()?;
                self.expect(Tok::Arrow, "`->`")?;
                let right = self.expr()?;
                self.expect(Tok::RBrace, "`}`")?;
                Ok(SurfaceTerm::at(
                    Surface::Case {
                        scrut: Box::new(scrut),
                        left: (x, Box::new(left)),
                        right: (y, Box::new(right)),
                    },
                    pos,
                ))
            }
            _ => self.app(),
        }
    }

    fn pattern(&mut self) -> PResult<Pattern> {
        if *self.peek() == Tok::LParen {
            let (x, y) = self.pair_binders()?;
            Ok(Pattern::Pair(x, y))
        } else {
            Ok(Pattern::Var(self.ident()?))
        }
    }

    fn pair_binders(&mut self) -> PResult<(Name, Name)> {
        self.expect(Tok::LParen, "`(`")?;
        let x = self.ident()?;
        self.expect(Tok::Comma, "`,`")?;
        let pos = self.pos();
        let y = self.ident()?;
        self.expect(Tok::RParen, "`)`")?;
        if x == y {
            return Err(ParseError::DuplicateBinder { pos, name: y });
        }
        Ok((x, y))
    }

    fn app(&mut self) -> PResult<SurfaceTerm> {
        let mut head = self.head()?;
        while self.atom_ahead() {
            let pos = head.pos;
            let arg = self.atom()?;
            head = SurfaceTerm::at(Surface::App(Box::new(head), Box::new(arg)), pos);
        }
        Ok(head)
    }

    fn head(&mut self) -> PResult<SurfaceTerm> {
        let pos = self.pos();
        let kind = match self.peek().clone() {
            Tok::Inl => {
                self.bump();
                Surface::Inl(Box::new(self.atom()?))
            }
            Tok::Inr => {
                self.bump();
                Surface::Inr(Box::new(self.atom()?))
            }
            Tok::New(q) => {
                self.bump();
                Surface::New(q, Box::new(self.atom()?))
            }
            Tok::Release(q) => {
                self.bump();
                Surface::Release(q, Box::new(self.atom()?))
            }
            Tok::Swap(q) => {
                self.bump();
                let r = self.atom()?;
                let v = self.atom()?;
                Surface::Swap(q, Box::new(r), Box::new(v))
            }
            _ => return self.atom(),
        };
        Ok(SurfaceTerm::at(kind, pos))
    }

    fn atom_ahead(&self) -> bool {
        matches!(self.peek(), Tok::Ident(_) | Tok::LParen)
    }

    fn atom(&mut self) -> PResult<SurfaceTerm> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Ident(x) => {
                self.bump();
                Ok(SurfaceTerm::at(Surface::Var(x), pos))
            }
            Tok::LParen => {
                self.bump();
                if *self.peek() == Tok::RParen {
                    self.bump();
                    return Ok(SurfaceTerm::at(Surface::Unit, pos));
                }
                let a = self.expr()?;
                match self.peek() {
                    Tok::Comma => {
                        self.bump();
                        let b = self.expr()?;
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(SurfaceTerm::at(Surface::Pair(Box::new(a), Box::new(b)), pos))
                    }
                    Tok::RParen => {
                        self.bump();
                        Ok(a)
                    }
                    _ => self.error(&["`,`", "`)`"]),
                }
            }
            _ => self.error(&["expression"]),
        }
    }
}

fn check_declarations(decls: &[Decl]) -> PResult<()> {
    let mut defs: BTreeSet<&Name> = BTreeSet::new();
    let mut sigs: BTreeMap<&Name, Pos> = BTreeMap::new();
    for d in decls {
        match d.item {
            DeclItem::Def(_) => {
                if !defs.insert(&d.name) {
                    return Err(ParseError::DuplicateDefinition { pos: d.pos, name: d.name.clone() });
                }
            }
            DeclItem::Sig(_) => {
                if sigs.insert(&d.name, d.pos).is_some() {
                    return Err(ParseError::DuplicateSignature { pos: d.pos, name: d.name.clone() });
                }
            }
        }
    }
    for (name, pos) in sigs {
        if !defs.contains(name) {
            return Err(ParseError::SignatureWithoutDefinition { pos, name: name.clone() });
        }
    }
    Ok(())
}

pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    Parser::new(src)?.program()
}

pub fn parse_expr(src: &str) -> Result<SurfaceTerm, ParseError> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return p.error(&["end of input"]);
    }
    Ok(e)
}

/// Parses a type scheme such as `(Dup a, Drop b) => a -U> b -U> a`.
pub fn parse_scheme(src: &str) -> Result<Scheme, ParseError> {
    let mut p = Parser::new(src)?;
    let s = p.scheme()?;
    if *p.peek() != Tok::Eof {
        return p.error(&["end of input"]);
    }
    Ok(s)
}

pub fn parse_type(src: &str) -> Result<Type, ParseError> {
    let mut p = Parser::new(src)?;
    let t = p.ty()?;
    if *p.peek() != Tok::Eof {
        return p.error(&["end of input"]);
    }
    Ok(t)
}
