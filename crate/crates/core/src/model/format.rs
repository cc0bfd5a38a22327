//! Line-oriented text format for controlled reaction networks.
//!
//! ```text
//! model birth_death
//! scaling N = 100
//! species A
//! reaction birth:  A -> 2 A   unary(A)
//! reaction death:  A -> 0     unary(A)
//! controls:
//!   nu0: birth = 1.0, death = 0.6
//!   nu1: birth = 0.8, death = 1.0
//! stages: t = [0.0, 1.0, 2.0, 3.0]
//! domain: A in [0, 3)
//! initial: A = 1.2
//! cost: r = 0; phi = abs(z_A - 1.0); psi = 0; beta = 0
//! ```
//!
//! `domain`, `initial` and `cost` are optional. Cost expressions combine
//! constants, `abs(affine)` and `sq(affine)` terms, each optionally scaled
//! by `w *`; an affine form is a sum of `w * z_S` terms and a constant.
//! `phi[nu1] = …` and `r[nu1] = …` override the expression for one control.

use std::fmt::Write as _;

use crate::cost::{Affine, CostExpr, CostSpec, Term};
use crate::error::{Error, Result};

use super::{
    Control, ControlSet, DensityBox, JumpModel, PropensityForm, Reaction, Species, StagedHorizon,
};

/// A parsed model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDocument {
    pub model: JumpModel,
    pub horizon: StagedHorizon,
    /// Initial density `z_0`, when declared.
    pub initial: Option<Vec<f64>>,
    pub cost: CostSpec,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(char),
    Arrow,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

struct Lexer<'a> {
    line: usize,
    toks: Vec<Token>,
    pos: usize,
    end_col: usize,
    _src: &'a str,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

impl<'a> Lexer<'a> {
    /// Tokenises `src`, whose first character sits at column `col0`.
    fn new(src: &'a str, line: usize, col0: usize) -> Result<Self> {
        let chars: Vec<char> = src.chars().collect();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = col0 + i;
            if c.is_whitespace() {
                i += 1;
            } else if c == '-' && chars.get(i + 1) == Some(&'>') {
                toks.push(Token { tok: Tok::Arrow, col });
                i += 2;
            } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| syntax(line, col, format!("malformed number `{text}`")))?;
                toks.push(Token { tok: Tok::Num(v), col });
            } else if c.is_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    col,
                });
            } else {
                // stray punctuation is left for the parser to reject in context
                toks.push(Token { tok: Tok::Sym(c), col });
                i += 1;
            }
        }
        Ok(Self {
            line,
            toks,
            pos: 0,
            end_col: col0 + chars.len(),
            _src: src,
        })
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        syntax(self.line, self.col(), message)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expect_end(&self) -> Result<()> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("unexpected trailing input"))
        }
    }

    fn is_sym(&self, c: char) -> bool {
        self.peek() == Some(&Tok::Sym(c))
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.is_sym(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<()> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err("expected an identifier")),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected `{kw}`"))),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let neg = self.eat_sym('-');
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.err("expected a number")),
        }
    }
}

#[derive(Default)]
struct Draft {
    name: Option<String>,
    scaling: Option<u64>,
    species: Vec<String>,
    reactions: Vec<(usize, Reaction)>,
    controls: Vec<(usize, String, Vec<(String, f64, usize, usize)>)>,
    stages: Option<(usize, Vec<f64>)>,
    domain: Option<(usize, Vec<(String, f64, f64, usize)>)>,
    initial: Option<(usize, Vec<(String, f64, usize)>)>,
    cost: Option<(usize, Vec<CostItem>)>,
}

struct CostItem {
    key: String,
    control: Option<(String, usize)>,
    expr: RawExpr,
    line: usize,
    col: usize,
}

enum RawExpr {
    Number(f64),
    Expr(Vec<(f64, RawTerm)>),
}

enum RawTerm {
    Const,
    Abs(Vec<(f64, Option<(String, usize)>)>),
    Sq(Vec<(f64, Option<(String, usize)>)>),
}

/// Parses a model document; see the module docs for the grammar.
pub fn parse_model(text: &str) -> Result<ModelDocument> {
    let mut d = Draft::default();
    let mut in_controls = false;
    for (ln0, raw) in text.lines().enumerate() {
        let line = ln0 + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let indented = content.starts_with(|c: char| c.is_whitespace());
        if in_controls && indented {
            parse_control_line(&mut d, content, line)?;
            continue;
        }
        in_controls = false;
        let lead = content.len() - content.trim_start().len();
        let mut lx = Lexer::new(&content[lead..], line, lead + 1)?;
        let head_col = lx.col();
        let head = lx.ident()?;
        match head.as_str() {
            "model" => {
                dup(d.name.is_some(), line, head_col, "model")?;
                d.name = Some(lx.ident()?);
                lx.expect_end()?;
            }
            "scaling" => {
                dup(d.scaling.is_some(), line, head_col, "scaling")?;
                lx.keyword("N")?;
                lx.expect_sym('=')?;
                let col = lx.col();
                let v = lx.number()?;
                if v.fract() != 0.0 || v < 1.0 {
                    return Err(Error::Semantic(format!(
                        "line {line}, column {col}: scaling N must be a positive integer, got {v}"
                    )));
                }
                d.scaling = Some(v as u64);
                lx.expect_end()?;
            }
            "species" => {
                while !lx.at_end() {
                    let col = lx.col();
                    let s = lx.ident()?;
                    if d.species.contains(&s) {
                        return Err(Error::Semantic(format!(
                            "line {line}, column {col}: duplicate species {s}"
                        )));
                    }
                    d.species.push(s);
                    lx.eat_sym(',');
                }
            }
            "reaction" => {
                let r = parse_reaction(&mut lx, &d.species)?;
                if d.reactions.iter().any(|(_, q)| q.name == r.name) {
                    return Err(Error::Semantic(format!(
                        "line {line}: duplicate reaction {}",
                        r.name
                    )));
                }
                d.reactions.push((line, r));
            }
            "controls" => {
                lx.expect_sym(':')?;
                lx.expect_end()?;
                in_controls = true;
            }
            "stages" => {
                dup(d.stages.is_some(), line, head_col, "stages")?;
                lx.expect_sym(':')?;
                lx.keyword("t")?;
                lx.expect_sym('=')?;
                lx.expect_sym('[')?;
                let mut ts = Vec::new();
                loop {
                    ts.push(lx.number()?);
                    if !lx.eat_sym(',') {
                        break;
                    }
                }
                lx.expect_sym(']')?;
                lx.expect_end()?;
                d.stages = Some((line, ts));
            }
            "domain" => {
                dup(d.domain.is_some(), line, head_col, "domain")?;
                lx.expect_sym(':')?;
                let mut items = Vec::new();
                loop {
                    let col = lx.col();
                    let s = lx.ident()?;
                    lx.keyword("in")?;
                    lx.expect_sym('[')?;
                    let lo = lx.number()?;
                    lx.expect_sym(',')?;
                    let hi = lx.number()?;
                    lx.expect_sym(')')?;
                    items.push((s, lo, hi, col));
                    if !lx.eat_sym(',') {
                        break;
                    }
                }
                lx.expect_end()?;
                d.domain = Some((line, items));
            }
            "initial" => {
                dup(d.initial.is_some(), line, head_col, "initial")?;
                lx.expect_sym(':')?;
                let mut items = Vec::new();
                loop {
                    let col = lx.col();
                    let s = lx.ident()?;
                    lx.expect_sym('=')?;
                    items.push((s, lx.number()?, col));
                    if !lx.eat_sym(',') {
                        break;
                    }
                }
                lx.expect_end()?;
                d.initial = Some((line, items));
            }
            "cost" => {
                dup(d.cost.is_some(), line, head_col, "cost")?;
                lx.expect_sym(':')?;
                let mut items = Vec::new();
                loop {
                    let col = lx.col();
                    let key = lx.ident()?;
                    let control = if lx.eat_sym('[') {
                        let c = lx.col();
                        let name = lx.ident()?;
                        lx.expect_sym(']')?;
                        Some((name, c))
                    } else {
                        None
                    };
                    lx.expect_sym('=')?;
                    let expr = parse_cost_expr(&mut lx)?;
                    items.push(CostItem {
                        key,
                        control,
                        expr,
                        line,
                        col,
                    });
                    if !lx.eat_sym(';') {
                        break;
                    }
                    if lx.at_end() {
                        break;
                    }
                }
                lx.expect_end()?;
                d.cost = Some((line, items));
            }
            other => {
                return Err(syntax(line, head_col, format!("unknown directive `{other}`")));
            }
        }
    }
    build(d)
}

fn dup(already: bool, line: usize, col: usize, what: &str) -> Result<()> {
    if already {
        Err(syntax(line, col, format!("duplicate `{what}` line")))
    } else {
        Ok(())
    }
}

fn parse_control_line(d: &mut Draft, content: &str, line: usize) -> Result<()> {
    let lead = content.len() - content.trim_start().len();
    let mut lx = Lexer::new(&content[lead..], line, lead + 1)?;
    let name = lx.ident()?;
    lx.expect_sym(':')?;
    let mut rates = Vec::new();
    loop {
        let col = lx.col();
        let rxn = lx.ident()?;
        lx.expect_sym('=')?;
        let vcol = lx.col();
        let v = lx.number()?;
        rates.push((rxn, v, col, vcol));
        if !lx.eat_sym(',') {
            break;
        }
    }
    lx.expect_end()?;
    d.controls.push((line, name, rates));
    Ok(())
}

fn species_lookup(species: &[String], name: &str, line: usize, col: usize) -> Result<usize> {
    species.iter().position(|s| s == name).ok_or_else(|| {
        Error::Semantic(format!(
            "line {line}, column {col}: unknown species {name}"
        ))
    })
}

fn parse_complex(lx: &mut Lexer, species: &[String]) -> Result<Vec<u32>> {
    let mut v = vec![0u32; species.len()];
    // `0` is the empty complex; a zero coefficient is meaningless otherwise
    if lx.peek() == Some(&Tok::Num(0.0)) {
        lx.pos += 1;
        return Ok(v);
    }
    loop {
        let coeff = match lx.peek() {
            Some(Tok::Num(x)) => {
                let x = *x;
                let col = lx.col();
                lx.pos += 1;
                if x.fract() != 0.0 || x < 0.0 {
                    return Err(syntax(
                        lx.line,
                        col,
                        "stoichiometric coefficients must be non-negative integers",
                    ));
                }
                x as u32
            }
            _ => 1,
        };
        let col = lx.col();
        let name = lx.ident()?;
        let i = species_lookup(species, &name, lx.line, col)?;
        v[i] += coeff;
        if !lx.eat_sym('+') {
            break;
        }
    }
    Ok(v)
}

fn parse_reaction(lx: &mut Lexer, species: &[String]) -> Result<Reaction> {
    let name = lx.ident()?;
    lx.expect_sym(':')?;
    let reactants = parse_complex(lx, species)?;
    if lx.next() != Some(Tok::Arrow) {
        lx.pos = lx.pos.saturating_sub(1);
        return Err(lx.err("expected `->`"));
    }
    let products = parse_complex(lx, species)?;
    let col = lx.col();
    let kind = lx.ident()?;
    let line = lx.line;
    let form = match kind.as_str() {
        "zero" => PropensityForm::ZeroOrder,
        "unary" | "binary_self" => {
            lx.expect_sym('(')?;
            let c = lx.col();
            let s = lx.ident()?;
            lx.expect_sym(')')?;
            let i = species_lookup(species, &s, line, c)?;
            if kind == "unary" {
                PropensityForm::Unary(i)
            } else {
                PropensityForm::BinarySelf(i)
            }
        }
        "binary_pair" => {
            lx.expect_sym('(')?;
            let c1 = lx.col();
            let s1 = lx.ident()?;
            lx.expect_sym(',')?;
            let c2 = lx.col();
            let s2 = lx.ident()?;
            lx.expect_sym(')')?;
            PropensityForm::BinaryPair(
                species_lookup(species, &s1, line, c1)?,
                species_lookup(species, &s2, line, c2)?,
            )
        }
        other => {
            return Err(syntax(line, col, format!("unknown propensity `{other}`")));
        }
    };
    lx.expect_end()?;
    Reaction::new(name, reactants, products, form)
        .map_err(|e| Error::Semantic(format!("line {line}: {}", strip_prefix(&e))))
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Semantic(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `[sign] item ((+|-) item)*` where an item is `[w *] abs(..)`, `[w *] sq(..)`
/// or a number.
fn parse_cost_expr(lx: &mut Lexer) -> Result<RawExpr> {
    let mut terms = Vec::new();
    let mut sign = if lx.eat_sym('-') { -1.0 } else { 1.0 };
    loop {
        let mut w = sign;
        if let Some(Tok::Num(v)) = lx.peek() {
            let v = *v;
            lx.pos += 1;
            if lx.eat_sym('*') {
                w *= v;
            } else {
                terms.push((w * v, RawTerm::Const));
                match next_sign(lx) {
                    Some(s) => {
                        sign = s;
                        continue;
                    }
                    None => break,
                }
            }
        }
        let col = lx.col();
        let f = lx.ident()?;
        lx.expect_sym('(')?;
        let aff = parse_affine(lx)?;
        lx.expect_sym(')')?;
        let term = match f.as_str() {
            "abs" => RawTerm::Abs(aff),
            "sq" => RawTerm::Sq(aff),
            other => {
                return Err(syntax(lx.line, col, format!("unknown cost function `{other}`")));
            }
        };
        terms.push((w, term));
        match next_sign(lx) {
            Some(s) => sign = s,
            None => break,
        }
    }
    if let [(v, RawTerm::Const)] = terms.as_slice() {
        return Ok(RawExpr::Number(*v));
    }
    Ok(RawExpr::Expr(terms))
}

fn next_sign(lx: &mut Lexer) -> Option<f64> {
    if lx.eat_sym('+') {
        Some(1.0)
    } else if lx.eat_sym('-') {
        Some(-1.0)
    } else {
        None
    }
}

/// `[sign] aterm ((+|-) aterm)*`, aterm = `w * z_S` | `z_S` | `w`.
fn parse_affine(lx: &mut Lexer) -> Result<Vec<(f64, Option<(String, usize)>)>> {
    let mut out = Vec::new();
    let mut sign = if lx.eat_sym('-') { -1.0 } else { 1.0 };
    loop {
        let mut w = sign;
        let mut var = None;
        if let Some(Tok::Num(v)) = lx.peek() {
            w *= *v;
            lx.pos += 1;
            if lx.eat_sym('*') {
                var = Some(parse_density_var(lx)?);
            }
        } else {
            var = Some(parse_density_var(lx)?);
        }
        out.push((w, var));
        match next_sign(lx) {
            Some(s) => sign = s,
            None => break,
        }
    }
    Ok(out)
}

fn parse_density_var(lx: &mut Lexer) -> Result<(String, usize)> {
    let col = lx.col();
    let id = lx.ident()?;
    match id.strip_prefix("z_") {
        Some(s) if !s.is_empty() => Ok((s.to_string(), col)),
        _ => Err(syntax(lx.line, col, format!("expected a density `z_<species>`, got `{id}`"))),
    }
}

fn lower_expr(raw: &RawExpr, species: &[String], line: usize) -> Result<CostExpr> {
    let n = species.len();
    let mut e = CostExpr::zero();
    let terms = match raw {
        RawExpr::Number(v) => {
            e.constant = *v;
            return Ok(e);
        }
        RawExpr::Expr(t) => t,
    };
    for (w, t) in terms {
        let lower_aff = |a: &[(f64, Option<(String, usize)>)]| -> Result<Affine> {
            let mut aff = Affine {
                coef: vec![0.0; n],
                offset: 0.0,
            };
            for (c, v) in a {
                match v {
                    Some((s, col)) => aff.coef[species_lookup(species, s, line, *col)?] += c,
                    None => aff.offset += c,
                }
            }
            Ok(aff)
        };
        match t {
            RawTerm::Const => e.constant += w,
            RawTerm::Abs(a) => e.terms.push((*w, Term::Abs(lower_aff(a)?))),
            RawTerm::Sq(a) => e.terms.push((*w, Term::Sq(lower_aff(a)?))),
        }
    }
    Ok(e)
}

fn build(d: Draft) -> Result<ModelDocument> {
    let name = d
        .name
        .ok_or_else(|| Error::Semantic("missing `model` line".into()))?;
    let scaling = d
        .scaling
        .ok_or_else(|| Error::Semantic("missing `scaling N = …` line".into()))?;
    if d.species.is_empty() {
        return Err(Error::Semantic("missing `species` line".into()));
    }
    let species: Vec<Species> = d
        .species
        .iter()
        .enumerate()
        .map(|(index, name)| Species {
            name: name.clone(),
            index,
        })
        .collect();
    let reactions: Vec<Reaction> = d.reactions.into_iter().map(|(_, r)| r).collect();
    if d.controls.is_empty() {
        return Err(Error::Semantic("missing `controls:` block".into()));
    }
    let mut controls = Vec::new();
    for (line, cname, rates) in &d.controls {
        let mut ks = vec![None; reactions.len()];
        for (rxn, v, col, _) in rates {
            let k = reactions.iter().position(|r| &r.name == rxn).ok_or_else(|| {
                Error::Semantic(format!(
                    "line {line}, column {col}: unknown reaction {rxn}"
                ))
            })?;
            if ks[k].replace(*v).is_some() {
                return Err(Error::Semantic(format!(
                    "line {line}, column {col}: rate for {rxn} given twice"
                )));
            }
        }
        let rates = ks
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                v.ok_or_else(|| {
                    Error::Semantic(format!(
                        "line {line}: control {cname} has no rate for reaction {}",
                        reactions[k].name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        controls.push(Control {
            name: cname.clone(),
            rates,
        });
    }
    let controls = ControlSet::new(controls, reactions.len())?;
    let n = species.len();
    let domain = match &d.domain {
        None => None,
        Some((line, items)) => {
            let mut lo = vec![None; n];
            let mut hi = vec![0.0; n];
            for (s, l, h, col) in items {
                let i = species_lookup(&d.species, s, *line, *col)?;
                lo[i] = Some(*l);
                hi[i] = *h;
            }
            let lo = lo
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    v.ok_or_else(|| {
                        Error::Semantic(format!(
                            "line {line}: domain misses species {}",
                            d.species[i]
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(DensityBox::new(lo, hi)?)
        }
    };
    let model = JumpModel::new(name, species, reactions, controls, scaling, domain)?;
    let (_, ts) = d
        .stages
        .ok_or_else(|| Error::Semantic("missing `stages: t = […]` line".into()))?;
    let horizon = StagedHorizon::new(ts)?;
    let initial = match &d.initial {
        None => None,
        Some((line, items)) => {
            let mut z = vec![None; n];
            for (s, v, col) in items {
                let i = species_lookup(&d.species, s, *line, *col)?;
                if *v < 0.0 {
                    return Err(Error::Semantic(format!(
                        "line {line}, column {col}: negative initial density"
                    )));
                }
                z[i] = Some(*v);
            }
            Some(
                z.into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v.ok_or_else(|| {
                            Error::Semantic(format!(
                                "line {line}: initial misses species {}",
                                d.species[i]
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        }
    };
    let a = model.control_count();
    let mut cost = CostSpec::zero(n, a);
    if let Some((_, items)) = &d.cost {
        // plain keys first so that per-control overrides win regardless of order
        for pass in 0..2 {
            for it in items {
                if (pass == 0) != it.control.is_none() {
                    continue;
                }
                let which: Vec<usize> = match &it.control {
                    None => (0..a).collect(),
                    Some((cname, col)) => vec![model.controls().index_of(cname).ok_or_else(|| {
                        Error::Semantic(format!(
                            "line {}, column {col}: unknown control {cname}",
                            it.line
                        ))
                    })?],
                };
                match it.key.as_str() {
                    "r" => {
                        let e = lower_expr(&it.expr, &d.species, it.line)?;
                        which.iter().for_each(|&c| cost.stage[c] = e.clone());
                    }
                    "phi" => {
                        let e = lower_expr(&it.expr, &d.species, it.line)?;
                        which.iter().for_each(|&c| cost.running[c] = e.clone());
                    }
                    "psi" | "beta" if it.control.is_some() => {
                        return Err(syntax(
                            it.line,
                            it.col,
                            format!("`{}` cannot depend on the control", it.key),
                        ));
                    }
                    "psi" => cost.terminal = lower_expr(&it.expr, &d.species, it.line)?,
                    "beta" => match it.expr {
                        RawExpr::Number(b) if b >= 0.0 => cost.beta = b,
                        _ => {
                            return Err(syntax(
                                it.line,
                                it.col,
                                "beta must be a non-negative number",
                            ))
                        }
                    },
                    other => {
                        return Err(syntax(
                            it.line,
                            it.col,
                            format!("unknown cost key `{other}`"),
                        ))
                    }
                }
            }
        }
    }
    Ok(ModelDocument {
        model,
        horizon,
        initial,
        cost,
    })
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:?}");
    s
}

fn fmt_affine(out: &mut String, a: &Affine, names: &[String]) {
    let mut first = true;
    for (c, name) in a.coef.iter().zip(names) {
        if *c == 0.0 {
            continue;
        }
        if first {
            let _ = write!(out, "{} * z_{name}", fmt_num(*c));
        } else if *c < 0.0 {
            let _ = write!(out, " - {} * z_{name}", fmt_num(-c));
        } else {
            let _ = write!(out, " + {} * z_{name}", fmt_num(*c));
        }
        first = false;
    }
    if first {
        out.push_str(&fmt_num(a.offset));
    } else if a.offset < 0.0 {
        let _ = write!(out, " - {}", fmt_num(-a.offset));
    } else if a.offset > 0.0 {
        let _ = write!(out, " + {}", fmt_num(a.offset));
    }
}

fn fmt_expr(e: &CostExpr, names: &[String]) -> String {
    let mut out = String::new();
    let mut first = true;
    for (w, t) in &e.terms {
        let (f, a) = match t {
            Term::Abs(a) => ("abs", a),
            Term::Sq(a) => ("sq", a),
        };
        if first {
            let _ = write!(out, "{} * {f}(", fmt_num(*w));
        } else if *w < 0.0 {
            let _ = write!(out, " - {} * {f}(", fmt_num(-w));
        } else {
            let _ = write!(out, " + {} * {f}(", fmt_num(*w));
        }
        fmt_affine(&mut out, a, names);
        out.push(')');
        first = false;
    }
    if first {
        out.push_str(&fmt_num(e.constant));
    } else if e.constant < 0.0 {
        let _ = write!(out, " - {}", fmt_num(-e.constant));
    } else if e.constant > 0.0 {
        let _ = write!(out, " + {}", fmt_num(e.constant));
    }
    out
}

fn complex(v: &[u32], names: &[String]) -> String {
    let parts: Vec<String> = v
        .iter()
        .zip(names)
        .filter(|(c, _)| **c > 0)
        .map(|(c, n)| if *c == 1 { n.clone() } else { format!("{c} {n}") })
        .collect();
    if parts.is_empty() {
        "0".into()
    } else {
        parts.join(" + ")
    }
}

/// Renders a document in the text format; `parse_model` reads it back to an
/// equal document.
pub fn format_document(doc: &ModelDocument) -> String {
    let m = &doc.model;
    let names: Vec<String> = m.species().iter().map(|s| s.name.clone()).collect();
    let mut out = String::new();
    let _ = writeln!(out, "model {}", m.name());
    let _ = writeln!(out, "scaling N = {}", m.scaling());
    let _ = writeln!(out, "species {}", names.join(" "));
    for r in m.reactions() {
        let ann = match r.form {
            PropensityForm::ZeroOrder => "zero".to_string(),
            PropensityForm::Unary(i) => format!("unary({})", names[i]),
            PropensityForm::BinarySelf(i) => format!("binary_self({})", names[i]),
            PropensityForm::BinaryPair(i, j) => {
                format!("binary_pair({}, {})", names[i], names[j])
            }
        };
        let _ = writeln!(
            out,
            "reaction {}: {} -> {}   {ann}",
            r.name,
            complex(&r.reactants, &names),
            complex(&r.products, &names)
        );
    }
    out.push_str("controls:\n");
    for c in m.controls().iter() {
        let rates: Vec<String> = m
            .reactions()
            .iter()
            .zip(&c.rates)
            .map(|(r, k)| format!("{} = {}", r.name, fmt_num(*k)))
            .collect();
        let _ = writeln!(out, "  {}: {}", c.name, rates.join(", "));
    }
    let ts: Vec<String> = doc.horizon.times().iter().map(|t| fmt_num(*t)).collect();
    let _ = writeln!(out, "stages: t = [{}]", ts.join(", "));
    if let Some(b) = m.declared_domain() {
        let items: Vec<String> = names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{n} in [{}, {})", fmt_num(b.low[i]), fmt_num(b.high[i])))
            .collect();
        let _ = writeln!(out, "domain: {}", items.join(", "));
    }
    if let Some(z) = &doc.initial {
        let items: Vec<String> = names
            .iter()
            .zip(z)
            .map(|(n, v)| format!("{n} = {}", fmt_num(*v)))
            .collect();
        let _ = writeln!(out, "initial: {}", items.join(", "));
    }
    let c = &doc.cost;
    let mut items = vec![
        format!("r = {}", fmt_expr(&c.stage[0], &names)),
        format!("phi = {}", fmt_expr(&c.running[0], &names)),
    ];
    for (k, ctl) in m.controls().iter().enumerate().skip(1) {
        if c.stage[k] != c.stage[0] {
            items.push(format!("r[{}] = {}", ctl.name, fmt_expr(&c.stage[k], &names)));
        }
        if c.running[k] != c.running[0] {
            items.push(format!("phi[{}] = {}", ctl.name, fmt_expr(&c.running[k], &names)));
        }
    }
    items.push(format!("psi = {}", fmt_expr(&c.terminal, &names)));
    items.push(format!("beta = {}", fmt_num(c.beta)));
    let _ = writeln!(out, "cost: {}", items.join("; "));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    #[test]
    fn grammar_example_parses() {
        let doc = parse_model(builtin::BIRTH_DEATH_A1).unwrap();
        assert_eq!(doc.model.species_count(), 1);
        assert_eq!(doc.model.reaction_count(), 2);
        assert_eq!(doc.model.control_count(), 2);
        assert_eq!(doc.model.rate_constant(0, 1), 0.6);
        assert_eq!(doc.horizon.times(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(doc.initial, Some(vec![1.2]));
        assert_eq!(doc.cost.running[0].eval(&[1.5]), 0.5);
    }

    #[test]
    fn predator_prey_shape_and_cost() {
        let doc = parse_model(builtin::PREDATOR_PREY).unwrap();
        assert_eq!(doc.model.species_count(), 2);
        assert_eq!(doc.model.reaction_count(), 6);
        assert_eq!(doc.model.control_count(), 3);
        let phi = &doc.cost.running[2];
        assert!((phi.eval(&[1.0, 0.4]) - (0.2 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn unknown_species_is_semantic() {
        let text = builtin::BIRTH_DEATH_A1.replace("A -> 0", "C -> 0");
        match parse_model(&text) {
            Err(Error::Semantic(m)) => assert!(m.contains("unknown species C"), "{m}"),
            other => panic!("expected semantic error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        let text = builtin::BIRTH_DEATH_A1.replace("A -> 2 A", "A => 2 A");
        match parse_model(&text) {
            Err(Error::Syntax { line, column, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(column, 19);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_scaling_and_stoichiometry() {
        let t = builtin::BIRTH_DEATH_A1.replace("N = 100", "N = 0");
        assert!(matches!(parse_model(&t), Err(Error::Semantic(_))));
        let t = builtin::BIRTH_DEATH_A1.replace("A -> 0     unary(A)", "2 A -> 0 unary(A)");
        assert!(matches!(parse_model(&t), Err(Error::Semantic(_))));
    }

    #[test]
    fn missing_rate_rejected() {
        let t = builtin::BIRTH_DEATH_A1.replace(", death = 0.6", "");
        assert!(matches!(parse_model(&t), Err(Error::Semantic(_))));
    }

    #[test]
    fn per_control_override() {
        let t = builtin::BIRTH_DEATH_A1.replace(
            "psi = 0",
            "phi[nu1] = 2 * sq(z_A - 1) + 0.5; psi = -abs(z_A); beta = 0.5",
        );
        let doc = parse_model(&t).unwrap();
        assert_eq!(doc.cost.running[0].eval(&[2.0]), 1.0);
        assert_eq!(doc.cost.running[1].eval(&[2.0]), 2.5);
        assert_eq!(doc.cost.terminal.eval(&[2.0]), -2.0);
        assert_eq!(doc.cost.beta, 0.5);
    }

    #[test]
    fn round_trip_builtins() {
        for (_, text) in builtin::ALL {
            let doc = parse_model(text).unwrap();
            let again = parse_model(&format_document(&doc)).unwrap();
            assert_eq!(doc, again);
        }
    }
}
