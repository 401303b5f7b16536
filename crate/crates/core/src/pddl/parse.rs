use std::collections::BTreeSet;

use super::{Atom, Literal, PddlAction, PddlDomain, PddlError, PddlProblem, Predicate, Term, TypeDecl, TypedParam};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

#[derive(Debug, Clone)]
enum SExpr {
    Sym(String, Pos),
    List(Vec<SExpr>, Pos),
}

impl SExpr {
    fn pos(&self) -> Pos {
        match self {
            SExpr::Sym(_, p) | SExpr::List(_, p) => *p,
        }
    }

    fn sym(&self) -> Option<&str> {
        match self {
            SExpr::Sym(s, _) => Some(s),
            SExpr::List(..) => None,
        }
    }

    fn list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::List(items, _) => Some(items),
            SExpr::Sym(..) => None,
        }
    }
}

fn err(pos: Pos, message: impl Into<String>) -> PddlError {
    PddlError::Parse { line: pos.line, column: pos.column, message: message.into() }
}

fn read_sexpr(text: &str) -> Result<SExpr, PddlError> {
    let mut stack: Vec<(Vec<SExpr>, Pos)> = Vec::new();
    let mut done: Option<SExpr> = None;
    let mut line = 1;
    let mut column = 0;
    let mut chars = text.chars().peekable();
    let mut token = String::new();
    let mut token_pos = Pos { line, column };

    fn flush(token: &mut String, pos: Pos, stack: &mut [(Vec<SExpr>, Pos)]) -> Result<(), PddlError> {
        if token.is_empty() {
            return Ok(());
        }
        let sym = SExpr::Sym(token.to_lowercase(), pos);
        token.clear();
        match stack.last_mut() {
            Some((items, _)) => {
                items.push(sym);
                Ok(())
            }
            None => Err(err(pos, "expected `(` before symbol")),
        }
    }

    while let Some(c) = chars.next() {
        if c == '\n' {
            line += 1;
            column = 0;
        } else {
            column += 1;
        }
        let here = Pos { line, column };
        match c {
            ';' => {
                flush(&mut token, token_pos, &mut stack)?;
                while let Some(&n) = chars.peek() {
                    if n == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '(' => {
                flush(&mut token, token_pos, &mut stack)?;
                if done.is_some() {
                    return Err(err(here, "unexpected content after the top-level expression"));
                }
                stack.push((Vec::new(), here));
            }
            ')' => {
                flush(&mut token, token_pos, &mut stack)?;
                let (items, open) = stack.pop().ok_or_else(|| err(here, "unbalanced `)`"))?;
                let list = SExpr::List(items, open);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(list),
                    None => done = Some(list),
                }
            }
            c if c.is_whitespace() => flush(&mut token, token_pos, &mut stack)?,
            c => {
                if token.is_empty() {
                    token_pos = here;
                }
                token.push(c);
            }
        }
    }
    flush(&mut token, token_pos, &mut stack)?;
    if let Some((_, open)) = stack.last() {
        return Err(err(*open, "expected `)` to close this list before end of input"));
    }
    done.ok_or_else(|| err(Pos { line, column }, "expected `(define ...)`"))
}

fn expect_sym<'a>(e: &'a SExpr, what: &str) -> Result<&'a str, PddlError> {
    e.sym().ok_or_else(|| err(e.pos(), format!("expected {what}")))
}

fn expect_list<'a>(e: &'a SExpr, what: &str) -> Result<&'a [SExpr], PddlError> {
    e.list().ok_or_else(|| err(e.pos(), format!("expected {what}")))
}

/// `a b - t c` style typed list; untyped names default to `object`.
fn typed_list(items: &[SExpr], variables: bool) -> Result<Vec<TypedParam>, PddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let s = expect_sym(&items[i], "a name")?;
        if s == "-" {
            let ty = items.get(i + 1).ok_or_else(|| err(items[i].pos(), "expected a type name after `-`"))?;
            let ty = expect_sym(ty, "a type name")?;
            out.extend(pending.drain(..).map(|n| TypedParam::new(n, ty)));
            i += 2;
            continue;
        }
        let name = if variables {
            s.strip_prefix('?').ok_or_else(|| err(items[i].pos(), format!("expected a `?variable`, found `{s}`")))?
        } else {
            s
        };
        pending.push(name.to_string());
        i += 1;
    }
    out.extend(pending.into_iter().map(|n| TypedParam::new(n, "object")));
    Ok(out)
}

fn literal(e: &SExpr) -> Result<(Literal, Pos), PddlError> {
    let items = expect_list(e, "a literal")?;
    let head = items.first().ok_or_else(|| err(e.pos(), "expected a predicate name, found `()`"))?;
    let head = expect_sym(head, "a predicate name")?;
    if head == "not" {
        if items.len() != 2 {
            return Err(err(e.pos(), "expected exactly one literal inside `not`"));
        }
        let (inner, pos) = literal(&items[1])?;
        if !inner.positive {
            return Err(err(items[1].pos(), "expected a positive literal inside `not`"));
        }
        return Ok((Literal { positive: false, ..inner }, pos));
    }
    if head == "and" || head == "or" || head == "forall" || head == "when" {
        return Err(err(e.pos(), format!("expected a literal, found `{head}`")));
    }
    let args = items[1..]
        .iter()
        .map(|a| {
            let s = expect_sym(a, "a term")?;
            Ok(match s.strip_prefix('?') {
                Some(v) => Term::Var(v.to_string()),
                None => Term::Const(s.to_string()),
            })
        })
        .collect::<Result<Vec<_>, PddlError>>()?;
    Ok((Literal::pos(head, args), e.pos()))
}

fn conjunction(e: &SExpr) -> Result<Vec<(Literal, Pos)>, PddlError> {
    let items = expect_list(e, "a conjunction")?;
    match items.first().and_then(SExpr::sym) {
        None if items.is_empty() => Ok(Vec::new()),
        Some("and") => items[1..].iter().map(literal).collect(),
        _ => Ok(vec![literal(e)?]),
    }
}

fn check_declared(domain_preds: &[Predicate], lit: &Literal, pos: Pos) -> Result<(), PddlError> {
    let decl = domain_preds
        .iter()
        .find(|p| p.name == lit.predicate)
        .ok_or_else(|| err(pos, format!("undeclared predicate `{}`", lit.predicate)))?;
    if decl.params.len() != lit.args.len() {
        return Err(err(pos, format!("predicate `{}` expects {} arguments, found {}", lit.predicate, decl.params.len(), lit.args.len())));
    }
    Ok(())
}

fn action(items: &[SExpr], pos: Pos, predicates: &[Predicate]) -> Result<PddlAction, PddlError> {
    let name = expect_sym(items.get(1).ok_or_else(|| err(pos, "expected an action name"))?, "an action name")?;
    let mut parameters = Vec::new();
    let mut pre = Vec::new();
    let mut eff = Vec::new();
    let mut i = 2;
    while i < items.len() {
        let key = expect_sym(&items[i], "`:parameters`, `:precondition` or `:effect`")?;
        let value = items.get(i + 1).ok_or_else(|| err(items[i].pos(), format!("expected a value after `{key}`")))?;
        match key {
            ":parameters" => parameters = typed_list(expect_list(value, "a parameter list")?, true)?,
            ":precondition" => pre = conjunction(value)?,
            ":effect" => eff = conjunction(value)?,
            other => return Err(err(items[i].pos(), format!("unsupported action field `{other}`"))),
        }
        i += 2;
    }
    for (lit, p) in pre.iter().chain(eff.iter()) {
        check_declared(predicates, lit, *p)?;
    }
    for (a, pa) in &eff {
        if let Some((_, _)) = eff.iter().find(|(b, _)| a.positive && !b.positive && a.same_atom(b)) {
            return Err(err(*pa, format!("effect both adds and deletes `({})`", a.predicate)));
        }
    }
    // Variables used without being declared become trailing parameters typed
    // by the predicate declaration.
    let mut declared: BTreeSet<String> = parameters.iter().map(|p| p.name.clone()).collect();
    for (lit, _) in pre.iter().chain(eff.iter()) {
        let decl = predicates.iter().find(|p| p.name == lit.predicate).expect("checked above");
        for (term, slot) in lit.args.iter().zip(&decl.params) {
            if let Term::Var(v) = term {
                if declared.insert(v.clone()) {
                    parameters.push(TypedParam::new(v.clone(), slot.ty.clone()));
                }
            }
        }
    }
    Ok(PddlAction {
        name: name.to_string(),
        parameters,
        precondition: pre.into_iter().map(|(l, _)| l).collect(),
        effect: eff.into_iter().map(|(l, _)| l).collect(),
    })
}

fn define_header<'a>(root: &'a SExpr, kind: &str) -> Result<(&'a [SExpr], String), PddlError> {
    let items = expect_list(root, "`(define ...)`")?;
    if items.first().and_then(SExpr::sym) != Some("define") {
        return Err(err(root.pos(), "expected `define`"));
    }
    let head = items.get(1).ok_or_else(|| err(root.pos(), format!("expected `({kind} <name>)`")))?;
    let h = expect_list(head, &format!("`({kind} <name>)`"))?;
    if h.len() != 2 || h[0].sym() != Some(kind) {
        return Err(err(head.pos(), format!("expected `({kind} <name>)`")));
    }
    Ok((&items[2..], expect_sym(&h[1], "a name")?.to_string()))
}

/// Parse a `:strips :typing` domain.
pub fn parse(text: &str) -> Result<PddlDomain, PddlError> {
    let root = read_sexpr(text)?;
    let (sections, name) = define_header(&root, "domain")?;
    let mut types = Vec::new();
    let mut predicates: Vec<Predicate> = Vec::new();
    let mut action_exprs = Vec::new();
    for sec in sections {
        let items = expect_list(sec, "a domain section")?;
        let key = items.first().ok_or_else(|| err(sec.pos(), "expected a section keyword"))?;
        match expect_sym(key, "a section keyword")? {
            ":requirements" => {
                for r in &items[1..] {
                    let s = expect_sym(r, "a requirement")?;
                    let bare = s.trim_start_matches(':');
                    if !PddlDomain::REQUIREMENTS.contains(&bare) {
                        return Err(err(r.pos(), format!("unsupported requirement `{s}`, expected :strips or :typing")));
                    }
                }
            }
            ":types" => {
                types = typed_list(&items[1..], false)?
                    .into_iter()
                    .map(|t| TypeDecl { parent: (t.ty != "object").then_some(t.ty), name: t.name })
                    .collect();
            }
            ":predicates" => {
                for p in &items[1..] {
                    let pi = expect_list(p, "a predicate declaration")?;
                    let pname = expect_sym(pi.first().ok_or_else(|| err(p.pos(), "expected a predicate name"))?, "a predicate name")?;
                    if predicates.iter().any(|q| q.name == pname) {
                        return Err(err(p.pos(), format!("predicate `{pname}` declared twice")));
                    }
                    predicates.push(Predicate { name: pname.to_string(), params: typed_list(&pi[1..], true)? });
                }
            }
            ":action" => action_exprs.push((items, sec.pos())),
            other => return Err(err(key.pos(), format!("unsupported section `{other}`"))),
        }
    }
    let mut actions = Vec::new();
    for (items, pos) in action_exprs {
        let a = action(items, pos, &predicates)?;
        if actions.iter().any(|b: &PddlAction| b.name == a.name) {
            return Err(err(pos, format!("action `{}` defined twice", a.name)));
        }
        actions.push(a);
    }
    Ok(PddlDomain { name, types, predicates, actions })
}

fn ground_atom(e: &SExpr) -> Result<Atom, PddlError> {
    let (lit, pos) = literal(e)?;
    if !lit.positive {
        return Err(err(pos, "expected a positive ground atom"));
    }
    let args = lit
        .args
        .into_iter()
        .map(|t| match t {
            Term::Const(c) => Ok(c),
            Term::Var(v) => Err(err(pos, format!("expected a constant, found ?{v}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Atom { predicate: lit.predicate, args })
}

/// Parse a problem file (objects, init, positive conjunctive goal).
pub fn parse_problem(text: &str) -> Result<PddlProblem, PddlError> {
    let root = read_sexpr(text)?;
    let (sections, name) = define_header(&root, "problem")?;
    let mut problem = PddlProblem { name, domain: String::new(), objects: Vec::new(), init: Vec::new(), goal: Vec::new() };
    for sec in sections {
        let items = expect_list(sec, "a problem section")?;
        let key = items.first().ok_or_else(|| err(sec.pos(), "expected a section keyword"))?;
        match expect_sym(key, "a section keyword")? {
            ":domain" => {
                problem.domain =
                    expect_sym(items.get(1).ok_or_else(|| err(sec.pos(), "expected a domain name"))?, "a domain name")?.to_string()
            }
            ":objects" => problem.objects = typed_list(&items[1..], false)?,
            ":init" => problem.init = items[1..].iter().map(ground_atom).collect::<Result<_, _>>()?,
            ":goal" => {
                let g = items.get(1).ok_or_else(|| err(sec.pos(), "expected a goal formula"))?;
                let gi = expect_list(g, "a goal formula")?;
                problem.goal = if gi.first().and_then(SExpr::sym) == Some("and") {
                    gi[1..].iter().map(ground_atom).collect::<Result<_, _>>()?
                } else if gi.is_empty() {
                    Vec::new()
                } else {
                    vec![ground_atom(g)?]
                };
            }
            other => return Err(err(key.pos(), format!("unsupported section `{other}`"))),
        }
    }
    Ok(problem)
}
