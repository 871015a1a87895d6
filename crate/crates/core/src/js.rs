//! Position-targeted ECMAScript rewrites: Line Skipper and Object Creator.
//!
//! Scripts are parsed with swc to obtain statement spans. Guards are spliced
//! into the original text at those spans, so code outside the targeted
//! statements keeps its exact bytes, and every result is re-parsed before it
//! is returned.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::ops::Range;
use std::panic::{self, AssertUnwindSafe};
use std::sync::LazyLock;

use regex::Regex;
use swc_common::comments::{CommentKind, Comments, SingleThreadedComments};
use swc_common::{sync::Lrc, FileName, SourceMap, Span, Spanned};
use swc_ecma_ast::{
    Callee, Decl, EsVersion, Expr, Lit, MemberExpr, MemberProp, Module, ModuleItem, Script, Stmt,
    VarDeclKind,
};
use swc_ecma_parser::{parse_file_as_module, parse_file_as_script, EsSyntax, Syntax};
use swc_ecma_visit::{Visit, VisitWith};

use crate::model::{ErrorKey, ErrorType, FailurePoint, StrategyKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewriteError {
    #[error("script does not parse: {0}")]
    ParseFailure(String),
    #[error("no statement at line {line}, column {column}")]
    NotFound { line: u32, column: u32 },
    #[error("statement cannot be wrapped: {0}")]
    UnsupportedStatement(String),
    #[error("unsupported target: {0}")]
    UnsupportedTarget(String),
    #[error("{0} does not handle {1} errors")]
    UnsupportedErrorType(StrategyKind, ErrorType),
    #[error("error carries no identifier")]
    MissingIdentifier,
}

impl RewriteError {
    /// Errors that only make one edit inapplicable, as opposed to a script
    /// that cannot be processed at all.
    pub fn is_inapplicable(&self) -> bool {
        !matches!(self, RewriteError::ParseFailure(_))
    }
}

// ---------------------------------------------------------------------------
// Parsing

enum Program {
    Script(Script),
    Module(Module),
}

/// A parsed script together with the line table of its source text.
pub struct ParsedScript<'a> {
    source: &'a str,
    program: Program,
    start: u32,
    lines: LineIndex,
}

impl<'a> ParsedScript<'a> {
    /// Parses as a classic script, falling back to a module.
    pub fn parse(source: &'a str) -> Result<Self, RewriteError> {
        let attempt = panic::catch_unwind(AssertUnwindSafe(|| parse_program(source, None)));
        let (program, start) = match attempt {
            Ok(result) => result?,
            Err(_) => return Err(RewriteError::ParseFailure("parser panicked".into())),
        };
        Ok(ParsedScript { source, program, start, lines: LineIndex::new(source) })
    }

    fn visit<V: Visit>(&self, visitor: &mut V) {
        match &self.program {
            Program::Script(s) => s.visit_with(visitor),
            Program::Module(m) => m.visit_with(visitor),
        }
    }

    fn statements(&self) -> Vec<StmtInfo> {
        let mut collector = StmtCollector { out: Vec::new(), in_list: false, start: self.start };
        self.visit(&mut collector);
        collector.out
    }

    /// Runs `f` on the statement node spanning exactly `range`.
    fn with_stmt<R>(&self, range: &Range<usize>, f: impl FnOnce(&Stmt) -> R) -> Option<R> {
        let mut finder = StmtFinder { target: range.clone(), start: self.start, f: Some(f), out: None };
        self.visit(&mut finder);
        finder.out
    }

    /// Innermost statement covering the failure point. A zero column selects
    /// the first statement that starts on the line.
    pub fn locate(&self, fp: &FailurePoint) -> Result<LocatedStatement, RewriteError> {
        self.locate_in(&self.statements(), fp)
    }

    fn locate_in(&self, stmts: &[StmtInfo], fp: &FailurePoint) -> Result<LocatedStatement, RewriteError> {
        let not_found = || RewriteError::NotFound { line: fp.line, column: fp.column };
        let line = self.lines.line_range(fp.line).ok_or_else(not_found)?;

        let innermost_at = |offset: usize| {
            stmts
                .iter()
                .filter(|s| s.range.start <= offset && offset < s.range.end)
                .min_by_key(|s| s.range.len())
        };

        let chosen = if fp.column == 0 {
            stmts
                .iter()
                .filter(|s| line.contains(&s.range.start))
                .min_by_key(|s| (s.range.start, Reverse(s.range.len())))
                .or_else(|| {
                    let text = &self.source[line.clone()];
                    let indent = text.len() - text.trim_start().len();
                    innermost_at(line.start + indent)
                })
        } else {
            let offset = self.lines.offset(&line, fp.column, self.source).ok_or_else(not_found)?;
            innermost_at(offset)
        };
        chosen.cloned().map(LocatedStatement::from).ok_or_else(not_found)
    }

    fn offset_of(&self, fp: &FailurePoint) -> Option<usize> {
        if fp.column == 0 {
            return None;
        }
        let line = self.lines.line_range(fp.line)?;
        self.lines.offset(&line, fp.column, self.source)
    }

    /// Member expressions inside a statement that read or write `property`.
    fn member_accesses(&self, stmt: &Range<usize>, property: &str) -> Vec<MemberAccess> {
        let source = self.source;
        let start = self.start;
        self.with_stmt(stmt, |node| {
            let mut finder = MemberFinder { property, source, start, out: Vec::new() };
            node.visit_with(&mut finder);
            finder.out
        })
        .unwrap_or_default()
    }

    /// Picks the access that threw: the innermost one covering the column when
    /// the column is known, the first one in source order otherwise.
    fn failing_access(&self, stmt: &Range<usize>, fp: &FailurePoint, property: &str) -> Option<MemberAccess> {
        let accesses = self.member_accesses(stmt, property);
        if let Some(offset) = self.offset_of(fp) {
            if let Some(hit) = accesses
                .iter()
                .filter(|a| a.span.start <= offset && offset < a.span.end)
                .min_by_key(|a| a.span.len())
            {
                return Some(hit.clone());
            }
        }
        accesses.into_iter().min_by_key(|a| a.span.start)
    }
}

fn parse_program(source: &str, comments: Option<&dyn Comments>) -> Result<(Program, u32), RewriteError> {
    let cm: Lrc<SourceMap> = Default::default();
    let fm = cm.new_source_file(FileName::Anon.into(), source.to_owned());
    let syntax = Syntax::Es(EsSyntax::default());
    let start = fm.start_pos.0;
    // Recovered errors count as failures: rewriting a script the browser
    // rejects would only hide the real problem.
    let mut recovered = Vec::new();
    let script_err = match parse_file_as_script(&fm, syntax, EsVersion::latest(), comments, &mut recovered) {
        Ok(script) if recovered.is_empty() => return Ok((Program::Script(script), start)),
        Ok(_) => recovered.remove(0),
        Err(e) => e,
    };
    let mut recovered = Vec::new();
    match parse_file_as_module(&fm, syntax, EsVersion::latest(), comments, &mut recovered) {
        Ok(module) if recovered.is_empty() => Ok((Program::Module(module), start)),
        _ => Err(RewriteError::ParseFailure(script_err.kind().msg().into_owned())),
    }
}

struct LiteralSpans {
    out: Vec<Range<usize>>,
    start: u32,
}

impl Visit for LiteralSpans {
    fn visit_str(&mut self, s: &swc_ecma_ast::Str) {
        self.out.push(span_range(s.span, self.start));
    }

    fn visit_tpl(&mut self, t: &swc_ecma_ast::Tpl) {
        self.out.push(span_range(t.span, self.start));
    }
}

fn is_line_terminator(c: char) -> bool {
    matches!(c, '\n' | '\r' | '\u{2028}' | '\u{2029}')
}

/// `source` on a single line, with line terminators turned into spaces, when
/// that cannot change its meaning: no line comments, no terminator inside a
/// string or template literal, and the same statements afterwards.
pub fn join_lines(source: &str) -> Option<String> {
    let comments = SingleThreadedComments::default();
    let parsed = panic::catch_unwind(AssertUnwindSafe(|| parse_program(source, Some(&comments))));
    let (program, start) = parsed.ok()?.ok()?;
    let (leading, trailing) = comments.borrow_all();
    if leading.values().chain(trailing.values()).flatten().any(|c| c.kind == CommentKind::Line) {
        return None;
    }
    let original = ParsedScript { source, program, start, lines: LineIndex::new(source) };
    let mut literals = LiteralSpans { out: Vec::new(), start };
    original.visit(&mut literals);
    let mut joined = String::with_capacity(source.len());
    for (i, c) in source.char_indices() {
        if is_line_terminator(c) {
            if literals.out.iter().any(|r| r.contains(&i)) {
                return None;
            }
            joined.push(' ');
        } else {
            joined.push(c);
        }
    }
    let parsed = ParsedScript::parse(&joined).ok()?;
    (parsed.statements().len() == original.statements().len()).then_some(joined)
}

/// True when `source` parses as a script or a module.
pub fn is_parseable(source: &str) -> bool {
    ParsedScript::parse(source).is_ok()
}

// ---------------------------------------------------------------------------
// Line table

/// Maps 1-based lines and UTF-16 columns onto byte offsets, using the
/// ECMAScript line terminators.
#[derive(Debug, Clone)]
pub struct LineIndex {
    starts: Vec<usize>,
    len: usize,
}

impl LineIndex {
    pub fn new(source: &str) -> Self {
        let mut starts = vec![0];
        let mut chars = source.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            match c {
                '\r' => {
                    if let Some(&(_, '\n')) = chars.peek() {
                        chars.next();
                        starts.push(i + 2);
                    } else {
                        starts.push(i + 1);
                    }
                }
                '\n' => starts.push(i + 1),
                '\u{2028}' | '\u{2029}' => starts.push(i + c.len_utf8()),
                _ => {}
            }
        }
        LineIndex { starts, len: source.len() }
    }

    pub fn line_count(&self) -> usize {
        self.starts.len()
    }

    /// Byte range of the 1-based `line`, terminator included.
    pub fn line_range(&self, line: u32) -> Option<Range<usize>> {
        let idx = (line as usize).checked_sub(1)?;
        let start = *self.starts.get(idx)?;
        let end = self.starts.get(idx + 1).copied().unwrap_or(self.len);
        Some(start..end)
    }

    fn offset(&self, line: &Range<usize>, column: u32, source: &str) -> Option<usize> {
        let mut units = 0u32;
        for (i, c) in source[line.clone()].char_indices() {
            if units >= column {
                return Some(line.start + i);
            }
            units += c.len_utf16() as u32;
        }
        None
    }

    /// 1-based line and 0-based byte column of an offset.
    pub fn position(&self, offset: usize) -> (u32, u32) {
        let idx = match self.starts.binary_search(&offset) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        ((idx + 1) as u32, (offset - self.starts[idx]) as u32)
    }
}

// ---------------------------------------------------------------------------
// Statements

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StmtClass {
    Plain,
    /// Declarations whose scoping or hoisting a surrounding block would change.
    ScopedDecl(&'static str),
}

#[derive(Debug, Clone)]
struct StmtInfo {
    range: Range<usize>,
    in_list: bool,
    class: StmtClass,
}

/// A statement selected by a failure point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatedStatement {
    /// Byte range in the source.
    pub span: Range<usize>,
    /// Whether the statement sits in a statement list (block, body, case).
    pub in_list: bool,
    wrap_hazard: Option<&'static str>,
}

impl From<StmtInfo> for LocatedStatement {
    fn from(info: StmtInfo) -> Self {
        let wrap_hazard = match info.class {
            StmtClass::ScopedDecl(what) => Some(what),
            StmtClass::Plain => None,
        };
        LocatedStatement { span: info.range, in_list: info.in_list, wrap_hazard }
    }
}

fn classify_stmt(stmt: &Stmt) -> StmtClass {
    match stmt {
        Stmt::Decl(Decl::Fn(_)) => StmtClass::ScopedDecl("function declaration"),
        Stmt::Decl(Decl::Class(_)) => StmtClass::ScopedDecl("class declaration"),
        Stmt::Decl(Decl::Var(v)) if v.kind == VarDeclKind::Var => StmtClass::Plain,
        Stmt::Decl(Decl::Var(_)) => StmtClass::ScopedDecl("lexical declaration"),
        Stmt::Decl(_) => StmtClass::ScopedDecl("declaration"),
        _ => StmtClass::Plain,
    }
}

fn span_range(span: Span, start: u32) -> Range<usize> {
    (span.lo.0 - start) as usize..(span.hi.0 - start) as usize
}

struct StmtCollector {
    out: Vec<StmtInfo>,
    in_list: bool,
    start: u32,
}

impl Visit for StmtCollector {
    fn visit_stmts(&mut self, stmts: &[Stmt]) {
        for stmt in stmts {
            self.in_list = true;
            stmt.visit_with(self);
        }
    }

    fn visit_module_items(&mut self, items: &[ModuleItem]) {
        for item in items {
            match item {
                ModuleItem::Stmt(stmt) => {
                    self.in_list = true;
                    stmt.visit_with(self);
                }
                ModuleItem::ModuleDecl(decl) => {
                    let range = span_range(decl.span(), self.start);
                    self.out.push(StmtInfo { range, in_list: true, class: StmtClass::ScopedDecl("module declaration") });
                    self.in_list = false;
                    decl.visit_children_with(self);
                }
            }
        }
    }

    fn visit_stmt(&mut self, stmt: &Stmt) {
        let in_list = std::mem::replace(&mut self.in_list, false);
        let range = span_range(stmt.span(), self.start);
        self.out.push(StmtInfo { range, in_list, class: classify_stmt(stmt) });
        stmt.visit_children_with(self);
    }
}

struct StmtFinder<F, R> {
    target: Range<usize>,
    start: u32,
    f: Option<F>,
    out: Option<R>,
}

impl<F: FnOnce(&Stmt) -> R, R> Visit for StmtFinder<F, R> {
    fn visit_stmt(&mut self, stmt: &Stmt) {
        if self.f.is_none() {
            return;
        }
        if span_range(stmt.span(), self.start) == self.target {
            if let Some(f) = self.f.take() {
                self.out = Some(f(stmt));
            }
            return;
        }
        stmt.visit_children_with(self);
    }
}

// ---------------------------------------------------------------------------
// Member accesses

/// What a dereferenced base expression is, as far as a guard can name it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaseExpr {
    /// A plain variable reference, e.g. `m`.
    Ident(String),
    /// A side-effect-free property path, e.g. `config.user` or `this.el`.
    Path(String),
    /// Anything else: calls, computed keys, literals.
    Complex(String),
}

#[derive(Debug, Clone)]
struct MemberAccess {
    span: Range<usize>,
    base: BaseExpr,
    by_id_query: Option<Option<String>>,
}

struct MemberFinder<'s> {
    property: &'s str,
    source: &'s str,
    start: u32,
    out: Vec<MemberAccess>,
}

fn prop_name(prop: &MemberProp) -> Option<String> {
    match prop {
        MemberProp::Ident(name) => Some(name.sym.as_str().to_owned()),
        MemberProp::Computed(c) => match &*c.expr {
            Expr::Lit(Lit::Str(s)) => s.value.as_atom().map(|a| a.as_str().to_owned()),
            Expr::Lit(Lit::Num(n)) => Some(n.value.to_string()),
            _ => None,
        },
        MemberProp::PrivateName(_) => None,
    }
}

fn is_static_path(expr: &Expr) -> bool {
    match expr {
        Expr::Ident(_) | Expr::This(_) => true,
        Expr::Member(m) => {
            let static_prop = match &m.prop {
                MemberProp::Ident(_) => true,
                MemberProp::Computed(c) => matches!(&*c.expr, Expr::Lit(Lit::Str(_) | Lit::Num(_))),
                MemberProp::PrivateName(_) => false,
            };
            static_prop && is_static_path(&m.obj)
        }
        Expr::Paren(p) => is_static_path(&p.expr),
        _ => false,
    }
}

/// `document.getElementById(<arg>)`: `Some(Some(id))` for a literal id,
/// `Some(None)` for a computed one, `None` when the expression is no such call.
fn by_id_call(expr: &Expr) -> Option<Option<String>> {
    let Expr::Call(call) = expr else { return None };
    let Callee::Expr(callee) = &call.callee else { return None };
    let Expr::Member(member) = &**callee else { return None };
    let is_document = matches!(&*member.obj, Expr::Ident(i) if i.sym.as_str() == "document");
    let is_accessor = matches!(&member.prop, MemberProp::Ident(p) if p.sym.as_str() == "getElementById");
    if !is_document || !is_accessor {
        return None;
    }
    let literal = match call.args.as_slice() {
        [arg] if arg.spread.is_none() => match &*arg.expr {
            Expr::Lit(Lit::Str(s)) => s.value.as_atom().map(|a| a.as_str().to_owned()),
            Expr::Tpl(t) if t.exprs.is_empty() && t.quasis.len() == 1 => {
                t.quasis[0].cooked.as_ref().and_then(|c| c.as_atom()).map(|a| a.as_str().to_owned())
            }
            _ => None,
        },
        _ => None,
    };
    Some(literal.filter(|id| !id.is_empty()))
}

impl<'s> MemberFinder<'s> {
    fn record(&mut self, member: &MemberExpr) {
        let obj = match &*member.obj {
            Expr::Paren(p) => &*p.expr,
            other => other,
        };
        let text = self.source[span_range(obj.span(), self.start)].to_owned();
        let base = match obj {
            Expr::Ident(i) => BaseExpr::Ident(i.sym.as_str().to_owned()),
            e if is_static_path(e) => BaseExpr::Path(text),
            _ => BaseExpr::Complex(text),
        };
        self.out.push(MemberAccess {
            span: span_range(member.span, self.start),
            base,
            by_id_query: by_id_call(obj),
        });
    }
}

impl Visit for MemberFinder<'_> {
    fn visit_member_expr(&mut self, member: &MemberExpr) {
        if prop_name(&member.prop).as_deref() == Some(self.property) {
            self.record(member);
        }
        member.visit_children_with(self);
    }
}

/// Base expression dereferenced by the failing access to `property`.
pub fn failing_base(source: &str, fp: &FailurePoint, property: &str) -> Result<BaseExpr, RewriteError> {
    let script = ParsedScript::parse(source)?;
    let stmt = script.locate(fp)?;
    script
        .failing_access(&stmt.span, fp, property)
        .map(|a| a.base)
        .ok_or_else(|| RewriteError::UnsupportedTarget(format!("no access to `{property}` at the failure point")))
}

/// Id passed to `document.getElementById` when the statement at `fp`
/// dereferences the result of such a call with a literal argument.
/// When `property` is given only accesses to that property are considered.
pub fn by_id_query_at(source: &str, fp: &FailurePoint, property: Option<&str>) -> Result<Option<String>, RewriteError> {
    let script = ParsedScript::parse(source)?;
    let stmt = match script.locate(fp) {
        Ok(stmt) => stmt,
        Err(RewriteError::NotFound { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    if let Some(property) = property {
        let access = script.failing_access(&stmt.span, fp, property);
        return Ok(access.and_then(|a| a.by_id_query).flatten());
    }
    let mut finder = AnyByIdFinder { out: None };
    script.with_stmt(&stmt.span, |node| node.visit_with(&mut finder));
    Ok(finder.out.flatten())
}

struct AnyByIdFinder {
    out: Option<Option<String>>,
}

impl Visit for AnyByIdFinder {
    fn visit_member_expr(&mut self, member: &MemberExpr) {
        if self.out.is_none() {
            let obj = match &*member.obj {
                Expr::Paren(p) => &*p.expr,
                other => other,
            };
            if let Some(found) = by_id_call(obj) {
                self.out = Some(found);
                return;
            }
        }
        member.visit_children_with(self);
    }
}

/// Span of the statement selected by `fp`.
pub fn locate_statement(source: &str, fp: &FailurePoint) -> Result<Range<usize>, RewriteError> {
    let script = ParsedScript::parse(source)?;
    script.locate(fp).map(|s| s.span)
}

// ---------------------------------------------------------------------------
// Rewrite plans

/// One requested rewrite at a failure point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edit {
    pub strategy: StrategyKind,
    pub fp: FailurePoint,
    pub error_type: ErrorType,
    pub identifier: Option<String>,
    /// Identity of the targeted error; used for activation pings.
    pub key: Option<ErrorKey>,
}

/// All edits for one resource.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RewritePlan {
    pub resource_url: String,
    pub edits: Vec<Edit>,
}

impl RewritePlan {
    pub fn new(resource_url: impl Into<String>) -> Self {
        RewritePlan { resource_url: resource_url.into(), edits: Vec::new() }
    }

    pub fn push(&mut self, edit: Edit) {
        self.edits.push(edit);
    }

    /// Edits ordered by descending (line, column).
    pub fn sorted(&self) -> Vec<Edit> {
        let mut edits = self.edits.clone();
        edits.sort_by_key(|e| Reverse((e.fp.line, e.fp.column)));
        edits
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewriteOptions {
    /// Emit activation pings inside the healed code paths.
    pub instrument: bool,
}

/// An edit that could not be applied, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedEdit {
    pub edit: Edit,
    pub reason: RewriteError,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanOutcome {
    pub body: String,
    pub applied: Vec<Edit>,
    pub skipped: Vec<SkippedEdit>,
}

static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[\p{L}\p{Nl}_$][\p{L}\p{Nl}\p{Mn}\p{Mc}\p{Nd}\p{Pc}_$]*$").unwrap());

const RESERVED: &[&str] = &[
    "break", "case", "catch", "class", "const", "continue", "debugger", "default", "delete", "do",
    "else", "export", "extends", "false", "finally", "for", "function", "if", "import", "in",
    "instanceof", "new", "null", "return", "super", "switch", "this", "throw", "true", "try",
    "typeof", "var", "void", "while", "with", "let", "static", "yield", "await", "enum",
];

fn is_identifier(s: &str) -> bool {
    IDENT.is_match(s) && !RESERVED.contains(&s)
}

fn is_member_path(s: &str) -> bool {
    let mut parts = s.split('.');
    parts.next().is_some_and(|head| is_identifier(head) || head == "this") && parts.all(|p| IDENT.is_match(p))
}

/// Condition under which a guarded statement may run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Guard {
    Defined(String),
    IsFunction(String),
    NotNull(String),
}

impl Guard {
    fn condition(&self) -> String {
        match self {
            Guard::Defined(id) => format!("typeof {id} != 'undefined' && {id}"),
            Guard::IsFunction(id) => format!("typeof {id} === 'function'"),
            Guard::NotNull(path) => format!("{path} != null"),
        }
    }
}

#[derive(Debug, Clone)]
enum Action {
    Wrap(Guard),
    Initialize(String),
}

/// Text of the activation ping. It is inert when no monitor is installed.
pub fn activation_ping(strategy: StrategyKind, key: &ErrorKey, resource_url: &str) -> String {
    format!(
        "typeof __selfheal!=='undefined'&&__selfheal.activation({},{},{});",
        js_string(strategy.as_str()),
        js_string(key.as_str()),
        js_string(resource_url)
    )
}

/// JSON string literal that is also safe inside an inline `<script>` block.
pub fn js_string(value: &str) -> String {
    serde_json::to_string(value)
        .unwrap_or_else(|_| "\"\"".to_owned())
        .replace("</", "<\\/")
        .replace('\u{2028}', "\\u2028")
        .replace('\u{2029}', "\\u2029")
}

struct Resolved {
    stmt: LocatedStatement,
    action: Action,
    ping: Option<String>,
}

fn resolve_edit(
    script: &ParsedScript<'_>,
    stmts: &[StmtInfo],
    edit: &Edit,
    plan_url: &str,
    options: &RewriteOptions,
) -> Result<Resolved, RewriteError> {
    let identifier = edit.identifier.as_deref().filter(|s| !s.is_empty());
    let action_for = |stmt: &LocatedStatement| -> Result<Action, RewriteError> {
        match edit.strategy {
            StrategyKind::LineSkipper => {
                if let Some(what) = stmt.wrap_hazard {
                    return Err(RewriteError::UnsupportedStatement(what.to_owned()));
                }
                let id = identifier.ok_or(RewriteError::MissingIdentifier)?;
                let guard = match edit.error_type {
                    ErrorType::NotDefined if is_identifier(id) => Guard::Defined(id.to_owned()),
                    ErrorType::NotAFunction if is_member_path(id) => Guard::IsFunction(id.to_owned()),
                    ErrorType::NotDefined | ErrorType::NotAFunction => {
                        return Err(RewriteError::UnsupportedTarget(format!("`{id}` cannot be guarded")))
                    }
                    t if t.is_null_property() => match script.failing_access(&stmt.span, &edit.fp, id) {
                        Some(MemberAccess { base: BaseExpr::Ident(p) | BaseExpr::Path(p), .. }) => Guard::NotNull(p),
                        Some(MemberAccess { base: BaseExpr::Complex(text), .. }) => {
                            return Err(RewriteError::UnsupportedTarget(format!("`{text}` is not a plain reference")))
                        }
                        None => {
                            return Err(RewriteError::UnsupportedTarget(format!("no access to `{id}` at the failure point")))
                        }
                    },
                    other => return Err(RewriteError::UnsupportedErrorType(edit.strategy, other)),
                };
                Ok(Action::Wrap(guard))
            }
            StrategyKind::ObjectCreator => {
                if !edit.error_type.is_null_property() {
                    return Err(RewriteError::UnsupportedErrorType(edit.strategy, edit.error_type));
                }
                let id = identifier.ok_or(RewriteError::MissingIdentifier)?;
                match script.failing_access(&stmt.span, &edit.fp, id) {
                    Some(MemberAccess { base: BaseExpr::Ident(var), .. }) => Ok(Action::Initialize(var)),
                    Some(MemberAccess { base: BaseExpr::Path(text) | BaseExpr::Complex(text), .. }) => {
                        Err(RewriteError::UnsupportedTarget(format!("`{text}` is not a simple identifier")))
                    }
                    None => Err(RewriteError::UnsupportedTarget(format!("no access to `{id}` at the failure point"))),
                }
            }
            other => Err(RewriteError::UnsupportedErrorType(other, edit.error_type)),
        }
    };
    let stmt = script.locate_in(stmts, &edit.fp)?;
    let action = action_for(&stmt)?;
    let ping = match (&edit.key, options.instrument) {
        (Some(key), true) => Some(activation_ping(edit.strategy, key, plan_url)),
        _ => None,
    };
    Ok(Resolved { stmt, action, ping })
}

#[derive(Default)]
struct StmtEdits {
    in_list: bool,
    guards: Vec<Guard>,
    guard_pings: Vec<String>,
    inits: Vec<String>,
    init_pings: BTreeMap<String, Vec<String>>,
}

/// Text inserted at a byte offset. Closing text sorts before opening text at
/// the same offset, inner closings first and outer openings first.
#[derive(Debug)]
struct Insertion {
    offset: usize,
    closing: bool,
    width: usize,
    text: String,
}

fn insertions_for(span: &Range<usize>, edits: &StmtEdits) -> Vec<Insertion> {
    let mut open = String::new();
    let mut close = String::new();
    if !edits.in_list {
        open.push('{');
    }
    for var in &edits.inits {
        let pings = edits.init_pings.get(var).map(|p| p.concat()).unwrap_or_default();
        if pings.is_empty() {
            open.push_str(&format!("if ({var} == null) {{{var} = {{}};}} "));
        } else {
            open.push_str(&format!("if ({var} == null) {{{var} = {{}}; {pings}}} "));
        }
    }
    if !edits.guards.is_empty() {
        let condition = edits.guards.iter().map(Guard::condition).collect::<Vec<_>>().join(" && ");
        open.push_str(&format!("if ({condition}) {{"));
        close.push('}');
        if !edits.guard_pings.is_empty() {
            close.push_str(&format!(" else {{{}}}", edits.guard_pings.concat()));
        }
    }
    if !edits.in_list {
        close.push('}');
    }
    let mut out = vec![Insertion { offset: span.start, closing: false, width: span.len(), text: open }];
    if !close.is_empty() {
        out.push(Insertion { offset: span.end, closing: true, width: span.len(), text: close });
    }
    out
}

fn splice(source: &str, mut insertions: Vec<Insertion>) -> String {
    insertions.sort_by(|a, b| {
        a.offset.cmp(&b.offset).then_with(|| b.closing.cmp(&a.closing)).then_with(|| {
            if a.closing {
                a.width.cmp(&b.width)
            } else {
                b.width.cmp(&a.width)
            }
        })
    });
    let extra: usize = insertions.iter().map(|i| i.text.len()).sum();
    let mut out = String::with_capacity(source.len() + extra);
    let mut cursor = 0;
    for ins in insertions {
        out.push_str(&source[cursor..ins.offset]);
        out.push_str(&ins.text);
        cursor = ins.offset;
    }
    out.push_str(&source[cursor..]);
    out
}

fn render(source: &str, groups: &BTreeMap<(usize, usize), StmtEdits>) -> String {
    let insertions = groups
        .iter()
        .flat_map(|((start, end), edits)| insertions_for(&(*start..*end), edits))
        .collect();
    splice(source, insertions)
}

fn add_to_group(groups: &mut BTreeMap<(usize, usize), StmtEdits>, resolved: &Resolved) {
    let entry = groups.entry((resolved.stmt.span.start, resolved.stmt.span.end)).or_default();
    entry.in_list = resolved.stmt.in_list;
    match &resolved.action {
        Action::Wrap(guard) => {
            if !entry.guards.contains(guard) {
                entry.guards.push(guard.clone());
            }
            if let Some(ping) = &resolved.ping {
                entry.guard_pings.push(ping.clone());
            }
        }
        Action::Initialize(var) => {
            if !entry.inits.contains(var) {
                entry.inits.push(var.clone());
            }
            if let Some(ping) = &resolved.ping {
                entry.init_pings.entry(var.clone()).or_default().push(ping.clone());
            }
        }
    }
}

/// Applies every applicable edit of `plan` to `source`.
///
/// Edits that do not apply are reported in `skipped`; only a source that does
/// not parse fails the whole plan, in which case callers keep the original.
pub fn apply_plan(source: &str, plan: &RewritePlan, options: &RewriteOptions) -> Result<PlanOutcome, RewriteError> {
    let script = ParsedScript::parse(source)?;
    let stmts = script.statements();
    let mut skipped = Vec::new();
    let mut resolved = Vec::new();
    for edit in plan.sorted() {
        match resolve_edit(&script, &stmts, &edit, &plan.resource_url, options) {
            Ok(r) => resolved.push((edit, r)),
            Err(reason) => skipped.push(SkippedEdit { edit, reason }),
        }
    }

    let mut groups = BTreeMap::new();
    for (_, r) in &resolved {
        add_to_group(&mut groups, r);
    }
    let body = render(source, &groups);
    if resolved.is_empty() || is_parseable(&body) {
        let applied = resolved.into_iter().map(|(e, _)| e).collect();
        return Ok(PlanOutcome { body, applied, skipped });
    }

    // Some edit produced invalid code: retry one edit at a time, keeping only
    // those whose result still parses.
    let mut groups = BTreeMap::new();
    let mut applied = Vec::new();
    for (edit, r) in resolved {
        let mut candidate = clone_groups(&groups);
        add_to_group(&mut candidate, &r);
        if is_parseable(&render(source, &candidate)) {
            groups = candidate;
            applied.push(edit);
        } else {
            let reason = RewriteError::UnsupportedStatement("guarded statement would not parse".into());
            skipped.push(SkippedEdit { edit, reason });
        }
    }
    Ok(PlanOutcome { body: render(source, &groups), applied, skipped })
}

fn clone_groups(groups: &BTreeMap<(usize, usize), StmtEdits>) -> BTreeMap<(usize, usize), StmtEdits> {
    groups
        .iter()
        .map(|(k, v)| {
            (
                *k,
                StmtEdits {
                    in_list: v.in_list,
                    guards: v.guards.clone(),
                    guard_pings: v.guard_pings.clone(),
                    inits: v.inits.clone(),
                    init_pings: v.init_pings.clone(),
                },
            )
        })
        .collect()
}

fn apply_single(source: &str, edit: Edit) -> Result<String, RewriteError> {
    let plan = RewritePlan { resource_url: String::new(), edits: vec![edit] };
    let outcome = apply_plan(source, &plan, &RewriteOptions::default())?;
    match outcome.skipped.into_iter().next() {
        Some(skip) => Err(skip.reason),
        None => Ok(outcome.body),
    }
}

/// Wraps the statement at `fp` in a guard matching the error type.
pub fn apply_line_skipper(
    source: &str,
    fp: &FailurePoint,
    error_type: ErrorType,
    identifier: Option<&str>,
) -> Result<String, RewriteError> {
    apply_single(
        source,
        Edit {
            strategy: StrategyKind::LineSkipper,
            fp: fp.clone(),
            error_type,
            identifier: identifier.map(str::to_owned),
            key: None,
        },
    )
}

/// Initializes the null base of the failing property access with `{}` right
/// before the statement at `fp`. `property` is the property named by the error.
pub fn apply_object_creator(
    source: &str,
    fp: &FailurePoint,
    error_type: ErrorType,
    property: &str,
) -> Result<String, RewriteError> {
    apply_single(
        source,
        Edit {
            strategy: StrategyKind::ObjectCreator,
            fp: fp.clone(),
            error_type,
            identifier: Some(property.to_owned()),
            key: None,
        },
    )
}
