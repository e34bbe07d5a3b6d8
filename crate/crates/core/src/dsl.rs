//! Parser and renderer for the executor's action language.
//!
//! ```text
//! # Element: the search bar
//! do(action="Search", argument="Library at CMU", element="13")
//! exit(message="done")
//! ```
//!
//! The full grammar lives in `docs/action-dsl.md`.

use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::domain::{
    validate_action, validate_trajectory, Action, ActionKind, Comment, CommentTag, Trajectory,
    ValidityReport,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("empty input")]
    EmptyInput,
    #[error("expected exactly one call, found {0}")]
    MultipleCalls(usize),
    #[error("syntax error in block {block}, line {line}: {message}")]
    Syntax {
        block: usize,
        line: usize,
        message: String,
    },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("trajectory violates invariants: {0}")]
    InvariantViolation(ValidityReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallName {
    Do,
    Exit,
}

/// A `do(...)` or `exit(...)` call with its named arguments in source order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DslCall {
    pub name: CallName,
    pub args: Vec<(String, String)>,
}

impl DslCall {
    fn get(&self, key: &str) -> Option<&str> {
        self.args
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::from(match self.name {
            CallName::Do => "do(",
            CallName::Exit => "exit(",
        });
        for (i, (k, v)) in self.args.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{k}=\"{}\"", escape(v));
        }
        out.push(')');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DslEntry {
    /// Index label that preceded the block, if any.
    pub label: Option<usize>,
    pub comments: Vec<Comment>,
    pub call: DslCall,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DslDocument {
    pub entries: Vec<DslEntry>,
}

impl DslDocument {
    /// Renders every block, preserving argument order; blocks are separated by
    /// a blank line.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                let mut block = String::new();
                for c in &e.comments {
                    block.push_str(&render_comment(c));
                    block.push('\n');
                }
                block.push_str(&e.call.render());
                block
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn to_actions(&self) -> Result<Vec<Action>, DslError> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| entry_to_action(e).map_err(|m| syntax(i, 0, m)))
            .collect()
    }
}

fn syntax(block: usize, line: usize, message: impl Into<String>) -> DslError {
    DslError::Syntax {
        block,
        line,
        message: message.into(),
    }
}

fn glued_call_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?:do\(\s*action\s*=|exit\(\s*message\s*=)").expect("static regex")
    })
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:#{1,3}\s*)?(?:Action\s*)?\[?(\d+)\]?\s*[.:)]?$").expect("static regex")
    })
}

fn parse_comment(line: &str) -> Comment {
    let body = line.strip_prefix('#').unwrap_or(line).trim();
    if let Some(rest) = body.strip_prefix("Element:") {
        Comment::element(rest.trim())
    } else if let Some(rest) = body.strip_prefix("Note:") {
        Comment::note(rest.trim())
    } else {
        Comment::plain(body)
    }
}

fn render_comment(c: &Comment) -> String {
    match c.tag {
        CommentTag::Element => format!("# Element: {}", c.text),
        CommentTag::Note => format!("# Note: {}", c.text),
        CommentTag::Plain if c.text.is_empty() => "#".to_string(),
        CommentTag::Plain => format!("# {}", c.text),
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn skip_inline_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace() && c != '\n') {
            self.bump();
        }
    }

    fn line_no(&self) -> usize {
        self.src[..self.pos].matches('\n').count() + 1
    }

    fn current_line(&self) -> &'a str {
        let rest = self.rest();
        match rest.find('\n') {
            Some(i) => &rest[..i],
            None => rest,
        }
    }

    fn ident(&mut self) -> &'a str {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.bump();
        }
        &self.src[start..self.pos]
    }

    fn string(&mut self) -> Result<String, String> {
        if self.bump() != Some('"') {
            return Err("expected a double-quoted string".into());
        }
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err("unbalanced quotes".into()),
                Some('"') => return Ok(out),
                Some('\\') => match self.bump() {
                    None => return Err("unbalanced quotes".into()),
                    Some('"') => out.push('"'),
                    Some('\\') => out.push('\\'),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some(other) => {
                        out.push('\\');
                        out.push(other);
                    }
                },
                Some(c) => out.push(c),
            }
        }
    }

    /// Parses `name(key="value", ...)` starting at the current position.
    fn call(&mut self) -> Result<DslCall, String> {
        let name = self.ident();
        let name = match name {
            "do" => CallName::Do,
            "exit" => CallName::Exit,
            "" => return Err("expected a call".into()),
            other => return Err(format!("unknown call name `{other}`")),
        };
        self.skip_inline_ws();
        if self.bump() != Some('(') {
            return Err("expected `(` after call name".into());
        }
        let mut args: Vec<(String, String)> = Vec::new();
        self.skip_ws();
        if self.peek() == Some(')') {
            self.bump();
            return Ok(DslCall { name, args });
        }
        loop {
            self.skip_ws();
            let key = self.ident();
            if key.is_empty() {
                return match self.peek() {
                    None => Err("unbalanced parentheses".into()),
                    Some(c) => Err(format!("expected an argument name, found `{c}`")),
                };
            }
            if args.iter().any(|(k, _)| k == key) {
                return Err(format!("duplicate argument `{key}`"));
            }
            self.skip_ws();
            if self.bump() != Some('=') {
                return Err(format!("expected `=` after `{key}`"));
            }
            self.skip_ws();
            let value = self.string()?;
            args.push((key.to_string(), value));
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(')') => return Ok(DslCall { name, args }),
                None => return Err("unbalanced parentheses".into()),
                Some(c) => return Err(format!("expected `,` or `)`, found `{c}`")),
            }
        }
    }
}

/// Parses a sequence of comment+call blocks, optionally preceded by index labels.
pub fn parse_document(text: &str) -> Result<DslDocument, DslError> {
    let mut sc = Scanner { src: text, pos: 0 };
    let mut entries = Vec::new();
    let mut comments: Vec<Comment> = Vec::new();
    let mut label: Option<usize> = None;

    loop {
        sc.skip_ws();
        if sc.peek().is_none() {
            break;
        }
        let block = entries.len();
        let line_no = sc.line_no();
        let line = sc.current_line().trim_end();

        if let Some(caps) = label_re().captures(line) {
            if !comments.is_empty() || label.is_some() {
                return Err(syntax(block, line_no, "index label inside a block"));
            }
            let n: usize = caps[1]
                .parse()
                .map_err(|_| syntax(block, line_no, "index label out of range"))?;
            label = Some(n);
            sc.pos += sc.current_line().len();
            continue;
        }

        if line.starts_with('#') {
            // A comment line may have the call glued to its end.
            match glued_call_re().find(line) {
                Some(m) if m.start() > 0 => {
                    comments.push(parse_comment(&line[..m.start()]));
                    sc.pos += m.start();
                }
                _ => {
                    comments.push(parse_comment(line));
                    sc.pos += sc.current_line().len();
                    continue;
                }
            }
        }

        let call = sc.call().map_err(|m| syntax(block, sc.line_no(), m))?;
        sc.skip_inline_ws();
        if sc.peek() == Some('}') {
            sc.bump();
        }
        let trailing = sc.current_line().trim();
        if !trailing.is_empty() {
            return Err(syntax(
                block,
                sc.line_no(),
                format!("unexpected text after call: `{trailing}`"),
            ));
        }
        entries.push(DslEntry {
            label: label.take(),
            comments: std::mem::take(&mut comments),
            call,
        });
    }

    if !comments.is_empty() || label.is_some() {
        let block = entries.len();
        return Err(syntax(block, sc.line_no(), "block has no call"));
    }
    Ok(DslDocument { entries })
}

fn entry_to_action(entry: &DslEntry) -> Result<Action, String> {
    let call = &entry.call;
    let mut action = match call.name {
        CallName::Exit => {
            if let Some((k, _)) = call.args.iter().find(|(k, _)| k != "message") {
                return Err(format!("exit(...) does not take `{k}`"));
            }
            let mut a = Action::new(ActionKind::Exit);
            a.argument = call.get("message").map(str::to_string);
            a
        }
        CallName::Do => {
            if let Some((k, _)) = call
                .args
                .iter()
                .find(|(k, _)| !matches!(k.as_str(), "action" | "element" | "argument"))
            {
                return Err(format!("do(...) does not take `{k}`"));
            }
            let kind = call
                .get("action")
                .ok_or_else(|| "do(...) is missing `action`".to_string())?;
            let mut a = Action::new(ActionKind::from_dsl_name(kind));
            a.element = call.get("element").map(str::to_string);
            a.argument = call.get("argument").map(str::to_string);
            a
        }
    };
    action.comments = entry.comments.clone();
    Ok(action)
}

/// Parses exactly one action, with its leading comments.
pub fn parse_action_text(text: &str) -> Result<Action, DslError> {
    if text.trim().is_empty() {
        return Err(DslError::EmptyInput);
    }
    let doc = parse_document(text)?;
    match doc.entries.len() {
        0 => Err(DslError::EmptyInput),
        1 => entry_to_action(&doc.entries[0]).map_err(|m| syntax(0, 1, m)),
        n => Err(DslError::MultipleCalls(n)),
    }
}

fn check_renderable(action: &Action) -> Result<(), DslError> {
    let report = validate_action(action);
    if !report.is_ok() {
        return Err(DslError::InvalidAction(report.to_string()));
    }
    for c in &action.comments {
        if c.text.contains('\n') || c.text.contains('\r') {
            return Err(DslError::InvalidAction("comment spans lines".into()));
        }
        if c.text != c.text.trim() {
            return Err(DslError::InvalidAction(
                "comment has surrounding whitespace".into(),
            ));
        }
        if glued_call_re().is_match(&c.text) {
            return Err(DslError::InvalidAction("comment contains a call".into()));
        }
        if c.tag == CommentTag::Plain
            && (c.text.starts_with("Element:")
                || c.text.starts_with("Note:")
                || label_re().is_match(&format!("# {}", c.text)))
        {
            return Err(DslError::InvalidAction(
                "plain comment would re-parse with a different tag".into(),
            ));
        }
    }
    Ok(())
}

/// Canonical call text without comments.
pub fn render_call(action: &Action) -> String {
    let call = if action.is_exit() {
        DslCall {
            name: CallName::Exit,
            args: action
                .argument
                .iter()
                .map(|m| ("message".to_string(), m.clone()))
                .collect(),
        }
    } else {
        let mut args = vec![("action".to_string(), action.kind.dsl_name().to_string())];
        if let Some(arg) = &action.argument {
            args.push(("argument".to_string(), arg.clone()));
        }
        if let Some(el) = &action.element {
            args.push(("element".to_string(), el.clone()));
        }
        DslCall {
            name: CallName::Do,
            args,
        }
    };
    call.render()
}

/// Renders a valid action: comment lines first, then the call.
pub fn render_action(action: &Action) -> Result<String, DslError> {
    check_renderable(action)?;
    let mut out = String::new();
    for c in &action.comments {
        out.push_str(&render_comment(c));
        out.push('\n');
    }
    out.push_str(&render_call(action));
    Ok(out)
}

/// Parses a numbered trajectory and checks its invariants.
pub fn parse_numbered_trajectory(text: &str) -> Result<Trajectory, DslError> {
    let doc = parse_document(text)?;
    if let Some((i, e)) = doc
        .entries
        .iter()
        .enumerate()
        .find(|(i, e)| e.label.is_some_and(|l| l != *i))
    {
        return Err(syntax(
            i,
            0,
            format!("index label {} does not match position {i}", e.label.unwrap_or(0)),
        ));
    }
    let trajectory = Trajectory::new(doc.to_actions()?);
    let report = validate_trajectory(&trajectory);
    if !report.is_ok() {
        return Err(DslError::InvariantViolation(report));
    }
    Ok(trajectory)
}

/// Renders actions as labelled blocks (`Action {i}:`), numbering from `start`.
pub fn render_numbered_actions(actions: &[Action], start: usize) -> String {
    actions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let body = render_action(a).unwrap_or_else(|_| render_call(a));
            format!("Action {}:\n{}", start + i, body)
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_numbered_trajectory(trajectory: &Trajectory) -> String {
    render_numbered_actions(&trajectory.actions, 0)
}

/// Splits model output into a free-text preamble and the trailing action block.
///
/// The action block is the last call together with the `#` comment lines
/// directly above it. Returns `None` when no call is present.
pub fn split_preamble(text: &str) -> Option<(String, String)> {
    let lines: Vec<&str> = text.lines().collect();
    let call_line = lines.iter().rposition(|l| {
        let t = l.trim_start();
        t.starts_with("do(") || t.starts_with("exit(") || glued_call_re().is_match(t)
    })?;
    let mut start = call_line;
    while start > 0 && lines[start - 1].trim_start().starts_with('#') {
        start -= 1;
    }
    let preamble = lines[..start].join("\n").trim().to_string();
    let block = lines[start..].join("\n").trim().to_string();
    Some((preamble, block))
}
