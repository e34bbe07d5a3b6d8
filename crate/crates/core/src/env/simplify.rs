//! Budget-bounded HTML pruning.
//!
//! Passes, each applied only while the page is over budget:
//! 1. drop `<script>`, `<style>` and `<!-- -->` content (always applied);
//! 2. collapse whitespace, strip attributes other than `id` and a small set of
//!    descriptive ones, and unwrap tags that carry neither;
//! 3. cut at the budget and append [`TRUNCATION_MARKER`].
//!
//! Elements with an `id` keep their tag and text through pass 2.

use std::sync::OnceLock;

use regex::Regex;

pub const TRUNCATION_MARKER: &str = "\n[... truncated]";

/// Attributes kept by the compaction pass besides `id`.
const KEPT_ATTRIBUTES: &[&str] = &[
    "id",
    "data-text",
    "aria-label",
    "placeholder",
    "title",
    "alt",
    "value",
    "type",
    "name",
    "role",
];

fn noise_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?is)<script\b.*?(?:</script\s*>|\z)|<style\b.*?(?:</style\s*>|\z)|<!--.*?(?:-->|\z)",
        )
        .expect("static regex")
    })
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<(/?)([A-Za-z][A-Za-z0-9-]*)([^<>]*?)(/?)>").expect("static regex"))
}

fn attr_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"([A-Za-z_:][-A-Za-z0-9_:.]*)(?:\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'=<>`]+)))?"#)
            .expect("static regex")
    })
}

fn strip_noise(html: &str) -> String {
    let mut cur = html.to_string();
    loop {
        let next = noise_re().replace_all(&cur, "").into_owned();
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_ws = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            if !in_ws {
                out.push(if ch == '\n' { '\n' } else { ' ' });
            }
            in_ws = true;
        } else {
            out.push(ch);
            in_ws = false;
        }
    }
    out.trim().to_string()
}

fn compact(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let mut last = 0;
    // Names of open tags that were unwrapped, so their closing tags go too.
    let mut dropped: Vec<String> = Vec::new();
    let mut kept_open: Vec<String> = Vec::new();
    for caps in tag_re().captures_iter(html) {
        let m = caps.get(0).expect("match");
        out.push_str(&html[last..m.start()]);
        last = m.end();
        let closing = !caps[1].is_empty();
        let name = caps[2].to_ascii_lowercase();
        if closing {
            if let Some(pos) = kept_open.iter().rposition(|n| *n == name) {
                kept_open.truncate(pos);
                out.push_str(&format!("</{name}>"));
            } else if let Some(pos) = dropped.iter().rposition(|n| *n == name) {
                dropped.remove(pos);
            }
            continue;
        }
        let attrs: Vec<String> = attr_re()
            .captures_iter(&caps[3])
            .filter_map(|a| {
                let key = a[1].to_ascii_lowercase();
                if !KEPT_ATTRIBUTES.contains(&key.as_str()) {
                    return None;
                }
                let value = a
                    .get(2)
                    .or_else(|| a.get(3))
                    .or_else(|| a.get(4))
                    .map(|v| v.as_str())
                    .unwrap_or("");
                Some(format!("{key}=\"{}\"", value.replace('"', "&quot;")))
            })
            .collect();
        let self_closing = !caps[4].is_empty();
        if attrs.is_empty() {
            if !self_closing {
                dropped.push(name);
            }
            continue;
        }
        out.push('<');
        out.push_str(&name);
        for a in &attrs {
            out.push(' ');
            out.push_str(a);
        }
        if self_closing {
            out.push_str(" />");
        } else {
            out.push('>');
            kept_open.push(name);
        }
    }
    out.push_str(&html[last..]);
    collapse_whitespace(&out)
}

fn truncate_chars(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Prunes `html` to at most `budget` characters.
///
/// Idempotent: the output is noise-free and within budget, so a second call
/// returns it unchanged.
pub fn simplify_html(html: &str, budget: usize) -> String {
    let budget = budget.max(1);
    let cleaned = strip_noise(html);
    if cleaned.chars().count() <= budget {
        return cleaned;
    }
    let compacted = strip_noise(&compact(&cleaned));
    if compacted.chars().count() <= budget {
        return compacted;
    }
    let marker_len = TRUNCATION_MARKER.chars().count();
    if budget <= marker_len {
        return truncate_chars(TRUNCATION_MARKER, budget).to_string();
    }
    let mut out = truncate_chars(&compacted, budget - marker_len).to_string();
    out.push_str(TRUNCATION_MARKER);
    out
}
