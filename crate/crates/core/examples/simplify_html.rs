//! Prunes a page to what the models see, under a character budget.
//!
//! cargo run --example simplify_html [budget] < page.html
//!
//! Without piped input a small built-in page is used.

use std::io::{IsTerminal, Read};

use anyhow::Result;
use planact::domain::extract_element_ids;
use planact::env::simplify_html;

const SAMPLE: &str = r#"<html><head><script>track()</script><style>.a{}</style></head>
<body>
  <!-- header -->
  <nav class="menu" style="color:red"><a id="7" href="/admin/reports">Reports</a></nav>
  <main>
    <div>   <div>   <input id="24" type="text" placeholder="From"/> </div></div>
    <button id="16" onclick="go()">Show Report</button>
  </main>
</body></html>"#;

fn main() -> Result<()> {
    let budget = std::env::args()
        .nth(1)
        .map(|b| b.parse())
        .transpose()?
        .unwrap_or(40_000);
    let mut html = String::new();
    if !std::io::stdin().is_terminal() {
        std::io::stdin().read_to_string(&mut html)?;
    }
    if html.trim().is_empty() {
        html = SAMPLE.to_string();
    }
    let simple = simplify_html(&html, budget);
    println!("{simple}");
    eprintln!(
        "{} -> {} chars, element ids kept: {:?}",
        html.chars().count(),
        simple.chars().count(),
        extract_element_ids(&simple)
    );
    // Over budget, attributes without ids and layout whitespace go first.
    let tight = simplify_html(&html, 200);
    println!("\nwith a 200 character budget:\n{tight}");
    Ok(())
}
