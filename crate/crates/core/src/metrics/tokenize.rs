//! The `13a` tokenizer (mteval-v13a rules as used by sacreBLEU).

use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::{EOB, EOL};

// Private-use placeholders so break tokens survive punctuation splitting.
const EOL_MARK: &str = "\u{E000}";
const EOB_MARK: &str = "\u{E001}";

struct Rules {
    symbols: Regex,
    dash_after_digit: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        symbols: Regex::new(r"([\{-~\[-`\x20-&\(-\+:-@/])").unwrap(),
        dash_after_digit: Regex::new(r"([0-9])(-)").unwrap(),
    })
}

/// Separates every period and comma unless both neighbours are digits.
///
/// Same result as the two regex passes of the reference tokenizer, except
/// that neighbouring matches do not consume each other (`",.5"` gives
/// `", . 5"` in one pass), which keeps the tokenizer idempotent.
fn split_periods_commas(line: &str) -> String {
    let chars: Vec<char> = line.chars().collect();
    let mut out = String::with_capacity(line.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        let between_digits = i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(char::is_ascii_digit);
        if (c == '.' || c == ',') && !between_digits {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out
}

/// Tokenizes `text` with the 13a rules, keeping case. `<eol>` and `<eob>`
/// come out as single tokens.
pub fn tokenize_13a(text: &str) -> Vec<String> {
    let mut line = text.replace("<skipped>", "");
    line = line.replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let protect = line.contains(EOL) || line.contains(EOB);
    if protect {
        line = line
            .replace(EOL, &format!(" {EOL_MARK} "))
            .replace(EOB, &format!(" {EOB_MARK} "));
    }

    let r = rules();
    let mut line = format!(" {line} ");
    line = r.symbols.replace_all(&line, " $1 ").into_owned();
    // Repeated until stable: a match consumes its neighbour, so adjacent
    // periods and commas would otherwise need a second pass.
    line = split_periods_commas(&line);
    line = r.dash_after_digit.replace_all(&line, "$1 $2 ").into_owned();

    line.split_whitespace()
        .map(|t| {
            if !protect {
                t.to_string()
            } else if t == EOL_MARK {
                EOL.to_string()
            } else if t == EOB_MARK {
                EOB.to_string()
            } else {
                t.to_string()
            }
        })
        .collect()
}
