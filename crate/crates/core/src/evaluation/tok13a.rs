//! The `13a` tokenizer of mteval-v13a as used for the `tok:13a` BLEU
//! signature. Case is preserved.
//!
//! Rules, applied in order:
//!
//! 1. drop `<skipped>`, join `-\n` line breaks, turn remaining newlines into spaces;
//! 2. unescape `&quot;`, `&amp;`, `&lt;`, `&gt;`;
//! 3. pad the line with one space on each side;
//! 4. surround each of `{|}~ [\]^_\` !"#$%& ()*+ :;<=>?@ /` with spaces;
//! 5. split `.` and `,` off a preceding non-digit (`x.` → `x . `);
//! 6. split `.` and `,` off a following non-digit (`.x` → ` . x`);
//! 7. split `-` off a preceding digit (`3-` → `3 - `);
//! 8. split on whitespace.
//!
//! Steps 5–7 are single left-to-right non-overlapping passes, so `1.5`
//! and `1,000` stay intact while `a.b` splits.

use std::sync::OnceLock;

use regex::Regex;

struct Rules {
    punct: Regex,
    period_before: Regex,
    period_after: Regex,
    dash: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        punct: Regex::new(r"([{-~\[-` -&(-+:-@/])").unwrap(),
        period_before: Regex::new(r"([^0-9])([.,])").unwrap(),
        period_after: Regex::new(r"([.,])([^0-9])").unwrap(),
        dash: Regex::new(r"([0-9])(-)").unwrap(),
    })
}

// Python's str.split() also treats the ASCII separators 0x1C..0x1F as space.
fn is_split_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

pub fn tokenize_13a(text: &str) -> Vec<String> {
    let mut line = text.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line.replace("&quot;", "\"").replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">");
    }
    let line = format!(" {line} ");
    let r = rules();
    let line = r.punct.replace_all(&line, " ${1} ");
    let line = r.period_before.replace_all(&line, "${1} ${2} ");
    let line = r.period_after.replace_all(&line, " ${1} ${2}");
    let line = r.dash.replace_all(&line, "${1} ${2} ");
    line.split(is_split_space).filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_is_split() {
        assert_eq!(tokenize_13a("Hello, world!"), vec!["Hello", ",", "world", "!"]);
        assert_eq!(tokenize_13a("a b c"), vec!["a", "b", "c"]);
        assert!(tokenize_13a("").is_empty());
    }

    #[test]
    fn numbers_keep_their_separators() {
        assert_eq!(tokenize_13a("Pay 1,000.50 now."), vec!["Pay", "1,000.50", "now", "."]);
        assert_eq!(tokenize_13a("pages 3-5"), vec!["pages", "3", "-", "5"]);
        assert_eq!(tokenize_13a("e-mail"), vec!["e-mail"]);
    }

    #[test]
    fn entities_and_case() {
        assert_eq!(tokenize_13a("A &amp; B &quot;q&quot;"), vec!["A", "&", "B", "\"", "q", "\""]);
        assert_eq!(tokenize_13a("it's (OK)"), vec!["it's", "(", "OK", ")"]);
    }
}
