//! Text cleaning for raw posts: question/answer splitting, markup removal and
//! repeat normalization.

/// Separator placed between question and answer in the classifier input.
pub const SEPARATOR: &str = " [SEP] ";

/// Splits a post into `(question, answer)` on its `Q:` / `A:` markers.
///
/// The question runs from the first `Q:` up to the first following `A:`; the
/// answer is everything after that `A:`. Without markers the whole text is the
/// answer.
pub fn split_qa(post: &str) -> (String, String) {
    let (before_q, after_q) = match post.find("Q:") {
        Some(q) => (&post[..q], Some(&post[q + 2..])),
        None => (post, None),
    };
    match after_q {
        Some(rest) => match rest.find("A:") {
            Some(a) => (
                rest[..a].trim().to_string(),
                rest[a + 2..].trim().to_string(),
            ),
            None => (rest.trim().to_string(), String::new()),
        },
        None => match before_q.find("A:") {
            Some(a) => (
                before_q[..a].trim().to_string(),
                before_q[a + 2..].trim().to_string(),
            ),
            None => (String::new(), before_q.trim().to_string()),
        },
    }
}

fn is_tag_start(c: char) -> bool {
    c.is_ascii_alphabetic() || matches!(c, '/' | '!' | '?')
}

fn is_line_break_tag(inner: &str) -> bool {
    let name: String = inner
        .trim_start_matches('/')
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    matches!(name.as_str(), "br" | "p" | "div" | "li" | "tr")
}

/// One pass of tag removal. A tag is `<` followed by a letter, `/`, `!` or `?`
/// and closed by the next `>`. Line-break-like tags become a space.
fn strip_tags_once(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(lt) = rest.find('<') {
        out.push_str(&rest[..lt]);
        let after = &rest[lt + 1..];
        let starts_tag = after.chars().next().is_some_and(is_tag_start);
        match (starts_tag, after.find('>')) {
            (true, Some(gt)) => {
                if is_line_break_tag(&after[..gt]) {
                    out.push(' ');
                }
                rest = &after[gt + 1..];
            }
            (true, None) => {
                log::debug!("unterminated tag kept literally: {:?}", truncate(after, 24));
                out.push('<');
                rest = after;
            }
            (false, _) => {
                out.push('<');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn truncate(s: &str, max_chars: usize) -> &str {
    match s.char_indices().nth(max_chars) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Removes markup tags and decodes character entities.
///
/// Decoding and stripping alternate until the text stops changing, so
/// double-encoded input such as `&amp;lt;b&amp;gt;` is fully cleaned. Every pass
/// that changes the text shortens it, which bounds the loop. An unterminated
/// `<` is kept as a literal character.
pub fn strip_html(text: &str) -> String {
    let mut current = text.to_string();
    loop {
        let decoded = html_escape::decode_html_entities(&current).into_owned();
        let stripped = strip_tags_once(&decoded);
        if stripped == current {
            return stripped;
        }
        current = stripped;
    }
}

/// Collapses every run of more than two identical characters to exactly two.
pub fn normalize_repeats(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev: Option<char> = None;
    let mut run = 0usize;
    for c in text.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= 2 {
            out.push(c);
        }
    }
    out
}

/// Collapses whitespace runs to single spaces and trims both ends.
pub fn squash_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Full cleaning of one text fragment: markup, repeats, whitespace.
pub fn clean_fragment(text: &str) -> String {
    squash_whitespace(&normalize_repeats(&strip_html(text)))
}

/// Joins a cleaned question and answer into the single classifier input text.
pub fn classifier_text(question: &str, answer: &str) -> String {
    match (question.is_empty(), answer.is_empty()) {
        (true, _) => answer.to_string(),
        (false, true) => question.to_string(),
        (false, false) => format!("{question}{SEPARATOR}{answer}"),
    }
}

/// Applies the corpus cleaning steps to free text, as used at prediction time.
pub fn clean_post(post: &str) -> String {
    let (q, a) = split_qa(post);
    classifier_text(&clean_fragment(&q), &clean_fragment(&a))
}

/// Whitespace tokenization shared by the hash provider and the learned table.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}
