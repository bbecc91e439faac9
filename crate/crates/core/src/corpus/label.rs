use std::collections::HashMap;

use super::RawRecord;

/// Verdict written into answer fields that carry no annotation.
pub const NO_BULLYING: &str = "0";

/// Minimum occurrences that protect a corrupted user id from removal.
pub const CORRUPTED_ID_KEEP_THRESHOLD: usize = 3;

/// Fills absent annotation fields: severities become 0, verdicts become `"0"`.
pub fn handle_missing(mut r: RawRecord) -> RawRecord {
    for ans in r.ans.iter_mut() {
        if ans.is_none() {
            *ans = Some(NO_BULLYING.to_string());
        }
    }
    for sev in r.severity.iter_mut() {
        if sev.is_none() {
            *sev = Some(0);
        }
    }
    r
}

/// A user id is corrupted when empty or when it carries control characters or
/// the replacement character left by invalid byte sequences.
pub fn is_corrupted_userid(id: &str) -> bool {
    id.trim().is_empty()
        || id
            .chars()
            .any(|c| c.is_control() || c == char::REPLACEMENT_CHARACTER)
}

/// Removes rows with a corrupted user id that occurs fewer than three times.
pub fn drop_corrupted_users(records: Vec<RawRecord>) -> Vec<RawRecord> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in &records {
        *counts.entry(r.userid.as_str()).or_default() += 1;
    }
    let keep: Vec<bool> = records
        .iter()
        .map(|r| {
            !is_corrupted_userid(&r.userid) || counts[r.userid.as_str()] >= CORRUPTED_ID_KEEP_THRESHOLD
        })
        .collect();
    records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}

fn canonical_verdict(v: &str) -> String {
    v.trim().to_lowercase()
}

/// True when a canonical verdict reports bullying.
pub fn indicates_bullying(canonical: &str) -> bool {
    !matches!(canonical, "" | NO_BULLYING | "no")
}

/// Label from annotator votes: `-1` when at least two verdicts agree on
/// bullying and the largest severity is positive, `+1` otherwise.
///
/// Absent fields are read as "no bullying" / severity 0, which matches the
/// result after [`handle_missing`].
pub fn derive_label(r: &RawRecord) -> i8 {
    let verdicts: Vec<String> = r
        .ans
        .iter()
        .map(|a| canonical_verdict(a.as_deref().unwrap_or(NO_BULLYING)))
        .collect();
    let agree_on_bullying = (0..3).any(|i| {
        ((i + 1)..3).any(|j| verdicts[i] == verdicts[j] && indicates_bullying(&verdicts[i]))
    });
    let max_severity = r.severity.iter().map(|s| s.unwrap_or(0)).max().unwrap_or(0);
    if agree_on_bullying && max_severity > 0 {
        -1
    } else {
        1
    }
}
