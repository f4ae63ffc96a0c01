use super::PatentRecord;

/// Keeps a record when some include keyword occurs in its claims (or there
/// are no include keywords) and no exclude keyword does. Matching is a
/// case-insensitive substring test over claim text.
pub fn apply_keyword_filters(
    records: &[PatentRecord],
    include: &[String],
    exclude: &[String],
) -> Vec<PatentRecord> {
    let include: Vec<String> = include.iter().map(|k| k.to_lowercase()).collect();
    let exclude: Vec<String> = exclude.iter().map(|k| k.to_lowercase()).collect();
    records
        .iter()
        .filter(|rec| {
            let text: Vec<String> = rec.claims.iter().map(|c| c.text.to_lowercase()).collect();
            let mentions = |kw: &String| text.iter().any(|t| t.contains(kw.as_str()));
            (include.is_empty() || include.iter().any(mentions)) && !exclude.iter().any(mentions)
        })
        .cloned()
        .collect()
}
