use chrono::Utc;

use super::{
    apply_keyword_filters, expand_by_citations, fetch_inventor_patents, ApiClient, ClaimSource, CorpusError,
    CorpusSpec, FilterStage, PatentRecord,
};

/// Runs the whole recipe: seed-inventor search, citation expansion and
/// keyword filtering. The returned spec is `spec` with `fetched_at` set to
/// the transport's recording time (or now, for live requests).
pub fn build_corpus(
    spec: &CorpusSpec,
    client: &ApiClient,
    claims: &dyn ClaimSource,
) -> Result<(CorpusSpec, Vec<PatentRecord>), CorpusError> {
    spec.validate()?;
    let filter = |recs: &[PatentRecord]| apply_keyword_filters(recs, &spec.include_keywords, &spec.exclude_keywords);
    let mut records = fetch_inventor_patents(&spec.seed, client, claims)?;
    if spec.filter_stage == FilterStage::BeforeExpansion {
        records = filter(&records);
    }
    records = expand_by_citations(&records, spec.citation_depth, spec.citation_direction, client, claims)?;
    if spec.filter_stage == FilterStage::AfterExpansion {
        records = filter(&records);
    }
    let built = CorpusSpec { fetched_at: client.recorded_at().unwrap_or_else(Utc::now), ..spec.clone() };
    Ok((built, records))
}
