use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::thread;

use chrono::NaiveDate;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{ApiClient, ApiRequest, CitationDirection, CorpusError, CpcSection, InventorQuery, PatentRecord};
use crate::claim::parse_claim_block;

const PATENT_FIELDS: &[&str] = &[
    "patent_number",
    "patent_date",
    "cpc_section_id",
    "cited_patent_number",
    "citedby_patent_number",
    "inventor_id",
];

/// Where claim full text comes from. PatentsView metadata endpoints do not
/// carry it, so it is looked up separately per patent.
pub trait ClaimSource: Send + Sync {
    /// The numbered claim block ("1. ...\n2. ...") for a patent, if known.
    fn claim_block(&self, patent_id: &str) -> Result<Option<String>, CorpusError>;
}

/// A source with no claim text; records are built with empty claim lists.
pub struct NoClaims;

impl ClaimSource for NoClaims {
    fn claim_block(&self, _: &str) -> Result<Option<String>, CorpusError> {
        Ok(None)
    }
}

/// Claim text from a bulk-download JSONL file of
/// `{"patent_id": ..., "claims": "1. ...\n2. ..."}` lines.
#[derive(Debug, Default, Clone)]
pub struct BulkClaimSource {
    blocks: HashMap<String, String>,
}

#[derive(Deserialize)]
struct BulkLine {
    patent_id: String,
    claims: String,
}

impl BulkClaimSource {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn from_jsonl(raw: &str) -> Result<Self, CorpusError> {
        let mut blocks = HashMap::new();
        for (idx, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: BulkLine = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: idx + 1,
                message: e.to_string(),
            })?;
            blocks.insert(parsed.patent_id, parsed.claims);
        }
        Ok(Self { blocks })
    }

    pub fn insert(&mut self, patent_id: impl Into<String>, block: impl Into<String>) {
        self.blocks.insert(patent_id.into(), block.into());
    }
}

impl ClaimSource for BulkClaimSource {
    fn claim_block(&self, patent_id: &str) -> Result<Option<String>, CorpusError> {
        Ok(self.blocks.get(patent_id).cloned())
    }
}

/// Claim text from a claims endpoint on the same API.
pub struct ApiClaimSource {
    client: ApiClient,
}

impl ApiClaimSource {
    pub fn new(client: ApiClient) -> Result<Self, CorpusError> {
        if client.endpoints.claims.is_none() {
            return Err(CorpusError::InvalidQuery("no claims endpoint configured".into()));
        }
        Ok(Self { client })
    }
}

#[derive(Deserialize)]
struct ClaimsPage {
    #[serde(default)]
    claims: Option<Vec<ClaimRow>>,
}

#[derive(Deserialize)]
struct ClaimRow {
    claim_number: Value,
    claim_text: String,
}

impl ClaimSource for ApiClaimSource {
    fn claim_block(&self, patent_id: &str) -> Result<Option<String>, CorpusError> {
        let endpoint = self.client.endpoints.claims.clone().expect("checked in new");
        let req = ApiRequest::new(endpoint)
            .param("q", json!({ "patent_number": patent_id }).to_string())
            .param("f", json!(["claim_number", "claim_text"]).to_string())
            .param("o", json!({ "page": 1, "per_page": 1000 }).to_string());
        let body = self.client.get(&req)?;
        let page: ClaimsPage = decode(&body)?;
        let mut rows: Vec<(u32, String)> = page
            .claims
            .unwrap_or_default()
            .into_iter()
            .filter_map(|row| {
                let n = match &row.claim_number {
                    Value::String(s) => s.trim().parse().ok(),
                    Value::Number(n) => n.as_u64().and_then(|n| u32::try_from(n).ok()),
                    _ => None,
                }?;
                Some((n, row.claim_text))
            })
            .collect();
        if rows.is_empty() {
            return Ok(None);
        }
        rows.sort_by_key(|(n, _)| *n);
        let block = rows
            .into_iter()
            .map(|(n, text)| {
                let prefix = format!("{n}.");
                let body = text.trim().strip_prefix(&prefix).unwrap_or(text.trim()).trim().to_string();
                format!("{n}. {body}")
            })
            .collect::<Vec<_>>()
            .join("\n");
        Ok(Some(block))
    }
}

#[derive(Deserialize)]
struct InventorsPage {
    #[serde(default)]
    inventors: Option<Vec<InventorRow>>,
    #[serde(default)]
    total_inventor_count: Option<u64>,
}

#[derive(Deserialize)]
struct InventorRow {
    #[serde(default)]
    patents: Vec<PatentRef>,
}

#[derive(Deserialize)]
struct PatentRef {
    patent_number: String,
}

#[derive(Deserialize)]
struct PatentsPage {
    #[serde(default)]
    patents: Option<Vec<PatentRow>>,
}

#[derive(Deserialize)]
struct PatentRow {
    patent_number: String,
    patent_date: Option<String>,
    #[serde(default)]
    cpcs: Vec<CpcRow>,
    #[serde(default)]
    cited_patents: Vec<CitedRow>,
    #[serde(default)]
    citedby_patents: Vec<CitedByRow>,
    #[serde(default)]
    inventors: Vec<InventorIdRow>,
}

#[derive(Deserialize)]
struct CpcRow {
    cpc_section_id: Option<String>,
}

#[derive(Deserialize)]
struct CitedRow {
    cited_patent_number: Option<String>,
}

#[derive(Deserialize)]
struct CitedByRow {
    citedby_patent_number: Option<String>,
}

#[derive(Deserialize)]
struct InventorIdRow {
    inventor_id: Option<String>,
}

fn decode<'a, T: Deserialize<'a>>(body: &'a str) -> Result<T, CorpusError> {
    serde_json::from_str(body).map_err(|e| CorpusError::BadResponse(e.to_string()))
}

fn inventor_criteria(q: &InventorQuery) -> Value {
    let mut all = vec![json!({ "inventor_last_name": q.name_last })];
    if let Some(first) = &q.name_first {
        all.push(json!({ "inventor_first_name": first }));
    }
    if let Some(loc) = &q.location {
        all.push(json!({ "_or": [
            { "inventor_lastknown_city": loc },
            { "inventor_lastknown_country": loc },
        ]}));
    }
    if let Some(section) = q.cpc_section {
        all.push(json!({ "cpc_section_id": section.to_string() }));
    }
    if let Some((start, end)) = q.grant_date_range {
        all.push(json!({ "_gte": { "patent_date": start.to_string() } }));
        all.push(json!({ "_lte": { "patent_date": end.to_string() } }));
    }
    if all.len() == 1 {
        all.pop().expect("one criterion")
    } else {
        json!({ "_and": all })
    }
}

/// Runs `f` over `items` on up to `workers` threads, preserving input order.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = {
                    let mut n = next.lock().expect("work queue poisoned");
                    let idx = *n;
                    *n += 1;
                    idx
                };
                let Some(item) = items.get(idx) else { break };
                let out = f(item);
                results.lock().expect("results poisoned")[idx] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .expect("results poisoned")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// Fetches metadata (dates, CPC sections, citations, inventors) and claim
/// text for the given patent numbers. Unknown numbers are skipped. The result
/// is sorted by patent id.
pub fn fetch_patents(
    client: &ApiClient,
    ids: &[String],
    claims: &dyn ClaimSource,
) -> Result<Vec<PatentRecord>, CorpusError> {
    let unique: BTreeSet<&String> = ids.iter().collect();
    let unique: Vec<&String> = unique.into_iter().collect();
    let chunks: Vec<&[&String]> = unique.chunks(client.per_page.max(1)).collect();
    let pages = parallel_map(&chunks, client.max_in_flight, |chunk| {
        let req = ApiRequest::new(client.endpoints.patents.clone())
            .param("q", json!({ "patent_number": chunk }).to_string())
            .param("f", json!(PATENT_FIELDS).to_string())
            .param("o", json!({ "page": 1, "per_page": client.per_page }).to_string());
        client.get(&req).and_then(|body| decode::<PatentsPage>(&body))
    });

    let mut rows = Vec::new();
    for page in pages {
        rows.extend(page?.patents.unwrap_or_default());
    }

    let records = parallel_map(&rows, client.max_in_flight, |row| to_record(row, claims));
    let mut by_id = BTreeMap::new();
    for rec in records {
        let rec = rec?;
        by_id.insert(rec.patent_id.clone(), rec);
    }
    Ok(by_id.into_values().collect())
}

fn to_record(row: &PatentRow, claims: &dyn ClaimSource) -> Result<PatentRecord, CorpusError> {
    let grant_date = row
        .patent_date
        .as_deref()
        .ok_or_else(|| CorpusError::BadResponse(format!("patent {} has no date", row.patent_number)))
        .and_then(|d| {
            NaiveDate::parse_from_str(d, "%Y-%m-%d")
                .map_err(|e| CorpusError::BadResponse(format!("patent {}: {e}", row.patent_number)))
        })?;
    let cpc_sections = row
        .cpcs
        .iter()
        .filter_map(|c| c.cpc_section_id.as_deref())
        .filter_map(|s| s.parse::<CpcSection>().ok())
        .collect();
    let sorted = |it: &mut dyn Iterator<Item = String>| -> Vec<String> {
        it.collect::<BTreeSet<_>>().into_iter().collect()
    };
    let cited = sorted(&mut row.cited_patents.iter().filter_map(|c| c.cited_patent_number.clone()));
    let citing = sorted(&mut row.citedby_patents.iter().filter_map(|c| c.citedby_patent_number.clone()));
    let inventors = sorted(&mut row.inventors.iter().filter_map(|i| i.inventor_id.clone()));

    let parsed = match claims.claim_block(&row.patent_number)? {
        Some(block) => parse_claim_block(&row.patent_number, &block).unwrap_or_else(|e| {
            tracing::warn!(patent = %row.patent_number, error = %e, "dropping unparseable claims");
            Vec::new()
        }),
        None => Vec::new(),
    };

    Ok(PatentRecord {
        patent_id: row.patent_number.clone(),
        grant_date,
        cpc_sections,
        cited_patent_ids: cited,
        citing_patent_ids: citing,
        inventor_ids: inventors,
        claims: parsed,
    })
}

/// All granted patents of the inventors matching `query`, sorted by id.
pub fn fetch_inventor_patents(
    query: &InventorQuery,
    client: &ApiClient,
    claims: &dyn ClaimSource,
) -> Result<Vec<PatentRecord>, CorpusError> {
    query.validate()?;
    let criteria = inventor_criteria(query).to_string();
    let mut patent_ids = BTreeSet::new();
    let mut seen_inventors = 0u64;
    let mut page = 1u64;
    loop {
        let req = ApiRequest::new(client.endpoints.inventors.clone())
            .param("q", criteria.clone())
            .param("f", json!(["inventor_id", "patent_number"]).to_string())
            .param("o", json!({ "page": page, "per_page": client.per_page }).to_string());
        let body = client.get(&req)?;
        let parsed: InventorsPage = decode(&body)?;
        let rows = parsed.inventors.unwrap_or_default();
        let total = parsed.total_inventor_count.unwrap_or(0);
        if rows.is_empty() {
            break;
        }
        seen_inventors += rows.len() as u64;
        for row in rows {
            patent_ids.extend(row.patents.into_iter().map(|p| p.patent_number));
        }
        if seen_inventors >= total {
            break;
        }
        page += 1;
    }
    if seen_inventors == 0 {
        return Err(CorpusError::NoMatch);
    }
    let ids: Vec<String> = patent_ids.into_iter().collect();
    fetch_patents(client, &ids, claims)
}

/// Breadth-first citation closure of `seed` up to `depth` hops. Seed records
/// are always included and nothing is fetched twice.
pub fn expand_by_citations(
    seed: &[PatentRecord],
    depth: u32,
    direction: CitationDirection,
    client: &ApiClient,
    claims: &dyn ClaimSource,
) -> Result<Vec<PatentRecord>, CorpusError> {
    let mut all: BTreeMap<String, PatentRecord> =
        seed.iter().map(|r| (r.patent_id.clone(), r.clone())).collect();
    let mut visited: BTreeSet<String> = all.keys().cloned().collect();
    let mut frontier: Vec<PatentRecord> = all.values().cloned().collect();

    for _ in 0..depth {
        let mut next = BTreeSet::new();
        for rec in &frontier {
            next.extend(rec.cited_patent_ids.iter().cloned());
            if direction == CitationDirection::Both {
                next.extend(rec.citing_patent_ids.iter().cloned());
            }
        }
        let wanted: Vec<String> = next.into_iter().filter(|id| !visited.contains(id)).collect();
        if wanted.is_empty() {
            break;
        }
        visited.extend(wanted.iter().cloned());
        let fetched = fetch_patents(client, &wanted, claims)?;
        for rec in &fetched {
            all.insert(rec.patent_id.clone(), rec.clone());
        }
        frontier = fetched;
    }
    Ok(all.into_values().collect())
}
