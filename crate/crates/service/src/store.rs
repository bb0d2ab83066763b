//! Review items and runs, held in memory and made durable by an append-only
//! JSON-lines log that is replayed on open (last write per key wins).
//!
//! Writers serialize on the state lock; the log append happens before the
//! in-memory update so a failed write leaves the state untouched.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use autoreview_core::extraction::normalize_field_value;
use autoreview_core::{FieldId, FieldRecord, FieldSpec, ReviewDecision, Utterance};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ItemStatus {
    Pending,
    Approved,
    Corrected,
}

impl std::str::FromStr for ItemStatus {
    type Err = ApiError;

    fn from_str(s: &str) -> Result<Self, ApiError> {
        match s.to_ascii_lowercase().as_str() {
            "pending" => Ok(ItemStatus::Pending),
            "approved" => Ok(ItemStatus::Approved),
            "corrected" => Ok(ItemStatus::Corrected),
            other => Err(ApiError::BadRequest(format!("unknown status {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub run_id: String,
    pub call_id: String,
    pub field_id: FieldId,
    pub live_call_value: String,
    pub decision: ReviewDecision,
    /// The evidence utterances with all their alternatives, as ingested.
    pub evidence: Vec<Utterance>,
    pub status: ItemStatus,
    pub corrected_value: Option<String>,
    pub version: u64,
    /// Approved by the pipeline rather than a reviewer.
    pub auto_approved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "message")]
pub enum RunStatus {
    Running,
    Complete,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub run_id: String,
    pub status: RunStatus,
    pub calls: usize,
    pub items: usize,
    /// Records as ingested (golds, when present, enable the report).
    pub records: Vec<FieldRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Entry {
    Run(Run),
    Item(ReviewItem),
}

#[derive(Default)]
struct State {
    runs: BTreeMap<String, Run>,
    items: BTreeMap<String, ReviewItem>,
}

impl State {
    fn apply(&mut self, e: Entry) {
        match e {
            Entry::Run(r) => {
                self.runs.insert(r.run_id.clone(), r);
            }
            Entry::Item(i) => {
                self.items.insert(i.item_id.clone(), i);
            }
        }
    }
}

pub struct Store {
    path: Option<PathBuf>,
    log: Mutex<Option<File>>,
    state: RwLock<State>,
}

/// What a reviewer did with an item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Approve,
    Correct,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemFilter {
    pub status: Option<ItemStatus>,
    pub field: Option<FieldId>,
    pub run: Option<String>,
}

fn io_err(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::Internal(format!("{}: {e}", path.display()))
}

impl Store {
    pub fn in_memory() -> Store {
        Store {
            path: None,
            log: Mutex::new(None),
            state: RwLock::new(State::default()),
        }
    }

    /// Opens (creating if needed) the log at `path` and replays it. A torn
    /// final line from a crash is ignored; corruption elsewhere is an error.
    pub fn open(path: &Path) -> Result<Store, ApiError> {
        let mut state = State::default();
        if path.exists() {
            let f = File::open(path).map_err(|e| io_err(path, e))?;
            let lines: Vec<String> = BufReader::new(f)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(|e| io_err(path, e))?;
            let last = lines.len();
            for (n, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Entry>(&line) {
                    Ok(e) => state.apply(e),
                    Err(_) if n + 1 == last => log::warn!("ignoring torn final log line in {}", path.display()),
                    Err(e) => {
                        return Err(ApiError::Internal(format!("{}:{}: {e}", path.display(), n + 1)));
                    }
                }
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
        Ok(Store {
            path: Some(path.to_path_buf()),
            log: Mutex::new(Some(file)),
            state: RwLock::new(state),
        })
    }

    fn append(&self, entries: &[Entry]) -> Result<(), ApiError> {
        let mut guard = self.log.lock().expect("log lock");
        let Some(file) = guard.as_mut() else {
            return Ok(());
        };
        let mut buf = String::new();
        for e in entries {
            buf.push_str(&serde_json::to_string(e).map_err(|e| ApiError::Internal(e.to_string()))?);
            buf.push('\n');
        }
        let path = self.path.as_deref().unwrap_or(Path::new("store"));
        file.write_all(buf.as_bytes()).map_err(|e| io_err(path, e))?;
        file.sync_data().map_err(|e| io_err(path, e))
    }

    fn write(&self, entries: Vec<Entry>) -> Result<(), ApiError> {
        let mut state = self.state.write().expect("state lock");
        self.append(&entries)?;
        for e in entries {
            state.apply(e);
        }
        Ok(())
    }

    /// Registers a new run and returns its id.
    pub fn create_run(&self, calls: usize, records: Vec<FieldRecord>) -> Result<Run, ApiError> {
        let mut state = self.state.write().expect("state lock");
        let run = Run {
            run_id: format!("run-{:05}", state.runs.len() + 1),
            status: RunStatus::Running,
            calls,
            items: 0,
            records,
        };
        self.append(&[Entry::Run(run.clone())])?;
        state.apply(Entry::Run(run.clone()));
        Ok(run)
    }

    /// Stores the decisions of a finished run as items: approvals become
    /// auto-approved items, flags become Pending.
    pub fn complete_run(
        &self,
        run_id: &str,
        reviewed: Vec<(ReviewDecision, String, Vec<Utterance>)>,
    ) -> Result<Run, ApiError> {
        let mut run = self.run(run_id)?;
        let mut entries = Vec::with_capacity(reviewed.len() + 1);
        for (n, (decision, live, evidence)) in reviewed.into_iter().enumerate() {
            let approved = decision.approved();
            entries.push(Entry::Item(ReviewItem {
                item_id: format!("{run_id}-{:05}", n + 1),
                run_id: run_id.to_string(),
                call_id: decision.call_id.clone(),
                field_id: decision.field_id.clone(),
                live_call_value: live,
                decision,
                evidence,
                status: if approved { ItemStatus::Approved } else { ItemStatus::Pending },
                corrected_value: None,
                version: 1,
                auto_approved: approved,
            }));
        }
        run.items = entries.len();
        run.status = RunStatus::Complete;
        entries.push(Entry::Run(run.clone()));
        self.write(entries)?;
        Ok(run)
    }

    pub fn fail_run(&self, run_id: &str, message: String) -> Result<(), ApiError> {
        let mut run = self.run(run_id)?;
        run.status = RunStatus::Failed(message);
        self.write(vec![Entry::Run(run)])
    }

    pub fn run(&self, run_id: &str) -> Result<Run, ApiError> {
        self.state
            .read()
            .expect("state lock")
            .runs
            .get(run_id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("run {run_id}")))
    }

    pub fn runs(&self) -> Vec<Run> {
        self.state.read().expect("state lock").runs.values().cloned().collect()
    }

    pub fn item(&self, item_id: &str) -> Result<ReviewItem, ApiError> {
        self.state
            .read()
            .expect("state lock")
            .items
            .get(item_id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("item {item_id}")))
    }

    /// Matching items, least confident first (ties by id), and the total
    /// match count before paging. Pages start at 1.
    pub fn query(&self, filter: &ItemFilter, page: usize, page_size: usize) -> (Vec<ReviewItem>, usize) {
        let state = self.state.read().expect("state lock");
        let mut hits: Vec<&ReviewItem> = state
            .items
            .values()
            .filter(|i| filter.status.is_none_or(|s| i.status == s))
            .filter(|i| filter.field.as_ref().is_none_or(|f| &i.field_id == f))
            .filter(|i| filter.run.as_ref().is_none_or(|r| &i.run_id == r))
            .collect();
        hits.sort_by(|a, b| a.decision.score.total_cmp(&b.decision.score).then_with(|| a.item_id.cmp(&b.item_id)));
        let total = hits.len();
        let start = page.saturating_sub(1).saturating_mul(page_size);
        let items = hits.into_iter().skip(start).take(page_size).cloned().collect();
        (items, total)
    }

    /// Applies a reviewer action if `version` is current and the item is
    /// still Pending.
    pub fn submit_review(
        &self,
        item_id: &str,
        version: u64,
        action: Action,
        corrected_value: Option<&str>,
        spec: Option<&FieldSpec>,
    ) -> Result<ReviewItem, ApiError> {
        let mut state = self.state.write().expect("state lock");
        let current = state
            .items
            .get(item_id)
            .ok_or_else(|| ApiError::NotFound(format!("item {item_id}")))?;
        if current.version != version {
            return Err(ApiError::Conflict(format!(
                "item {item_id} is at version {}, not {version}",
                current.version
            )));
        }
        if current.status != ItemStatus::Pending {
            return Err(ApiError::Conflict(format!("item {item_id} was already reviewed")));
        }
        let mut next = current.clone();
        match action {
            Action::Approve => next.status = ItemStatus::Approved,
            Action::Correct => {
                let raw = corrected_value
                    .ok_or_else(|| ApiError::Validation("corrected_value is required to correct".into()))?;
                let spec = spec.ok_or_else(|| ApiError::Validation(format!("no field spec for {}", next.field_id)))?;
                let value = normalize_field_value(raw, spec).map_err(|e| ApiError::Validation(e.to_string()))?;
                if value == autoreview_core::NOT_PROVIDED {
                    return Err(ApiError::Validation("corrected_value must be a value".into()));
                }
                next.status = ItemStatus::Corrected;
                next.corrected_value = Some(value);
            }
        }
        next.version += 1;
        self.append(&[Entry::Item(next.clone())])?;
        state.items.insert(next.item_id.clone(), next.clone());
        Ok(next)
    }

    /// Gold records for a run: corrected items give the corrected value,
    /// approved items the live value; pending items are left out. Sorted by
    /// item id.
    pub fn export_gold(&self, run_id: &str) -> Result<Vec<FieldRecord>, ApiError> {
        self.run(run_id)?;
        let state = self.state.read().expect("state lock");
        Ok(state
            .items
            .values()
            .filter(|i| i.run_id == run_id)
            .filter_map(|i| {
                let gold = match i.status {
                    ItemStatus::Approved => i.live_call_value.clone(),
                    ItemStatus::Corrected => i.corrected_value.clone()?,
                    ItemStatus::Pending => return None,
                };
                Some(FieldRecord {
                    call_id: i.call_id.clone(),
                    field_id: i.field_id.clone(),
                    live_call_value: i.live_call_value.clone(),
                    gold_value: Some(gold),
                    post_call_value: i.decision.post_call_value.clone(),
                })
            })
            .collect())
    }

    pub fn run_items(&self, run_id: &str) -> Vec<ReviewItem> {
        let state = self.state.read().expect("state lock");
        state.items.values().filter(|i| i.run_id == run_id).cloned().collect()
    }

    /// (pending, approved, corrected) counts for a run.
    pub fn counts(&self, run_id: &str) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for i in self.run_items(run_id) {
            match i.status {
                ItemStatus::Pending => c.0 += 1,
                ItemStatus::Approved => c.1 += 1,
                ItemStatus::Corrected => c.2 += 1,
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autoreview_core::{Strategy, Verdict};

    fn decision(call: &str, approve: bool, score: f64) -> ReviewDecision {
        ReviewDecision {
            call_id: call.into(),
            field_id: FieldId::GroupNumber,
            verdict: if approve { Verdict::AutoApprove } else { Verdict::FlagForHuman },
            strategy: Strategy::DirectExtraction,
            score,
            threshold: 1.0,
            evidence: vec![],
            post_call_value: Some("AD0156".into()),
        }
    }

    fn seeded(store: &Store) -> String {
        let run = store.create_run(3, vec![]).unwrap();
        store
            .complete_run(
                &run.run_id,
                vec![
                    (decision("a", false, 0.7), "AD0156".into(), vec![]),
                    (decision("b", true, 1.0), "AD0157".into(), vec![]),
                    (decision("c", false, 0.2), "AD0158".into(), vec![]),
                ],
            )
            .unwrap();
        run.run_id
    }

    #[test]
    fn state_machine_and_versions() {
        let store = Store::in_memory();
        let run = seeded(&store);
        let (pending, total) = store.query(
            &ItemFilter {
                status: Some(ItemStatus::Pending),
                ..Default::default()
            },
            1,
            10,
        );
        assert_eq!(total, 2);
        // Least confident first.
        assert_eq!(pending[0].call_id, "c");
        let spec = FieldSpec::group_number();
        let id = pending[0].item_id.clone();
        let bad = store.submit_review(&id, 1, Action::Correct, Some("ab 1"), Some(&spec));
        assert!(matches!(bad, Err(ApiError::Validation(_))));
        assert_eq!(store.item(&id).unwrap().version, 1);
        let done = store.submit_review(&id, 1, Action::Correct, Some("ad 0158x"), Some(&spec)).unwrap();
        assert_eq!(done.status, ItemStatus::Corrected);
        assert_eq!(done.corrected_value.as_deref(), Some("AD0158X"));
        assert_eq!(done.version, 2);
        assert!(matches!(store.submit_review(&id, 1, Action::Approve, None, None), Err(ApiError::Conflict(_))));
        assert!(matches!(store.submit_review(&id, 2, Action::Approve, None, None), Err(ApiError::Conflict(_))));
        assert_eq!(store.counts(&run), (1, 1, 1));
        let gold = store.export_gold(&run).unwrap();
        assert_eq!(gold.len(), 2);
        assert_eq!(gold[0].gold_value.as_deref(), Some("AD0157"));
        assert_eq!(gold[1].gold_value.as_deref(), Some("AD0158X"));
    }

    #[test]
    fn log_replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let run = {
            let store = Store::open(&path).unwrap();
            let run = seeded(&store);
            let id = format!("{run}-00001");
            store.submit_review(&id, 1, Action::Approve, None, None).unwrap();
            run
        };
        // A torn final line is ignored.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"kind\":\"item\",\"item_id\":").unwrap();
        drop(f);
        let store = Store::open(&path).unwrap();
        assert_eq!(store.counts(&run), (1, 2, 0));
        assert_eq!(store.item(&format!("{run}-00001")).unwrap().version, 2);
        assert_eq!(store.run(&run).unwrap().status, RunStatus::Complete);
    }
}
