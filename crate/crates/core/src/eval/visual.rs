use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::io::write_atomic;

/// What a shown patch really is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrueKind {
    Initial,
    Refined,
    Real,
}

impl TrueKind {
    pub const ALL: [TrueKind; 3] = [TrueKind::Initial, TrueKind::Refined, TrueKind::Real];

    pub fn label(self) -> &'static str {
        match self {
            TrueKind::Initial => "Initial synthetic",
            TrueKind::Refined => "Refined",
            TrueKind::Real => "Real",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Real,
    Fake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCounts {
    pub initial: usize,
    pub refined: usize,
    pub real: usize,
}

impl Default for SessionCounts {
    fn default() -> Self {
        Self {
            initial: 100,
            refined: 100,
            real: 100,
        }
    }
}

impl SessionCounts {
    pub fn get(&self, kind: TrueKind) -> usize {
        match kind {
            TrueKind::Initial => self.initial,
            TrueKind::Refined => self.refined,
            TrueKind::Real => self.real,
        }
    }

    pub fn total(&self) -> usize {
        self.initial + self.refined + self.real
    }
}

/// A patch that may be shown in a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRef {
    pub patch_id: String,
    pub kind: TrueKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionItem {
    pub item_id: u32,
    pub patch_id: String,
    pub kind: TrueKind,
    pub answer: Option<Answer>,
    /// Seconds from image shown to answer.
    pub elapsed: Option<f64>,
    pub answered_at: Option<u64>,
}

/// What a rater may see about an item: nothing that reveals its kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindItem {
    pub item_id: u32,
    pub position: usize,
    pub total: usize,
}

/// A seeded, shuffled real/fake rating session. Answers are write-once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualTestSession {
    pub id: String,
    pub seed: u64,
    pub counts: SessionCounts,
    pub created_at: u64,
    pub items: Vec<SessionItem>,
    /// Index of the first unanswered item (== items.len() when complete).
    pub cursor: usize,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl VisualTestSession {
    /// Draw `counts` patches of each kind from `refs` uniformly without
    /// replacement and present them in a seeded random order.
    pub fn create(
        id: impl Into<String>,
        counts: SessionCounts,
        refs: &[PatchRef],
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen: Vec<&PatchRef> = Vec::with_capacity(counts.total());
        for kind in TrueKind::ALL {
            let pool: Vec<&PatchRef> = refs.iter().filter(|r| r.kind == kind).collect();
            let want = counts.get(kind);
            if pool.len() < want {
                return Err(Error::Session(format!(
                    "need {want} {kind:?} patches, only {} available",
                    pool.len()
                )));
            }
            chosen.extend(pool.choose_multiple(&mut rng, want).copied());
        }
        chosen.shuffle(&mut rng);
        let items = chosen
            .into_iter()
            .enumerate()
            .map(|(i, r)| SessionItem {
                item_id: i as u32,
                patch_id: r.patch_id.clone(),
                kind: r.kind,
                answer: None,
                elapsed: None,
                answered_at: None,
            })
            .collect();
        Ok(Self {
            id: id.into(),
            seed,
            counts,
            created_at: now_secs(),
            items,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.cursor >= self.items.len()
    }

    /// The item at the cursor, without its kind.
    pub fn current(&self) -> Option<BlindItem> {
        self.items.get(self.cursor).map(|it| BlindItem {
            item_id: it.item_id,
            position: self.cursor,
            total: self.items.len(),
        })
    }

    pub fn item(&self, item_id: u32) -> Result<&SessionItem> {
        self.items
            .get(item_id as usize)
            .filter(|it| it.item_id == item_id)
            .ok_or(Error::UnknownItem(item_id))
    }

    pub fn answer(&mut self, item_id: u32, answer: Answer, elapsed: f64) -> Result<()> {
        if !(elapsed.is_finite() && elapsed >= 0.0) {
            return Err(Error::Session(format!(
                "elapsed time must be finite and >= 0, got {elapsed}"
            )));
        }
        self.item(item_id)?;
        let it = &mut self.items[item_id as usize];
        if it.answer.is_some() {
            return Err(Error::AlreadyAnswered(item_id));
        }
        it.answer = Some(answer);
        it.elapsed = Some(elapsed);
        it.answered_at = Some(now_secs());
        while self.cursor < self.items.len() && self.items[self.cursor].answer.is_some() {
            self.cursor += 1;
        }
        Ok(())
    }

    pub fn report(&self) -> SessionReport {
        let rows = TrueKind::ALL.map(|kind| {
            let mut row = ReportRow {
                kind,
                classified_real: 0,
                classified_fake: 0,
                unanswered: 0,
            };
            for it in self.items.iter().filter(|it| it.kind == kind) {
                match it.answer {
                    Some(Answer::Real) => row.classified_real += 1,
                    Some(Answer::Fake) => row.classified_fake += 1,
                    None => row.unanswered += 1,
                }
            }
            row
        });
        let times: Vec<f64> = self.items.iter().filter_map(|it| it.elapsed).collect();
        SessionReport {
            session_id: self.id.clone(),
            rows,
            answered: times.len(),
            unanswered: self.items.len() - times.len(),
            mean_response_seconds: (!times.is_empty())
                .then(|| times.iter().sum::<f64>() / times.len() as f64),
        }
    }

    pub fn path_in(root: &Path, id: &str) -> PathBuf {
        root.join("sessions").join(format!("{id}.json"))
    }

    /// Persist as one self-contained JSON record under `root/sessions/`.
    pub fn save(&self, root: &Path) -> Result<()> {
        write_atomic(
            &Self::path_in(root, &self.id),
            &serde_json::to_vec_pretty(self)?,
        )
    }

    pub fn load(root: &Path, id: &str) -> Result<Self> {
        Self::from_json(&std::fs::read(Self::path_in(root, id))?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let s: Self = serde_json::from_slice(bytes)?;
        if s.items
            .iter()
            .enumerate()
            .any(|(i, it)| it.item_id as usize != i)
        {
            return Err(Error::Session("item ids must be 0..n in order".into()));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: TrueKind,
    pub classified_real: usize,
    pub classified_fake: usize,
    pub unanswered: usize,
}

/// Ground-truth kind by real/fake verdict, plus timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub rows: [ReportRow; 3],
    pub answered: usize,
    pub unanswered: usize,
    pub mean_response_seconds: Option<f64>,
}

impl SessionReport {
    pub fn row(&self, kind: TrueKind) -> &ReportRow {
        self.rows
            .iter()
            .find(|r| r.kind == kind)
            .expect("every kind has a row")
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "ground_truth",
            "classified_real",
            "classified_fake",
            "unanswered",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.kind.label().to_string(),
                r.classified_real.to_string(),
                r.classified_fake.to_string(),
                r.unanswered.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<18} {:>18} {:>18}\n",
            "Ground truth", "#. classified real", "#. classified fake"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<18} {:>18} {:>18}\n",
                r.kind.label(),
                r.classified_real,
                r.classified_fake
            ));
        }
        match self.mean_response_seconds {
            Some(t) => s.push_str(&format!(
                "mean response time: {t:.2} s over {} answers\n",
                self.answered
            )),
            None => s.push_str("no answers recorded\n"),
        }
        if self.unanswered > 0 {
            s.push_str(&format!("unanswered: {}\n", self.unanswered));
        }
        s
    }
}
