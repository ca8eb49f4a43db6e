use std::fmt::Write as _;

/// Agent id used for across-agent average rows.
pub const AVERAGE_AGENT: i64 = -1;

pub const CSV_HEADER: &str = "round,agent,train_loss,val_loss,val_wer,val_cer,skipped,wallclock_s";

/// One evaluation row. `None` marks an absent metric (no data); a loss of
/// `+inf` marks an infeasible one.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    pub agent: i64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_wer: Option<f64>,
    pub val_cer: Option<f64>,
    pub skipped: usize,
    pub wallclock: f64,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsRecord {
    /// Arithmetic mean over agents of every present metric; skip counts add up.
    pub fn average(round: usize, records: &[MetricsRecord], wallclock: f64) -> Self {
        Self {
            round,
            agent: AVERAGE_AGENT,
            train_loss: mean(records.iter().map(|r| r.train_loss)),
            val_loss: mean(records.iter().map(|r| r.val_loss)),
            val_wer: mean(records.iter().map(|r| r.val_wer)),
            val_cer: mean(records.iter().map(|r| r.val_cer)),
            skipped: records.iter().map(|r| r.skipped).sum(),
            wallclock,
        }
    }

    pub fn is_average(&self) -> bool {
        self.agent == AVERAGE_AGENT
    }

    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{:.3}",
            self.round,
            self.agent,
            opt(self.train_loss),
            opt(self.val_loss),
            opt(self.val_wer),
            opt(self.val_cer),
            self.skipped,
            self.wallclock
        );
        s
    }

    pub fn parse_csv_row(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(format!("expected 8 fields, found {}", fields.len()));
        }
        let opt = |s: &str| -> Result<Option<f64>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| format!("{s:?}: {e}"))
            }
        };
        Ok(Self {
            round: fields[0].parse().map_err(|e| format!("round {:?}: {e}", fields[0]))?,
            agent: fields[1].parse().map_err(|e| format!("agent {:?}: {e}", fields[1]))?,
            train_loss: opt(fields[2])?,
            val_loss: opt(fields[3])?,
            val_wer: opt(fields[4])?,
            val_cer: opt(fields[5])?,
            skipped: fields[6].parse().map_err(|e| format!("skipped {:?}: {e}", fields[6]))?,
            wallclock: fields[7].parse().map_err(|e| format!("wallclock {:?}: {e}", fields[7]))?,
        })
    }
}

/// Renders records as a metrics CSV, header included.
pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Parses a metrics CSV; errors carry the 1-based line number.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsRecord>, (usize, String)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((_, h)) => return Err((1, format!("unexpected header {h:?}"))),
        None => return Err((1, "empty file".into())),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| MetricsRecord::parse_csv_row(l.trim()).map_err(|e| (i + 1, e)))
        .collect()
}
