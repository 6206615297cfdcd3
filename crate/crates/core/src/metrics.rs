//! Counters, the cost model and scheme comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hotness::HotnessLevel;
use crate::trace::Uid;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounters {
    pub compress_ops: u64,
    pub compress_bytes_in: u64,
    pub compress_bytes_out: u64,
    pub decompress_ops: u64,
    pub decompress_bytes: u64,
}

impl LevelCounters {
    fn merge(&mut self, o: &Self) {
        self.compress_ops += o.compress_ops;
        self.compress_bytes_in += o.compress_bytes_in;
        self.compress_bytes_out += o.compress_bytes_out;
        self.decompress_ops += o.decompress_ops;
        self.decompress_bytes += o.decompress_bytes;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByLevel {
    pub cold: LevelCounters,
    pub warm: LevelCounters,
    pub hot: LevelCounters,
}

impl ByLevel {
    pub fn get(&self, l: HotnessLevel) -> &LevelCounters {
        match l {
            HotnessLevel::Cold => &self.cold,
            HotnessLevel::Warm => &self.warm,
            HotnessLevel::Hot => &self.hot,
        }
    }

    fn get_mut(&mut self, l: HotnessLevel) -> &mut LevelCounters {
        match l {
            HotnessLevel::Cold => &mut self.cold,
            HotnessLevel::Warm => &mut self.warm,
            HotnessLevel::Hot => &mut self.hot,
        }
    }
}

/// Run-wide event counts. Every field only grows during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Codec invocations (one per chunk).
    pub compress_ops: u64,
    pub compress_bytes_in: u64,
    pub compress_bytes_out: u64,
    pub decompress_ops: u64,
    pub decompress_bytes: u64,
    pub wasted_decompress_bytes: u64,
    pub demand_faults: u64,
    pub prefetch_issued: u64,
    pub prefetch_hit: u64,
    pub prefetch_wasted: u64,
    pub swap_in_ops: u64,
    pub swap_in_bytes: u64,
    pub swap_out_ops: u64,
    pub swap_out_bytes: u64,
    pub reclaim_invocations: u64,
    pub oom_reports: u64,
    pub by_level: ByLevel,
}

impl Counters {
    pub fn record_compress(&mut self, level: HotnessLevel, ops: u64, bytes_in: u64, bytes_out: u64) {
        self.compress_ops += ops;
        self.compress_bytes_in += bytes_in;
        self.compress_bytes_out += bytes_out;
        let l = self.by_level.get_mut(level);
        l.compress_ops += ops;
        l.compress_bytes_in += bytes_in;
        l.compress_bytes_out += bytes_out;
    }

    pub fn record_decompress(&mut self, level: HotnessLevel, ops: u64, bytes: u64) {
        self.decompress_ops += ops;
        self.decompress_bytes += bytes;
        let l = self.by_level.get_mut(level);
        l.decompress_ops += ops;
        l.decompress_bytes += bytes;
    }

    /// Associative, commutative fold used when combining parallel runs.
    pub fn merge(&mut self, o: &Counters) {
        self.compress_ops += o.compress_ops;
        self.compress_bytes_in += o.compress_bytes_in;
        self.compress_bytes_out += o.compress_bytes_out;
        self.decompress_ops += o.decompress_ops;
        self.decompress_bytes += o.decompress_bytes;
        self.wasted_decompress_bytes += o.wasted_decompress_bytes;
        self.demand_faults += o.demand_faults;
        self.prefetch_issued += o.prefetch_issued;
        self.prefetch_hit += o.prefetch_hit;
        self.prefetch_wasted += o.prefetch_wasted;
        self.swap_in_ops += o.swap_in_ops;
        self.swap_in_bytes += o.swap_in_bytes;
        self.swap_out_ops += o.swap_out_ops;
        self.swap_out_bytes += o.swap_out_bytes;
        self.reclaim_invocations += o.reclaim_invocations;
        self.oom_reports += o.oom_reports;
        for l in HotnessLevel::ALL {
            self.by_level.get_mut(l).merge(o.by_level.get(l));
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("cost model field {field} must be finite and non-negative, got {value}")]
    BadCost { field: &'static str, value: f64 },
    #[error("reports describe different traces ({a} vs {b})")]
    TraceMismatch { a: String, b: String },
}

/// Latency charges in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub dram_copy_ns_per_page: f64,
    pub compress_ns_per_byte: f64,
    pub compress_ns_per_op: f64,
    pub decompress_ns_per_byte: f64,
    pub decompress_ns_per_op: f64,
    pub flash_read_base_ns: f64,
    pub flash_read_ns_per_byte: f64,
    pub flash_write_base_ns: f64,
    pub flash_write_ns_per_byte: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            dram_copy_ns_per_page: 80.0,
            compress_ns_per_byte: 0.9,
            compress_ns_per_op: 500.0,
            decompress_ns_per_byte: 0.35,
            decompress_ns_per_op: 500.0,
            flash_read_base_ns: 80_000.0,
            flash_read_ns_per_byte: 10.0,
            flash_write_base_ns: 200_000.0,
            flash_write_ns_per_byte: 20.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let fields = [
            ("dram_copy_ns_per_page", self.dram_copy_ns_per_page),
            ("compress_ns_per_byte", self.compress_ns_per_byte),
            ("compress_ns_per_op", self.compress_ns_per_op),
            ("decompress_ns_per_byte", self.decompress_ns_per_byte),
            ("decompress_ns_per_op", self.decompress_ns_per_op),
            ("flash_read_base_ns", self.flash_read_base_ns),
            ("flash_read_ns_per_byte", self.flash_read_ns_per_byte),
            ("flash_write_base_ns", self.flash_write_base_ns),
            ("flash_write_ns_per_byte", self.flash_write_ns_per_byte),
        ];
        for (field, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(MetricsError::BadCost { field, value });
            }
        }
        Ok(())
    }

    pub fn compress_ns(&self, ops: u64, bytes: u64) -> f64 {
        ops as f64 * self.compress_ns_per_op + bytes as f64 * self.compress_ns_per_byte
    }

    pub fn decompress_ns(&self, ops: u64, bytes: u64) -> f64 {
        ops as f64 * self.decompress_ns_per_op + bytes as f64 * self.decompress_ns_per_byte
    }

    pub fn flash_read_ns(&self, bytes: u64) -> f64 {
        self.flash_read_base_ns + bytes as f64 * self.flash_read_ns_per_byte
    }

    pub fn flash_write_ns(&self, bytes: u64) -> f64 {
        self.flash_write_base_ns + bytes as f64 * self.flash_write_ns_per_byte
    }

    pub fn dram_ns(&self, pages: u64) -> f64 {
        pages as f64 * self.dram_copy_ns_per_page
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelCost {
    pub compress_ns: f64,
    pub decompress_ns: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CpuCost {
    pub compress_ns: f64,
    pub decompress_ns: f64,
    pub total_ns: f64,
    pub cold: LevelCost,
    pub warm: LevelCost,
    pub hot: LevelCost,
}

pub fn cpu_cost(c: &Counters, m: &CostModel) -> CpuCost {
    let level = |l: &LevelCounters| LevelCost {
        compress_ns: m.compress_ns(l.compress_ops, l.compress_bytes_in),
        decompress_ns: m.decompress_ns(l.decompress_ops, l.decompress_bytes),
    };
    let compress_ns = m.compress_ns(c.compress_ops, c.compress_bytes_in);
    let decompress_ns = m.decompress_ns(c.decompress_ops, c.decompress_bytes);
    CpuCost {
        compress_ns,
        decompress_ns,
        total_ns: compress_ns + decompress_ns,
        cold: level(&c.by_level.cold),
        warm: level(&c.by_level.warm),
        hot: level(&c.by_level.hot),
    }
}

/// Bytes in over bytes out; `None` before anything was compressed.
pub fn compression_ratio(c: &Counters) -> Option<f64> {
    (c.compress_bytes_out > 0).then(|| c.compress_bytes_in as f64 / c.compress_bytes_out as f64)
}

/// Where the pages touched in a launch window came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceBreakdown {
    pub resident: u64,
    pub buffer: u64,
    pub zpool: u64,
    pub swap: u64,
}

impl SourceBreakdown {
    pub fn total(&self) -> u64 {
        self.resident + self.buffer + self.zpool + self.swap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaunchReport {
    pub uid: Uid,
    pub launch: u32,
    pub latency_ns: f64,
    /// Page accesses in the window; equals `sources.total()`.
    pub pages_faulted: u64,
    pub sources: SourceBreakdown,
    pub decompress_ns: f64,
    /// Reclaim compression charged to the window.
    pub compress_ns: f64,
    pub flash_ns: f64,
    pub waste_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub relaunches: u64,
    pub latency_ns: f64,
    pub pages_faulted: u64,
    pub cpu: CpuCost,
    pub compression_ratio: Option<f64>,
    pub flash_write_bytes: u64,
    /// Compressed pages over known pages at the end of the run.
    pub compressed_fraction: f64,
    pub compressed_fraction_peak: f64,
    pub oom_reports: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub trace_id: String,
    pub config: serde_json::Value,
    pub cost_model: CostModel,
    pub counters: Counters,
    pub relaunches: Vec<RelaunchReport>,
    pub totals: Totals,
    pub notes: Vec<String>,
}

impl Report {
    pub fn latency_by_app(&self) -> BTreeMap<Uid, f64> {
        let mut out = BTreeMap::new();
        for r in &self.relaunches {
            *out.entry(r.uid).or_insert(0.0) += r.latency_ns;
        }
        out
    }

    /// Deterministic pretty JSON.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    /// `all` or `app:<uid>`.
    pub scope: String,
    pub metric: &'static str,
    pub baseline: Option<f64>,
    pub candidate: Option<f64>,
    /// candidate / baseline; 1 when both are zero.
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub trace_id: String,
    pub rows: Vec<CompareRow>,
}

fn normalized(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if a == 0.0 && b == 0.0 => Some(1.0),
        (Some(a), Some(b)) if a != 0.0 => Some(b / a),
        _ => None,
    }
}

/// Diffs two reports over the same trace, `a` being the baseline.
pub fn compare(a: &Report, b: &Report) -> Result<Comparison, MetricsError> {
    if a.trace_id != b.trace_id {
        return Err(MetricsError::TraceMismatch {
            a: a.trace_id.clone(),
            b: b.trace_id.clone(),
        });
    }
    let mut rows = Vec::new();
    let mut push = |scope: String, metric, x: Option<f64>, y: Option<f64>| {
        rows.push(CompareRow {
            scope,
            metric,
            baseline: x,
            candidate: y,
            normalized: normalized(x, y),
        })
    };
    let (ta, tb) = (&a.totals, &b.totals);
    push("all".into(), "latency_ns", Some(ta.latency_ns), Some(tb.latency_ns));
    push("all".into(), "cpu_ns", Some(ta.cpu.total_ns), Some(tb.cpu.total_ns));
    push(
        "all".into(),
        "compress_ns",
        Some(ta.cpu.compress_ns),
        Some(tb.cpu.compress_ns),
    );
    push(
        "all".into(),
        "decompress_ns",
        Some(ta.cpu.decompress_ns),
        Some(tb.cpu.decompress_ns),
    );
    push(
        "all".into(),
        "compression_ratio",
        ta.compression_ratio,
        tb.compression_ratio,
    );
    push(
        "all".into(),
        "flash_write_bytes",
        Some(ta.flash_write_bytes as f64),
        Some(tb.flash_write_bytes as f64),
    );
    let (la, lb) = (a.latency_by_app(), b.latency_by_app());
    let uids: std::collections::BTreeSet<Uid> = la.keys().chain(lb.keys()).copied().collect();
    for uid in uids {
        push(
            format!("app:{uid}"),
            "latency_ns",
            la.get(&uid).copied(),
            lb.get(&uid).copied(),
        );
    }
    Ok(Comparison {
        trace_id: a.trace_id.clone(),
        rows,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,metric,baseline,candidate,normalized\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.scope,
                r.metric,
                cell(r.baseline),
                cell(r.candidate),
                cell(r.normalized)
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        let mut s = format!("trace {}\n", self.trace_id);
        let _ = writeln!(
            s,
            "{:<10} {:<18} {:>18} {:>18} {:>10}",
            "scope", "metric", "baseline", "candidate", "norm"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:<18} {:>18} {:>18} {:>10}",
                r.scope,
                r.metric,
                fmt(r.baseline),
                fmt(r.candidate),
                fmt(r.normalized)
            );
        }
        s
    }

    pub fn get(&self, scope: &str, metric: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.scope == scope && r.metric == metric)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(id: &str, latency: f64, ratio_out: u64) -> Report {
        let mut c = Counters::default();
        c.record_compress(HotnessLevel::Cold, 1, 4096, ratio_out);
        let m = CostModel::default();
        Report {
            trace_id: id.into(),
            config: serde_json::json!({}),
            cost_model: m,
            counters: c,
            relaunches: vec![RelaunchReport {
                uid: 1,
                launch: 1,
                latency_ns: latency,
                pages_faulted: 0,
                sources: SourceBreakdown::default(),
                decompress_ns: 0.0,
                compress_ns: 0.0,
                flash_ns: 0.0,
                waste_bytes: 0,
            }],
            totals: Totals {
                relaunches: 1,
                latency_ns: latency,
                pages_faulted: 0,
                cpu: cpu_cost(&c, &m),
                compression_ratio: compression_ratio(&c),
                flash_write_bytes: 0,
                compressed_fraction: 0.0,
                compressed_fraction_peak: 0.0,
                oom_reports: 0,
            },
            notes: vec![],
        }
    }

    #[test]
    fn cpu_cost_arithmetic() {
        let m = CostModel::default();
        assert_eq!(cpu_cost(&Counters::default(), &m).total_ns, 0.0);
        let mut c = Counters::default();
        c.record_compress(HotnessLevel::Warm, 1, 4096, 1000);
        let cost = cpu_cost(&c, &m);
        assert_eq!(cost.compress_ns, 500.0 + 0.9 * 4096.0);
        assert_eq!(cost.warm.compress_ns, cost.compress_ns);
        assert_eq!(cost.cold.compress_ns, 0.0);
    }

    #[test]
    fn ratio() {
        let mut c = Counters::default();
        assert_eq!(compression_ratio(&c), None);
        c.record_compress(HotnessLevel::Cold, 1, 100, 100);
        assert_eq!(compression_ratio(&c), Some(1.0));
    }

    #[test]
    fn merge_is_a_sum() {
        let mut a = Counters::default();
        a.record_compress(HotnessLevel::Hot, 2, 10, 5);
        a.prefetch_issued = 3;
        let mut b = a;
        b.merge(&a);
        assert_eq!(b.compress_ops, 4);
        assert_eq!(b.by_level.hot.compress_bytes_in, 20);
        assert_eq!(b.prefetch_issued, 6);
    }

    #[test]
    fn validate_rejects_negative() {
        let m = CostModel {
            decompress_ns_per_op: -1.0,
            ..CostModel::default()
        };
        assert!(matches!(
            m.validate(),
            Err(MetricsError::BadCost {
                field: "decompress_ns_per_op",
                ..
            })
        ));
    }

    #[test]
    fn compare_self_and_reciprocal() {
        let a = report("t", 1000.0, 1000);
        let b = report("t", 400.0, 500);
        let same = compare(&a, &a).unwrap();
        assert!(same.rows.iter().all(|r| r.normalized == Some(1.0)));
        let ab = compare(&a, &b).unwrap();
        let ba = compare(&b, &a).unwrap();
        for (x, y) in ab.rows.iter().zip(&ba.rows) {
            let (p, q) = (x.normalized.unwrap(), y.normalized.unwrap());
            assert!((p * q - 1.0).abs() < 1e-12, "{} {}", x.metric, p * q);
        }
        assert_eq!(ab.get("all", "latency_ns").unwrap().normalized, Some(0.4));
        assert!(ab
            .to_csv()
            .starts_with("scope,metric,baseline,candidate,normalized\nall,latency_ns,1000,400,0.4\n"));
        assert!(ab.to_table().contains("app:1"));
        assert!(compare(&a, &report("u", 1.0, 1)).is_err());
    }
}
