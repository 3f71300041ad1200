//! Metrics report structure and its two renderings: a flat key=value form
//! for machines and an aligned table for people.

use serde::{Deserialize, Serialize};

use super::PrfScore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrf {
    pub class: String,
    pub score: PrfScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub per_class: Vec<ClassPrf>,
    /// Pooled counts over all classes (accuracy for single-label tasks).
    pub micro: PrfScore,
    /// Pooled counts with the `none` class left out, when the task has one.
    pub micro_excl_none: Option<PrfScore>,
    /// Unweighted mean F1 over classes with nonzero support.
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mention_span: Option<PrfScore>,
    pub mention_token: Option<PrfScore>,
    pub per_task: Vec<TaskMetrics>,
    /// Mean of the five per-task micro F1 scores.
    pub overall_micro_f1: f64,
    /// Mean of the five per-task macro F1 scores.
    pub overall_macro_f1: f64,
    /// Number of scored mentions.
    pub support: usize,
}

fn push_prf(out: &mut String, prefix: &str, s: &PrfScore) {
    out.push_str(&format!("{prefix}.tp={}\n", s.true_pos));
    out.push_str(&format!("{prefix}.fp={}\n", s.false_pos));
    out.push_str(&format!("{prefix}.fn={}\n", s.false_neg));
    out.push_str(&format!("{prefix}.precision={:.6}\n", s.precision));
    out.push_str(&format!("{prefix}.recall={:.6}\n", s.recall));
    out.push_str(&format!("{prefix}.f1={:.6}\n", s.f1));
}

impl MetricsReport {
    /// Stable `key=value` rendering; reruns over identical inputs produce
    /// byte-identical output.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("support={}\n", self.support));
        if let Some(s) = &self.mention_span {
            push_prf(&mut out, "mention.span", s);
        }
        if let Some(s) = &self.mention_token {
            push_prf(&mut out, "mention.token", s);
        }
        for task in &self.per_task {
            for class in &task.per_class {
                push_prf(&mut out, &format!("{}.class.{}", task.task, class.class), &class.score);
            }
            push_prf(&mut out, &format!("{}.micro", task.task), &task.micro);
            if let Some(s) = &task.micro_excl_none {
                push_prf(&mut out, &format!("{}.micro_excl_none", task.task), s);
            }
            out.push_str(&format!("{}.macro.f1={:.6}\n", task.task, task.macro_f1));
        }
        out.push_str(&format!("overall.micro.f1={:.6}\n", self.overall_micro_f1));
        out.push_str(&format!("overall.macro.f1={:.6}\n", self.overall_macro_f1));
        out
    }

    /// Aligned human-readable table: per-class rows, micro/macro rows per
    /// task, then the overall average.
    pub fn to_table_string(&self) -> String {
        let mut rows: Vec<[String; 7]> = Vec::new();
        let header = [
            "task".to_string(),
            "class".to_string(),
            "P".to_string(),
            "R".to_string(),
            "F1".to_string(),
            "TP".to_string(),
            "support".to_string(),
        ];
        let fmt = |v: f64| format!("{v:.3}");
        if let Some(s) = &self.mention_span {
            rows.push([
                "mention".into(),
                "span".into(),
                fmt(s.precision),
                fmt(s.recall),
                fmt(s.f1),
                s.true_pos.to_string(),
                (s.true_pos + s.false_neg).to_string(),
            ]);
        }
        if let Some(s) = &self.mention_token {
            rows.push([
                "mention".into(),
                "token".into(),
                fmt(s.precision),
                fmt(s.recall),
                fmt(s.f1),
                s.true_pos.to_string(),
                (s.true_pos + s.false_neg).to_string(),
            ]);
        }
        for task in &self.per_task {
            for class in &task.per_class {
                let s = &class.score;
                rows.push([
                    task.task.clone(),
                    class.class.clone(),
                    fmt(s.precision),
                    fmt(s.recall),
                    fmt(s.f1),
                    s.true_pos.to_string(),
                    (s.true_pos + s.false_neg).to_string(),
                ]);
            }
            rows.push([
                task.task.clone(),
                "micro".into(),
                fmt(task.micro.precision),
                fmt(task.micro.recall),
                fmt(task.micro.f1),
                task.micro.true_pos.to_string(),
                (task.micro.true_pos + task.micro.false_neg).to_string(),
            ]);
            rows.push([
                task.task.clone(),
                "macro".into(),
                String::new(),
                String::new(),
                fmt(task.macro_f1),
                String::new(),
                String::new(),
            ]);
        }
        rows.push([
            "overall".into(),
            "average".into(),
            String::new(),
            String::new(),
            fmt(self.overall_micro_f1),
            String::new(),
            String::new(),
        ]);

        let mut widths = [0usize; 7];
        for row in std::iter::once(&header).chain(rows.iter()) {
            for (w, cell) in widths.iter_mut().zip(row.iter()) {
                *w = (*w).max(cell.len());
            }
        }
        let render = |row: &[String; 7]| -> String {
            let cells: Vec<String> = row
                .iter()
                .zip(widths.iter())
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            cells.join("  ").trim_end().to_string()
        };
        let mut out = render(&header);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 12));
        out.push('\n');
        for row in &rows {
            out.push_str(&render(row));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsReport {
        let prf = PrfScore::from_counts(8, 2, 1);
        MetricsReport {
            mention_span: Some(prf),
            mention_token: None,
            per_task: vec![TaskMetrics {
                task: "event".into(),
                per_class: vec![ClassPrf {
                    class: "disposition".into(),
                    score: prf,
                }],
                micro: prf,
                micro_excl_none: None,
                macro_f1: prf.f1,
            }],
            overall_micro_f1: prf.f1,
            overall_macro_f1: prf.f1,
            support: 11,
        }
    }

    #[test]
    fn kv_contains_expected_keys() {
        let kv = sample().to_kv_string();
        assert!(kv.contains("mention.span.f1=0.842105\n"));
        assert!(kv.contains("event.class.disposition.precision=0.800000\n"));
        assert!(kv.contains("overall.micro.f1="));
        assert!(kv.contains("support=11\n"));
    }

    #[test]
    fn table_has_overall_row_and_alignment() {
        let table = sample().to_table_string();
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("task"));
        assert!(lines.last().unwrap().starts_with("overall"));
        assert!(table.contains("micro"));
        assert!(table.contains("macro"));
    }

    #[test]
    fn rendering_is_stable() {
        assert_eq!(sample().to_kv_string(), sample().to_kv_string());
        assert_eq!(sample().to_table_string(), sample().to_table_string());
    }
}
