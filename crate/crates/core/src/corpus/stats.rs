use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Record, Split};
use crate::registry::{Task, TaskType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    /// TRAIN records carrying a label for the task.
    pub n_train: usize,
    /// Counts of label 0 and label 1.
    pub class_counts: [usize; 2],
    /// Proportions of label 0 and label 1.
    pub class_balance: [f64; 2],
}

/// Size and class balance of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub tasks: BTreeMap<Task, TaskStats>,
    /// `|D_k|`: TRAIN records of each task type.
    pub type_sizes: BTreeMap<TaskType, usize>,
}

impl DatasetStats {
    pub fn task(&self, task: Task) -> &TaskStats {
        &self.tasks[&task]
    }

    pub fn type_size(&self, ty: TaskType) -> usize {
        self.type_sizes.get(&ty).copied().unwrap_or(0)
    }
}

/// Computes per-task training counts and class balance, and per-type sizes.
/// Fails when a task has no TRAIN labels or lacks one of its classes.
pub fn stats(records: &[Record]) -> Result<DatasetStats, CorpusError> {
    let mut counts: BTreeMap<Task, [usize; 2]> = BTreeMap::new();
    let mut type_sizes: BTreeMap<TaskType, usize> = TaskType::ALL.map(|t| (t, 0)).into();
    for r in records.iter().filter(|r| r.split == Some(Split::Train)) {
        *type_sizes.entry(r.task_type).or_default() += 1;
        for (&task, &label) in &r.labels {
            counts.entry(task).or_default()[usize::from(label.min(1))] += 1;
        }
    }
    let mut tasks = BTreeMap::new();
    for task in Task::ALL {
        let c = counts.get(&task).copied().unwrap_or_default();
        let n = c[0] + c[1];
        if n == 0 {
            return Err(CorpusError::MissingTask(task));
        }
        if let Some(missing) = (0..2).find(|&k| c[k] == 0) {
            return Err(CorpusError::MissingClass { task, class: task.classes()[missing] });
        }
        tasks.insert(
            task,
            TaskStats {
                n_train: n,
                class_counts: c,
                class_balance: [c[0] as f64 / n as f64, c[1] as f64 / n as f64],
            },
        );
    }
    Ok(DatasetStats { tasks, type_sizes })
}

impl fmt::Display for DatasetStats {
    /// Table of training size and rounded class balance per task.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24}{:>12}{:>10}", "Task", "Training N", "Balance")?;
        for (task, s) in &self.tasks {
            let p0 = (s.class_balance[0] * 100.0).round() as i64;
            writeln!(f, "{:<24}{:>12}{:>10}", task.display_name(), s.n_train, format!("{}/{}", p0, 100 - p0))?;
        }
        for (ty, n) in &self.type_sizes {
            writeln!(f, "|D| {:<20}{:>12}", ty.as_str(), n)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split, synthesize, SplitRatios};

    fn iac(id: usize, labels: &[(Task, u8)]) -> Record {
        Record {
            record_id: format!("r{id}"),
            text: "x".into(),
            task_type: TaskType::Iac,
            labels: labels.iter().copied().collect(),
            raw_technique_labels: None,
            split: Some(Split::Train),
            augmented_from: None,
        }
    }

    fn base() -> Vec<Record> {
        split(synthesize(60, 1.0, 4), SplitRatios::default(), 1).unwrap()
    }

    #[test]
    fn disagree_fixture_reproduces_21_79() {
        // 21 disagree (label 0) and 79 agree (label 1) among TRAIN labels.
        let mut recs: Vec<_> = base().into_iter().filter(|r| r.task_type != TaskType::Iac).collect();
        for i in 0..100 {
            let mut labels = vec![(Task::DisagreeAgree, u8::from(i >= 21))];
            labels.extend(Task::IAC[1..].iter().map(|&t| (t, (i % 2) as u8)));
            recs.push(iac(i, &labels));
        }
        let s = stats(&recs).unwrap();
        let d = s.task(Task::DisagreeAgree);
        assert_eq!(d.n_train, 100);
        assert!((d.class_balance[0] - 0.21).abs() < 1e-12);
        assert!((d.class_balance.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(s.to_string().contains("21/79"));
    }

    #[test]
    fn type_size_counts_records_not_labels() {
        let mut recs: Vec<_> = base().into_iter().filter(|r| r.task_type != TaskType::Iac).collect();
        for i in 0..12 {
            let labels: Vec<_> = Task::IAC.iter().map(|&t| (t, (i % 2) as u8)).collect();
            let n_labels = if i < 10 { 3 } else { 8 };
            recs.push(iac(i, &labels[..n_labels]));
        }
        let s = stats(&recs).unwrap();
        assert_eq!(s.type_size(TaskType::Iac), 12);
        assert_eq!(s.task(Task::DisagreeAgree).n_train, 12);
        assert_eq!(s.task(Task::QuestioningAsserting).n_train, 2);
    }

    #[test]
    fn missing_task_is_named() {
        let recs: Vec<_> = base().into_iter().filter(|r| r.task_type != TaskType::IbmQuality).collect();
        assert!(matches!(stats(&recs), Err(CorpusError::MissingTask(Task::ArgumentQuality))));
    }

    #[test]
    fn missing_class_is_named() {
        let mut recs = base();
        for r in recs.iter_mut().filter(|r| r.task_type == TaskType::IbmQuality) {
            r.labels.insert(Task::ArgumentQuality, 1);
        }
        match stats(&recs) {
            Err(CorpusError::MissingClass { task, class }) => {
                assert_eq!(task, Task::ArgumentQuality);
                assert_eq!(class, "low-quality");
            }
            other => panic!("{other:?}"),
        }
    }
}
