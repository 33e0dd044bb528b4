//! The closed set of task types, tasks, classes and raw output slots.
//!
//! Ten binary tasks come from three source corpora. Nine of them own a single
//! raw output slot; propaganda owns one slot per technique (18), and the head
//! max-pools those into the single propaganda probability. That gives 27 raw
//! slots feeding 10 pooled outputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of binary tasks.
pub const NUM_TASKS: usize = 10;
/// Number of task types (source corpora).
pub const NUM_TASK_TYPES: usize = 3;
/// Number of propaganda techniques pooled into the propaganda task.
pub const NUM_TECHNIQUES: usize = 18;
/// Width of the raw logit vector before pooling.
pub const NUM_RAW_SLOTS: usize = NUM_TECHNIQUES + NUM_TASKS - 1;

/// Source-corpus grouping; the first branching level of the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskType {
    Iac,
    IbmQuality,
    Propaganda,
}

impl TaskType {
    pub const ALL: [TaskType; NUM_TASK_TYPES] =
        [TaskType::Iac, TaskType::IbmQuality, TaskType::Propaganda];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<TaskType> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Iac => "IAC",
            TaskType::IbmQuality => "IBM_QUALITY",
            TaskType::Propaganda => "PROPAGANDA",
        }
    }

    /// Tasks belonging to this type, in task order.
    pub fn tasks(self) -> impl Iterator<Item = Task> {
        Task::ALL.into_iter().filter(move |t| t.task_type() == self)
    }

    /// `|T_k|`, the number of tasks of this type.
    pub fn task_count(self) -> usize {
        self.tasks().count()
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

/// One of the ten binary classification targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Propaganda,
    DisagreeAgree,
    EmotionFact,
    AttackingRespectful,
    NastyNice,
    PersonalAudience,
    DefeaterUndercutter,
    NegotiateAttack,
    QuestioningAsserting,
    ArgumentQuality,
}

impl Task {
    pub const ALL: [Task; NUM_TASKS] = [
        Task::Propaganda,
        Task::DisagreeAgree,
        Task::EmotionFact,
        Task::AttackingRespectful,
        Task::NastyNice,
        Task::PersonalAudience,
        Task::DefeaterUndercutter,
        Task::NegotiateAttack,
        Task::QuestioningAsserting,
        Task::ArgumentQuality,
    ];

    /// The eight tasks scored on the [-5, 5] forum-post scales.
    pub const IAC: [Task; 8] = [
        Task::DisagreeAgree,
        Task::EmotionFact,
        Task::AttackingRespectful,
        Task::NastyNice,
        Task::PersonalAudience,
        Task::DefeaterUndercutter,
        Task::NegotiateAttack,
        Task::QuestioningAsserting,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Task> {
        Self::ALL.get(index).copied()
    }

    pub fn task_type(self) -> TaskType {
        match self {
            Task::Propaganda => TaskType::Propaganda,
            Task::ArgumentQuality => TaskType::IbmQuality,
            _ => TaskType::Iac,
        }
    }

    /// Machine name used in interchange files and CSV headers.
    pub fn slug(self) -> &'static str {
        match self {
            Task::Propaganda => "propaganda",
            Task::DisagreeAgree => "disagree_agree",
            Task::EmotionFact => "emotion_fact",
            Task::AttackingRespectful => "attacking_respectful",
            Task::NastyNice => "nasty_nice",
            Task::PersonalAudience => "personal_audience",
            Task::DefeaterUndercutter => "defeater_undercutter",
            Task::NegotiateAttack => "negotiate_attack",
            Task::QuestioningAsserting => "questioning_asserting",
            Task::ArgumentQuality => "argument_quality",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Task::Propaganda => "Propaganda",
            Task::DisagreeAgree => "Disagree/Agree",
            Task::EmotionFact => "Emotion/Fact",
            Task::AttackingRespectful => "Attacking/Respectful",
            Task::NastyNice => "Nasty/Nice",
            Task::PersonalAudience => "Personal/Audience",
            Task::DefeaterUndercutter => "Defeater/Undercutter",
            Task::NegotiateAttack => "Negotiate/Attack",
            Task::QuestioningAsserting => "Questioning/Asserting",
            Task::ArgumentQuality => "Argument Quality",
        }
    }

    /// Class names for label 0 and label 1. Label 1 is the upper end of the
    /// annotation scale.
    pub fn classes(self) -> [&'static str; 2] {
        match self {
            Task::Propaganda => ["non-propaganda", "propaganda"],
            Task::DisagreeAgree => ["disagree", "agree"],
            Task::EmotionFact => ["emotion", "fact"],
            Task::AttackingRespectful => ["attacking", "respectful"],
            Task::NastyNice => ["nasty", "nice"],
            Task::PersonalAudience => ["personal", "audience"],
            Task::DefeaterUndercutter => ["defeater", "undercutter"],
            Task::NegotiateAttack => ["negotiate", "attack"],
            Task::QuestioningAsserting => ["questioning", "asserting"],
            Task::ArgumentQuality => ["low-quality", "high-quality"],
        }
    }

    pub fn raw_slot_count(self) -> usize {
        if self == Task::Propaganda {
            NUM_TECHNIQUES
        } else {
            1
        }
    }

    /// Range of this task's slots inside the 27-wide raw logit vector.
    /// Propaganda techniques occupy the first 18 slots.
    pub fn raw_slots(self) -> std::ops::Range<usize> {
        match self {
            Task::Propaganda => 0..NUM_TECHNIQUES,
            other => {
                let start = NUM_TECHNIQUES + other.index() - 1;
                start..start + 1
            }
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Task {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.slug() == s || t.display_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown name `{0}`")]
pub struct UnknownName(pub String);

/// The propaganda techniques in raw-slot order.
pub const TECHNIQUES: [&str; NUM_TECHNIQUES] = [
    "Loaded_Language",
    "Name_Calling,Labeling",
    "Repetition",
    "Exaggeration,Minimisation",
    "Doubt",
    "Appeal_to_fear-prejudice",
    "Flag-Waving",
    "Causal_Oversimplification",
    "Slogans",
    "Appeal_to_Authority",
    "Black-and-White_Fallacy",
    "Thought-terminating_Cliches",
    "Whataboutism",
    "Reductio_ad_hitlerum",
    "Red_Herring",
    "Bandwagon",
    "Obfuscation,Intentional_Vagueness,Confusion",
    "Straw_Men",
];

/// Looks up a technique by name, ignoring case and treating `_`, `-`, `,`
/// and spaces as equivalent separators.
pub fn technique_index(name: &str) -> Option<usize> {
    fn norm(s: &str) -> String {
        s.chars()
            .map(|c| match c {
                '_' | '-' | ',' | ' ' | '/' => '_',
                c => c.to_ascii_lowercase(),
            })
            .collect()
    }
    let wanted = norm(name);
    TECHNIQUES.iter().position(|t| norm(t) == wanted)
}

/// Serializable description of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub name: String,
    pub task_type: TaskType,
    pub classes: [String; 2],
    pub raw_slot_count: usize,
}

/// Snapshot of the task layout, stored in checkpoints so a model file is
/// self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRegistry {
    pub tasks: Vec<TaskSpec>,
    pub techniques: Vec<String>,
}

impl TaskRegistry {
    pub fn standard() -> Self {
        let tasks = Task::ALL
            .into_iter()
            .map(|t| TaskSpec {
                task_id: t.index(),
                name: t.display_name().to_string(),
                task_type: t.task_type(),
                classes: t.classes().map(String::from),
                raw_slot_count: t.raw_slot_count(),
            })
            .collect();
        TaskRegistry {
            tasks,
            techniques: TECHNIQUES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn raw_slot_total(&self) -> usize {
        self.tasks.iter().map(|t| t.raw_slot_count).sum()
    }

    /// True when this registry describes the layout compiled into the crate.
    pub fn is_standard(&self) -> bool {
        *self == Self::standard()
    }
}

impl Default for TaskRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_shape() {
        let reg = TaskRegistry::standard();
        assert_eq!(reg.tasks.len(), 10);
        let count = |ty| reg.tasks.iter().filter(|t| t.task_type == ty).count();
        assert_eq!(count(TaskType::Iac), 8);
        assert_eq!(count(TaskType::IbmQuality), 1);
        assert_eq!(count(TaskType::Propaganda), 1);
        assert_eq!(reg.raw_slot_total(), 27);
        for spec in &reg.tasks {
            assert_eq!(spec.raw_slot_count == 18, spec.task_type == TaskType::Propaganda);
        }
    }

    #[test]
    fn raw_slots_tile_the_logit_vector() {
        let mut covered = vec![0; NUM_RAW_SLOTS];
        for t in Task::ALL {
            for s in t.raw_slots() {
                covered[s] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
    }

    #[test]
    fn names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.slug().parse::<Task>().unwrap(), t);
            assert_eq!(t.display_name().parse::<Task>().unwrap(), t);
        }
        for ty in TaskType::ALL {
            assert_eq!(ty.as_str().parse::<TaskType>().unwrap(), ty);
        }
        assert!("bogus".parse::<Task>().is_err());
    }

    #[test]
    fn technique_lookup_is_lenient() {
        assert_eq!(technique_index("loaded language"), Some(0));
        assert_eq!(technique_index("Name_Calling,Labeling"), Some(1));
        assert_eq!(technique_index("straw-men"), Some(17));
        assert_eq!(technique_index("nope"), None);
    }
}
