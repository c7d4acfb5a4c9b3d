//! Prosodic label taxonomies.
//!
//! Four label categories are predicted per mora: accent symbols (ACC),
//! high/low pitch (HL), break indices (BI) and pause presence (PAU). Each is a
//! closed enumeration with a one-character surface symbol used in manifests
//! and report headers. The declaration order of the variants is the class
//! index order used by the classifier heads and confusion matrices.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A closed label set with a bijective mapping to surface symbols.
pub trait Label: Copy + Eq + fmt::Debug + Sized + 'static {
    /// Every member, in class-index order.
    const ALL: &'static [Self];

    fn symbol(self) -> &'static str;

    fn index(self) -> usize {
        Self::ALL
            .iter()
            .position(|&l| l == self)
            .expect("label is a member of its own enumeration")
    }

    fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    fn from_symbol(symbol: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.symbol() == symbol)
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($(#[$vmeta:meta])* $variant:ident => $sym:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($(#[$vmeta])* $variant),+
        }

        impl Label for $name {
            const ALL: &'static [Self] = &[$($name::$variant),+];

            fn symbol(self) -> &'static str {
                match self {
                    $($name::$variant => $sym),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.symbol())
            }
        }
    };
}

label_enum!(
    /// Accent symbol attached to a mora.
    AccLabel {
        /// `*`: neither a pitch transition nor a phrase boundary.
        Other => "*",
        /// `[`: low-to-high transition.
        LowToHigh => "[",
        /// `]`: high-to-low transition (accent nucleus).
        HighToLow => "]",
        /// `#`: accent phrase boundary with a falling movement.
        BoundaryFall => "#",
        /// `%`: accent phrase boundary with a rise-fall movement.
        BoundaryRiseFall => "%",
        /// `?`: accent phrase boundary with a (fall-)rise movement.
        BoundaryRise => "?",
    }
);

label_enum!(
    /// Mora-level pitch height.
    HlLabel {
        Low => "L",
        High => "H",
    }
);

label_enum!(
    /// Break index after a mora.
    BiLabel {
        B0 => "0",
        B1 => "1",
        B2 => "2",
        B3 => "3",
        /// End of a filled-pause phrase.
        Filled => "F",
        /// End of a disfluent word fragment.
        Disfluency => "D",
    }
);

label_enum!(
    /// Presence of a short pause after a mora.
    PauLabel {
        No => "N",
        Yes => "Y",
    }
);

/// The four prediction tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Acc,
    Hl,
    Bi,
    Pau,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Acc, Task::Hl, Task::Bi, Task::Pau];

    pub fn num_classes(self) -> usize {
        self.symbols().len()
    }

    /// Surface symbols of the task's classes, in class-index order.
    pub fn symbols(self) -> Vec<&'static str> {
        fn syms<L: Label>() -> Vec<&'static str> {
            L::ALL.iter().map(|l| l.symbol()).collect()
        }
        match self {
            Task::Acc => syms::<AccLabel>(),
            Task::Hl => syms::<HlLabel>(),
            Task::Bi => syms::<BiLabel>(),
            Task::Pau => syms::<PauLabel>(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Acc => "acc",
            Task::Hl => "hl",
            Task::Bi => "bi",
            Task::Pau => "pau",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Labels of one phoneme. Either all four are present (mora-core phoneme of a
/// labeled utterance) or all four are absent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct LabelBundle {
    pub acc: Option<AccLabel>,
    pub hl: Option<HlLabel>,
    pub bi: Option<BiLabel>,
    pub pau: Option<PauLabel>,
}

impl LabelBundle {
    pub const ABSENT: LabelBundle = LabelBundle {
        acc: None,
        hl: None,
        bi: None,
        pau: None,
    };

    pub fn full(acc: AccLabel, hl: HlLabel, bi: BiLabel, pau: PauLabel) -> Self {
        LabelBundle {
            acc: Some(acc),
            hl: Some(hl),
            bi: Some(bi),
            pau: Some(pau),
        }
    }

    /// Builds a bundle from per-task class indices (in `Task::ALL` order).
    pub fn from_indices(indices: [usize; 4]) -> Option<Self> {
        Some(LabelBundle::full(
            AccLabel::from_index(indices[0])?,
            HlLabel::from_index(indices[1])?,
            BiLabel::from_index(indices[2])?,
            PauLabel::from_index(indices[3])?,
        ))
    }

    pub fn class_index(&self, task: Task) -> Option<usize> {
        match task {
            Task::Acc => self.acc.map(Label::index),
            Task::Hl => self.hl.map(Label::index),
            Task::Bi => self.bi.map(Label::index),
            Task::Pau => self.pau.map(Label::index),
        }
    }

    pub fn is_full(&self) -> bool {
        self.acc.is_some() && self.hl.is_some() && self.bi.is_some() && self.pau.is_some()
    }

    pub fn is_absent(&self) -> bool {
        *self == Self::ABSENT
    }
}
