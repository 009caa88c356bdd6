//! The 37 ConceptNet relations used for probing, with their default cloze templates.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! relations {
    ($( $variant:ident => $template:literal ),+ $(,)?) => {
        /// A ConceptNet relation from the probed set.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum Relation {
            $( $variant, )+
        }

        impl Relation {
            /// All relations, in descending order of sample count in the full ConceptNet 5.6 dump.
            pub const ALL: [Relation; 37] = [ $( Relation::$variant, )+ ];

            pub fn as_str(self) -> &'static str {
                match self {
                    $( Relation::$variant => stringify!($variant), )+
                }
            }

            /// The default cloze pattern for this relation.
            pub fn default_template(self) -> &'static str {
                match self {
                    $( Relation::$variant => $template, )+
                }
            }
        }
    };
}

relations! {
    RelatedTo => "[[SUBJ]] is related to [[OBJ]] .",
    HasContext => "[[SUBJ]] is used in the context of [[OBJ]] .",
    IsA => "[[SUBJ]] is a [[OBJ]] .",
    DerivedFrom => "[[OBJ]] is derived from [[SUBJ]] .",
    Synonym => "[[SUBJ]] and [[OBJ]] are same .",
    FormOf => "[[OBJ]] is the root word of [[SUBJ]] .",
    EtymologicallyRelatedTo => "[[SUBJ]] is etymologically related to [[OBJ]] .",
    SimilarTo => "[[SUBJ]] is similar to [[OBJ]] .",
    AtLocation => "Something you find at [[OBJ]] is [[SUBJ]] .",
    MannerOf => "[[SUBJ]] is a way to [[OBJ]] .",
    PartOf => "[[SUBJ]] is part of [[OBJ]] .",
    Antonym => "[[SUBJ]] and [[OBJ]] are opposite .",
    HasProperty => "[[SUBJ]] can be [[OBJ]] .",
    UsedFor => "[[SUBJ]] may be used for [[OBJ]] .",
    DistinctFrom => "[[SUBJ]] is not [[OBJ]] .",
    HasPrerequisite => "[[SUBJ]] requires [[OBJ]] .",
    HasSubevent => "When [[SUBJ]] , [[OBJ]] .",
    Causes => "[[SUBJ]] causes [[OBJ]] .",
    HasA => "[[SUBJ]] contains [[OBJ]] .",
    InstanceOf => "[[SUBJ]] is an instance of [[OBJ]] .",
    CapableOf => "[[SUBJ]] can [[OBJ]] .",
    ReceivesAction => "[[SUBJ]] can be [[OBJ]] .",
    MotivatedByGoal => "You would [[SUBJ]] because [[OBJ]] .",
    CausesDesire => "[[SUBJ]] would make you want to [[OBJ]] .",
    MadeOf => "[[SUBJ]] can be made of [[OBJ]] .",
    HasLastSubevent => "The last thing you do when you [[SUBJ]] is [[OBJ]] .",
    Entails => "[[SUBJ]] entails [[OBJ]] .",
    HasFirstSubevent => "The first thing you do when you [[SUBJ]] is [[OBJ]] .",
    Desires => "[[SUBJ]] wants [[OBJ]] .",
    NotHasProperty => "[[SUBJ]] is not [[OBJ]] .",
    CreatedBy => "[[SUBJ]] is creatd by [[OBJ]] .",
    DefinedAs => "[[SUBJ]] can be defined as [[OBJ]] .",
    NotDesires => "[[SUBJ]] does not want [[OBJ]] .",
    NotCapableOf => "[[SUBJ]] can not [[OBJ]] .",
    LocatedNear => "[[SUBJ]] is typically near [[OBJ]] .",
    EtymologicallyDerivedFrom => "[[SUBJ]] is etymologically derived from [[OBJ]] .",
    SymbolOf => "[[SUBJ]] is an symbol of [[OBJ]] .",
}

impl Relation {
    /// Relations sorted by name, the canonical order for reports.
    pub fn sorted() -> Vec<Relation> {
        let mut all = Relation::ALL.to_vec();
        all.sort();
        all
    }
}

// Ordering is lexicographic by name so every report sorts the same way.
impl Ord for Relation {
    fn cmp(&self, other: &Self) -> Ordering {
        self.as_str().cmp(other.as_str())
    }
}

impl PartialOrd for Relation {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown relation `{0}`")]
pub struct UnknownRelation(pub String);

impl FromStr for Relation {
    type Err = UnknownRelation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| UnknownRelation(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn thirty_seven_distinct_relations() {
        let names: HashSet<_> = Relation::ALL.iter().map(|r| r.as_str()).collect();
        assert_eq!(names.len(), 37);
    }

    #[test]
    fn parse_round_trip() {
        for r in Relation::ALL {
            assert_eq!(r.as_str().parse::<Relation>().unwrap(), r);
        }
        assert!("dbpedia/genre".parse::<Relation>().is_err());
    }

    #[test]
    fn templates_have_both_placeholders_once() {
        for r in Relation::ALL {
            let t = r.default_template();
            assert_eq!(t.matches("[[SUBJ]]").count(), 1, "{r}");
            assert_eq!(t.matches("[[OBJ]]").count(), 1, "{r}");
            assert!(t.ends_with(" ."), "{r}");
        }
    }

    #[test]
    fn sorted_is_by_name() {
        let sorted = Relation::sorted();
        assert_eq!(sorted[0], Relation::Antonym);
        assert!(sorted.windows(2).all(|w| w[0].as_str() < w[1].as_str()));
    }
}
