use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DatasetError;

macro_rules! code_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $code:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn code(self) -> &'static str {
                match self {
                    $($name::$variant => $code),+
                }
            }

            pub fn from_code(code: &str) -> Option<Self> {
                match code {
                    $($code => Some($name::$variant),)+
                    _ => None,
                }
            }

            /// Stable small integer used by the binary formats.
            pub fn index(self) -> u8 {
                Self::ALL.iter().position(|v| *v == self).unwrap() as u8
            }

            pub fn from_index(i: u8) -> Option<Self> {
                Self::ALL.get(i as usize).copied()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.code())
            }
        }
    };
}

code_enum!(
    /// Character role.
    Role {
        Archeologist => "arc",
        Barbarian => "bar",
        Caveman => "cav",
        Healer => "hea",
        Knight => "kni",
        Monk => "mon",
        Priest => "pri",
        Ranger => "ran",
        Rogue => "rog",
        Samurai => "sam",
        Tourist => "tou",
        Valkyrie => "val",
        Wizard => "wiz",
    }
);

code_enum!(
    /// Character race.
    Race {
        Human => "hum",
        Elf => "elf",
        Dwarf => "dwa",
        Gnome => "gno",
        Orc => "orc",
    }
);

code_enum!(
    /// Character alignment.
    Alignment {
        Neutral => "neu",
        Lawful => "law",
        Chaotic => "cha",
    }
);

/// A role-race-alignment triple. Only the 38 catalogued triples can be
/// constructed through [`CharacterSpec::parse`] or [`CharacterSpec::new`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CharacterSpec {
    pub role: Role,
    pub race: Race,
    pub alignment: Alignment,
}

impl CharacterSpec {
    /// Builds a spec, rejecting triples that are not benchmark tasks.
    pub fn new(role: Role, race: Race, alignment: Alignment) -> Result<Self, DatasetError> {
        let spec = CharacterSpec {
            role,
            race,
            alignment,
        };
        if super::catalog::lookup(spec).is_none() {
            return Err(DatasetError::UnknownTask(spec.to_string()));
        }
        Ok(spec)
    }

    /// Parses a canonical "role-race-alignment" id such as `mon-hum-neu`.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let malformed = || DatasetError::MalformedId(text.to_string());
        let mut parts = text.split('-');
        let (Some(r), Some(ra), Some(al), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(malformed());
        };
        let role = Role::from_code(r).ok_or_else(malformed)?;
        let race = Race::from_code(ra).ok_or_else(malformed)?;
        let alignment = Alignment::from_code(al).ok_or_else(malformed)?;
        Self::new(role, race, alignment)
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

/// Parses a task id.
pub fn parse_task_id(text: &str) -> Result<CharacterSpec, DatasetError> {
    CharacterSpec::parse(text)
}

impl fmt::Display for CharacterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.role, self.race, self.alignment)
    }
}

impl FromStr for CharacterSpec {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for CharacterSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CharacterSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        CharacterSpec::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_ids() {
        let spec = parse_task_id("mon-hum-neu").unwrap();
        assert_eq!(
            (spec.role, spec.race, spec.alignment),
            (Role::Monk, Race::Human, Alignment::Neutral)
        );
        let spec = parse_task_id("arc-hum-neu").unwrap();
        assert_eq!(spec.role, Role::Archeologist);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(
            parse_task_id("mon-elf-neu"),
            Err(DatasetError::UnknownTask(_))
        ));
        for bad in ["", "mon", "mon-hum", "mon-hum-neu-x", "MON-hum-neu", "xyz-hum-neu", "mon_hum_neu"] {
            assert!(
                matches!(parse_task_id(bad), Err(DatasetError::MalformedId(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn serde_uses_canonical_string() {
        let spec = parse_task_id("val-dwa-law").unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, "\"val-dwa-law\"");
        let back: CharacterSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<CharacterSpec>("\"val-elf-law\"").is_err());
    }
}
