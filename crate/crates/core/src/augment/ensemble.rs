//! General MIDI program -> ensemble partition with pitch-register tags.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AugmentError;

pub const TABLE_VERSION: &str = "ensemble-table v1";

const DEFAULT_TABLE: &str = include_str!("../../data/ensembles.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    Pianos,
    Guitars,
    HighStrings,
    LowStrings,
    Winds,
    Brass,
    Organs,
    SynthLeads,
    SynthPads,
    Basses,
    Mallets,
    Other,
}

impl Ensemble {
    pub const ALL: [Ensemble; 12] = [
        Ensemble::Pianos,
        Ensemble::Guitars,
        Ensemble::HighStrings,
        Ensemble::LowStrings,
        Ensemble::Winds,
        Ensemble::Brass,
        Ensemble::Organs,
        Ensemble::SynthLeads,
        Ensemble::SynthPads,
        Ensemble::Basses,
        Ensemble::Mallets,
        Ensemble::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Ensemble::Pianos => "pianos",
            Ensemble::Guitars => "guitars",
            Ensemble::HighStrings => "high_strings",
            Ensemble::LowStrings => "low_strings",
            Ensemble::Winds => "winds",
            Ensemble::Brass => "brass",
            Ensemble::Organs => "organs",
            Ensemble::SynthLeads => "synth_leads",
            Ensemble::SynthPads => "synth_pads",
            Ensemble::Basses => "basses",
            Ensemble::Mallets => "mallets",
            Ensemble::Other => "other",
        }
    }

    pub fn index(&self) -> usize {
        Ensemble::ALL.iter().position(|e| e == self).unwrap()
    }
}

impl FromStr for Ensemble {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ensemble::ALL
            .iter()
            .copied()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| AugmentError::Table(format!("unknown ensemble '{s}'")))
    }
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Register {
    Low,
    Mid,
    High,
}

impl FromStr for Register {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Register::Low),
            "mid" => Ok(Register::Mid),
            "high" => Ok(Register::High),
            other => Err(AugmentError::Table(format!("unknown register '{other}'"))),
        }
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    program: u8,
    ensemble: String,
    register: String,
}

/// Total mapping from GM program (0-127) to ensemble and register.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleTable {
    entries: [(Ensemble, Register); 128],
}

impl EnsembleTable {
    /// The bundled 12-ensemble partition.
    pub fn general_midi() -> Self {
        Self::from_csv(DEFAULT_TABLE).expect("bundled ensemble table is valid")
    }

    /// Parses a table; the first line must be `# ensemble-table v1`.
    pub fn from_csv(text: &str) -> Result<Self, AugmentError> {
        let first = text.lines().next().unwrap_or_default().trim();
        if first.trim_start_matches('#').trim() != TABLE_VERSION {
            return Err(AugmentError::Table(format!(
                "expected '# {TABLE_VERSION}' header line"
            )));
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut entries: [Option<(Ensemble, Register)>; 128] = [None; 128];
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| AugmentError::Table(e.to_string()))?;
            if row.program > 127 {
                return Err(AugmentError::Table(format!(
                    "program {} out of range",
                    row.program
                )));
            }
            if entries[row.program as usize].is_some() {
                return Err(AugmentError::Table(format!(
                    "program {} listed twice",
                    row.program
                )));
            }
            entries[row.program as usize] = Some((row.ensemble.parse()?, row.register.parse()?));
        }
        let mut out = [(Ensemble::Other, Register::Mid); 128];
        for (p, e) in entries.iter().enumerate() {
            out[p] = e.ok_or_else(|| AugmentError::Table(format!("program {p} missing")))?;
        }
        for ens in Ensemble::ALL {
            if !out.iter().any(|(e, _)| *e == ens) {
                return Err(AugmentError::Table(format!("ensemble {ens} is empty")));
            }
        }
        Ok(EnsembleTable { entries: out })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# {TABLE_VERSION}\nprogram,ensemble,register\n");
        for (p, (e, r)) in self.entries.iter().enumerate() {
            let r = match r {
                Register::Low => "low",
                Register::Mid => "mid",
                Register::High => "high",
            };
            s.push_str(&format!("{p},{e},{r}\n"));
        }
        s
    }

    pub fn ensemble(&self, program: u8) -> Ensemble {
        self.entries[program as usize & 0x7f].0
    }

    pub fn register(&self, program: u8) -> Register {
        self.entries[program as usize & 0x7f].1
    }

    pub fn members(&self, ensemble: Ensemble) -> Vec<u8> {
        (0..128u8)
            .filter(|&p| self.ensemble(p) == ensemble)
            .collect()
    }

    /// Programs in a different ensemble that share `program`'s register.
    pub fn cross_candidates(&self, program: u8) -> Vec<u8> {
        let (ens, reg) = self.entries[program as usize];
        (0..128u8)
            .filter(|&p| self.ensemble(p) != ens && self.register(p) == reg)
            .collect()
    }
}

impl Default for EnsembleTable {
    fn default() -> Self {
        Self::general_midi()
    }
}
