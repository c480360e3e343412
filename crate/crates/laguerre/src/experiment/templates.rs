use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Solve,
    PerturbSweep,
    StorageDemo,
    Spectral,
}

impl CommandKind {
    pub const ALL: [CommandKind; 4] = [Self::Solve, Self::PerturbSweep, Self::StorageDemo, Self::Spectral];

    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::PerturbSweep => "perturb-sweep",
            Self::StorageDemo => "storage-demo",
            Self::Spectral => "spectral",
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CommandKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::Config(format!("unknown command kind {s:?}")))
    }
}

const PROBLEM: &str = r#"
[problem]
# "inner_product" (c = -<x, y>) or "quadratic_distance" (c = |x - y|^2 / 2)
cost = "inner_product"
lower = [0.0, 0.0]
upper = [1.0, 1.0]
# pixels per unit length along each axis (at least 64)
resolution = 256
# density: { kind = "uniform" }, { kind = "gaussian", mean = [..], sigma = [..] } or { kind = "file", path = "..." }
density = { kind = "uniform" }
# sites: { kind = "explicit", points = [[x, y], ...] } or { kind = "random", count = N }
sites = { kind = "random", count = 10 }

[solver]
tol = 1e-10
max_iter = 50
max_halvings = 40

[stability]
q = 2.0
# c_pw defaults to half the domain diameter
# c_pw = 0.7071
epsilon_tol = 1e-6
"#;

/// A commented starting configuration for `kind`.
pub fn template(kind: CommandKind) -> String {
    let head = "schema_version = 1\nseed = 1\n";
    match kind {
        CommandKind::Solve => format!(
            "{head}{PROBLEM}\n[target]\n# uniform, random, {{ kind = \"explicit\", lambda = [..] }} or {{ kind = \"from_dual\", psi = [..] }}\nkind = \"uniform\"\n"
        ),
        CommandKind::PerturbSweep => format!(
            "{head}{PROBLEM}\n[sweep]\ntrials = 10\n# perturbation sizes, positive and increasing\nt_grid = [0.001, 0.01, 0.1]\n# optional: site counts cycled over trials\nsite_counts = [3, 10]\n# masses stay above mass_floor / N\nmass_floor = 0.25\n"
        ),
        CommandKind::StorageDemo => format!("{head}\n[storage]\n# number of sites on [0, n]\nn = 4\n# pixels per unit length\nresolution = 1024\n"),
        CommandKind::Spectral => format!(
            "{head}{PROBLEM}\n[target]\nkind = \"random\"\n\n# optional: repeat over random trials\n[sweep]\ntrials = 5\nt_grid = [0.01]\n"
        ),
    }
}
