//! Hand-simulated canary trajectories for the default configuration
//! (step 10, max 50, three consecutive breaches roll back).

#![allow(dead_code)]

pub mod geo;

use hawk_release::CanaryPhase::{self, Observing as O, Promoted as P, RolledBack as R, Shifting as S};

pub struct Trajectory {
    pub name: &'static str,
    /// true = every rule passes in that interval
    pub inputs: &'static [bool],
    /// (phase, weight, consecutive failures) after each tick
    pub expected: &'static [(CanaryPhase, u32, u32)],
}

pub const TABLE: &[Trajectory] = &[
    Trajectory {
        name: "all pass",
        inputs: &[true; 6],
        expected: &[(S, 10, 0), (S, 20, 0), (S, 30, 0), (S, 40, 0), (S, 50, 0), (P, 50, 0)],
    },
    Trajectory {
        name: "three breaches",
        inputs: &[false; 3],
        expected: &[(O, 0, 1), (O, 0, 2), (R, 0, 3)],
    },
    Trajectory {
        name: "alternating",
        inputs: &[false, true, false, true, false, true, false, true, false, true, false, true],
        expected: &[
            (O, 0, 1),
            (S, 10, 0),
            (O, 10, 1),
            (S, 20, 0),
            (O, 20, 1),
            (S, 30, 0),
            (O, 30, 1),
            (S, 40, 0),
            (O, 40, 1),
            (S, 50, 0),
            (O, 50, 1),
            (P, 50, 0),
        ],
    },
    Trajectory {
        name: "late breaches",
        inputs: &[true, true, false, false, false],
        expected: &[(S, 10, 0), (S, 20, 0), (O, 20, 1), (O, 20, 2), (R, 0, 3)],
    },
    Trajectory {
        name: "two breaches then recovery",
        inputs: &[false, false, true, false, false, true],
        expected: &[(O, 0, 1), (O, 0, 2), (S, 10, 0), (O, 10, 1), (O, 10, 2), (S, 20, 0)],
    },
];
