use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::{Polynomial, SafeSet, SystemModel};
use crate::error::Error;
use crate::grid::{ControlSet, Grid};
use crate::indicator::{RunningCost, ZubovTransform};
use crate::solver::{Integrator, SolverParams, ZubovSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkId {
    /// `x' = -x + u`, `h = x^2`: the safe set is `(-1, 1)`.
    Lin1d,
    /// `x' = u` in the plane with a disk obstacle.
    Integrator2dDisk,
    /// Damped pendulum with torque input inside an angle/velocity box.
    PendulumBox,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 3] = [
        BenchmarkId::Lin1d,
        BenchmarkId::Integrator2dDisk,
        BenchmarkId::PendulumBox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkId::Lin1d => "lin1d",
            BenchmarkId::Integrator2dDisk => "integrator2d_disk",
            BenchmarkId::PendulumBox => "pendulum_box",
        }
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        BenchmarkId::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Lookup(format!("unknown benchmark `{s}`")))
    }
}

/// A catalog system together with the parameters it is meant to be solved
/// with.
#[derive(Debug, Clone)]
pub struct BenchmarkSetup {
    pub id: BenchmarkId,
    pub system: SystemModel,
    pub safe: SafeSet,
    pub cost: RunningCost,
    pub transform: ZubovTransform,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
    pub controls: ControlSet,
    pub params: SolverParams,
}

impl BenchmarkSetup {
    pub fn solver(&self) -> ZubovSolver {
        ZubovSolver::new(
            self.system.clone(),
            self.safe.clone(),
            self.cost.clone(),
            self.transform,
            self.controls.clone(),
            self.params,
        )
        .expect("catalog setup is consistent")
    }

    pub fn grid(&self) -> Result<Arc<Grid>, Error> {
        Ok(Arc::new(Grid::build(
            &self.lower,
            &self.upper,
            &self.counts,
            &self.safe,
        )?))
    }
}

/// Disk obstacle of radius `DISK_RADIUS` centred at `DISK_CENTER`.
pub const DISK_CENTER: [f64; 2] = [0.8, 0.0];
pub const DISK_RADIUS: f64 = 0.4;

/// Superellipse half-widths of the pendulum box (angle, velocity).
pub const PENDULUM_BOX: [f64; 2] = [1.5, 2.5];

fn poly(text: &str, n: usize) -> Polynomial {
    Polynomial::parse(text, n).expect("catalog polynomial")
}

pub fn load_benchmark(id: BenchmarkId) -> BenchmarkSetup {
    match id {
        BenchmarkId::Lin1d => BenchmarkSetup {
            id,
            system: SystemModel::new("lin1d", vec![poly("-1*x1", 1)], vec![poly("1", 1)], 1).unwrap(),
            safe: SafeSet::new(poly("x1^2", 1), "|x| < 1").unwrap(),
            cost: RunningCost::identity(1, 1, true),
            transform: ZubovTransform::default(),
            lower: vec![-1.5],
            upper: vec![1.5],
            counts: vec![301],
            controls: ControlSet::new(&[4.0], 41).unwrap(),
            params: SolverParams {
                dt: 0.01,
                ..SolverParams::default()
            },
        },
        BenchmarkId::Integrator2dDisk => {
            // h = 2 - |x - c|^2 / r^2, so h >= 1 exactly on the closed disk
            // |x - c| <= r and h(0) = 2 - |c|^2 / r^2 = -2.
            let [c1, c2] = DISK_CENTER;
            let r2 = DISK_RADIUS * DISK_RADIUS;
            let h = Polynomial::from_terms(
                2,
                vec![
                    mono(2.0 - (c1 * c1 + c2 * c2) / r2, [0, 0]),
                    mono(2.0 * c1 / r2, [1, 0]),
                    mono(2.0 * c2 / r2, [0, 1]),
                    mono(-1.0 / r2, [2, 0]),
                    mono(-1.0 / r2, [0, 2]),
                ],
            );
            BenchmarkSetup {
                id,
                system: SystemModel::new(
                    "integrator2d_disk",
                    vec![Polynomial::zero(2), Polynomial::zero(2)],
                    vec![poly("1", 2), poly("0", 2), poly("0", 2), poly("1", 2)],
                    2,
                )
                .unwrap(),
                safe: SafeSet::new(h, "outside the disk |x - (0.8, 0)| <= 0.4").unwrap(),
                // With R = I and no drift, the one-step lookahead prefers
                // u = 0 over the smallest nonzero control sample within
                // about a cell of the origin and closed loops stall there.
                cost: RunningCost::new(1.0, vec![1.0, 0.0, 0.0, 1.0], vec![0.1, 0.0, 0.0, 0.1], 1.0, true).unwrap(),
                transform: ZubovTransform::default(),
                lower: vec![-2.0, -2.0],
                upper: vec![2.0, 2.0],
                counts: vec![41, 41],
                controls: ControlSet::new(&[1.0, 1.0], 5).unwrap(),
                params: SolverParams {
                    dt: 0.05,
                    ..SolverParams::default()
                },
            }
        }
        BenchmarkId::PendulumBox => {
            // angle x1, rate x2, damping 0.5; sin x1 replaced by its
            // degree-5 Taylor polynomial.
            let f2 = poly(
                "-1*x1 + 0.16666666666666666*x1^3 - 0.008333333333333333*x1^5 - 0.5*x2",
                2,
            );
            let [a, b] = PENDULUM_BOX;
            let h = Polynomial::from_terms(2, vec![mono(1.0 / a.powi(4), [4, 0]), mono(1.0 / b.powi(4), [0, 4])]);
            BenchmarkSetup {
                id,
                system: SystemModel::new(
                    "pendulum_box",
                    vec![poly("x2", 2), f2],
                    vec![poly("0", 2), poly("1", 2)],
                    1,
                )
                .unwrap(),
                safe: SafeSet::new(h, "(x1/1.5)^4 + (x2/2.5)^4 < 1").unwrap(),
                cost: RunningCost::identity(2, 1, true),
                transform: ZubovTransform::default(),
                lower: vec![-2.0, -3.0],
                upper: vec![2.0, 3.0],
                counts: vec![41, 41],
                controls: ControlSet::new(&[1.0], 5).unwrap(),
                params: SolverParams {
                    dt: 0.05,
                    integrator: Integrator::Rk4,
                    ..SolverParams::default()
                },
            }
        }
    }
}

fn mono(coeff: f64, exps: [u32; 2]) -> super::Monomial {
    super::Monomial {
        coeff,
        exps: exps.to_vec(),
    }
}
