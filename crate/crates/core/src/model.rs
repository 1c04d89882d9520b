//! Model selection shared by the CLI and the simulation harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::car::{run_car, CarSpec, CarVariant};
use crate::data::{Dataset, ModelSpec, PosteriorDraws};
use crate::error::{Error, Result};
use crate::graph::RegionGraph;
use crate::vcbart::run_vcbart;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Vcbart,
    CarVc,
    CarRi,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Vcbart, ModelKind::CarVc, ModelKind::CarRi];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Vcbart => "vcbart",
            ModelKind::CarVc => "car-vc",
            ModelKind::CarRi => "car-ri",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}` (expected vcbart, car-vc or car-ri)")))
    }
}

/// Fits `kind`; the CAR variant is taken from `kind`, not from `car`.
pub fn fit_model(
    kind: ModelKind,
    data: &Dataset,
    graph: &RegionGraph,
    spec: &ModelSpec,
    car: &CarSpec,
) -> Result<PosteriorDraws> {
    match kind {
        ModelKind::Vcbart => run_vcbart(data, graph, spec),
        ModelKind::CarVc | ModelKind::CarRi => {
            let mut car = car.clone();
            car.variant = if kind == ModelKind::CarVc {
                CarVariant::VaryingCoefficients
            } else {
                CarVariant::RandomInterceptOnly
            };
            car.validate()?;
            run_car(data, graph, spec, &car)
        }
    }
}
