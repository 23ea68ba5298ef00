//! Published coefficient sets and the integrator names the CLI understands.

use crate::error::{Error, Result};
use crate::fourth_order::RowlandsScheme;
use crate::splitting::{LegIntegrator, ProcessedIntegrator};

/// One row of the parameter table: tuning budget, parameters, the reported
/// (rounded-up) `‖ρ‖` bound and the kernel stability length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub name: &'static str,
    pub hbar: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub rho_bound: f64,
    pub stability: f64,
}

impl TableRow {
    pub fn integrator(&self) -> ProcessedIntegrator {
        ProcessedIntegrator::family(self.b, self.c, self.d)
            .expect("table coefficients are valid")
            .with_name(self.name)
    }
}

/// Row 0 is the unprocessed BlCaSa kernel; rows 1-4 are processed.
pub const TABLE2: [TableRow; 5] = [
    TableRow {
        name: "blcasa",
        hbar: 3.0,
        b: 0.381120,
        c: 0.0,
        d: 0.0,
        rho_bound: 7e-5,
        stability: 4.662,
    },
    TableRow {
        name: "proc-3.0",
        hbar: 3.0,
        b: 0.348674,
        c: -0.075640,
        d: 0.069720,
        rho_bound: 6e-8,
        stability: 4.985,
    },
    TableRow {
        name: "proc-3.5",
        hbar: 3.5,
        b: 0.346660,
        c: -0.079510,
        d: 0.070171,
        rho_bound: 5e-7,
        stability: 5.010,
    },
    TableRow {
        name: "proc-4.0",
        hbar: 4.0,
        b: 0.343684,
        c: -0.084690,
        d: 0.071880,
        rho_bound: 5e-6,
        stability: 5.048,
    },
    TableRow {
        name: "proc-4.5",
        hbar: 4.5,
        b: 0.340200,
        c: -0.093500,
        d: 0.072800,
        rho_bound: 5e-5,
        stability: 5.095,
    },
];

pub const INTEGRATOR_NAMES: [&str; 7] = [
    "leapfrog", "blcasa", "proc-3.0", "proc-3.5", "proc-4.0", "proc-4.5", "rowlands",
];

pub fn table_row(name: &str) -> Option<&'static TableRow> {
    TABLE2.iter().find(|r| r.name == name)
}

/// A named integrator from the catalogue.
#[derive(Debug, Clone)]
pub enum NamedIntegrator {
    Processed(ProcessedIntegrator),
    Rowlands(RowlandsScheme),
}

impl NamedIntegrator {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "leapfrog" | "verlet" => {
                Ok(NamedIntegrator::Processed(ProcessedIntegrator::leapfrog()))
            }
            "rowlands" => Ok(NamedIntegrator::Rowlands(RowlandsScheme::new())),
            _ => table_row(name)
                .map(|r| NamedIntegrator::Processed(r.integrator()))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown integrator '{name}' (expected one of {})",
                        INTEGRATOR_NAMES.join(", ")
                    ))
                }),
        }
    }

    pub fn as_leg(&self) -> &dyn LegIntegrator {
        match self {
            NamedIntegrator::Processed(p) => p,
            NamedIntegrator::Rowlands(r) => r,
        }
    }

    /// Stability length of the kernel on the unit oscillator.
    pub fn stability_length(&self) -> f64 {
        match self {
            NamedIntegrator::Processed(p) => crate::harmonic::stability_length(p.kernel()),
            NamedIntegrator::Rowlands(r) => crate::harmonic::stability_length(r.kernel()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves() {
        for name in INTEGRATOR_NAMES {
            let i = NamedIntegrator::by_name(name).unwrap();
            assert_eq!(i.as_leg().name(), name);
        }
        assert!(NamedIntegrator::by_name("rk4").is_err());
    }

    #[test]
    fn table_rows_carry_their_coefficients() {
        let p = table_row("proc-4.5").unwrap().integrator();
        let params = p.params().unwrap();
        assert_eq!(
            (params.b, params.c, params.d),
            (0.340200, -0.093500, 0.072800)
        );
        assert!(table_row("blcasa").unwrap().integrator().pre().is_empty());
    }
}
