//! Command dispatch: scenario in, result table out.

use cpforce_core::atomdyn::{evolve_populations, rates_and_shifts, steady_state, Populations, RatesAndShifts};
use cpforce_core::force::{equilibrium_force_matsubara, force_components, lifshitz_force, weighted_force, ForceComponent, ForceParts};
use cpforce_core::thermalenv::TemperatureField;
use cpforce_core::Error;
use rayon::prelude::*;

use crate::log::Log;
use crate::scenario::{Model, Scenario, SweepConfig, ValidationError};
use crate::table::{Cell, ResultTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Rates,
    Shifts,
    Dynamics,
    Force,
    Equilibrium,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Rates => "rates",
            Command::Shifts => "shifts",
            Command::Dynamics => "dynamics",
            Command::Force => "force",
            Command::Equilibrium => "equilibrium",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug)]
pub enum RunError {
    Validation(ValidationError),
    Numerical(String),
}

impl From<ValidationError> for RunError {
    fn from(e: ValidationError) -> Self {
        RunError::Validation(e)
    }
}

fn engine(key: &str) -> impl Fn(Error) -> RunError + '_ {
    move |e| match e {
        Error::NotConverged { .. } | Error::Singular(_) => RunError::Numerical(e.to_string()),
        Error::InvalidInput(_) | Error::InvalidPosition(_) => {
            RunError::Validation(ValidationError { key: key.to_string(), message: e.to_string() })
        }
    }
}

type Out = Result<ResultTable, RunError>;

pub fn run(cmd: Command, scenario: &Scenario, model: &Model, log: &mut Log) -> Out {
    match cmd {
        Command::Rates => rates(scenario, model, log),
        Command::Shifts => shifts(scenario, model, log),
        Command::Dynamics => dynamics(scenario, model, log),
        Command::Force => force(scenario, model, log),
        Command::Equilibrium => equilibrium(scenario, model, log),
        Command::Sweep => sweep(scenario, model, log),
    }
}

fn compute_rates(model: &Model, log: &mut Log) -> Result<RatesAndShifts, RunError> {
    let r = rates_and_shifts(&model.atom, &model.stack, &model.temps, &model.num).map_err(engine("atom"))?;
    if r.fixed_point_fallback {
        log.warn("shifts", "fixed-point shift iteration failed; perturbative shifts used");
    }
    for w in &r.warnings {
        log.warn("rates", w);
    }
    Ok(r)
}

fn compute_forces(model: &Model, rates: &RatesAndShifts, log: &mut Log) -> Result<Vec<ForceComponent>, RunError> {
    let comps = force_components(&model.atom, &model.stack, &model.temps, rates, model.force_mode, &model.num)
        .map_err(engine("atom"))?;
    for c in &comps {
        for w in &c.warnings {
            log.warn("force", w);
        }
    }
    Ok(comps)
}

fn rates(s: &Scenario, model: &Model, log: &mut Log) -> Out {
    let r = compute_rates(model, log)?;
    let labels = s.labels();
    let mut t = ResultTable::new();
    t.column("from", "-");
    t.column("to", "-");
    t.column("omega_tilde", "rad/s");
    t.column("gamma", "1/s");
    for n in 0..labels.len() {
        for k in (0..labels.len()).filter(|k| model.atom.couples(n, *k)) {
            t.push(vec![labels[n].as_str().into(), labels[k].as_str().into(), r.omega_tilde[(n, k)].into(), r.gamma[(n, k)].into()]);
        }
    }
    Ok(t)
}

fn shifts(s: &Scenario, model: &Model, log: &mut Log) -> Out {
    let r = compute_rates(model, log)?;
    let mut t = ResultTable::new();
    t.column("level", "-");
    t.column("energy", "J");
    t.column("delta_omega", "rad/s");
    t.column("gamma_total", "1/s");
    for (n, l) in s.labels().into_iter().enumerate() {
        t.push(vec![l.into(), model.atom.levels()[n].energy.into(), r.delta_omega[n].into(), r.gamma_total[n].into()]);
    }
    Ok(t)
}

fn dynamics(s: &Scenario, model: &Model, log: &mut Log) -> Out {
    let d = s.dynamics.as_ref().ok_or_else(|| ValidationError {
        key: "dynamics".into(),
        message: "the dynamics command needs a [dynamics] section".into(),
    })?;
    let r = compute_rates(model, log)?;
    let comps = compute_forces(model, &r, log)?;
    let start = s.level_index(&d.initial).expect("validated");
    let sigma0 = Populations::pure(model.atom.len(), start);
    let labels = s.labels();
    let mut t = ResultTable::new();
    t.column("t", "s");
    for l in &labels {
        t.column(format!("sigma_{l}"), "1");
    }
    t.column("F_z", "N");
    for i in 0..d.points {
        let time = d.t_end.0 * i as f64 / (d.points - 1) as f64;
        let p = evolve_populations(&r, &sigma0, time).map_err(engine("dynamics"))?;
        let f = weighted_force(&comps, &p).map_err(engine("dynamics"))?;
        let mut row: Vec<Cell> = vec![time.into()];
        row.extend(p.diag.iter().map(|x| Cell::Num(*x)));
        row.push(f.z().into());
        t.push(row);
    }
    Ok(t)
}

fn part_cells(p: &ForceParts) -> Vec<Cell> {
    vec![p.nonresonant.into(), p.resonant.into(), p.thermal_environment.into(), p.thermal_body.into(), p.total().into()]
}

fn error_total(e: &ForceParts) -> f64 {
    e.nonresonant + e.resonant + e.thermal_environment.max(e.thermal_body)
}

fn force(s: &Scenario, model: &Model, log: &mut Log) -> Out {
    let r = compute_rates(model, log)?;
    let comps = compute_forces(model, &r, log)?;
    let ss = steady_state(&r).map_err(engine("atom"))?;
    if !ss.unique {
        log.warn("force", "steady state is not unique; lowest absorbing level used");
    }
    let total = weighted_force(&comps, &ss.populations).map_err(engine("atom"))?;
    let mut t = ResultTable::new();
    t.column("level", "-");
    t.column("population", "1");
    for name in ["F_nonresonant", "F_resonant", "F_thermal_environment", "F_thermal_body", "F_total", "F_error"] {
        t.column(name, "N");
    }
    for (n, l) in s.labels().into_iter().enumerate() {
        let mut row: Vec<Cell> = vec![l.into(), ss.populations.diag[n].into()];
        row.extend(part_cells(&comps[n].parts));
        row.push(error_total(&comps[n].errors).into());
        t.push(row);
    }
    let mut row: Vec<Cell> = vec!["steady_state".into(), 1.0.into()];
    row.extend(part_cells(&total.parts));
    row.push(error_total(&total.errors).into());
    t.push(row);
    Ok(t)
}

fn equilibrium(s: &Scenario, model: &Model, log: &mut Log) -> Out {
    if !model.temps.is_uniform() {
        return Err(ValidationError {
            key: "temperatures".into(),
            message: "the equilibrium command needs a uniform temperature".into(),
        }
        .into());
    }
    let temperature = model.temps.environment;
    let r = compute_rates(model, log)?;
    let mut t = ResultTable::new();
    t.column("level", "-");
    for name in ["F_nonresonant", "F_resonant", "F_total", "F_error"] {
        t.column(name, "N");
    }
    let comps: Vec<_> = (0..model.atom.len())
        .into_par_iter()
        .map(|n| equilibrium_force_matsubara(&model.atom, &model.stack, temperature, n, Some(&r), &model.num))
        .collect();
    for (n, l) in s.labels().into_iter().enumerate() {
        let c = comps[n].clone().map_err(engine("atom"))?;
        for w in &c.warnings {
            log.warn("equilibrium", w);
        }
        let p = &c.parts;
        t.push(vec![l.into(), p.nonresonant.into(), p.resonant.into(), p.total().into(), error_total(&c.errors).into()]);
    }
    let lif = lifshitz_force(&model.atom, &model.stack, temperature, &model.num).map_err(engine("atom"))?;
    for c in &lif.components {
        for w in &c.warnings {
            log.warn("equilibrium", w);
        }
    }
    t.push(vec!["lifshitz".into(), lif.parts.nonresonant.into(), 0.0.into(), lif.z().into(), error_total(&lif.errors).into()]);
    Ok(t)
}

struct SweepRow {
    comps: Vec<ForceComponent>,
    steady: f64,
    warnings: Vec<(String, String)>,
}

fn sweep_point(model: &Model) -> Result<SweepRow, RunError> {
    let mut log = Log::buffer();
    let r = compute_rates(model, &mut log)?;
    let comps = compute_forces(model, &r, &mut log)?;
    let ss = steady_state(&r).map_err(engine("atom"))?;
    let steady = weighted_force(&comps, &ss.populations).map_err(engine("atom"))?.z();
    Ok(SweepRow { comps, steady, warnings: log.take_buffer() })
}

fn sweep(s: &Scenario, model: &Model, log: &mut Log) -> Out {
    let cfg = s.sweep.as_ref().ok_or_else(|| ValidationError {
        key: "sweep".into(),
        message: "the sweep command needs a [sweep] section".into(),
    })?;
    let (axis, unit, values): (&str, &str, Vec<f64>) = match cfg {
        SweepConfig::Position { values } => ("position", "m", values.iter().map(|v| v.0).collect()),
        SweepConfig::Temperature { values } => ("temperature", "K", values.iter().map(|v| v.0).collect()),
    };
    let models: Vec<Model> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut m = model.clone();
            let key = format!("sweep.values[{i}]");
            match cfg {
                SweepConfig::Position { .. } => m.atom = m.atom.with_position(*v).map_err(engine(&key))?,
                SweepConfig::Temperature { .. } => {
                    m.temps = TemperatureField::uniform(*v, &m.stack).map_err(engine(&key))?
                }
            }
            Ok(m)
        })
        .collect::<Result<_, RunError>>()?;
    let rows: Vec<Result<SweepRow, RunError>> = models.par_iter().map(sweep_point).collect();
    let labels = s.labels();
    let mut t = ResultTable::new();
    t.column(axis, unit);
    for l in &labels {
        for part in ["nonresonant", "resonant", "thermal_environment", "thermal_body", "total"] {
            t.column(format!("F_{l}_{part}"), "N");
        }
    }
    t.column("F_steady_state", "N");
    for (v, row) in values.iter().zip(rows) {
        let row = row?;
        for (src, w) in &row.warnings {
            log.warn(src, &format!("{axis} = {v:e}: {w}"));
        }
        let mut cells: Vec<Cell> = vec![(*v).into()];
        for c in &row.comps {
            cells.extend(part_cells(&c.parts));
        }
        cells.push(row.steady.into());
        t.push(cells);
    }
    Ok(t)
}
