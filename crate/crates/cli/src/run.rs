use crate::args::*;
use crate::output::*;
use sitr_core::kernel::rule_of_thumb;
use sitr_core::{
    bandwidth_pilot, bootstrap_curve, bootstrap_from_fit, emit_tables, generate, load_csv, loo_cv_bandwidth,
    permutation_band_with, quantile_grid, resolve_kernel, run_replications, solve_index, write_csv, BandwidthPolicy,
    BandwidthRole, ColumnRoles, CoverageConfig, Dataset, Error, IndexFit, KernelConfig, KernelFamily, Method,
    RandomizationSpec, ReplicationConfig, Result, Scenario, ScenarioId, TableFormat, TreatmentKind,
};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Candidate multiples of the rule-of-thumb bandwidth for cross-validation.
const CV_MULTIPLES: [f64; 7] = [0.5, 0.63, 0.8, 1.0, 1.25, 1.6, 2.0];
const GRID_POINTS: usize = 101;

/// Worker threads: `ITR_THREADS` when set, otherwise every available core.
pub fn thread_count() -> Result<usize> {
    match std::env::var("ITR_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("ITR_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = thread_count()?;
    // Fails only if a pool already exists, which then keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    match cli.command {
        Command::Fit(a) => {
            let seed = require_seed_if(a.seed, a.source.scenario.is_some() || a.boot > 0, "fit")?;
            let mut s = Session::open("fit", &a.source, &a.model, seed)?;
            if a.boot > 0 {
                let seed = seed.expect("checked above");
                s.artifact.bootstrap = Some(bootstrap_from_fit(&s.dataset, &s.fit, a.boot, a.level, seed)?);
                s.artifact.config.boot = Some(a.boot);
                s.artifact.config.level = Some(a.level);
            }
            emit(&s.artifact, &a.output)
        }
        Command::Bootstrap(a) => {
            let seed = require_seed(a.seed, "bootstrap")?;
            let mut s = Session::open("bootstrap", &a.source, &a.model, Some(seed))?;
            s.artifact.bootstrap = Some(bootstrap_from_fit(&s.dataset, &s.fit, a.boot, a.level, seed)?);
            s.artifact.config.boot = Some(a.boot);
            s.artifact.config.level = Some(a.level);
            emit(&s.artifact, &a.output)
        }
        Command::Curve(a) => {
            let seed = require_seed(a.seed, "curve")?;
            let mut s = Session::open("curve", &a.source, &a.model, Some(seed))?;
            let grid = s.artifact.curve.grid.clone();
            s.artifact.band = Some(bootstrap_curve(&s.dataset, &s.fit, &grid, a.boot, a.level, seed)?);
            s.artifact.config.boot = Some(a.boot);
            s.artifact.config.level = Some(a.level);
            emit(&s.artifact, &a.output)
        }
        Command::Permtest(a) => {
            let seed = require_seed(a.seed, "permtest")?;
            let mut s = Session::open("permtest", &a.source, &a.model, Some(seed))?;
            let grid = s.artifact.curve.grid.clone();
            let band = permutation_band_with(&s.dataset, &s.spec, &s.fit, &grid, a.perm, a.level, seed, a.hold_beta)?;
            let exceedance = band.exceedance();
            s.artifact.permutation = Some(PermutationRecord { band, exceedance });
            s.artifact.config.perm = Some(a.perm);
            s.artifact.config.level = Some(a.level);
            s.artifact.config.hold_beta = Some(a.hold_beta);
            emit(&s.artifact, &a.output)
        }
        Command::Simulate(a) => simulate(&a, threads),
        Command::Generate(a) => generate_data(&a),
    }
}

fn require_seed(seed: Option<u64>, command: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::Config(format!("{command} is stochastic and needs --seed")))
}

fn require_seed_if(seed: Option<u64>, needed: bool, command: &str) -> Result<Option<u64>> {
    if needed {
        require_seed(seed, command).map(Some)
    } else {
        Ok(seed)
    }
}

fn family(k: KernelArg) -> KernelFamily {
    match k {
        KernelArg::Epanechnikov => KernelFamily::Epanechnikov,
        KernelArg::Gaussian => KernelFamily::Gaussian,
        KernelArg::Quartic => KernelFamily::Quartic,
    }
}

fn method_for(arg: Option<MethodArg>, kind: TreatmentKind) -> Method {
    match arg {
        Some(MethodArg::M1) => Method::M1,
        Some(MethodArg::M2) => Method::M2,
        Some(MethodArg::M3) => Method::M3,
        Some(MethodArg::M4) => Method::M4,
        Some(MethodArg::Cont) => Method::ContEff,
        Some(MethodArg::Cat) => Method::CatEff,
        None => match kind {
            TreatmentKind::Binary => Method::M1,
            TreatmentKind::Categorical { .. } => Method::CatEff,
            TreatmentKind::ContinuousDose { .. } => Method::ContEff,
        },
    }
}

/// Parses a design given inline or as a path to a JSON file.
fn parse_design(text: &str) -> Result<RandomizationSpec> {
    if text.trim_start().starts_with('{') {
        RandomizationSpec::from_json(text)
    } else {
        RandomizationSpec::from_json(&std::fs::read_to_string(text)?)
    }
}

fn header_of(path: &Path) -> Result<Vec<String>> {
    let file = std::fs::File::open(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    Ok(r.headers()?.iter().map(str::to_string).collect())
}

fn load_source(src: &SourceArgs, seed: Option<u64>) -> Result<(Dataset, RandomizationSpec, SourceRecord)> {
    if let Some(path) = &src.data {
        let design = src
            .design
            .as_deref()
            .ok_or_else(|| Error::Config("--data needs --design with the randomization law".into()))?;
        let spec = parse_design(design)?;
        let x_cols = if src.x_cols.is_empty() {
            header_of(path)?
                .into_iter()
                .filter(|h| *h != src.z_col && *h != src.y_col)
                .collect()
        } else {
            src.x_cols.clone()
        };
        let columns = ColumnRoles::new(x_cols, src.z_col.clone(), src.y_col.clone());
        let dataset = load_csv(path, &columns, &spec)?;
        Ok((dataset, spec, SourceRecord::Data { path: path.clone(), columns }))
    } else {
        let id: ScenarioId = src.scenario.as_deref().expect("clap enforces one source").parse()?;
        if src.design.is_some() {
            return Err(Error::Config("--design applies to --data only; scenarios fix their design".into()));
        }
        let seed = seed.expect("scenario sources require a seed");
        let dataset = generate(&Scenario::new(id, src.n, seed))?;
        Ok((dataset, id.truth().spec, SourceRecord::Scenario { id, n: src.n }))
    }
}

fn kernel_for(dataset: &Dataset, spec: &RandomizationSpec, model: &ModelArgs) -> Result<(KernelConfig, BandwidthRecord)> {
    let fam = family(model.kernel);
    let (config, record) = if let Some(hg) = model.hg {
        (KernelConfig::new(fam, hg, model.hu.unwrap_or(hg))?, BandwidthRecord::Fixed)
    } else if model.cv_bandwidth {
        let pilot = bandwidth_pilot(dataset, spec)?;
        let t = dataset.index_values(pilot.beta());
        let h0 = rule_of_thumb(&t, dataset.n(), BandwidthRole::GFit, model.bandwidth_constant)?;
        let candidates: Vec<f64> = CV_MULTIPLES.iter().map(|m| m * h0).collect();
        let h = loo_cv_bandwidth(dataset, spec, pilot.beta(), fam, &candidates)?;
        (KernelConfig::single(fam, h)?, BandwidthRecord::CrossValidation { candidates })
    } else {
        let constant = model.bandwidth_constant;
        let policy = BandwidthPolicy::RuleOfThumb { constant };
        (resolve_kernel(dataset, spec, fam, policy)?, BandwidthRecord::RuleOfThumb { constant })
    };
    Ok((config.with_trim(model.trim * spec.kind().components() as f64)?, record))
}

/// A dataset with its fitted index and the base artifact.
struct Session {
    dataset: Dataset,
    spec: RandomizationSpec,
    fit: IndexFit,
    artifact: Artifact,
}

impl Session {
    fn open(command: &str, src: &SourceArgs, model: &ModelArgs, seed: Option<u64>) -> Result<Session> {
        let (dataset, spec, source) = load_source(src, seed)?;
        let method = method_for(model.method, spec.kind());
        let (kernel, bandwidth) = kernel_for(&dataset, &spec, model)?;
        let fit = solve_index(&dataset, &spec, method, &kernel, None)?;
        let t = dataset.index_values(fit.beta_hat.beta());
        let grid = quantile_grid(&t, 0.01, 0.99, GRID_POINTS)?;
        let curve = CurveRecord {
            estimate: by_component(&fit.g_curve(&grid), fit.k()),
            grid,
        };
        let artifact = Artifact {
            config: RunRecord {
                command: command.to_string(),
                source,
                design: spec.clone(),
                method,
                kernel,
                bandwidth,
                fstar: "zero".into(),
                seed,
                boot: None,
                perm: None,
                level: None,
                hold_beta: None,
            },
            fit: fit.summary(),
            curve,
            bootstrap: None,
            band: None,
            permutation: None,
        };
        Ok(Session {
            dataset,
            spec,
            fit,
            artifact,
        })
    }
}

fn emit(artifact: &Artifact, out: &OutputArgs) -> Result<()> {
    let text = match out.format {
        FormatArg::Json => artifact.to_json()?,
        FormatArg::Csv => artifact.to_csv()?,
    };
    write_out(out.out.as_ref(), text.as_bytes())
}

fn write_out(path: Option<&PathBuf>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, threads: usize) -> Result<()> {
    let seed = require_seed(a.seed, "simulate")?;
    let id: ScenarioId = a.scenario.parse()?;
    let method = a.method.map_or(id.default_method(), |m| method_for(Some(m), id.truth().spec.kind()));
    let bandwidth = match a.hg {
        Some(h_g) => BandwidthPolicy::Fixed {
            h_g,
            h_u: a.hu.unwrap_or(h_g),
        },
        None => BandwidthPolicy::RuleOfThumb {
            constant: a.bandwidth_constant,
        },
    };
    let coverage = (a.boot > 0).then(|| CoverageConfig {
        reps_cp: a.reps_cp.unwrap_or(a.reps),
        b: a.boot,
        level: a.level,
    });
    let config = ReplicationConfig {
        family: family(a.kernel),
        bandwidth,
        coverage,
        value_function: true,
        trim: a.trim,
    };
    let report = run_replications(&Scenario::new(id, a.n, seed), method, a.reps, &config, threads)?;
    let format = match a.output.format {
        FormatArg::Json => TableFormat::Json,
        FormatArg::Csv => TableFormat::Csv,
    };
    write_out(a.output.out.as_ref(), emit_tables(&report, format)?.as_bytes())
}

fn generate_data(a: &GenerateArgs) -> Result<()> {
    let seed = require_seed(a.seed, "generate")?;
    let id: ScenarioId = a.scenario.parse()?;
    let dataset = generate(&Scenario::new(id, a.n, seed))?;
    let mut bytes = Vec::new();
    write_csv(&dataset, &mut bytes)?;
    write_out(a.out.as_ref(), &bytes)?;
    if let Some(p) = &a.design_out {
        std::fs::write(p, id.truth().spec.to_json())?;
    }
    Ok(())
}
