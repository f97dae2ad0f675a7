use std::path::PathBuf;

use kdv_delay::analyze::{
    dissipation_residual, fit_decay_rate, kato_smoothing_report, max_energy_increase, verify_bound,
};
use kdv_delay::certify::{
    build_certificate, optimal_certificate, optimize_mu1, rate_curves, Certificate, Problem,
    QuadForm2, RateVariant,
};
use kdv_delay::config::Config;
use kdv_delay::model::check_gain_feasibility;
use kdv_delay::simulate::{
    compare_channels as run_channels, run_simulation, LyapunovWeights, SimulationRecord,
    SystemState,
};
use rayon::prelude::*;

use crate::output::{csv, header, sha256_hex, OutputDir, Report};
use crate::{Common, Failure};

type Outcome = Result<u8, Failure>;

/// The resolved configuration plus digests of the files it came from.
struct Loaded {
    config: Config,
    inputs: Vec<(String, String)>,
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let mut inputs = Vec::new();
    let mut config = match &common.config {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            inputs.push((path.display().to_string(), sha256_hex(&bytes)));
            Config::load(path, &common.overrides)?
        }
        None => Config::from_toml_with_overrides(
            &Config::figure_one().to_toml_string(),
            &common.overrides,
        )?,
    };
    if let Some(preset) = &common.resolution {
        config.apply_resolution(preset)?;
    }
    if let Some(file) = &config.delay.file {
        if config.delay.kind == "tabulated" {
            let path = table_path(&config, file);
            let bytes = std::fs::read(&path)
                .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            inputs.push((path.display().to_string(), sha256_hex(&bytes)));
        }
    }
    Ok(Loaded { config, inputs })
}

fn table_path(config: &Config, file: &str) -> PathBuf {
    match &config.base_dir {
        Some(dir) => dir.join(file),
        None => PathBuf::from(file),
    }
}

// The configuration as written next to the outputs: every default filled
// in and the delay table referenced by absolute path, so that
// `--config <out>/config.toml` reproduces the run.
fn resolved_toml(config: &Config) -> Result<String, Failure> {
    let mut c = config.materialized()?;
    if let Some(file) = c.delay.file.clone() {
        let path = table_path(config, &file);
        let abs = std::fs::canonicalize(&path).unwrap_or(path);
        c.delay.file = Some(abs.display().to_string());
    }
    c.base_dir = None;
    Ok(c.to_toml_string())
}

/// Writes `files` plus `config.toml` and the manifest when `--out` is set.
fn emit(
    common: &Common,
    loaded: &Loaded,
    command: &str,
    files: Vec<(&str, String)>,
) -> Result<(), Failure> {
    let Some(dir) = &common.out else {
        return Ok(());
    };
    let mut out = OutputDir::create(dir)?;
    out.write("config.toml", &resolved_toml(&loaded.config)?)?;
    for (name, contents) in files {
        out.write(name, &contents)?;
    }
    out.finish(command, &loaded.inputs)?;
    Ok(())
}

/// The certificate a configuration asks for: fixed weights when
/// `certificate.mu1` is set, the optimum when `β ≠ 0`, otherwise half the
/// admissible μ₁ range.
fn certificate_for(config: &Config) -> kdv_delay::Result<Certificate> {
    let p = config.problem()?;
    let variant = config.variant()?;
    let c = &config.certificate;
    let mu2_for = |mu1: f64| -> kdv_delay::Result<f64> {
        match c.mu2 {
            Some(m) => Ok(m),
            None if p.beta != 0.0 => p.mu2_of_mu1(mu1),
            None => Ok(0.0),
        }
    };
    match c.mu1 {
        Some(mu1) => build_certificate(&p, mu1, mu2_for(mu1)?, variant),
        None if p.beta != 0.0 => {
            if variant == RateVariant::Proposition && c.mu2.is_none() {
                optimal_certificate(&p, c.tol)
            } else {
                let opt = optimize_mu1(&p, c.tol)?;
                build_certificate(&p, opt.mu1, mu2_for(opt.mu1)?, variant)
            }
        }
        None => {
            let mu1 = 0.5 * p.mu1_upper_bound()?;
            build_certificate(&p, mu1, 0.0, variant)
        }
    }
}

fn put_form(r: &mut Report, name: &str, q: &QuadForm2) {
    r.put(format!("{name}.a11"), q.a11)
        .put(format!("{name}.a12"), q.a12)
        .put(format!("{name}.a22"), q.a22)
        .put(format!("{name}.det"), q.det())
        .put(
            format!("{name}.negative_definite"),
            q.is_negative_definite(),
        );
}

fn put_problem(r: &mut Report, p: &Problem) {
    r.put("L", p.l)
        .put("alpha", p.alpha)
        .put("beta", p.beta)
        .put("d", p.d)
        .put("M", p.m);
}

fn put_certificate(r: &mut Report, c: &Certificate) {
    r.put("mu1", c.mu1)
        .put("mu2", c.mu2)
        .put("lambda", c.lambda)
        .put("zeta", c.zeta)
        .put("variant", c.variant.name());
    put_form(r, "phi", &c.phi);
    put_form(r, "psi", &c.psi);
    r.put("feasible", c.feasible).put(
        "diagnostics",
        if c.diagnostics.is_empty() {
            "none".to_string()
        } else {
            c.diagnostics.join("; ")
        },
    );
}

pub fn certify(common: &Common) -> Outcome {
    let loaded = load(common)?;
    let p = loaded.config.problem()?;
    let cert = certificate_for(&loaded.config)?;
    let mut r = Report::new("certificate");
    put_problem(&mut r, &p);
    put_certificate(&mut r, &cert);
    print!("{}", r.render(false));
    let text = r.render(common.out.is_some());
    emit(common, &loaded, "certify", vec![("certificate.txt", text)])?;
    Ok(if cert.feasible { 0 } else { 1 })
}

pub fn optimize(common: &Common, points: usize) -> Outcome {
    let loaded = load(common)?;
    let p = loaded.config.problem()?;
    let opt = optimize_mu1(&p, loaded.config.certificate.tol)?;
    let cert = optimal_certificate(&p, loaded.config.certificate.tol)?;
    let curves = rate_curves(&p, points)?;
    let mut r = Report::new("optimum");
    put_problem(&mut r, &p);
    r.put("mu1_max", p.mu1_upper_bound()?)
        .put("crossing.mu1", opt.mu1)
        .put("crossing.lambda", opt.lambda)
        .put("crossing.gap", opt.gap)
        .put("bisections", opt.iterations)
        .put("points", points);
    put_certificate(&mut r, &cert);
    print!("{}", r.render(false));
    let m = common.out.is_some();
    let two_col = |kind: &str, pick: fn(&kdv_delay::certify::CurvePoint) -> f64| {
        let mut s = header(kind, m);
        s.push_str("# mu1 value\n");
        for c in &curves {
            s.push_str(&format!("{:e} {:e}\n", c.mu1, pick(c)));
        }
        s
    };
    let files = vec![
        ("optimum.txt", r.render(m)),
        ("curve_f.dat", two_col("curve-f", |c| c.f)),
        ("curve_g.dat", two_col("curve-g", |c| c.g)),
        ("curve_min.dat", two_col("curve-min", |c| c.min)),
        ("figure1.gp", gnuplot_script(opt.mu1, opt.lambda)),
    ];
    emit(common, &loaded, "optimize", files)?;
    Ok(if cert.feasible { 0 } else { 1 })
}

fn gnuplot_script(mu1: f64, lambda: f64) -> String {
    format!(
        "# kdvlab figure1-script v1\n\
         set xlabel 'mu_1'\n\
         set ylabel 'decay rate'\n\
         set key top center\n\
         set label 1 sprintf('mu_1* = %.4f, lambda* = %.5f', {mu1:e}, {lambda:e}) at {mu1:e}, {lambda:e} offset 1,1\n\
         plot 'curve_f.dat' using 1:2 with lines title 'f(mu_1)', \\\n     \
         'curve_g.dat' using 1:2 with lines title 'g(mu_1)', \\\n     \
         '-' using 1:2 with points pt 7 title 'crossing'\n\
         {mu1:e} {lambda:e}\n\
         e\n"
    )
}

fn record_csv(rec: &SimulationRecord, manifest: bool) -> String {
    let rows = (0..rec.t.len()).map(|k| {
        vec![
            rec.t[k],
            rec.energy[k],
            rec.lyapunov[k],
            rec.eta_x_l[k],
            rec.z1[k],
        ]
    });
    csv("record", &["t", "E", "V", "eta_x_L", "z1"], rows, manifest)
}

fn snapshot_dump(snaps: &[SystemState], l: f64, field: fn(&SystemState) -> &Vec<f64>) -> String {
    let mut s = String::new();
    for st in snaps {
        let v = field(st);
        s.push_str(&format!("# t={:e} nx={} L={l:e}\n", st.t, v.len() - 1));
        let cells: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

pub fn simulate(common: &Common) -> Outcome {
    let loaded = load(common)?;
    let config = &loaded.config;
    let setup = config.setup()?;
    let conservative = setup.gains.is_conservative();
    let mut r = Report::new("simulation");
    let cert = if conservative {
        r.put("regime", "conservative");
        None
    } else {
        r.put("regime", "damped");
        match certificate_for(config) {
            Ok(c) => Some(c),
            Err(e) => {
                r.put("certificate.error", &e);
                None
            }
        }
    };
    let weights = cert
        .as_ref()
        .map(|c| LyapunovWeights {
            mu1: c.mu1,
            mu2: c.mu2,
        })
        .unwrap_or_default();
    let rec = run_simulation(&setup, weights)?;
    let m = &rec.meta;
    r.put("channel", m.channel.name())
        .put("nonlinear", m.nonlinear)
        .put("nx", m.nx)
        .put("nrho", m.nrho)
        .put("dt", m.dt)
        .put("theta", m.theta)
        .put("horizon", setup.scheme.horizon)
        .put("samples", rec.t.len())
        .put("projected_ic", m.projected_ic)
        .put("max_substeps", m.max_substeps)
        .put("correctors", m.correctors)
        .put("E0", rec.energy[0])
        .put("E_final", rec.energy[rec.energy.len() - 1])
        .put("max_relative_increase", max_energy_increase(&rec));
    if let Ok(res) = dissipation_residual(&rec) {
        r.put("residual.max_abs", res.max_abs);
    }
    if let Some(p) = m.picard {
        r.put("picard.max_iterations", p.max_iterations)
            .put("picard.mean_iterations", p.mean())
            .put("picard.steps", p.steps);
    }
    let t_kato = setup.scheme.horizon.min(50.0);
    if let Ok(k) = kato_smoothing_report(&rec, t_kato) {
        r.put("kato.T", t_kato)
            .put("kato.lhs", k.lhs)
            .put("kato.rhs", k.rhs)
            .put("kato.ratio", k.ratio)
            .put("kato.gains_outside_hypothesis", k.gains_outside_hypothesis);
    }
    let window = config.analysis.fit_window;
    if conservative {
        r.put(
            "fit.error",
            "conservative run: E is constant, no decay rate to fit",
        );
    } else {
        match fit_decay_rate(&rec, window) {
            Ok(f) => {
                r.put("fit.lambda", f.lambda_fit)
                    .put("fit.window_start", f.window.0)
                    .put("fit.window_end", f.window.1)
                    .put("fit.rms_residual", f.residual);
            }
            Err(e) => {
                r.put("fit.error", &e);
            }
        }
    }
    let mut code = 0;
    if let Some(c) = &cert {
        put_certificate(&mut r, c);
        // Checked against the smaller of the two f variants.
        let check = build_certificate(
            &config.problem()?,
            c.mu1,
            c.mu2,
            RateVariant::conservative(setup.grid.l),
        )?;
        let b = verify_bound(&rec, check.bound(), config.analysis.slack)?;
        r.put("bound.lambda", b.bound.lambda)
            .put("bound.zeta", b.bound.zeta)
            .put("bound.slack", b.slack)
            .put("bound.max_ratio", b.max_ratio)
            .put("bound.argmax_t", b.argmax_t)
            .put("bound.vacuous", b.vacuous)
            .put("bound.pass", b.pass);
        if !b.pass || !c.feasible {
            code = 1;
        }
    } else if !conservative {
        code = 1;
    }
    print!("{}", r.render(false));
    let with = common.out.is_some();
    let mut files = vec![
        ("report.txt", r.render(with)),
        ("record.csv", record_csv(&rec, with)),
    ];
    if !rec.snapshots.is_empty() {
        let l = setup.grid.l;
        files.push((
            "snapshots_eta.txt",
            snapshot_dump(&rec.snapshots, l, |s| &s.eta),
        ));
        files.push((
            "snapshots_omega.txt",
            snapshot_dump(&rec.snapshots, l, |s| &s.omega),
        ));
    }
    emit(common, &loaded, "simulate", files)?;
    Ok(code)
}

pub fn compare_channels(common: &Common) -> Outcome {
    let loaded = load(common)?;
    let setup = loaded.config.setup()?;
    let c = run_channels(&setup, LyapunovWeights::default())?;
    let mut r = Report::new("channels");
    r.put("nx", setup.grid.nx)
        .put("nrho", setup.rho.nrho)
        .put("horizon", setup.scheme.horizon)
        .put("trace_sup", c.trace_sup)
        .put("trace_sup_relative", c.trace_sup_relative)
        .put("energy_sup_relative", c.energy_sup_relative);
    print!("{}", r.render(false));
    let with = common.out.is_some();
    let (a, b) = (&c.transport, &c.history);
    let rows = (0..a.t.len()).map(|k| vec![a.t[k], a.z1[k], b.z1[k], a.energy[k], b.energy[k]]);
    let table = csv(
        "channels",
        &[
            "t",
            "z1_transport",
            "z1_history",
            "E_transport",
            "E_history",
        ],
        rows,
        with,
    );
    emit(
        common,
        &loaded,
        "compare-channels",
        vec![("channels.txt", r.render(with)), ("channels.csv", table)],
    )?;
    Ok(0)
}

const AXES: [&str; 5] = ["alpha", "beta", "d", "L", "M"];

fn parse_range(spec: &str) -> Result<(usize, Vec<f64>), Failure> {
    let bad = || Failure::config(format!("sweep range `{spec}` is not NAME=START:STOP:COUNT"));
    let (name, range) = spec.split_once('=').ok_or_else(bad)?;
    let axis = AXES.iter().position(|a| *a == name.trim()).ok_or_else(|| {
        Failure::config(format!(
            "unknown sweep parameter `{name}` (expected one of {AXES:?})"
        ))
    })?;
    let parts: Vec<&str> = range.split(':').collect();
    let [start, stop, count] = parts.as_slice() else {
        return Err(bad());
    };
    let start: f64 = start.trim().parse().map_err(|_| bad())?;
    let stop: f64 = stop.trim().parse().map_err(|_| bad())?;
    let count: usize = count.trim().parse().map_err(|_| bad())?;
    if !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    let mut values: Vec<f64> = match count {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n)
            .map(|k| start + (stop - start) * k as f64 / (n - 1) as f64)
            .collect(),
    };
    values.sort_by(f64::total_cmp);
    Ok((axis, values))
}

// One row: alpha, beta, d, L, M, feasible, certified, lambda, zeta[, lambda_fit].
fn sweep_point(base: &Config, point: &[f64; 5], fit_horizon: Option<f64>) -> Vec<f64> {
    let mut c = base.clone();
    c.gains.alpha = point[0];
    c.gains.beta = point[1];
    c.delay.d = Some(point[2]);
    c.domain.l = point[3];
    c.delay.m = Some(point[4]);
    let feasible = check_gain_feasibility(point[0], point[1], point[2]).unwrap_or(false);
    let cert = certificate_for(&c).ok();
    let certified = cert.as_ref().is_some_and(|k| k.feasible);
    let (lambda, zeta) = cert.map_or((f64::NAN, f64::NAN), |k| (k.lambda, k.zeta));
    let mut row = vec![
        point[0],
        point[1],
        point[2],
        point[3],
        point[4],
        f64::from(u8::from(feasible)),
        f64::from(u8::from(certified)),
        lambda,
        zeta,
    ];
    if let Some(h) = fit_horizon {
        c.time.horizon = h;
        c.scheme.record_every = 10;
        let fit = c
            .setup()
            .and_then(|s| run_simulation(&s, LyapunovWeights::default()))
            .and_then(|rec| fit_decay_rate(&rec, c.analysis.fit_window))
            .map_or(f64::NAN, |f| f.lambda_fit);
        row.push(if feasible { fit } else { f64::NAN });
    }
    row
}

pub fn sweep(
    common: &Common,
    params: &[String],
    max_points: usize,
    fit_horizon: Option<f64>,
) -> Outcome {
    let loaded = load(common)?;
    let base = &loaded.config;
    let p = base.problem()?;
    let mut axes: Vec<Vec<f64>> =
        vec![vec![p.alpha], vec![p.beta], vec![p.d], vec![p.l], vec![p.m]];
    for spec in params {
        let (axis, values) = parse_range(spec)?;
        axes[axis] = values;
    }
    if let Some(h) = fit_horizon {
        if !(h > 0.0) {
            return Err(Failure::config(format!("fit horizon {h} must be positive")));
        }
    }
    let total = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
    let total = match total {
        Some(n) if n <= max_points => n,
        _ => {
            return Err(Failure::config(format!(
                "sweep has {} points, above the cap of {max_points}",
                total.map_or("too many".to_string(), |n| n.to_string())
            )))
        }
    };
    // Lexicographic order over sorted axes is the order of the parameter tuples.
    let points: Vec<[f64; 5]> = (0..total)
        .map(|mut k| {
            let mut pt = [0.0; 5];
            for i in (0..5).rev() {
                let n = axes[i].len();
                pt[i] = axes[i][k % n];
                k /= n;
            }
            pt
        })
        .collect();
    let rows: Vec<Vec<f64>> = points
        .par_iter()
        .map(|pt| sweep_point(base, pt, fit_horizon))
        .collect();
    let mut columns = AXES.to_vec();
    columns.extend(["feasible", "certified", "lambda", "zeta"]);
    if fit_horizon.is_some() {
        columns.push("lambda_fit");
    }
    print!("{}", csv("sweep", &columns, rows.iter().cloned(), false));
    let with = common.out.is_some();
    emit(
        common,
        &loaded,
        "sweep",
        vec![("sweep.csv", csv("sweep", &columns, rows.into_iter(), with))],
    )?;
    Ok(0)
}
