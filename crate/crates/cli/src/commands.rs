use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use pllpinn::dataset::{generate_labeled, CollocationSet, Dataset, SampleTimes};
use pllpinn::fileio::file_checksum;
use pllpinn::nn::Network;
use pllpinn::ode::integrate;
use pllpinn::roa::{
    classify_rom, compare, render, sweep, Classifier, ConfusionStats, RenderStyle, RoaMap, StabilityLabel,
    SweepOptions, MAP_MAGIC,
};
use pllpinn::rollout::{rollout, RomFlow, Surrogate, Verdict};
use pllpinn::train::{evaluate, train, write_history, Regime, TrainData};
use pllpinn::PllState;

use crate::config::RunConfig;
use crate::{plot, CliError, Command};

/// Folds subcommand flags into the configuration before validation.
pub fn apply_flags(cfg: &mut RunConfig, cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Gen(a) => {
            if let Some(s) = a.scale {
                cfg.data.scale = s;
            }
        }
        Command::Train(a) => {
            if let Some(r) = &a.regime {
                cfg.train.regime = r.clone();
            }
            if let Some(n) = a.iterations {
                cfg.train.iterations = n;
            }
        }
        Command::Roa(a) => {
            if let Some(m) = &a.method {
                cfg.sweep.method = m.clone();
            }
            if let Some(g) = a.grid {
                cfg.sweep.grid = g;
            }
            if let Some(spec) = &a.alphas {
                parse_alphas(cfg, spec)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn parse_alphas(cfg: &mut RunConfig, spec: &str) -> Result<(), CliError> {
    let bad = || CliError::Config(format!("--alphas `{spec}`: expected a count or a comma-separated list"));
    if spec.contains(',') || spec.contains('.') {
        cfg.sweep.alphas = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        cfg.sweep.alpha_count = 0;
    } else {
        cfg.sweep.alpha_count = spec.trim().parse().map_err(|_| bad())?;
        if cfg.sweep.alpha_count == 0 {
            return Err(bad());
        }
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, cmd: &Command) -> Result<(), CliError> {
    let name = match cmd {
        Command::Simulate(_) => "simulate",
        Command::Gen(_) => "gen",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Rollout(_) => "rollout",
        Command::Roa(_) => "roa",
        Command::Compare(_) => "compare",
        Command::Render(_) => "render",
    };
    // the effective configuration travels with the artifacts
    std::fs::write(cfg.paths.out_dir.join(format!("{name}.config.toml")), cfg.to_toml())?;
    match cmd {
        Command::Simulate(a) => simulate(cfg, a),
        Command::Gen(_) => gen(cfg),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Eval(a) => eval_cmd(cfg, a),
        Command::Rollout(a) => rollout_cmd(cfg, a),
        Command::Roa(a) => roa_cmd(cfg, a),
        Command::Compare(a) => compare_cmd(a),
        Command::Render(a) => render_cmd(a),
    }
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn phase(name: &str, start: Instant) {
    println!("time {name}: {:.3} s", start.elapsed().as_secs_f64());
}

fn describe(label: &StabilityLabel) -> String {
    match label {
        StabilityLabel::Stable { t_eq } => format!("stable t_eq={t_eq:.4} s"),
        StabilityLabel::Unstable { undecided: false } => "unstable".into(),
        StabilityLabel::Unstable { undecided: true } => "unstable (undecided within horizon)".into(),
    }
}

fn simulate(cfg: &RunConfig, a: &crate::SimulateArgs) -> Result<(), CliError> {
    let base = cfg.system_params()?;
    let p = base.with_alpha(a.alpha)?;
    let x0 = if a.at_equilibrium {
        p.equilibrium()?.state()
    } else if let Some(deg) = a.phase_jump {
        PllState::new(deg.to_radians(), 0.0)
    } else {
        PllState::new(a.delta0, a.omega0)
    };
    let start = Instant::now();
    let traj = integrate(x0, &p, &cfg.integrator())?;
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.out_dir.join("simulate.csv"));
    let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(w, "t,delta,omega")?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        writeln!(w, "{t},{},{}", s.delta, s.omega)?;
    }
    w.flush()?;
    let label = classify_rom(x0, a.alpha, &base, &cfg.rollout(), cfg.integrator.dt)?;
    match p.equilibrium() {
        Ok(eq) => println!("equilibrium delta={:.6} rad omega={:.6} rad/s", eq.delta_eq, eq.omega_eq),
        Err(e) => println!("no equilibrium: {e}"),
    }
    println!("initial delta={} omega={} alpha={}", x0.delta, x0.omega, a.alpha);
    if let Some(t) = traj.diverged_at {
        println!("diverged at t={t:.4} s (|omega| > {})", cfg.integrator.blowup_omega);
    }
    println!("verdict: {}", describe(&label));
    println!("wrote {} ({} samples)", out.display(), traj.len());
    phase("simulate", start);
    Ok(())
}

fn gen(cfg: &RunConfig) -> Result<(), CliError> {
    let base = cfg.system_params()?;
    let spec = cfg.domain();
    let digest = cfg.digest();
    let d = &cfg.data;

    let start = Instant::now();
    let train_set = generate_labeled(
        d.train_count(),
        &SampleTimes::Random(d.samples_per_trajectory),
        &spec,
        spec.window,
        &base,
        cfg.seed,
    )?;
    let p = cfg.path(&cfg.paths.train_data);
    train_set.save(&p, &digest)?;
    report_file("train", &p, train_set.trajectories, train_set.samples.len())?;
    phase("gen train", start);

    let start = Instant::now();
    let colloc = CollocationSet::generate(d.collocation_count(), &spec, cfg.seed.wrapping_add(1))?;
    let p = cfg.path(&cfg.paths.collocation);
    colloc.save(&p, &digest)?;
    report_file("collocation", &p, colloc.points.len(), colloc.points.len())?;
    phase("gen collocation", start);

    let start = Instant::now();
    let test = generate_labeled(
        d.test_count(),
        &SampleTimes::uniform_grid(spec.test_window, d.test_times),
        &spec,
        spec.test_window,
        &base,
        cfg.seed.wrapping_add(2),
    )?;
    let p = cfg.path(&cfg.paths.test_data);
    test.save(&p, &digest)?;
    report_file("test", &p, test.trajectories, test.samples.len())?;
    phase("gen test", start);
    Ok(())
}

fn report_file(what: &str, path: &Path, items: usize, records: usize) -> Result<(), CliError> {
    println!(
        "{what}: {items} items, {records} records -> {} sha256 {}",
        path.display(),
        file_checksum(path)?
    );
    Ok(())
}

fn load_dataset(path: &Path, what: &str) -> Result<Dataset, CliError> {
    require(path, what)?;
    Ok(Dataset::load(path)?)
}

fn train_cmd(cfg: &RunConfig, a: &crate::TrainArgs) -> Result<(), CliError> {
    let regime = cfg.regime()?;
    let tc = cfg.train_config(Some(regime))?;
    let train_path = cfg.path(&cfg.paths.train_data);
    let colloc_path = cfg.path(&cfg.paths.collocation);
    let test_path = cfg.path(&cfg.paths.test_data);
    require(&train_path, "training set")?;
    if regime == Regime::Pinn {
        require(&colloc_path, "collocation set (required by the pinn regime)")?;
    }

    let start = Instant::now();
    let train_set = Dataset::load(&train_path)?;
    let colloc = if regime == Regime::Pinn {
        CollocationSet::load(&colloc_path)?.points
    } else {
        Vec::new()
    };
    let test = if test_path.is_file() {
        Some(Dataset::load(&test_path)?)
    } else {
        eprintln!("note: no test set at {}; skipping test MAE", test_path.display());
        None
    };
    phase("load", start);

    let model = a.model.clone().unwrap_or_else(|| cfg.model_path(regime));
    let digest = cfg.digest();
    let start = Instant::now();
    let mut on_eval = |net: &Network, row: &pllpinn::train::HistoryRow| -> pllpinn::Result<()> {
        net.save(&model, &digest)?;
        let mae = row
            .test_mae
            .map(|[d, w]| format!(" test_mae delta={d:.5} omega={w:.5}"))
            .unwrap_or_default();
        eprintln!(
            "[{regime}] it {:>6} loss {:.5} (x {:.5} dt {:.5} f {:.5}){mae}",
            row.iteration, row.loss, row.parts.x, row.parts.dt, row.parts.f
        );
        Ok(())
    };
    let outcome = train(
        &tc,
        TrainData {
            train: &train_set,
            collocation: &colloc,
            test: test.as_ref(),
        },
        &mut on_eval,
    )?;
    phase("train", start);
    outcome.net.save(&model, &digest)?;
    let hist = cfg.paths.out_dir.join(format!("history_{}.csv", regime.name()));
    write_history(&hist, &outcome.history)?;
    println!("checkpoint {}", model.display());
    println!("history {}", hist.display());
    if let Some(r) = &outcome.report {
        println!(
            "test MAE delta={:.5} omega={:.5} mean={:.5} over {} stable of {} trajectories",
            r.mae_per_state[0],
            r.mae_per_state[1],
            r.overall(),
            r.stable,
            r.total
        );
    }
    Ok(())
}

fn load_model(cfg: &RunConfig, model: &Option<PathBuf>) -> Result<(Network, PathBuf), CliError> {
    let path = match model {
        Some(p) => p.clone(),
        None => cfg.model_path(cfg.regime()?),
    };
    require(&path, "checkpoint")?;
    let (net, _) = Network::load(&path)?;
    Ok((net, path))
}

fn eval_cmd(cfg: &RunConfig, a: &crate::EvalArgs) -> Result<(), CliError> {
    let (net, model) = load_model(cfg, &a.model)?;
    let test = load_dataset(&cfg.path(&cfg.paths.test_data), "test set")?;
    let start = Instant::now();
    let r = evaluate(&net, &test, cfg.domain.window, &cfg.criteria(), a.max_trajectories)?;
    phase("eval", start);
    let out = a.out.clone().unwrap_or_else(|| model.with_extension("eval.csv"));
    let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(w, "t,mae_delta,mae_omega")?;
    for (t, [d, o]) in &r.mae_vs_time {
        writeln!(w, "{t},{d},{o}")?;
    }
    w.flush()?;
    println!(
        "test MAE delta={:.5} omega={:.5} mean={:.5}; at 0.1 s {:.5}, at 1 s {:.5}; {} stable of {}",
        r.mae_per_state[0],
        r.mae_per_state[1],
        r.overall(),
        r.mae_at(0.1),
        r.mae_at(cfg.domain.test_window),
        r.stable,
        r.total
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn rollout_cmd(cfg: &RunConfig, a: &crate::RolloutArgs) -> Result<(), CliError> {
    let base = cfg.system_params()?;
    let flow;
    let net;
    let surrogate: &dyn Surrogate = if a.oracle {
        flow = RomFlow::new(base, cfg.integrator.dt);
        &flow
    } else {
        net = load_model(cfg, &a.model)?.0;
        &net
    };
    let start = Instant::now();
    let r = rollout(surrogate, PllState::new(a.delta0, a.omega0), a.alpha, &base, &cfg.rollout())?;
    phase("rollout", start);
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.out_dir.join("rollout.csv"));
    r.write_csv(&out)?;
    let verdict = match (r.verdict, r.t_eq) {
        (Verdict::Stable, Some(t)) => format!("stable t_eq={t:.4} s"),
        (Verdict::Unstable, _) => "unstable".into(),
        _ if r.non_finite => "undecided (non-finite prediction)".into(),
        _ => "undecided within horizon".into(),
    };
    println!("verdict: {verdict} after {} windows", r.windows_used);
    println!("wrote {}", out.display());
    Ok(())
}

fn map_stem(map: &RoaMap) -> String {
    format!("roa_{}_a{:.3}", map.method, map.alpha)
}

fn roa_cmd(cfg: &RunConfig, a: &crate::RoaArgs) -> Result<(), CliError> {
    let (want_rom, want_nn) = cfg.sweep_method()?;
    let base = cfg.system_params()?;
    let domain = cfg.domain();
    let lattice = cfg.lattice();
    let alphas = cfg.alphas();
    let rc = cfg.rollout();
    let digest = cfg.digest();
    let style = RenderStyle {
        t_max: a.t_max,
        ..RenderStyle::default()
    };
    let net = if want_nn { Some(load_model(cfg, &a.model)?) } else { None };
    println!(
        "lattice {}x{} ({} points) x {} alphas",
        lattice.n_delta,
        lattice.n_omega,
        lattice.len(),
        alphas.len()
    );

    let run_sweep = |cls: Classifier<'_>, tag: String| -> Result<Vec<RoaMap>, CliError> {
        let name = cls.method().name();
        let last = Mutex::new(Instant::now());
        let progress = |done: usize, total: usize| {
            let mut l = last.lock().expect("progress lock");
            if done == total || l.elapsed().as_secs_f64() > 2.0 {
                eprintln!("[{name}] {done}/{total} points");
                *l = Instant::now();
            }
        };
        let opts = SweepOptions {
            partial: Some(cfg.paths.out_dir.join(format!("roa_{name}.partial"))),
            tag,
            progress: Some(&progress),
        };
        let start = Instant::now();
        let maps = sweep(&lattice, &domain, &alphas, cls, &base, &rc, &opts)?;
        phase(&format!("sweep {name}"), start);
        for m in &maps {
            let stem = map_stem(m);
            let dir = &cfg.paths.out_dir;
            m.save(&dir.join(format!("{stem}.map")), &digest)?;
            render(m, &style, &dir.join(format!("{stem}.csv")), &dir.join(format!("{stem}.svg")))?;
            println!(
                "{name} alpha={}: {} stable, {} unstable ({} undecided) -> {}.map/.csv/.svg",
                m.alpha,
                m.stable_count(),
                m.labels.len() - m.stable_count(),
                m.undecided_count(),
                stem
            );
        }
        Ok(maps)
    };

    let rom = if want_rom {
        Some(run_sweep(Classifier::Rom { dt: cfg.sweep.rom_dt }, String::new())?)
    } else {
        None
    };
    let nn = match &net {
        Some((n, path)) => Some(run_sweep(Classifier::Surrogate(n), file_checksum(path)?)?),
        None => None,
    };

    if let (Some(rom), Some(nn)) = (&rom, &nn) {
        let mut pooled = ConfusionStats::default();
        let mut parts = Vec::new();
        for (r, n) in rom.iter().zip(nn) {
            let s = compare(r, n)?;
            pooled.merge(&s);
            parts.push(format!("    {{\"alpha\": {}, \"stats\": {}}}", r.alpha, s.to_json()));
        }
        let report = format!(
            "{{\n  \"config\": \"{digest}\",\n  \"per_alpha\": [\n{}\n  ],\n  \"pooled\": {}\n}}\n",
            parts.join(",\n"),
            pooled.to_json()
        );
        let path = cfg.paths.out_dir.join("roa_compare.json");
        std::fs::write(&path, &report)?;
        print!("{report}");
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn compare_cmd(a: &crate::CompareArgs) -> Result<(), CliError> {
    require(&a.reference, "map")?;
    require(&a.candidate, "map")?;
    let r = RoaMap::load(&a.reference)?;
    let c = RoaMap::load(&a.candidate)?;
    let s = compare(&r, &c).map_err(|e| CliError::Config(e.to_string()))?;
    let json = s.to_json();
    println!("{json}");
    if let Some(out) = &a.out {
        std::fs::write(out, format!("{json}\n"))?;
    }
    Ok(())
}

fn is_map(path: &Path) -> bool {
    std::fs::read(path)
        .map(|b| b.starts_with(MAP_MAGIC.as_bytes()))
        .unwrap_or(false)
}

fn render_cmd(a: &crate::RenderArgs) -> Result<(), CliError> {
    for p in &a.inputs {
        require(p, "input")?;
    }
    if is_map(&a.inputs[0]) {
        if a.inputs.len() != 1 {
            return Err(CliError::Config("render takes a single map".into()));
        }
        let m = RoaMap::load(&a.inputs[0])?;
        let svg = a.out.clone().unwrap_or_else(|| a.inputs[0].with_extension("svg"));
        let csv = a.csv.clone().unwrap_or_else(|| a.inputs[0].with_extension("csv"));
        let style = RenderStyle {
            t_max: a.t_max,
            ..RenderStyle::default()
        };
        render(&m, &style, &csv, &svg)?;
        println!("wrote {} and {}", csv.display(), svg.display());
    } else {
        let mut series = Vec::new();
        for p in &a.inputs {
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().trim_start_matches("history_").to_string())
                .unwrap_or_default();
            series.push((label, plot::read_history(p)?));
        }
        let svg = a.out.clone().unwrap_or_else(|| a.inputs[0].with_file_name("history.svg"));
        std::fs::write(&svg, plot::history_svg(&series))?;
        println!("wrote {}", svg.display());
    }
    Ok(())
}
