use bayes_ltv::ant::{gen_ant_pairs, AntScenario};
use bayes_ltv::lti::{lti_fixture_from_input, random_fir, LtiFixture};
use bayes_ltv::ltv::ltv_fixture;
use bayes_ltv::rng::derive_seed;
use bayes_ltv::signal::{gen_pulse_train, white_noise};
use bayes_ltv::Fir;

use super::{ant_seed, stream, STREAM_FIXTURE};
use crate::config::{InputKind, Kind, RunConfig};
use crate::error::CliResult;
use crate::io::{columns_csv, Manifest, OutDir, MANIFEST};

pub fn fir_csv(h: &Fir) -> String {
    let k: Vec<f64> = (1..=h.len()).map(|k| k as f64).collect();
    columns_csv(&["k", "h"], &[&k, h.taps()])
}

pub fn pair_dir(i: usize) -> String {
    format!("pairs/pair_{i:04}")
}

/// Truth FIR and `n_pairs` fixtures, each pair on its own fixture stream.
pub fn lti_fixtures(cfg: &RunConfig, n_pairs: usize) -> CliResult<(Fir, Vec<(u64, LtiFixture)>)> {
    let l = &cfg.lti;
    let root = stream(cfg, STREAM_FIXTURE);
    let truth = random_fir(l.p, derive_seed(root, 0))?;
    let mut out = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let seed = derive_seed(root, i as u64 + 1);
        let input = match l.input {
            InputKind::White => white_noise(l.n, 1.0, l.sample_rate, derive_seed(seed, 0))?,
            InputKind::Pulses => gen_pulse_train(l.n, l.n_pulses, l.sample_rate, derive_seed(seed, 0))?,
        };
        out.push((seed, lti_fixture_from_input(input, truth.clone(), l.snr_db, derive_seed(seed, 1))?));
    }
    Ok((truth, out))
}

fn gen_lti(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let (truth, fixtures) = lti_fixtures(cfg, cfg.lti.n_pairs)?;
    out.text("truth_fir.csv", &fir_csv(&truth), derive_seed(stream(cfg, STREAM_FIXTURE), 0), "truth_fir")?;
    for (i, (seed, fx)) in fixtures.iter().enumerate() {
        let dir = pair_dir(i);
        out.signal(&format!("{dir}/input.csv"), &fx.input, *seed, "input")?;
        out.signal(&format!("{dir}/output.csv"), &fx.observed, *seed, "output")?;
        out.signal(&format!("{dir}/clean.csv"), &fx.clean, *seed, "clean")?;
    }
    Ok(())
}

fn gen_ltv(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let seed = stream(cfg, STREAM_FIXTURE);
    let fx = ltv_fixture(&cfg.ltv.fixture, seed)?;
    out.signal("input.csv", &fx.input, seed, "input")?;
    out.signal("output.csv", &fx.observed, seed, "output")?;
    out.signal("clean.csv", &fx.clean, seed, "clean")?;
    out.text("truth_ltv.csv", &fx.truth.to_csv(), seed, "truth_ltv")?;
    Ok(())
}

/// Scenario of the fixture set written by `gen`.
pub fn fixture_scenario(cfg: &RunConfig) -> AntScenario {
    AntScenario {
        seed: ant_seed(cfg, cfg.ant.seeds[0]),
        ..cfg.ant.scenario.clone()
    }
}

fn gen_ant(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let sc = fixture_scenario(cfg);
    let pairs = gen_ant_pairs(&sc)?;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let seed = derive_seed(sc.seed, i as u64);
        let dir = pair_dir(i);
        out.signal(&format!("{dir}/a.csv"), a, seed, "input")?;
        out.signal(&format!("{dir}/b.csv"), b, seed, "output")?;
    }
    out.text("medium_ir.csv", &fir_csv(&sc.medium_ir()?), sc.seed, "medium_ir")?;
    out.json("truth_dispersion.json", &sc.dispersion, sc.seed, "truth_dispersion")?;
    Ok(())
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let mut out = OutDir::create(&cfg.out)?;
    match cfg.kind {
        Kind::Lti => gen_lti(cfg, &mut out)?,
        Kind::Ltv => gen_ltv(cfg, &mut out)?,
        Kind::Ant => gen_ant(cfg, &mut out)?,
    }
    let manifest = Manifest {
        kind: cfg.kind,
        seed: cfg.seed,
        // paths in the manifest are relative to its own directory
        config: RunConfig {
            out: ".".into(),
            ..cfg.clone()
        },
        files: std::mem::take(&mut out.written),
    };
    out.json(MANIFEST, &manifest, cfg.seed, "manifest")?;
    eprintln!("wrote {} fixture files to {}", manifest.files.len(), cfg.out.display());
    Ok(())
}
