use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use edgetrack::cli::main_with_args;
use edgetrack::config::RunConfig;

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("edgetrack").chain(args.iter().copied()))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn default_simulation_has_twenty_by_two_hundred_rows() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(&["simulate", "--output_dir", s(d.path())]), 0);
    let text = fs::read_to_string(d.path().join("tracks/tracks.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 20 * 200);
    assert!(text.starts_with("id,day,x_km,y_km\n"));
    let labels = fs::read_to_string(d.path().join("tracks/labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 21);
    let truth = fs::read_to_string(d.path().join("tracks/truth.txt")).unwrap();
    for line in ["sigma_mu2 = 272", "tau2 = 8600", "season_a = 69", "season_b = 337"] {
        assert!(truth.contains(line), "{truth}");
    }
}

#[test]
fn zero_individuals_give_a_header_only_csv() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(&["simulate", "--output_dir", s(d.path()), "--n_individuals", "0"]), 0);
    assert_eq!(fs::read_to_string(d.path().join("tracks/tracks.csv")).unwrap(), "id,day,x_km,y_km\n");
}

#[test]
fn pipeline_is_byte_identical_under_a_seed() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let o = s(&out);
    let features = out.join("tracks/features.geojson");
    let obs = out.join("tracks/observations.csv");
    let imps = out.join("imputations/imputations.csv");
    let steps: Vec<Vec<&str>> = vec![
        vec!["simulate", "--output_dir", o, "--n_individuals", "4", "--days", "60", "--observe_max_gap", "3"],
        vec!["impute", "--output_dir", o, "--observations", s(&obs), "--impute_k", "3"],
        vec![
            "fit", "--output_dir", o, "--features", s(&features), "--imputations", s(&imps), "--iterations", "300",
            "--burn_in", "100",
        ],
        vec!["boundary", "--output_dir", o, "--boundary_step", "20"],
    ];
    let mut first = None;
    for _ in 0..2 {
        for args in &steps {
            assert_eq!(run(args), 0, "{args:?}");
        }
        let snap = snapshot(&out);
        if let Some(f) = &first {
            assert_eq!(f, &snap);
        }
        first = Some(snap);
    }
    let snap = first.unwrap();
    for f in [
        "posterior/chain_0.csv",
        "posterior/chain_1.csv",
        "posterior/summary.csv",
        "boundary/boundary.geojson",
        "boundary/vertices.csv",
        "reports/fit.effective-config",
    ] {
        assert!(snap.contains_key(f), "{f} missing");
    }
    let summary = String::from_utf8(snap["posterior/summary.csv"].clone()).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["sigma_mu2", "tau2", "sigma_mu", "tau", "a", "b"]);
    let chain = String::from_utf8(snap["posterior/chain_0.csv"].clone()).unwrap();
    assert!(chain.starts_with("iter,sigma_mu2,tau2,a,b,cx_cs,cy_cs,cx_sb,cy_sb,"));
    assert!(chain.lines().next().unwrap().ends_with(",z_1,z_2,z_3,z_4"));
    assert_eq!(chain.lines().count(), 1 + 200);
}

#[test]
fn resumed_fit_matches_an_uninterrupted_fit() {
    let d = tempfile::tempdir().unwrap();
    let sim = d.path().join("sim");
    assert_eq!(run(&["simulate", "--output_dir", s(&sim), "--n_individuals", "4", "--days", "50"]), 0);
    let features = sim.join("tracks/features.geojson");
    let tracks = sim.join("tracks/tracks.csv");
    let fit = |dir: &Path, iters: &str, resume: &str| {
        run(&[
            "fit", "--output_dir", s(dir), "--features", s(&features), "--tracks", s(&tracks), "--iterations", iters,
            "--burn_in", "50", "--resume", resume,
        ])
    };
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert_eq!(fit(&a, "250", "false"), 0);
    assert_eq!(fit(&b, "120", "false"), 0);
    assert_eq!(fit(&b, "250", "true"), 0);
    let (sa, sb) = (snapshot(&a.join("posterior")), snapshot(&b.join("posterior")));
    assert_eq!(sa, sb);
    assert_eq!(fit(&b, "100", "true"), 2);
}

#[test]
fn effective_config_reloads_to_the_same_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg_path = d.path().join("run.conf");
    fs::write(&cfg_path, "seed = 99\ndays = 30\nn_individuals = 2\ndevice_sd.collar = 1.5\n").unwrap();
    let out = d.path().join("o");
    assert_eq!(run(&["simulate", "--config", s(&cfg_path), "--output_dir", s(&out), "--tau2", "9000"]), 0);
    let eff = out.join("reports/simulate.effective-config");
    let loaded = RunConfig::load(&eff).unwrap();
    assert_eq!(loaded.seed, 99);
    assert_eq!(loaded.truth.tau2, 9000.0);
    assert_eq!(loaded.devices.sd("collar").unwrap(), 1.5);
    assert_eq!(loaded.to_text(), fs::read_to_string(&eff).unwrap());
    assert_eq!(RunConfig::from_text(&loaded.to_text()).unwrap(), loaded);
}

#[test]
fn errors_map_to_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let o = d.path().join("o");
    assert_eq!(run(&["fit", "--output_dir", s(&o), "--unknown_key", "1"]), 2);
    assert_eq!(run(&["fit", "--output_dir", s(&o), "--tracks", "/nonexistent.csv"]), 2);
    assert_eq!(run(&["nonsense"]), 2);

    let bad = d.path().join("bad.csv");
    fs::write(&bad, "id,t_star,x_km,y_km,device_class\na,1,0,0,gps\na,2,zero,0,gps\n").unwrap();
    assert_eq!(run(&["impute", "--output_dir", s(&o), "--observations", s(&bad)]), 3);

    let empty = d.path().join("empty.csv");
    fs::write(&empty, "id,t_star,x_km,y_km,device_class\n").unwrap();
    assert_eq!(run(&["impute", "--output_dir", s(&o), "--observations", s(&empty)]), 3);

    let single = d.path().join("single.csv");
    fs::write(&single, "id,t_star,x_km,y_km,device_class\na,1,0,0,gps\n").unwrap();
    assert_eq!(run(&["impute", "--output_dir", s(&o), "--observations", s(&single)]), 3);

    let post = d.path().join("post");
    fs::create_dir_all(&post).unwrap();
    let header = "iter,sigma_mu2,tau2,a,b,cx_cs,cy_cs,cx_sb,cy_sb,log_eig1_cs,log_eig2_cs,angle_cs,log_eig1_sb,log_eig2_sb,angle_sb,z_1\n";
    let row = "1,272,8600,69,337,0,0,0,0,9,9,0,9,9,0,1\n";
    fs::write(post.join("chain_0.csv"), format!("{header}{row}")).unwrap();
    assert_eq!(run(&["boundary", "--output_dir", s(&o), "--posterior_dir", s(&post)]), 4);
}

#[test]
fn binary_reports_malformed_rows_by_line() {
    let d = tempfile::tempdir().unwrap();
    let sim = d.path().join("sim");
    assert_eq!(run(&["simulate", "--output_dir", s(&sim), "--n_individuals", "1", "--days", "5"]), 0);
    let bad = d.path().join("tracks.csv");
    fs::write(&bad, "id,day,x_km,y_km\nb0,0,1,1\nb0,1,1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_edgetrack"))
        .args(["fit", "--output_dir"])
        .arg(d.path().join("o"))
        .arg("--tracks")
        .arg(&bad)
        .arg("--features")
        .arg(sim.join("tracks/features.geojson"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn validate_and_bench_write_reports() {
    let d = tempfile::tempdir().unwrap();
    let o = s(d.path());
    assert_eq!(
        run(&["validate-linearization", "--output_dir", o, "--validate_line_scenarios", "2", "--validate_radii", "300", "--grid_cells", "128"]),
        0
    );
    let csv = fs::read_to_string(d.path().join("reports/validate_linearization.csv")).unwrap();
    assert!(csv.starts_with("scenario,curvature,sigma_mu,tau,tv,runtime_exact,runtime_linearized\n"));
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(run(&["bench", "--output_dir", o, "--bench_evaluations", "100", "--bench_quadratures", "1", "--grid_cells", "128"]), 0);
    let report = fs::read_to_string(d.path().join("reports/bench.txt")).unwrap();
    assert!(report.contains("speedup = "));
}
