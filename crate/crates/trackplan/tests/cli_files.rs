//! End-to-end checks of the command layer and the on-disk file formats.

use std::fs;
use std::path::Path;

use trackplan::cli::{self, ArmKind, EXIT_CONFIG, EXIT_OK};
use trackplan::scenario::{
    load_scenario, log_from_csv, metrics_from_csv, save_scenario, LimitsConfig, PlannerConfig,
    Scenario, ScriptConfig, SimConfig, WeightsConfig, WorldConfig,
};
use trackplan::sim::compute_metrics;

fn small_scenario(name: &str, obstacles: Vec<ScriptConfig>) -> Scenario {
    Scenario {
        name: name.into(),
        sim: SimConfig {
            dt: 0.05,
            replan_dt: 0.2,
            duration_s: 3.0,
        },
        world: WorldConfig {
            robot_start: [-2.5, 0.0],
            obstacle_radius: 0.5,
            target: ScriptConfig {
                speed: 1.0,
                waypoints: vec![[0.0, 0.0], [6.0, 0.0]],
            },
            obstacles,
        },
        limits: LimitsConfig {
            v_max: 2.2,
            a_max: 4.0,
        },
        planner: PlannerConfig {
            samples: 6,
            seed: 0,
            k_iters: 40,
            m: 30,
            degree: 8,
            n_obs: 6,
            n_beams: 90,
            weights: WeightsConfig::default(),
            ..Default::default()
        },
    }
}

fn crossing_obstacle() -> ScriptConfig {
    ScriptConfig {
        speed: 0.7,
        waypoints: vec![[2.0, -2.0], [2.0, 2.0]],
    }
}

#[test]
fn simulate_writes_log_and_metrics_and_they_agree() {
    let dir = tempfile::tempdir().unwrap();
    let sc_path = dir.path().join("scenario.toml");
    save_scenario(&small_scenario("it-sim", vec![]), &sc_path).unwrap();
    let out = dir.path().join("run");
    let code = cli::cmd_simulate(&sc_path, &out, ArmKind::Base, None, None);
    assert_eq!(code, EXIT_OK);

    let log = log_from_csv(&fs::read_to_string(out.join("log.csv")).unwrap()).unwrap();
    let metrics = metrics_from_csv(&fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    let recomputed = compute_metrics(&log).unwrap();
    assert_eq!(recomputed.occlusion_time_s, metrics.occlusion_time_s);
    assert_eq!(recomputed.collision_count, metrics.collision_count);
    assert_eq!(recomputed.success, metrics.success);
    assert_eq!(recomputed.acc_mean, metrics.acc_mean);
    assert_eq!(metrics.occlusion_time_s, 0.0); // obstacle-free scenario
}

#[test]
fn same_seed_gives_byte_identical_metrics_files() {
    let dir = tempfile::tempdir().unwrap();
    let sc_path = dir.path().join("scenario.toml");
    save_scenario(
        &small_scenario("it-det", vec![crossing_obstacle()]),
        &sc_path,
    )
    .unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    assert_eq!(cli::cmd_simulate(&sc_path, &out1, ArmKind::Base, Some(7), None), EXIT_OK);
    assert_eq!(cli::cmd_simulate(&sc_path, &out2, ArmKind::Base, Some(7), None), EXIT_OK);
    let m1 = fs::read(out1.join("metrics.csv")).unwrap();
    let m2 = fs::read(out2.join("metrics.csv")).unwrap();
    assert_eq!(m1, m2);
    // Logs match byte for byte once the wall-clock timing column is masked.
    let strip = |path: &Path| -> String {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                let mut cols: Vec<&str> = l.split(',').collect();
                if cols.len() == 13 {
                    cols[11] = "";
                }
                cols.join(",")
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&out1.join("log.csv")), strip(&out2.join("log.csv")));
}

#[test]
fn missing_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let code = cli::cmd_simulate(
        Path::new("/nonexistent/scenario.toml"),
        dir.path(),
        ArmKind::Base,
        None,
        None,
    );
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn trained_arm_without_decoder_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc_path = dir.path().join("scenario.toml");
    save_scenario(&small_scenario("it-dec", vec![]), &sc_path).unwrap();
    let code = cli::cmd_simulate(&sc_path, dir.path(), ArmKind::Trained, None, None);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn raw_arm_never_beats_base_on_occlusion_across_seeds() {
    // A crossing obstacle creates real occlusion pressure; the projected
    // policy should match or beat the unprojected one seed by seed almost
    // always.
    let dir = tempfile::tempdir().unwrap();
    let mut sc = small_scenario("it-cmp", vec![crossing_obstacle()]);
    sc.sim.duration_s = 5.0;
    let sc_path = dir.path().join("scenario.toml");
    save_scenario(&sc, &sc_path).unwrap();
    let mut base_not_worse = 0;
    let seeds = 5;
    for seed in 0..seeds {
        let out_b = dir.path().join(format!("b{seed}"));
        let out_r = dir.path().join(format!("r{seed}"));
        assert_eq!(
            cli::cmd_simulate(&sc_path, &out_b, ArmKind::Base, Some(seed), None),
            EXIT_OK
        );
        assert_eq!(
            cli::cmd_simulate(&sc_path, &out_r, ArmKind::RawUnprojected, Some(seed), None),
            EXIT_OK
        );
        let mb = metrics_from_csv(&fs::read_to_string(out_b.join("metrics.csv")).unwrap()).unwrap();
        let mr = metrics_from_csv(&fs::read_to_string(out_r.join("metrics.csv")).unwrap()).unwrap();
        if mr.occlusion_time_s >= mb.occlusion_time_s {
            base_not_worse += 1;
        }
    }
    assert!(
        base_not_worse as f64 >= 0.8 * seeds as f64,
        "base better on only {base_not_worse}/{seeds} seeds"
    );
}

#[test]
fn gradcheck_command_passes() {
    assert_eq!(cli::cmd_gradcheck(8, 3, 1e-5), EXIT_OK);
}

#[test]
fn train_on_empty_suite_reports_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    fs::create_dir_all(&suite).unwrap();
    let out = dir.path().join("decoder.txt");
    let code = cli::cmd_train(None, Some(&suite), 8, None, &out, None, None);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn zero_learning_rate_training_writes_a_flat_curve() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    fs::create_dir_all(&suite).unwrap();
    save_scenario(
        &small_scenario("it-train", vec![crossing_obstacle()]),
        &suite.join("a.toml"),
    )
    .unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    fs::write(
        &cfg_path,
        "learning_rate = 0.0\nepochs = 3\nbatch_size = 4\nk_train = 8\npenalty_weight = 10.0\nseed = 1\n",
    )
    .unwrap();
    let out = dir.path().join("decoder.txt");
    let curve_path = dir.path().join("losses.csv");
    let code = cli::cmd_train(
        None,
        Some(&suite),
        8,
        Some(&cfg_path),
        &out,
        Some(&curve_path),
        None,
    );
    assert_eq!(code, EXIT_OK);
    let curve = fs::read_to_string(&curve_path).unwrap();
    let losses: Vec<f64> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.windows(2).all(|w| w[0] == w[1]), "curve {losses:?}");
    // The decoder file round-trips through the loader.
    assert!(trackplan::scenario::load_decoder(&out).is_ok());
}

#[test]
fn dataset_file_round_trips_through_training_input() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    fs::create_dir_all(&suite).unwrap();
    save_scenario(
        &small_scenario("it-data", vec![crossing_obstacle()]),
        &suite.join("a.toml"),
    )
    .unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    fs::write(
        &cfg_path,
        "learning_rate = 1e-4\nepochs = 2\nbatch_size = 4\nk_train = 6\npenalty_weight = 10.0\nseed = 1\n",
    )
    .unwrap();
    let out1 = dir.path().join("d1.txt");
    let dataset_path = dir.path().join("demos.txt");
    assert_eq!(
        cli::cmd_train(
            None,
            Some(&suite),
            8,
            Some(&cfg_path),
            &out1,
            None,
            Some(&dataset_path)
        ),
        EXIT_OK
    );
    // Re-train from the saved dataset: identical decoder.
    let out2 = dir.path().join("d2.txt");
    assert_eq!(
        cli::cmd_train(Some(&dataset_path), None, 8, Some(&cfg_path), &out2, None, None),
        EXIT_OK
    );
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
}

#[test]
fn benchmark_emits_documented_table_and_consistent_files() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    fs::create_dir_all(&suite).unwrap();
    save_scenario(&small_scenario("bench-a", vec![]), &suite.join("a.toml")).unwrap();
    save_scenario(
        &small_scenario("bench-b", vec![crossing_obstacle()]),
        &suite.join("b.toml"),
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(cli::cmd_benchmark(&suite, &out, 2, None), EXIT_OK);

    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), trackplan::scenario::TABLE_HEADER);
    let rows: Vec<&str> = lines.collect();
    // 2 scenarios x 2 arms x 2 seeds
    assert_eq!(rows.len(), 8);

    // Summed occlusion per arm in the table equals the sum over the
    // per-run metrics files.
    for arm in ["base", "raw-unprojected"] {
        let mut from_table = 0.0;
        let mut from_files = 0.0;
        for row in &rows {
            let cols: Vec<&str> = row.split(',').collect();
            if cols[1] == arm {
                from_table += cols[3].parse::<f64>().unwrap();
                let file = out.join(format!("{}_{}_s{}_metrics.csv", cols[0], arm, cols[2]));
                let m = metrics_from_csv(&fs::read_to_string(file).unwrap()).unwrap();
                from_files += m.occlusion_time_s;
            }
        }
        assert_eq!(from_table, from_files);
    }
}

#[test]
fn benchmark_needs_at_least_one_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("empty");
    fs::create_dir_all(&suite).unwrap();
    assert_eq!(
        cli::cmd_benchmark(&suite, &dir.path().join("out"), 1, None),
        EXIT_CONFIG
    );
}

#[test]
fn project_subcommand_runs() {
    let dir = tempfile::tempdir().unwrap();
    let sc_path = dir.path().join("scenario.toml");
    save_scenario(&small_scenario("it-proj", vec![crossing_obstacle()]), &sc_path).unwrap();
    assert_eq!(cli::cmd_project(&sc_path, None), EXIT_OK);
}

#[test]
fn shipped_scenarios_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let suite = cli::load_suite(&root).unwrap();
    assert_eq!(suite.len(), 10);
    let heldout = cli::load_suite(&root.join("heldout")).unwrap();
    assert_eq!(heldout.len(), 3);
    let training = cli::load_suite(&root.join("train")).unwrap();
    assert_eq!(training.len(), 5);
    for sc in suite.iter().chain(&heldout).chain(&training) {
        sc.validate().unwrap();
    }
}

#[test]
fn binary_reports_usage_errors() {
    // End-to-end arg parsing through the real binary.
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_trackplan"))
        .arg("simulate")
        .arg("/nonexistent.toml")
        .arg("/tmp/nowhere")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let help = std::process::Command::new(env!("CARGO_BIN_EXE_trackplan"))
        .arg("--help")
        .output()
        .unwrap();
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("simulate"));
}
