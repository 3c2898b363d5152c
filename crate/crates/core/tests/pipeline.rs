use skidsteer::calibration::{calibrate, loss, LossConfig, OptimizerConfig};
use skidsteer::dataset::{
    command_log_csv, excitation_profile, load_command_log, load_pose_log, pose_log_csv, simulate,
    synchronize, SimScenario,
};
use skidsteer::evaluation::{error_command_grid, evaluate, rotation_response, summarize_samples};
use skidsteer::segmentation::{segment, HorizonConfig, HorizonMode};
use skidsteer::{ChassisGeometry, KinematicModel, ModelVariant, Pose2D};

fn truth() -> KinematicModel {
    KinematicModel::from_params(
        ModelVariant::ExtendedDdAsymmetric,
        ChassisGeometry::default(),
        &[0.81, 0.84, -2.71, 3.00, -3.85],
    )
    .unwrap()
}

#[test]
fn files_round_trip_through_the_pipeline() {
    let profile = excitation_profile(60.0, 5.0, 12).unwrap();
    let (cmds, poses) = simulate(&SimScenario::new(truth(), profile, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (c, p) = (dir.path().join("cmd.csv"), dir.path().join("pose.csv"));
    std::fs::write(&c, command_log_csv(&cmds)).unwrap();
    std::fs::write(&p, pose_log_csv(&poses)).unwrap();
    assert_eq!(load_command_log(&c).unwrap(), cmds);
    assert_eq!(load_pose_log(&p).unwrap(), poses);
}

#[test]
fn evaluation_is_rigid_invariant() {
    let profile = excitation_profile(120.0, 5.0, 5).unwrap();
    let mut scenario = SimScenario::new(truth(), profile, 6);
    scenario.twist_noise_std = [0.05, 0.02, 0.05];
    let (c, p) = simulate(&scenario).unwrap();
    let traj = synchronize(&c, &p).unwrap();
    let g = Pose2D::new(-40.0, 17.0, -2.5);
    let moved = traj.transformed(&g);
    let cfg = HorizonConfig::evaluation(2.0);
    let (a, b) = (
        segment(&traj, &cfg).unwrap(),
        segment(&moved, &cfg).unwrap(),
    );
    assert_eq!(a.len(), b.len());
    let ideal = KinematicModel::ideal(ChassisGeometry::default());
    let (ea, eb) = (evaluate(&ideal, &a).unwrap(), evaluate(&ideal, &b).unwrap());
    for (x, y) in ea.iter().zip(&eb) {
        assert!((x.eps_t - y.eps_t).abs() < 1e-9);
        assert!((x.eps_theta - y.eps_theta).abs() < 1e-9);
    }
    let la = loss(&ideal, &a, &LossConfig::identity()).unwrap();
    let lb = loss(&ideal, &b, &LossConfig::identity()).unwrap();
    assert!((la - lb).abs() < 1e-9 * la);
}

#[test]
fn true_model_scores_zero_without_noise() {
    let profile = excitation_profile(90.0, 5.0, 8).unwrap();
    let (c, p) = simulate(&SimScenario::new(truth(), profile, 1)).unwrap();
    let traj = synchronize(&c, &p).unwrap();
    for cfg in [
        HorizonConfig::evaluation(2.0),
        HorizonConfig {
            mode: HorizonMode::Temporal,
            ..HorizonConfig::training(3.0)
        },
    ] {
        let segs = segment(&traj, &cfg).unwrap();
        let s = summarize_samples(&evaluate(&truth(), &segs).unwrap()).unwrap();
        assert!(s.eps_t.q75 < 1e-9 && s.eps_theta.q75 < 1e-9, "{s:?}");
    }
}

#[test]
fn nominal_start_never_loses_to_ideal() {
    let profile = excitation_profile(90.0, 5.0, 21).unwrap();
    let mut scenario = SimScenario::new(truth(), profile, 22);
    scenario.twist_noise_std = [0.05, 0.02, 0.05];
    let (c, p) = simulate(&scenario).unwrap();
    let segs = segment(&synchronize(&c, &p).unwrap(), &HorizonConfig::training(2.0)).unwrap();
    let opt = OptimizerConfig {
        restarts: 2,
        max_evals: 300,
        ..Default::default()
    };
    let ideal_loss = loss(
        &KinematicModel::ideal(ChassisGeometry::default()),
        &segs,
        &LossConfig::identity(),
    )
    .unwrap();
    for v in [
        ModelVariant::ExtendedDdSymmetric,
        ModelVariant::ExtendedDdAsymmetric,
        ModelVariant::RocBased,
        ModelVariant::FullLinear,
    ] {
        let r = calibrate(
            v,
            ChassisGeometry::default(),
            &segs,
            &LossConfig::identity(),
            &opt,
        )
        .unwrap();
        assert!(
            (r.nominal_loss - ideal_loss).abs() < 1e-9 * ideal_loss,
            "{v}"
        );
        assert!(r.final_loss <= r.nominal_loss, "{v}");
    }
}

#[test]
fn analyses_cover_the_data() {
    let profile = excitation_profile(180.0, 5.0, 30).unwrap();
    let (c, p) = simulate(&SimScenario::new(truth(), profile, 31)).unwrap();
    let segs = segment(
        &synchronize(&c, &p).unwrap(),
        &HorizonConfig::evaluation(2.0),
    )
    .unwrap();
    let ideal = KinematicModel::ideal(ChassisGeometry::default());
    let samples = evaluate(&ideal, &segs).unwrap();
    let grid = error_command_grid(&samples, 20).unwrap();
    assert_eq!(
        grid.cells.iter().map(|c| c.count).sum::<usize>(),
        samples.len()
    );
    assert!(grid.argmax(1).is_some());
    let curve = rotation_response(&segs, ChassisGeometry::default(), 0.1).unwrap();
    assert!(!curve.bins.is_empty());
    let binned: usize = curve.bins.iter().map(|b| b.measured.count).sum();
    assert!(binned <= segs.len());
    assert!(curve.bins.windows(2).all(|w| w[0].upper <= w[1].lower));
}
