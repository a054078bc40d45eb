use meshlat_core::config::RunConfig;
use meshlat_core::nn::{Graph, Tensor};
use meshlat_core::sampling::FeatureSet;
use meshlat_core::shapes;
use meshlat_core::sparse_grid::{OccupancyLadder, MAX_RESOLUTION};
use meshlat_core::vae::{
    assemble_losses, score_reconstruction, train_vae, PruneMode, TVoxels, TrainingMesh, Vae,
    VaeError,
};

fn tiny() -> RunConfig {
    RunConfig {
        base_resolution: 4,
        stages: 2,
        channels: 3,
        pointnet_width: 8,
        width: 8,
        heads: 2,
        encoder_blocks: 1,
        frequencies: 2,
        samples: 256,
        ..RunConfig::default()
    }
}

fn latent(cfg: &RunConfig, coords: Vec<[u32; 3]>, seed: u64) -> TVoxels {
    let z = meshlat_core::nn::loss::voxel_noise(&coords, cfg.channels, seed, 99);
    TVoxels {
        resolution: cfg.base_resolution,
        coords,
        z,
    }
}

#[test]
fn encoder_ignores_point_order() {
    let cfg = tiny();
    let vae = Vae::new(&cfg);
    let f = vae.features(&shapes::tetrahedron(), 3).unwrap();
    let n = f.coords.len();
    let w = f.width();
    let perm: Vec<usize> = (0..n).map(|i| (i * 97 + 13) % n).collect();
    let shuffled = FeatureSet {
        coords: perm.iter().map(|&i| f.coords[i]).collect(),
        features: perm.iter().flat_map(|&i| f.row(i).to_vec()).collect(),
        variant: f.variant,
    };
    assert_eq!(shuffled.features.len(), n * w);
    let (a, b) = (vae.encode(&f).unwrap(), vae.encode(&shuffled).unwrap());
    assert_eq!(a.coords, b.coords);
    for (x, y) in a.mu.data().iter().zip(b.mu.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn encoder_rejects_bad_input() {
    let vae = Vae::new(&tiny());
    let mut f = vae.features(&shapes::tetrahedron(), 0).unwrap();
    f.coords[0][1] = 1.5;
    assert!(matches!(vae.encode(&f), Err(VaeError::OutOfUnitCube)));
    let empty = FeatureSet {
        coords: vec![],
        features: vec![],
        variant: f.variant,
    };
    assert!(matches!(vae.encode(&empty), Err(VaeError::EmptyInput)));
}

#[test]
fn forced_pruning_counts() {
    let cfg = tiny();
    let vae = Vae::new(&cfg);
    let t = latent(&cfg, vec![[0, 0, 0], [1, 2, 3], [3, 3, 3]], 1);
    let all = vae.decode(&t, PruneMode::Forced(1.0)).unwrap();
    assert_eq!(all.candidates_per_level, vec![3, 24, 192]);
    assert_eq!(all.survivors_per_level, vec![3, 24, 192]);
    assert_eq!(all.vertices.len(), 192);
    assert!(all.scorer.is_some());
    let none = vae.decode(&t, PruneMode::Forced(0.0)).unwrap();
    assert_eq!(none.empty_at, Some(0));
    assert!(none.vertices.is_empty() && none.scorer.is_none());
}

#[test]
fn teacher_pruning_follows_ladder() {
    let cfg = tiny();
    let vae = Vae::new(&cfg);
    let mesh = shapes::tetrahedron();
    let ladder = OccupancyLadder::build(&mesh.vertices, cfg.base_resolution, cfg.stages);
    let post = vae.encode_mesh(&mesh, 0).unwrap();
    let d = vae
        .decode(&post.mean(), PruneMode::Teacher(&ladder))
        .unwrap();
    let finest: Vec<_> = ladder.level(cfg.stages).coords();
    assert_eq!(d.vertex_coords, finest);
    for (l, &n) in d.survivors_per_level.iter().enumerate() {
        assert_eq!(n, ladder.level(l).len());
    }
}

#[test]
fn decode_budget_and_width_errors() {
    let cfg = RunConfig {
        max_active: 50,
        ..tiny()
    };
    let vae = Vae::new(&cfg);
    let t = latent(&cfg, vec![[0, 0, 0], [1, 2, 3], [3, 3, 3]], 1);
    assert!(matches!(
        vae.decode(&t, PruneMode::Forced(1.0)),
        Err(VaeError::Budget {
            level: 2,
            active: 192,
            limit: 50
        })
    ));
    let wide = TVoxels {
        z: Tensor::zeros(3, 5),
        ..t
    };
    assert!(matches!(
        vae.decode(&wide, PruneMode::Predicted),
        Err(VaeError::ChannelMismatch {
            expected: 3,
            found: 5
        })
    ));
}

#[test]
fn oracle_bound_on_decoded_vertices() {
    // Teacher decode places each vertex at its finest voxel centroid.
    let cfg = tiny();
    let vae = Vae::new(&cfg);
    let mesh = shapes::icosahedron();
    let ladder = OccupancyLadder::build(&mesh.vertices, cfg.base_resolution, cfg.stages);
    let post = vae.encode_mesh(&mesh, 0).unwrap();
    let d = vae
        .decode(&post.mean(), PruneMode::Teacher(&ladder))
        .unwrap();
    let bound = 3f64.sqrt() / (2.0 * cfg.finest_resolution() as f64);
    for v in &mesh.vertices {
        let best = d
            .vertices
            .iter()
            .map(|p| ((p[0] - v[0]).powi(2) + (p[1] - v[1]).powi(2) + (p[2] - v[2]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(best <= bound + 1e-12, "{best} > {bound}");
    }
    assert!(cfg.finest_resolution() <= MAX_RESOLUTION);
}

#[test]
fn scorer_matches_graph_and_is_symmetric() {
    let cfg = tiny();
    for seed in 0..4 {
        let vae = Vae::new(&RunConfig {
            seed,
            ..cfg.clone()
        });
        let t = latent(&cfg, vec![[0, 0, 0], [2, 1, 3]], seed);
        let mut g = Graph::new();
        let z = g.input(t.z.clone());
        let state = vae
            .decoder
            .forward(
                &mut g,
                &vae.store,
                &t.coords,
                z,
                PruneMode::Forced(1.0),
                10_000,
            )
            .unwrap();
        let (a, b) = vae.connection.project(
            &mut g,
            &vae.store,
            state.vertex_features.unwrap(),
            state.context,
        );
        let n = state.vertex_coords.len();
        let pairs: Vec<(usize, usize)> =
            (0..200).map(|k| ((k * 7) % n, (k * 13 + 5) % n)).collect();
        let logits = vae.connection.pair_logits(&mut g, &vae.store, a, b, &pairs);
        let scorer = vae
            .connection
            .scorer(&vae.store, g.value(a).clone(), g.value(b).clone());
        for (r, &(i, j)) in pairs.iter().enumerate() {
            assert!((g.value(logits).get(r, 0) - scorer.logit(i, j)).abs() < 1e-12);
            assert_eq!(scorer.logit(i, j), scorer.logit(j, i));
        }
    }
}

#[test]
fn zeroed_connection_output_gives_half() {
    let cfg = tiny();
    let mut vae = Vae::new(&cfg);
    for p in vae.store.iter_mut() {
        if p.name.starts_with("conn.out") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let t = latent(&cfg, vec![[1, 1, 1]], 2);
    let d = vae.decode(&t, PruneMode::Forced(1.0)).unwrap();
    let s = d.scorer.unwrap();
    for i in 0..s.vertex_count() {
        for j in 0..s.vertex_count() {
            assert_eq!(s.probability(i, j), 0.5);
        }
    }
}

#[test]
fn loss_reference_values() {
    let cfg = RunConfig {
        gamma_pos: 0.0,
        gamma_neg: 4.0,
        ..tiny()
    };
    let targets = vec![vec![1.0, 0.0], vec![0.0, 1.0, 1.0]];
    let conn_labels = vec![1.0, 0.0];
    let perfect = |t: &[f64]| {
        Tensor::from_vec(
            t.len(),
            1,
            t.iter()
                .map(|&y| if y > 0.5 { 1e3 } else { -1e3 })
                .collect(),
        )
    };

    let mut g = Graph::new();
    let logits: Vec<_> = targets.iter().map(|t| g.input(perfect(t))).collect();
    let conn = g.input(perfect(&conn_labels));
    let mu = g.input(Tensor::zeros(2, 3));
    let lv = g.input(Tensor::zeros(2, 3));
    let (total, bundle) = assemble_losses(
        &mut g,
        &logits,
        &targets,
        Some((conn, &conn_labels)),
        mu,
        lv,
        &cfg,
    );
    assert_eq!(g.value(total).item(), 0.0);
    assert_eq!(bundle.total, 0.0);

    // All-0.5 predictions: every BCE term is ln 2; asymmetric negatives are
    // scaled by 0.5⁴ before the log.
    let mut g = Graph::new();
    let logits: Vec<_> = targets
        .iter()
        .map(|t| g.input(Tensor::zeros(t.len(), 1)))
        .collect();
    let conn = g.input(Tensor::zeros(2, 1));
    let mu = g.input(Tensor::zeros(2, 3));
    let lv = g.input(Tensor::zeros(2, 3));
    let (_, b) = assemble_losses(
        &mut g,
        &logits,
        &targets,
        Some((conn, &conn_labels)),
        mu,
        lv,
        &cfg,
    );
    let ln2 = 2f64.ln();
    assert!((b.prune - ln2).abs() < 1e-15);
    assert!((b.conn - ln2).abs() < 1e-15);
    assert!((b.vtx - (2.0 * ln2 + 0.0625 * ln2) / 3.0).abs() < 1e-15);
    assert_eq!(b.kl, 0.0);
}

#[test]
fn checkpoint_round_trip_and_zero_steps() {
    let cfg = RunConfig { steps: 0, ..tiny() };
    let mut vae = Vae::new(&cfg);
    let init = vae.save();
    let report = train_vae(
        &mut vae,
        &[TrainingMesh::new(shapes::tetrahedron(), &cfg)],
        |_, _, _| false,
    )
    .unwrap();
    assert_eq!(report.steps_run, 0);
    assert_eq!(vae.save(), init);
    let loaded = Vae::load(&cfg, &init).unwrap();
    assert_eq!(loaded.save(), init);
    let other = RunConfig { width: 12, ..cfg };
    assert!(Vae::load(&other, &init).is_err());
}

#[test]
fn short_training_is_deterministic_and_lowers_loss() {
    let cfg = RunConfig {
        steps: 30,
        ..tiny()
    };
    let mesh = TrainingMesh::new(shapes::tetrahedron(), &cfg);
    let run = || {
        let mut vae = Vae::new(&cfg);
        let r = train_vae(&mut vae, std::slice::from_ref(&mesh), |_, _, _| false).unwrap();
        (vae.save(), r.trace)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let head: f64 = ta[..5].iter().map(|b| b.total).sum();
    let tail: f64 = ta[25..].iter().map(|b| b.total).sum();
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn monitor_stops_early() {
    let cfg = RunConfig {
        steps: 10,
        ..tiny()
    };
    let mut vae = Vae::new(&cfg);
    let r = train_vae(
        &mut vae,
        &[TrainingMesh::new(shapes::tetrahedron(), &cfg)],
        |step, _, _| step == 2,
    )
    .unwrap();
    assert_eq!(r.steps_run, 3);
    assert!(r.stopped_early);
}

#[test]
fn perfect_reconstruction_scores_one() {
    // Teacher-decoded vertices with ground-truth edges score 1 everywhere.
    let cfg = tiny();
    let vae = Vae::new(&cfg);
    let mesh = shapes::tetrahedron();
    let post = vae.encode_mesh(&mesh, 0).unwrap();
    let mut rec = vae.reconstruct(&post.mean(), 0.5).unwrap();
    let ladder = OccupancyLadder::build(&mesh.vertices, cfg.base_resolution, cfg.stages);
    let d = vae
        .decode(&post.mean(), PruneMode::Teacher(&ladder))
        .unwrap();
    let rows =
        meshlat_core::vae::vertex_rows(&mesh.vertices, &d.vertex_coords, cfg.finest_resolution());
    rec.edges = mesh
        .edges()
        .into_iter()
        .map(|(a, b)| (rows[a].unwrap(), rows[b].unwrap()))
        .collect();
    rec.decoded = d;
    let s = score_reconstruction(&rec, &mesh, cfg.finest_resolution());
    assert_eq!(
        (s.vertex_recall, s.vertex_precision, s.edge_f1),
        (1.0, 1.0, 1.0)
    );
}
