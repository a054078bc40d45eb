//! Acceptance criteria, run in order on one thread so runtimes are honest.
//! Each criterion prints one `PASS`/`FAIL` line; the test fails if any does.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use meshlat_core::config::RunConfig;
use meshlat_core::flow::{self, FlowExample, FlowModel, Patchify, Stage, VelocityField};
use meshlat_core::geom::Point3;
use meshlat_core::graph_recovery::oracle_roundtrip;
use meshlat_core::mesh_io::{normalize_unit_cube, validate_mesh, write_obj, Mesh};
use meshlat_core::metrics::{
    chamfer_with, evaluate_pair, hausdorff_with, normal_consistency_with, Norm, SampledSurface,
    Strategy,
};
use meshlat_core::nn::gradcheck::grad_check;
use meshlat_core::nn::layers::{
    conv_taps, BlockConfig, CrossBlock, LayerNorm, Linear, SelfBlock, SparseConv3,
};
use meshlat_core::nn::loss::{asymmetric_loss, sigmoid_bce, voxel_noise};
use meshlat_core::nn::{Graph, ParamStore, Tensor};
use meshlat_core::rng;
use meshlat_core::sampling::sample_surface;
use meshlat_core::shapes;
use meshlat_core::sparse_grid::{voxel_of, Coord};
use meshlat_core::vae::{
    assemble_losses, score_reconstruction, train_vae, vae_objective, ConnectionHead, TrainingMesh,
    Vae,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn uniform(seed: u64, stream: u64, index: u64) -> impl FnMut() -> f64 {
    let mut r = rng::stream(seed, stream, index);
    move || rng::uniform(&mut r)
}

/// Random triangle mesh with well-shaped faces, normalized into the unit cube.
fn random_mesh(seed: u64) -> Mesh {
    let mut u = uniform(seed, 100, 0);
    let nv = 4 + (u() * 30.0) as usize;
    let vertices: Vec<Point3> = (0..nv).map(|_| [u(), u(), u()]).collect();
    let mut faces = Vec::new();
    let nf = 2 + (u() * 40.0) as usize;
    while faces.len() < nf {
        let f = [
            (u() * nv as f64) as usize,
            (u() * nv as f64) as usize,
            (u() * nv as f64) as usize,
        ];
        if f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
            faces.push(f);
        }
    }
    normalize_unit_cube(&Mesh::new(vertices, faces)).unwrap().0
}

fn c1_vdf_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut points = 0;
    for seed in 0..100 {
        let mesh = random_mesh(seed);
        let s = sample_surface(&mesh, 500, seed).unwrap();
        for (k, p) in s.points.iter().enumerate() {
            let f = mesh.faces[s.face_ids[k]];
            for c in 0..3 {
                for a in 0..3 {
                    worst =
                        worst.max((p[a] + s.displacements[k][c][a] - mesh.vertices[f[c]][a]).abs());
                }
            }
            points += 1;
        }
    }
    outcome(
        worst <= 1e-6,
        format!("{points} points, max |p + d_c − v_c| = {worst:.2e} (tol 1e-6)"),
    )
}

/// Meshes whose vertices sit on a coarse jittered lattice, so every pair of
/// vertices is at least two finest voxels apart along some axis.
fn separated_mesh(seed: u64, finest: u32) -> Option<Mesh> {
    let mut u = uniform(seed, 101, 0);
    let mut cells = BTreeSet::new();
    let nv = 6 + (u() * 20.0) as usize;
    while cells.len() < nv {
        cells.insert([(u() * 8.0) as u32, (u() * 8.0) as u32, (u() * 8.0) as u32]);
    }
    let cells: Vec<[u32; 3]> = cells.into_iter().collect();
    let vertices: Vec<Point3> = cells
        .iter()
        .map(|c| c.map(|k| (k as f64 + 0.25 + 0.5 * u()) / 8.0))
        .collect();
    let mut faces = Vec::new();
    for i in 0..nv.saturating_sub(2) {
        faces.push([i, i + 1, i + 2]);
    }
    let mesh = normalize_unit_cube(&Mesh::new(vertices, faces)).ok()?.0;
    let vox: Vec<Coord> = mesh.vertices.iter().map(|&v| voxel_of(v, finest)).collect();
    for i in 0..vox.len() {
        for j in i + 1..vox.len() {
            let sep = (0..3).map(|a| vox[i][a].abs_diff(vox[j][a])).max().unwrap();
            if sep < 2 {
                return None;
            }
        }
    }
    (validate_mesh(&mesh).degenerate_face_count == 0).then_some(mesh)
}

fn c2_oracle_bound() -> Outcome {
    let cfg = RunConfig {
        base_resolution: 16,
        stages: 3,
        ..RunConfig::default()
    };
    let bound = 3f64.sqrt() / 256.0;
    let mut meshes = 0;
    let mut worst = 0.0f64;
    let mut missing = 0;
    let mut seed = 0;
    while meshes < 20 {
        seed += 1;
        let Some(mesh) = separated_mesh(seed, cfg.finest_resolution()) else {
            continue;
        };
        let r = oracle_roundtrip(&mesh, &cfg);
        worst = worst.max(r.max_vertex_error);
        missing += r.missing_faces.len();
        meshes += 1;
    }
    outcome(
        worst <= bound && missing == 0,
        format!("{meshes} meshes, max vertex error {worst:.3e} (bound {bound:.3e}), missing GT faces {missing}"),
    )
}

fn gradient_suite() -> Vec<(String, f64)> {
    let mut results = Vec::new();
    let x = Tensor::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.7).sin()).collect());
    let ctx = Tensor::from_vec(2, 4, (0..8).map(|i| (i as f64 * 0.3).cos()).collect());
    let block = BlockConfig {
        width: 4,
        heads: 2,
        mlp_ratio: 2,
        prenorm: true,
    };

    let mut s = ParamStore::new();
    let lin = Linear::new(&mut s, "lin", 4, 3, 1);
    let r = grad_check(
        &mut s,
        |g, st| {
            let i = g.input(x.clone());
            let y = lin.forward(g, st, i);
            g.mse(y, Tensor::full(3, 3, 0.2))
        },
        1e-4,
        64,
    );
    results.push(("Linear".into(), r.max_rel_error));

    let mut s = ParamStore::new();
    let ln = LayerNorm::new(&mut s, "ln", 4);
    s.iter_mut().for_each(|p| {
        p.value
            .data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v += 0.1 * i as f64)
    });
    let r = grad_check(
        &mut s,
        |g, st| {
            let i = g.input(x.clone());
            let y = ln.forward(g, st, i);
            g.mse(y, Tensor::full(3, 4, 0.3))
        },
        1e-4,
        64,
    );
    results.push(("LayerNorm".into(), r.max_rel_error));

    for prenorm in [true, false] {
        let b = BlockConfig { prenorm, ..block };
        let mut s = ParamStore::new();
        let sb = SelfBlock::new(&mut s, "self", b, 2);
        let r = grad_check(
            &mut s,
            |g, st| {
                let i = g.input(x.clone());
                let y = sb.forward(g, st, i);
                g.mse(y, Tensor::zeros(3, 4))
            },
            1e-4,
            64,
        );
        results.push((format!("SelfBlock(prenorm={prenorm})"), r.max_rel_error));
        let mut s = ParamStore::new();
        let cb = CrossBlock::new(&mut s, "cross", b, 3);
        let r = grad_check(
            &mut s,
            |g, st| {
                let i = g.input(x.clone());
                let c = g.input(ctx.clone());
                let y = cb.forward(g, st, i, c);
                g.mse(y, Tensor::zeros(3, 4))
            },
            1e-4,
            64,
        );
        results.push((format!("CrossBlock(prenorm={prenorm})"), r.max_rel_error));
    }

    let mut s = ParamStore::new();
    let conv = SparseConv3::new(&mut s, "conv", 4, 2, 4);
    let taps = conv_taps(&[[0, 0, 0], [1, 0, 0], [1, 1, 0]]);
    let r = grad_check(
        &mut s,
        |g, st| {
            let i = g.input(x.clone());
            let y = conv.forward(g, st, i, &taps);
            g.mse(y, Tensor::full(3, 2, 0.1))
        },
        1e-4,
        128,
    );
    results.push(("SparseConv3".into(), r.max_rel_error));

    let cfg = RunConfig {
        width: 4,
        heads: 2,
        ..RunConfig::default()
    };
    let mut s = ParamStore::new();
    let head = ConnectionHead::new(&mut s, &cfg, 5);
    let r = grad_check(
        &mut s,
        |g, st| {
            let v = g.input(x.clone());
            let c = g.input(ctx.clone());
            let (a, b) = head.project(g, st, v, c);
            let l = head.pair_logits(g, st, a, b, &[(0, 1), (1, 2), (2, 0)]);
            g.bce_with_logits(l, &[1.0, 0.0, 1.0])
        },
        1e-4,
        64,
    );
    results.push(("ConnectionHead".into(), r.max_rel_error));

    // VAE pipeline on a two-voxel toy: a flat strip inside voxels (0,0,0) and (1,0,0) at R₀ = 2.
    let vcfg = RunConfig {
        base_resolution: 2,
        stages: 1,
        channels: 2,
        pointnet_width: 4,
        width: 4,
        heads: 2,
        encoder_blocks: 1,
        frequencies: 1,
        samples: 24,
        beta: 0.5,
        ..RunConfig::default()
    };
    let strip = Mesh::new(
        vec![
            [0.1, 0.1, 0.1],
            [0.9, 0.1, 0.1],
            [0.9, 0.4, 0.1],
            [0.1, 0.4, 0.1],
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    );
    let mut vae = Vae::new(&vcfg);
    let features = vae.features(&strip, 1).unwrap();
    let tm = TrainingMesh::new(strip, &vcfg);
    assert_eq!(vae.encode(&features).unwrap().coords.len(), 2);
    let frozen = vae.clone();
    let r = grad_check(
        &mut vae.store,
        |g, st| vae_objective(&frozen, st, g, &features, &tm, 3).unwrap().0,
        1e-4,
        48,
    );
    results.push(("VAE objective (2 voxels)".into(), r.max_rel_error));

    // Flow pipeline on a one-voxel toy.
    let fcfg = RunConfig {
        channels: 3,
        flow_width: 4,
        flow_heads: 2,
        flow_blocks: 2,
        frequencies: 1,
        ..RunConfig::default()
    };
    let mut fm = FlowModel::new(Stage::Topology, &fcfg);
    let ex = FlowExample {
        coords: vec![[3, 1, 2]],
        positions: vec![[0.2, 0.1, 0.15]],
        z0: Tensor::from_rows(&[vec![0.4, -0.3, 0.9]]),
        cv: 2.0,
    };
    let eps = voxel_noise(&ex.coords, 3, 1, 6);
    let net = fm.net.clone();
    let r = grad_check(
        &mut fm.store,
        |g, st| flow::tflow_loss(g, &net, st, &ex, &eps, 0.37),
        1e-4,
        48,
    );
    results.push(("Flow objective (1 voxel)".into(), r.max_rel_error));
    results
}

fn c3_gradients() -> Outcome {
    let results = gradient_suite();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let failing: Vec<_> = results
        .iter()
        .filter(|r| !(r.1 < 1e-3))
        .map(|r| r.0.clone())
        .collect();
    outcome(
        failing.is_empty(),
        format!(
            "{} checks, worst relative error {worst:.2e} (tol 1e-3){}",
            results.len(),
            if failing.is_empty() {
                String::new()
            } else {
                format!("; failing {failing:?}")
            }
        ),
    )
}

fn c4_loss_sanity() -> Outcome {
    let cfg = RunConfig::default();
    let targets = vec![
        vec![1.0, 0.0, 1.0],
        vec![1.0, 1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 1.0, 0.0],
    ];
    let conn_labels = vec![1.0, 0.0, 0.0];
    let perfect = |t: &[f64]| {
        Tensor::from_vec(
            t.len(),
            1,
            t.iter()
                .map(|&y| if y > 0.5 { 800.0 } else { -800.0 })
                .collect(),
        )
    };
    let mut g = Graph::new();
    let logits: Vec<_> = targets.iter().map(|t| g.input(perfect(t))).collect();
    let conn = g.input(perfect(&conn_labels));
    let mu = g.input(Tensor::zeros(4, cfg.channels));
    let lv = g.input(Tensor::zeros(4, cfg.channels));
    let (total, _) = assemble_losses(
        &mut g,
        &logits,
        &targets,
        Some((conn, &conn_labels)),
        mu,
        lv,
        &cfg,
    );
    let l_perfect = g.value(total).item();

    let mut u = uniform(4, 102, 0);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let logit = (u() - 0.5) * 40.0;
        let y = if u() < 0.5 { 0.0 } else { 1.0 };
        worst = worst.max((asymmetric_loss(logit, y, 0.0, 0.0).0 - sigmoid_bce(logit, y).0).abs());
    }
    let logit = (0.2f64 / 0.8).ln();
    let neg = asymmetric_loss(logit, 0.0, 0.0, 4.0).0;
    let pass = l_perfect == 0.0 && worst <= 1e-9 && (neg - 3.57e-4).abs() <= 1e-6;
    outcome(pass, format!("L_total(perfect) = {l_perfect}, max |ASL(γ=0) − BCE| = {worst:.1e}, ASL_neg(0.2; γ₋=4) = {neg:.4e}"))
}

fn c5_symmetry() -> Outcome {
    let cfg = RunConfig {
        width: 8,
        heads: 2,
        ..RunConfig::default()
    };
    let mut probes = 0;
    let mut max_gap = 0.0f64;
    for w in 0..100u64 {
        let mut s = ParamStore::new();
        let head = ConnectionHead::new(&mut s, &cfg, w);
        let mut u = uniform(w, 103, 0);
        let a = Tensor::from_vec(10, 8, (0..80).map(|_| 4.0 * (u() - 0.5)).collect());
        let b = Tensor::from_vec(10, 8, (0..80).map(|_| 4.0 * (u() - 0.5)).collect());
        let scorer = head.scorer(&s, a.clone(), b.clone());
        let mut pairs = Vec::new();
        for _ in 0..100 {
            let (i, j) = ((u() * 10.0) as usize, (u() * 10.0) as usize);
            pairs.push((i, j));
            pairs.push((j, i));
        }
        let mut g = Graph::new();
        let (av, bv) = (g.input(a), g.input(b));
        let l = head.pair_logits(&mut g, &s, av, bv, &pairs);
        for k in 0..100 {
            let (i, j) = pairs[2 * k];
            let graph_gap = (g.value(l).get(2 * k, 0) - g.value(l).get(2 * k + 1, 0)).abs();
            let scorer_gap = (scorer.logit(i, j) - scorer.logit(j, i)).abs();
            max_gap = max_gap.max(graph_gap).max(scorer_gap);
            probes += 1;
        }
    }
    outcome(
        max_gap == 0.0,
        format!("{probes} probes, max |ê_ij − ê_ji| = {max_gap:e}"),
    )
}

fn recon_scores(vae: &Vae, mesh: &Mesh) -> (f64, f64) {
    let post = vae.encode_mesh(mesh, vae.cfg.seed).unwrap();
    let rec = vae
        .reconstruct(&post.mean(), vae.cfg.edge_threshold)
        .unwrap();
    let s = score_reconstruction(&rec, mesh, vae.cfg.finest_resolution());
    (s.vertex_recall, s.edge_f1)
}

/// Trains until recall and F1 reach `target` (checked every 50 steps).
fn overfit_vae(cfg: &RunConfig, meshes: &[Mesh], target: f64) -> (Vae, usize, (f64, f64)) {
    let mut vae = Vae::new(cfg);
    let tms: Vec<_> = meshes
        .iter()
        .map(|m| TrainingMesh::new(m.clone(), cfg))
        .collect();
    let mut last = (0.0, 0.0);
    let report = train_vae(&mut vae, &tms, |step, v, _| {
        if step % 50 != 49 {
            return false;
        }
        last = recon_scores(v, &meshes[0]);
        last.0 >= target && last.1 >= target
    })
    .unwrap();
    (vae, report.steps_run, last)
}

fn c6_vae_overfit() -> Outcome {
    let t = Instant::now();
    let mesh = shapes::icosahedron();
    let cfg = RunConfig {
        steps: 5000,
        ..RunConfig::default()
    };
    let (vae, steps, _) = overfit_vae(&cfg, std::slice::from_ref(&mesh), 0.9);
    let (recall, f1) = recon_scores(&vae, &mesh);
    let elapsed = t.elapsed();
    outcome(
        recall >= 0.9 && f1 >= 0.9 && steps <= 5000 && elapsed <= Duration::from_secs(600),
        format!(
            "icosahedron, {steps} steps, vertex recall {recall:.3}, edge F1 {f1:.3}, {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

struct Oracle(Tensor);

impl VelocityField for Oracle {
    fn velocity(&self, _: &Tensor, _: f64) -> Tensor {
        self.0.clone()
    }
}

fn euler_oracle_gap() -> f64 {
    let coords: Vec<Coord> = (0..20).map(|i| [i, i % 3, 7]).collect();
    let z0 = voxel_noise(&coords, 4, 11, 7);
    let eps = voxel_noise(&coords, 4, 12, 7);
    let mut v = eps.clone();
    v.add_scaled(&z0, -1.0);
    let mut gap = 0.0f64;
    for steps in [1, 5, 25] {
        let z = flow::euler_sample(&Oracle(v.clone()), eps.clone(), steps).unwrap();
        for (a, b) in z.data().iter().zip(z0.data()) {
            gap = gap.max((a - b).abs());
        }
    }
    gap
}

fn c7_flow_end_to_end() -> Outcome {
    let mesh = shapes::cuboid([1.0, 0.3, 0.3]);
    let cfg = RunConfig {
        base_resolution: 8,
        steps: 2000,
        flow_steps: 2000,
        ..RunConfig::default()
    };
    let (vae, _, _) = overfit_vae(&cfg, std::slice::from_ref(&mesh), 0.95);
    let ex = flow::topology_example(&vae, &mesh, cfg.seed).unwrap();
    let occupied: BTreeSet<Coord> = ex.coords.iter().copied().collect();

    let mut structure = FlowModel::new(Stage::Structure, &cfg);
    structure
        .train(
            &[flow::structure_example(
                &occupied,
                Patchify::from_config(&cfg),
            )],
            |_, _, _| false,
        )
        .unwrap();
    let iou = flow::iou(
        &flow::sample_structure(&structure, cfg.sample_steps, 1).unwrap(),
        &occupied,
    );

    let mut topology = FlowModel::new(Stage::Topology, &cfg);
    topology.train(&[ex], |_, _, _| false).unwrap();
    let cd = match flow::generate_mesh(
        &structure,
        &topology,
        &vae,
        mesh.vertices.len(),
        cfg.sample_steps,
        0,
        cfg.edge_threshold,
    ) {
        Ok(g) => evaluate_pair(&g.reconstruction.mesh, &mesh, 10_000, 0)
            .map(|r| r.cd_l2)
            .unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    };
    let gap = euler_oracle_gap();
    outcome(
        iou >= 0.95 && cd < 0.02 && gap <= 1e-12,
        format!("structure IoU {iou:.3} (≥ 0.95), generated CD(L2) {cd:.4} (< 0.02), Euler oracle gap {gap:.1e}"),
    )
}

fn c8_conditioning() -> Outcome {
    let meshes: Vec<Mesh> = [7, 14, 28].iter().map(|&n| shapes::plane_grid(n)).collect();
    let cfg = RunConfig {
        base_resolution: 8,
        steps: 300,
        flow_steps: 1000,
        ..RunConfig::default()
    };
    let mut vae = Vae::new(&cfg);
    let tms: Vec<_> = meshes
        .iter()
        .map(|m| TrainingMesh::new(m.clone(), &cfg))
        .collect();
    train_vae(&mut vae, &tms, |_, _, _| false).unwrap();
    let examples: Vec<_> = meshes
        .iter()
        .map(|m| flow::topology_example(&vae, m, cfg.seed).unwrap())
        .collect();
    let occupied = flow::surface_occupancy(&meshes[0], &cfg, cfg.seed).unwrap();
    let mut structure = FlowModel::new(Stage::Structure, &cfg);
    structure
        .train(
            &[flow::structure_example(
                &occupied,
                Patchify::from_config(&cfg),
            )],
            |_, _, _| false,
        )
        .unwrap();
    let mut topology = FlowModel::new(Stage::Topology, &cfg);
    topology.train(&examples, |_, _, _| false).unwrap();
    let counts: Vec<usize> = [50, 200, 800]
        .iter()
        .map(|&n| {
            flow::generate_mesh(
                &structure,
                &topology,
                &vae,
                n,
                cfg.sample_steps,
                0,
                cfg.edge_threshold,
            )
            .map(|g| g.reconstruction.mesh.vertices.len())
            .unwrap_or(0)
        })
        .collect();
    let increasing = counts.windows(2).all(|w| w[0] < w[1]);
    outcome(
        increasing,
        format!("N_v = [50, 200, 800] → generated vertices {counts:?}"),
    )
}

fn c9_metrics() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut u = uniform(seed, 104, 0);
        let (na, nb) = (1 + (u() * 511.0) as usize, 1 + (u() * 511.0) as usize);
        let mut cloud = |n: usize| -> SampledSurface {
            let pts: Vec<Point3> = (0..n).map(|_| [u(), u(), u()]).collect();
            let nrm: Vec<Point3> = (0..n)
                .map(|_| {
                    let v = [u() - 0.5, u() - 0.5, u() - 0.5];
                    let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-9);
                    v.map(|c| c / l)
                })
                .collect();
            SampledSurface::new(pts, nrm).unwrap()
        };
        let (a, b) = (cloud(na), cloud(nb));
        for norm in [Norm::L1, Norm::L2] {
            let d = chamfer_with(&a.points, &b.points, norm, Strategy::Grid).unwrap()
                - chamfer_with(&a.points, &b.points, norm, Strategy::BruteForce).unwrap();
            worst = worst.max(d.abs());
        }
        let d = hausdorff_with(&a.points, &b.points, Strategy::Grid).unwrap()
            - hausdorff_with(&a.points, &b.points, Strategy::BruteForce).unwrap();
        worst = worst.max(d.abs());
        let d = normal_consistency_with(&a, &b, Strategy::Grid).unwrap()
            - normal_consistency_with(&a, &b, Strategy::BruteForce).unwrap();
        worst = worst.max(d.abs());
    }
    let s = meshlat_core::metrics::surface_of(&shapes::icosahedron(), 2000, 3).unwrap();
    let mut identity = true;
    for strategy in [Strategy::Grid, Strategy::BruteForce] {
        identity &= chamfer_with(&s.points, &s.points, Norm::L1, strategy).unwrap() == 0.0;
        identity &= chamfer_with(&s.points, &s.points, Norm::L2, strategy).unwrap() == 0.0;
        identity &= hausdorff_with(&s.points, &s.points, strategy).unwrap() == 0.0;
        identity &= normal_consistency_with(&s, &s, strategy).unwrap() == 1.0;
    }
    outcome(
        worst <= 1e-12 && identity,
        format!("100 pairs, max |grid − brute| = {worst:.1e}, identity exact: {identity}"),
    )
}

const CLI_CONFIG: &str = "\
base_resolution = 4
stages = 2
channels = 3
pointnet_width = 8
width = 8
heads = 2
encoder_blocks = 1
frequencies = 2
samples = 512
steps = 300
flow_width = 8
flow_blocks = 1
flow_steps = 200
structure_patch = 2
structure_width = 16
";

const CLI_RUNS: &[&[&str]] = &[
    &[
        "oracle-roundtrip",
        "--mesh",
        "m.obj",
        "--config",
        "c.toml",
        "--report",
        "oracle.txt",
    ],
    &[
        "train-vae",
        "--mesh",
        "m.obj",
        "--config",
        "c.toml",
        "--out",
        "vae.ckpt",
    ],
    &[
        "encode", "--mesh", "m.obj", "--ckpt", "vae.ckpt", "--config", "c.toml", "--out",
        "lat.ltv", "--seed", "3",
    ],
    &[
        "decode", "--latent", "lat.ltv", "--ckpt", "vae.ckpt", "--config", "c.toml", "--out",
        "dec.obj",
    ],
    &[
        "train-flow",
        "--stage",
        "structure",
        "--mesh",
        "m.obj",
        "--config",
        "c.toml",
        "--out",
        "s.ckpt",
    ],
    &[
        "train-flow",
        "--stage",
        "topology",
        "--mesh",
        "m.obj",
        "--vae",
        "vae.ckpt",
        "--config",
        "c.toml",
        "--out",
        "t.ckpt",
    ],
    &[
        "generate",
        "--vae",
        "vae.ckpt",
        "--structure",
        "s.ckpt",
        "--topology",
        "t.ckpt",
        "--vertices",
        "4",
        "--config",
        "c.toml",
        "--out",
        "gen.obj",
        "--seed",
        "5",
    ],
    &[
        "eval", "--pred", "m.obj", "--gt", "m.obj", "--report", "eval.txt",
    ],
];

/// Runs every CLI command in `dir`; returns per-command status and output plus every file's bytes.
fn cli_session(dir: &Path) -> (Vec<(Option<i32>, Vec<u8>, Vec<u8>)>, Vec<(String, Vec<u8>)>) {
    std::fs::write(dir.join("m.obj"), write_obj(&shapes::tetrahedron())).unwrap();
    std::fs::write(dir.join("c.toml"), CLI_CONFIG).unwrap();
    let runs = CLI_RUNS
        .iter()
        .map(|args| {
            let out = Command::new(env!("CARGO_BIN_EXE_meshlat"))
                .args(*args)
                .current_dir(dir)
                .output()
                .unwrap();
            (out.status.code(), out.stdout, out.stderr)
        })
        .collect();
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    (runs, files)
}

fn c10_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (runs_a, files_a) = cli_session(a.path());
    let (runs_b, files_b) = cli_session(b.path());
    let statuses: Vec<_> = runs_a.iter().map(|r| r.0.unwrap_or(-1)).collect();
    let same = runs_a == runs_b && files_a == files_b;
    outcome(
        same,
        format!(
            "{} commands (exit codes {statuses:?}), {} artifacts byte-identical: {same}",
            runs_a.len(),
            files_a.len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome, Option<u64>); 10] = [
        ("VDF identity", c1_vdf_identity, Some(10)),
        ("oracle round-trip bound", c2_oracle_bound, Some(30)),
        ("gradient suite", c3_gradients, Some(60)),
        ("loss sanity", c4_loss_sanity, None),
        ("connection-head symmetry", c5_symmetry, None),
        ("VAE overfit", c6_vae_overfit, Some(600)),
        ("flow overfit + generation", c7_flow_end_to_end, None),
        ("vertex-count conditioning", c8_conditioning, None),
        ("metrics oracle equivalence", c9_metrics, None),
        ("CLI determinism", c10_determinism, None),
    ];
    let mut failed = Vec::new();
    for (i, (name, run, limit)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let o = run();
        let secs = t.elapsed().as_secs_f64();
        let in_time = limit.is_none_or(|l| secs < l as f64);
        let pass = o.pass && in_time;
        let budget = limit.map(|l| format!(" / {l}s")).unwrap_or_default();
        println!(
            "criterion {:>2} {:<28} {}: {} [{secs:.1}s{budget}]",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
