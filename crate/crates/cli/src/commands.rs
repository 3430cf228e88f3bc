use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use mreit::fem::NodalField;
use mreit::harmonic_bz::{reconstruct_bz, BzConfig, ReconstructionResult, SingularMode, Status};
use mreit::io;
use mreit::mesh::{build_structured_mesh, region_masks, Mesh};
use mreit::phantom::{Constant, Phantom, PixelPhantom, SmoothBumps};
use mreit::rbz::{reconstruct_rbz, relative_error, relative_error_on, RbzConfig, TrustCriterion};
use mreit::reduced_basis::DEFAULT_DROP_TOL;
use mreit::render::rasterize;
use mreit::sparse::SolverOptions;
use mreit::synth::{add_relative_noise, synthesize_laplacian_bz, synthesize_refined};
use mreit::{selftest, MreitError};

use crate::manifest::RunManifest;
use crate::{
    Algorithm, Cli, CliError, Command, GlobalArgs, MetricsArgs, PhantomKind, ReconstructArgs, RenderArgs, SingularArg,
    SynthArgs, Trust,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    if cli.global.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Synth(args) => synth(&cli.global, args),
        Command::Reconstruct(args) => reconstruct(&cli.global, args),
        Command::Render(args) => render(&cli.global, args),
        Command::Metrics(args) => metrics(&cli.global, args),
        Command::Selftest => run_selftest(),
    }
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| {
        CliError::Core(MreitError::Io {
            path: dir.to_path_buf(),
            source,
        })
    })
}

/// The explicit `--mesh`, or `mesh.mesh` next to `primary`.
fn mesh_path(global: &GlobalArgs, primary: &Path) -> PathBuf {
    global
        .mesh
        .clone()
        .unwrap_or_else(|| primary.parent().unwrap_or(Path::new(".")).join("mesh.mesh"))
}

fn finish(manifest: &mut RunManifest, path: &Path, start: Instant) -> Result<()> {
    manifest.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    manifest.write(path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn synth(global: &GlobalArgs, args: &SynthArgs) -> Result<()> {
    let start = Instant::now();
    if !(args.noise >= 0.0) {
        return Err(CliError::Usage("--noise must be non-negative".into()));
    }
    create_out_dir(&global.out_dir)?;
    let mut manifest = RunManifest::new(
        "synth",
        json!({
            "n": args.n, "phantom": format!("{:?}", args.phantom), "pixels": args.pixels,
            "offset": args.offset, "value": args.value, "levels": args.levels,
            "inverse_crime": args.inverse_crime, "noise": args.noise, "seed": global.seed,
            "mu0": args.mu0, "halfwidth": args.halfwidth,
        }),
    );
    let mesh = match &global.mesh {
        Some(p) => {
            manifest.input(p)?;
            io::read_mesh(p)?
        }
        None => build_structured_mesh(args.n)?.tag_boundaries(args.halfwidth)?,
    };
    let phantom: Box<dyn Phantom> = match args.phantom {
        PhantomKind::SheppLogan => Box::new(PixelPhantom::shepp_logan(args.pixels, args.pixels, args.offset)?),
        PhantomKind::Smooth => Box::new(SmoothBumps::low_contrast()),
        PhantomKind::Constant => {
            if !(args.value > 0.0) {
                return Err(CliError::Usage("--value must be positive".into()));
            }
            Box::new(Constant(args.value))
        }
    };
    let sigma_star = phantom.nodal(&mesh);
    let data = if args.inverse_crime {
        synthesize_laplacian_bz(&mesh, &sigma_star, args.mu0)?
    } else {
        synthesize_refined(&mesh, phantom.as_ref(), args.levels, args.mu0)?
    };

    let out = &global.out_dir;
    let mut outputs = vec![
        out.join("mesh.mesh"),
        out.join("sigma_star.field"),
        out.join("data.mrdata"),
    ];
    io::write_mesh(&outputs[0], &mesh)?;
    io::write_field(&outputs[1], &sigma_star)?;
    io::write_data(&outputs[2], &data)?;
    if args.noise > 0.0 {
        let noisy = add_relative_noise(&data, args.noise, global.seed)?;
        let p = out.join("data_noisy.mrdata");
        io::write_data(&p, &noisy)?;
        outputs.push(p);
    }
    for p in &outputs {
        manifest.output(p)?;
        println!("wrote {}", p.display());
    }
    finish(&mut manifest, &out.join("manifest_synth.json"), start)
}

fn bz_config(global: &GlobalArgs, args: &ReconstructArgs) -> Result<BzConfig> {
    if !(args.sigma_b > 0.0) {
        return Err(CliError::Usage("--sigma-b must be positive".into()));
    }
    Ok(BzConfig {
        epsilon: args.epsilon,
        mu0: args.mu0,
        max_iterations: args.max_iter,
        det_floor: args.det_floor,
        singular_mode: match args.singular {
            SingularArg::Error => SingularMode::Error,
            SingularArg::Zero => SingularMode::ZeroOut,
        },
        boundary_log_value: args.sigma_b.ln(),
        solver: SolverOptions {
            tol: args.solver_tol,
            ..SolverOptions::default()
        },
        parallel_drives: global.threads > 1,
    })
}

fn reconstruct(global: &GlobalArgs, args: &ReconstructArgs) -> Result<()> {
    let start = Instant::now();
    let bz_cfg = bz_config(global, args)?;
    let algo = match args.algo {
        Algorithm::Bz => "bz",
        Algorithm::Rbz => "rbz",
    };
    let mut manifest = RunManifest::new(
        "reconstruct",
        json!({
            "algo": algo, "epsilon": args.epsilon, "epsilon1": args.epsilon1, "epsilon2": args.epsilon2,
            "trust": format!("{:?}", args.trust), "max_iter": args.max_iter, "mu0": args.mu0,
            "sigma_b": args.sigma_b, "det_floor": args.det_floor, "singular": format!("{:?}", args.singular),
            "r_inner": args.r_inner, "solver_tol": args.solver_tol, "threads": global.threads,
        }),
    );
    let mesh_file = mesh_path(global, &args.data);
    let mesh = io::read_mesh(&mesh_file)?;
    let data = io::read_data(&args.data)?;
    manifest.input(&mesh_file)?;
    manifest.input(&args.data)?;
    let masks = region_masks(
        &mesh,
        args.r_inner,
        args.r_inner.min(mreit::mesh::DEFAULT_CONTRAST_RADIUS),
    )?;
    create_out_dir(&global.out_dir)?;
    let out = &global.out_dir;

    let (result, rbz) = match args.algo {
        Algorithm::Bz => (reconstruct_bz(&mesh, &masks, &data, &bz_cfg)?, None),
        Algorithm::Rbz => {
            let cfg = RbzConfig {
                epsilon1: args.epsilon1,
                epsilon2: args.epsilon2,
                trust: match args.trust {
                    Trust::Min => TrustCriterion::MinEstimator,
                    Trust::Max => TrustCriterion::MaxEstimator,
                },
                drop_tol: DEFAULT_DROP_TOL,
                bz: bz_cfg,
            };
            let r = reconstruct_rbz(&mesh, &masks, &data, &cfg)?;
            (r.result.clone(), Some(r))
        }
    };

    let sigma_path = out.join(format!("sigma_{algo}.field"));
    let result_path = out.join(format!("result_{algo}.txt"));
    let csv_path = out.join(format!("iterations_{algo}.csv"));
    io::write_field(&sigma_path, &result.sigma)?;
    let kv = match &rbz {
        Some(r) => io::rbz_manifest(r),
        None => io::result_manifest(algo, &result),
    };
    kv.write(&result_path)?;
    io::write_iterations_csv(&csv_path, &result.history, rbz.as_ref())?;
    let mut outputs = vec![sigma_path, result_path, csv_path];
    if let (Some(r), true) = (&rbz, args.save_spaces) {
        for (j, space) in r.spaces.iter().enumerate() {
            let p = out.join(format!("space_drive{}.mrspace", j + 1));
            io::write_space(&p, &format!("space_drive{}", j + 1), space)?;
            outputs.push(p);
        }
    }
    for p in &outputs {
        manifest.output(p)?;
        println!("wrote {}", p.display());
    }
    print_summary(algo, &result, rbz.as_ref());
    manifest.status = result.status.as_str().into();
    finish(
        &mut manifest,
        &out.join(format!("manifest_reconstruct_{algo}.json")),
        start,
    )?;
    match result.status {
        Status::Converged => Ok(()),
        Status::MaxIterations => Err(CliError::MaxIterations(format!(
            "no convergence within {} iterations (last difference {:e})",
            result.iterations,
            result.final_diff()
        ))),
    }
}

fn print_summary(algo: &str, r: &ReconstructionResult, rbz: Option<&mreit::rbz::RbzResult>) {
    println!(
        "{algo}: status={} iterations={} full_solves={} final_diff={:e} wall_ms={:.1}",
        r.status.as_str(),
        r.iterations,
        r.forward_solves,
        r.final_diff(),
        r.wall_ms
    );
    if let Some(x) = rbz {
        println!(
            "rbz: basis_updates={} N1={} N2={}",
            x.basis_updates, x.dims[0], x.dims[1]
        );
    }
}

fn render(global: &GlobalArgs, args: &RenderArgs) -> Result<()> {
    let start = Instant::now();
    let range = match args.range.as_deref() {
        Some([lo, hi]) => Some((*lo, *hi)),
        Some(_) => return Err(CliError::Usage("--range takes two values".into())),
        None => None,
    };
    let mut manifest = RunManifest::new(
        "render",
        json!({ "width": args.width, "height": args.height, "range": args.range }),
    );
    let mesh_file = mesh_path(global, &args.field);
    let mesh = io::read_mesh(&mesh_file)?;
    let field = io::read_field(&args.field)?;
    manifest.input(&mesh_file)?;
    manifest.input(&args.field)?;
    let (image, degenerate) = rasterize(&mesh, &field, args.width, args.height, range)?;
    if degenerate {
        eprintln!("warning: degenerate value range, writing uniform mid-gray");
    }
    create_out_dir(&global.out_dir)?;
    let out = args.out.clone().unwrap_or_else(|| {
        let stem = args
            .field
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        global.out_dir.join(format!("{stem}.pgm"))
    });
    image.write_pgm(&out)?;
    manifest.output(&out)?;
    println!("wrote {}", out.display());
    finish(&mut manifest, &global.out_dir.join("manifest_render.json"), start)
}

#[derive(Debug, Serialize)]
struct PairError {
    field: PathBuf,
    reference: PathBuf,
    relative_error: f64,
}

#[derive(Debug, Serialize)]
struct MetricsOutput {
    restrict: Option<f64>,
    pairs: Vec<PairError>,
}

fn metrics(global: &GlobalArgs, args: &MetricsArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("metrics", json!({ "restrict": args.restrict }));
    let mut paths: Vec<PathBuf> = args.fields.clone();
    if let Some(r) = &args.reference {
        paths.push(r.clone());
    }
    let fields = paths
        .iter()
        .map(|p| {
            manifest.input(p)?;
            io::read_field(p)
        })
        .collect::<std::result::Result<Vec<NodalField>, MreitError>>()?;
    let n = fields[0].len();
    if let Some(i) = fields.iter().position(|f| f.len() != n) {
        return Err(MreitError::MeshMismatch(format!(
            "{} has {} values, {} has {n}",
            paths[i].display(),
            fields[i].len(),
            paths[0].display()
        ))
        .into());
    }
    let mesh: Option<(Mesh, Vec<bool>)> = match args.restrict {
        Some(r) => {
            let mesh_file = mesh_path(global, &paths[0]);
            let mesh = io::read_mesh(&mesh_file)?;
            manifest.input(&mesh_file)?;
            fields[0].check_len(&mesh)?;
            if !(r > 0.0) {
                return Err(CliError::Usage("--restrict must be positive".into()));
            }
            let mask = (0..mesh.num_triangles())
                .map(|t| {
                    let [x, y] = mesh.centroid(t);
                    x.hypot(y) < r
                })
                .collect();
            Some((mesh, mask))
        }
        None => None,
    };
    let rel = |a: &NodalField, b: &NodalField| match &mesh {
        Some((m, mask)) => relative_error_on(m, mask, a, b),
        None => relative_error(a, b),
    };
    let mut pairs = Vec::new();
    let compare = |i: usize, j: usize| PairError {
        field: paths[i].clone(),
        reference: paths[j].clone(),
        relative_error: rel(&fields[i], &fields[j]),
    };
    if args.reference.is_some() {
        let r = paths.len() - 1;
        pairs.extend((0..r).map(|i| compare(i, r)));
    } else {
        for i in 0..paths.len() {
            for j in 0..paths.len() {
                if i != j {
                    pairs.push(compare(i, j));
                }
            }
        }
    }
    for p in &pairs {
        println!(
            "{} vs {}: {:e}",
            p.field.display(),
            p.reference.display(),
            p.relative_error
        );
    }
    create_out_dir(&global.out_dir)?;
    let out = global.out_dir.join("metrics.json");
    let report = MetricsOutput {
        restrict: args.restrict,
        pairs,
    };
    let json = serde_json::to_string_pretty(&report).expect("metrics serialize");
    std::fs::write(&out, json + "\n").map_err(|source| MreitError::Io {
        path: out.clone(),
        source,
    })?;
    manifest.output(&out)?;
    println!("wrote {}", out.display());
    finish(&mut manifest, &global.out_dir.join("manifest_metrics.json"), start)
}

fn run_selftest() -> Result<()> {
    let results = selftest::run_all();
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{} {} ({:.0} ms): {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.elapsed_ms,
            r.detail
        );
        if !r.passed {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::SelftestFailed(format!(
            "failed checks: {}",
            failed.join(", ")
        )))
    }
}
