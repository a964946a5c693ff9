//! Command-line driver for the peelcloth pipeline.
//!
//! Exit codes: 0 success / thresholds met, 1 threshold or verification
//! failure, 2 bad input, 3 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use peelcloth::fixtures::{load_scene, make_fixture, save_scene, FixtureKind, TextureKind};
use peelcloth::inpaint::inpaint;
use peelcloth::io::{load_stack, save_obj, save_stack};
use peelcloth::mesh::LayeredMesh;
use peelcloth::metrics::{iou, stack_losses, total_loss, LossWeights};
use peelcloth::pipeline::{
    atlas_layout, atlas_layout_image, contact_sheet, load_atlas, parse_inpaint_mode,
    reconstruct_all, run_roundtrip, save_mask_png, save_texture_png, unwrap_mesh,
    verify_manifest, PipelineParams,
};
use peelcloth::reconstruct::ReconstructOptions;
use peelcloth::render::peel_render;
use peelcloth::texture::{bake, dilate_gutter};

#[derive(Parser)]
#[command(name = "peelcloth", about = "Garment digitization via peeled depth/RGB/seg/normal maps", version)]
struct Cli {
    /// Size of the rayon worker pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic test scene (mesh + texture + camera).
    Fixture {
        /// One of: sphere, cylinder_skirt, two_garment_mannequin, stacked_planes.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 128)]
        resolution: u32,
        /// One of: constant, checker, stripes.
        #[arg(long, default_value = "checker")]
        texture: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a scene directory into a peelmap stack.
    Render {
        /// Scene directory (mesh.obj + camera.json [+ texture.png]).
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a labeled mesh from a peelmap stack.
    Reconstruct {
        /// Stack manifest file or directory.
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        tau_disc: Option<f64>,
        #[arg(long)]
        eps_weld: Option<f64>,
        /// Maximum gap-stitch bridge length; 0 disables stitching.
        #[arg(long)]
        max_bridge: Option<f64>,
        /// Output OBJ path; a `<stem>_layers.json` sidecar is written too.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate seams, flatten charts and pack a UV atlas.
    Unwrap {
        /// Reconstructed OBJ (labeled faces).
        #[arg(long)]
        mesh: PathBuf,
        /// Per-vertex layer sidecar JSON written by `reconstruct`.
        #[arg(long)]
        layers: PathBuf,
        #[arg(long, default_value_t = 256)]
        resolution: u32,
        #[arg(long, default_value_t = 2)]
        gutter: u32,
        /// Output directory for atlas_layout.json / unwrapped.obj / atlas_layout.png.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bake the atlas texture from a stack and fill holes.
    Bake {
        /// atlas_layout.json from `unwrap`.
        #[arg(long)]
        layout: PathBuf,
        /// unwrapped.obj from `unwrap`.
        #[arg(long)]
        mesh: PathBuf,
        /// Stack manifest file or directory.
        #[arg(long)]
        stack: PathBuf,
        /// Hole fill: diffusion, exemplar, patch_tile or none.
        #[arg(long, default_value = "diffusion")]
        inpaint: String,
        /// Patch image for patch_tile mode.
        #[arg(long)]
        patch: Option<PathBuf>,
        /// Gutter dilation rings after inpainting.
        #[arg(long, default_value_t = 2)]
        dilate: u32,
        /// Output texture PNG; a `<stem>_mask.png` sidecar is written too.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a predicted stack against a reference stack.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Loss weight preset: standard or alternate.
        #[arg(long, default_value = "standard")]
        weights: String,
        /// Optional JSON report output path (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full render → reconstruct → unwrap → bake → evaluate loop.
    Roundtrip {
        /// Scene directory; mutually exclusive with --fixture.
        #[arg(long, conflicts_with = "fixture")]
        scene: Option<PathBuf>,
        /// Built-in fixture name instead of a scene directory.
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long, default_value_t = 128)]
        resolution: u32,
        #[arg(long, default_value = "checker")]
        texture: String,
        /// JSON file with pipeline parameters; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        atlas_resolution: Option<u32>,
        #[arg(long)]
        gutter: Option<u32>,
        #[arg(long)]
        inpaint: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-hash the artifacts of a run manifest.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn input_err(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn internal_err(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(3)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return internal_err(format!("thread pool: {e}"));
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(msg) => internal_err(msg),
    }
}

fn run(command: Command) -> Result<ExitCode, String> {
    match command {
        Command::Fixture {
            kind,
            resolution,
            texture,
            out,
        } => {
            let kind = FixtureKind::parse(&kind).map_err(|e| e.to_string())?;
            let texture = TextureKind::parse(&texture).map_err(|e| e.to_string())?;
            let scene = make_fixture(kind, resolution, texture);
            save_scene(&scene, &out).map_err(|e| e.to_string())?;
            println!("wrote scene to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Render { scene, layers, out } => {
            let scene = match load_scene(&scene) {
                Ok(s) => s,
                Err(e) => return Ok(input_err(e)),
            };
            let stack = peel_render(&scene, layers).map_err(|e| e.to_string())?;
            save_stack(&out, &stack).map_err(|e| e.to_string())?;
            contact_sheet(&stack)
                .save(out.join("contact_sheet.png"))
                .map_err(|e| e.to_string())?;
            println!("wrote {}-layer stack to {}", layers, out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Reconstruct {
            stack,
            tau_disc,
            eps_weld,
            max_bridge,
            out,
        } => {
            let stack = match load_stack(&stack) {
                Ok(s) => s,
                Err(e) => return Ok(input_err(e)),
            };
            let opts = ReconstructOptions {
                tau_disc,
                eps_weld,
                max_bridge,
            };
            let recon = reconstruct_all(&stack, opts).map_err(|e| e.to_string())?;
            save_obj(&out, &recon.mesh).map_err(|e| e.to_string())?;
            let sidecar = layers_sidecar(&out);
            std::fs::write(
                &sidecar,
                serde_json::to_string(&recon.vertex_layer).expect("layers serialize"),
            )
            .map_err(|e| e.to_string())?;
            println!(
                "reconstructed {} vertices / {} faces to {}",
                recon.mesh.vertices.len(),
                recon.mesh.faces.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Unwrap {
            mesh,
            layers,
            resolution,
            gutter,
            out,
        } => {
            let mesh = match peelcloth::io::load_obj(&mesh, &Default::default()) {
                Ok(m) => m,
                Err(e) => return Ok(input_err(e)),
            };
            let text = std::fs::read_to_string(&layers).map_err(|e| e.to_string())?;
            let vertex_layer: Vec<u32> =
                serde_json::from_str(&text).map_err(|e| format!("layer sidecar: {e}"))?;
            if vertex_layer.len() != mesh.vertices.len() {
                return Ok(input_err(format!(
                    "layer sidecar has {} entries for {} vertices",
                    vertex_layer.len(),
                    mesh.vertices.len()
                )));
            }
            let n = mesh.vertices.len();
            let layered = LayeredMesh {
                mesh,
                vertex_layer,
                vertex_source: vec![None; n],
            };
            let atlas = unwrap_mesh(&layered, resolution, gutter).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            let (layout, mut unwrapped) = atlas_layout(&atlas);
            unwrapped.texture = Some("texture.png".to_string());
            std::fs::write(
                out.join("atlas_layout.json"),
                serde_json::to_string_pretty(&layout).expect("layout serializes"),
            )
            .map_err(|e| e.to_string())?;
            save_obj(&out.join("unwrapped.obj"), &unwrapped).map_err(|e| e.to_string())?;
            atlas_layout_image(&atlas)
                .save(out.join("atlas_layout.png"))
                .map_err(|e| e.to_string())?;
            println!(
                "packed {} charts into a {resolution}px atlas at {}",
                atlas.charts.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Bake {
            layout,
            mesh,
            stack,
            inpaint: inpaint_name,
            patch,
            dilate,
            out,
        } => {
            let atlas = match load_atlas(&layout, &mesh) {
                Ok(a) => a,
                Err(e) => return Ok(input_err(e)),
            };
            let stack = match load_stack(&stack) {
                Ok(s) => s,
                Err(e) => return Ok(input_err(e)),
            };
            let (baked, mask) = bake(&atlas, &stack).map_err(|e| e.to_string())?;
            let mode = parse_inpaint_mode(&inpaint_name).map_err(|e| e.to_string())?;
            let patch_img = match &patch {
                Some(p) => Some(
                    image::open(p)
                        .map_err(|e| format!("patch image: {e}"))?
                        .to_rgb8(),
                ),
                None => None,
            };
            let mut tex = match mode {
                Some(m) => {
                    inpaint(&baked, &mask, m, patch_img.as_ref()).map_err(|e| e.to_string())?
                }
                None => baked,
            };
            dilate_gutter(&mut tex, &mask, dilate);
            save_texture_png(&tex, &out).map_err(|e| e.to_string())?;
            let mask_path = mask_sidecar(&out);
            save_mask_png(&mask, &mask_path).map_err(|e| e.to_string())?;
            println!("baked texture to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate {
            pred,
            reference,
            weights,
            out,
        } => {
            let pred = match load_stack(&pred) {
                Ok(s) => s,
                Err(e) => return Ok(input_err(e)),
            };
            let reference = match load_stack(&reference) {
                Ok(s) => s,
                Err(e) => return Ok(input_err(e)),
            };
            let weights = match weights.as_str() {
                "standard" => LossWeights::standard(),
                "alternate" => LossWeights::alternate(),
                other => return Ok(input_err(format!("unknown weight preset '{other}'"))),
            };
            let losses = stack_losses(&pred, &reference).map_err(|e| e.to_string())?;
            let total = total_loss(&losses, &weights);
            let mut classes: Vec<u8> = Vec::new();
            for l in 0..reference.layers() {
                for &s in &reference.seg[l] {
                    if s != 0 && !classes.contains(&s) {
                        classes.push(s);
                    }
                }
            }
            classes.sort_unstable();
            let mut iou_map = serde_json::Map::new();
            for c in classes {
                let v = iou(&pred, &reference, c).map_err(|e| e.to_string())?;
                iou_map.insert(c.to_string(), v.into());
            }
            let report = serde_json::json!({
                "losses": losses,
                "total_loss": total,
                "iou": iou_map,
            });
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| e.to_string())?,
                None => println!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Roundtrip {
            scene,
            fixture,
            resolution,
            texture,
            config,
            layers,
            atlas_resolution,
            gutter,
            inpaint: inpaint_name,
            out,
        } => {
            let scene = match (&scene, &fixture) {
                (Some(dir), None) => match load_scene(dir) {
                    Ok(s) => s,
                    Err(e) => return Ok(input_err(e)),
                },
                (None, Some(name)) => {
                    let kind = match FixtureKind::parse(name) {
                        Ok(k) => k,
                        Err(e) => return Ok(input_err(e)),
                    };
                    let tex = match TextureKind::parse(&texture) {
                        Ok(t) => t,
                        Err(e) => return Ok(input_err(e)),
                    };
                    make_fixture(kind, resolution, tex)
                }
                _ => return Ok(input_err("pass exactly one of --scene or --fixture")),
            };
            let mut params = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
                    match serde_json::from_str::<PipelineParams>(&text) {
                        Ok(p) => p,
                        Err(e) => return Ok(input_err(format!("config: {e}"))),
                    }
                }
                None => PipelineParams::default(),
            };
            if let Some(v) = layers {
                params.layers = v;
            }
            if let Some(v) = atlas_resolution {
                params.atlas_resolution = v;
            }
            if let Some(v) = gutter {
                params.gutter = v;
            }
            if let Some(v) = inpaint_name {
                params.inpaint = v;
            }
            let report = run_roundtrip(&scene, &params, &out).map_err(|e| e.to_string())?;
            println!(
                "p2s {:.6} (limit {:.6})  nre {:.4}  texture {:.1}%  total loss {:.4}",
                report.p2s,
                report.p2s_limit,
                report.nre,
                100.0 * report.texture.fraction_within_tolerance,
                report.total_loss
            );
            if report.pass {
                println!("PASS — report at {}", out.join("report.json").display());
                Ok(ExitCode::SUCCESS)
            } else {
                for f in &report.failures {
                    eprintln!("FAIL: {f}");
                }
                Ok(ExitCode::from(1))
            }
        }
        Command::Verify { manifest } => {
            let results = match verify_manifest(&manifest) {
                Ok(r) => r,
                Err(e) => return Ok(input_err(e)),
            };
            let mut bad = 0;
            for (path, ok) in &results {
                if !ok {
                    eprintln!("MISMATCH {path}");
                    bad += 1;
                }
            }
            println!("{} artifacts verified, {bad} mismatched", results.len());
            Ok(if bad == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn layers_sidecar(obj: &PathBuf) -> PathBuf {
    let stem = obj.file_stem().and_then(|s| s.to_str()).unwrap_or("recon");
    obj.with_file_name(format!("{stem}_layers.json"))
}

fn mask_sidecar(png: &PathBuf) -> PathBuf {
    let stem = png.file_stem().and_then(|s| s.to_str()).unwrap_or("texture");
    png.with_file_name(format!("{stem}_mask.png"))
}
