use std::fs::File;
use std::io::Read;
use std::path::Path;

use psa_core::data::{
    builtin_templates, gen_dataset, load_idx, CorruptionConfig, Dataset, Split, SplitSizes,
};
use psa_core::mlp::{gradient_field_threaded, train_sgd, Dropout, Mlp, MlpConfig, UnitKind};
use psa_core::psa::{
    kernel_from_gradients, pairwise_entries, psa, standard_map, PairwiseTable, PsaDecomposition,
    SensitivityKernel,
};
use psa_core::render::{
    montage, render_map, render_table, render_unsigned, render_values, write_png, write_ppm,
    Colormap, Image,
};
use psa_core::sparse::{sparse_psa_with, Convention, SparseInit, SparsePsaConfig, SparsePsaModel};
use psa_core::PsaError;

use crate::args::*;
use crate::manifest::Manifest;

type Result<T> = std::result::Result<T, PsaError>;

fn invalid(msg: impl Into<String>) -> PsaError {
    PsaError::Domain(msg.into())
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| invalid(format!("shape {s:?} is not WIDTHxHEIGHT")))?;
    let n = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| invalid(format!("bad shape {s:?}")))
    };
    Ok((n(w)?, n(h)?))
}

fn save_image(m: &mut Manifest, stem: &str, image: &Image, png: bool) -> Result<()> {
    let name = format!("{stem}.ppm");
    write_ppm(&m.out(&name), image)?;
    m.output(&name)?;
    if png {
        let name = format!("{stem}.png");
        write_png(&m.out(&name), image)?;
        m.output(&name)?;
    }
    Ok(())
}

fn load_data(m: &mut Manifest, path: &Path, split: Split) -> Result<(Dataset, String)> {
    let id = m.input(path)?;
    Ok((Dataset::read_cache(path, split)?, id))
}

fn load_model(m: &mut Manifest, path: &Path) -> Result<(Mlp, String)> {
    let id = m.input(path)?;
    Ok((Mlp::load(path)?, id))
}

fn check_class(class: usize, data: &Dataset) -> Result<()> {
    if class >= data.num_classes() {
        return Err(invalid(format!(
            "class {class} outside 0..{}",
            data.num_classes()
        )));
    }
    Ok(())
}

pub fn gen(args: &GenArgs, m: &mut Manifest) -> Result<()> {
    let sizes = if args.full_scale {
        SplitSizes::FULL
    } else {
        match args.sizes[..] {
            [train, valid, test] => SplitSizes { train, valid, test },
            _ => return Err(invalid("--sizes takes exactly three numbers")),
        }
    };
    if !(0.0..=1.0).contains(&args.flip_prob) {
        return Err(invalid(format!(
            "flip probability {} outside [0, 1]",
            args.flip_prob
        )));
    }
    if !(args.noise_sigma >= 0.0 && args.noise_sigma.is_finite()) {
        return Err(invalid(format!(
            "noise sigma {} must be >= 0",
            args.noise_sigma
        )));
    }
    let config = CorruptionConfig {
        flip_prob: args.flip_prob,
        noise_sigma: args.noise_sigma,
    };
    let data = gen_dataset(sizes, args.seed, &config)?;
    m.lap("generate");
    for (name, ds) in [
        ("train", &data.train),
        ("valid", &data.valid),
        ("test", &data.test),
    ] {
        let file = format!("{name}.psad");
        ds.write_cache(&m.out(&file))?;
        m.output(&file)?;
        m.note(&format!("{name}_class_counts"), ds.class_counts());
    }
    let templates: Vec<Image> = builtin_templates()
        .iter()
        .map(|t| render_values(t.pixels.as_slice(), (28, 28), Colormap::Gray))
        .collect::<Result<_>>()?;
    save_image(m, "templates", &montage(&templates, (2, 5))?, false)?;
    let samples: Vec<Image> = data
        .test
        .samples()
        .iter()
        .take(10)
        .map(|s| render_values(s.pixels.as_slice(), (28, 28), Colormap::Gray))
        .collect::<Result<_>>()?;
    save_image(m, "samples", &montage(&samples, (2, 5))?, false)?;
    m.lap("write");
    Ok(())
}

pub fn ingest(args: &IngestArgs, m: &mut Manifest) -> Result<()> {
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Valid => Split::Valid,
        SplitArg::Test => Split::Test,
    };
    m.input(&args.images)?;
    m.input(&args.labels)?;
    let ds = load_idx(&args.images, &args.labels, split)?;
    m.lap("parse");
    let file = format!("{split}.psad");
    ds.write_cache(&m.out(&file))?;
    m.output(&file)?;
    m.note("samples", ds.len());
    m.note("dim", ds.dim());
    m.note("class_counts", ds.class_counts());
    m.lap("write");
    Ok(())
}

pub fn train(args: &TrainArgs, m: &mut Manifest) -> Result<()> {
    let (train, _) = load_data(m, &args.train, Split::Train)?;
    let (valid, _) = load_data(m, &args.valid, Split::Valid)?;
    let mut layer_sizes = vec![train.dim()];
    layer_sizes.extend(&args.hidden);
    layer_sizes.push(train.num_classes());
    let config = MlpConfig {
        layer_sizes,
        unit_kind: match args.units {
            UnitArg::Logistic => UnitKind::Logistic,
            UnitArg::Relu => UnitKind::Relu,
        },
        dropout: args.dropout.then_some(Dropout {
            input_keep: args.input_keep,
            hidden_keep: args.hidden_keep,
        }),
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    let (model, log) = train_sgd(&config, &train, &valid)?;
    m.lap("train");
    model.save(&m.out("model.psam"))?;
    m.output("model.psam")?;
    m.write_text("training.csv", &log.to_csv())?;
    if let Some(last) = log.epochs.last() {
        m.note("train_error", last.train_error);
        m.note("valid_error", last.valid_error);
    }
    if let Some(path) = &args.test {
        let (test, _) = load_data(m, path, Split::Test)?;
        let err = model.error_rate(&test)?;
        log::info!("test error {:.3}%", 100.0 * err);
        m.note("test_error", err);
    }
    m.lap("evaluate");
    Ok(())
}

pub fn psa_cmd(args: &PsaArgs, threads: usize, m: &mut Manifest) -> Result<()> {
    let shape = parse_shape(&args.shape)?;
    let (model, _) = load_model(m, &args.model)?;
    let (data, _) = load_data(m, &args.data, Split::Test)?;
    check_class(args.class, &data)?;
    if args.top_k == 0 || args.top_k > data.dim() {
        return Err(invalid(format!("--top-k must be in 1..={}", data.dim())));
    }
    let c = args.class;
    let field = gradient_field_threaded(&model, &data, c, threads)?;
    let kernel = kernel_from_gradients(&field)?;
    m.lap("kernel");
    let maps = psa(&kernel)?;
    m.lap("eigendecomposition");

    if args.save_kernel {
        let file = format!("class{c}.psak");
        kernel.save(&m.out(&file))?;
        m.output(&file)?;
    }
    let file = format!("class{c}.psae");
    maps.save(&m.out(&file))?;
    m.output(&file)?;
    m.write_text(
        &format!("class{c}_eigenvalues.csv"),
        &maps.eigenvalues_csv(),
    )?;

    let standard = standard_map(&kernel);
    save_image(
        m,
        &format!("class{c}_standard"),
        &render_unsigned(standard.as_slice(), shape)?,
        args.png,
    )?;
    let mut tiles = Vec::new();
    for k in 0..args.top_k {
        let image = render_map(maps.psm(k).as_slice(), shape)?;
        save_image(m, &format!("class{c}_psm{}", k + 1), &image, args.png)?;
        tiles.push(image);
    }
    save_image(
        m,
        &format!("class{c}_psms"),
        &montage(&tiles, (1, tiles.len()))?,
        args.png,
    )?;

    let trace = kernel.trace();
    let top: f64 = maps.eigenvalues.iter().take(args.top_k).sum();
    m.note("trace", trace);
    m.note(
        "top_k_eigenvalue_share",
        if trace > 0.0 { top / trace } else { 0.0 },
    );
    m.lap("write");
    Ok(())
}

pub fn sparse_cmd(args: &SparseArgs, threads: usize, m: &mut Manifest) -> Result<()> {
    let shape = parse_shape(&args.shape)?;
    let (model, _) = load_model(m, &args.model)?;
    let (data, _) = load_data(m, &args.data, Split::Test)?;
    check_class(args.class, &data)?;
    let c = args.class;
    let maps = match &args.maps {
        Some(path) => {
            m.input(path)?;
            let maps = PsaDecomposition::load(path)?;
            if maps.class != c {
                return Err(PsaError::Consistency(format!(
                    "{} holds maps of class {}, not {c}",
                    path.display(),
                    maps.class
                )));
            }
            Some(maps)
        }
        None => None,
    };
    let config = SparsePsaConfig {
        p: args.p,
        lambda: args.lambda,
        max_outer_iters: args.max_iters,
        tol: args.tol,
        seed: args.seed,
        convention: match args.convention {
            ConventionArg::SparseAtoms => Convention::SparseAtoms,
            ConventionArg::SparseCodes => Convention::SparseCodes,
        },
        init: match args.init {
            InitArg::Psm => SparseInit::Psm,
            InitArg::Random => SparseInit::Random,
        },
        restarts: args.restarts,
    };
    let field = gradient_field_threaded(&model, &data, c, threads)?;
    m.lap("gradient field");
    let fit = sparse_psa_with(&field, &config, maps.as_ref(), threads)?;
    m.lap("sparse psa");

    let file = format!("class{c}_sparse.psas");
    fit.save(&m.out(&file))?;
    m.output(&file)?;
    let mut trace = String::from("iteration,objective\n");
    for (i, v) in fit.objective_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{v:.16e}\n"));
    }
    m.write_text(&format!("class{c}_sparse_trace.csv"), &trace)?;
    write_sparse_maps(m, &fit, &format!("class{c}_sparse"), shape, args.png)?;
    m.note("final_objective", fit.final_objective());
    m.note("iterations", fit.objective_trace.len() - 1);
    m.note("converged", fit.converged);
    m.note("winning_start", fit.start);
    m.note("sparsity", fit.sparsity(1e-6));
    m.lap("write");
    Ok(())
}

fn write_sparse_maps(
    m: &mut Manifest,
    fit: &SparsePsaModel,
    stem: &str,
    shape: (usize, usize),
    png: bool,
) -> Result<()> {
    let mut summary = String::from("rank,atom,sensitivity,nonzeros\n");
    let mut tiles = Vec::new();
    for (rank, (v, &atom)) in fit.reported_maps().iter().zip(&fit.ranking).enumerate() {
        let image = render_map(v.as_slice(), shape)?;
        save_image(m, &format!("{stem}{}", rank + 1), &image, png)?;
        tiles.push(image);
        let nonzeros = v.iter().filter(|x| x.abs() >= 1e-6).count();
        summary.push_str(&format!(
            "{},{atom},{:.16e},{nonzeros}\n",
            rank + 1,
            fit.sensitivities[atom]
        ));
    }
    save_image(
        m,
        &format!("{stem}_maps"),
        &montage(&tiles, (1, tiles.len()))?,
        png,
    )?;
    m.write_text(&format!("{stem}_atoms.csv"), &summary)
}

pub fn pairwise(args: &PairwiseArgs, threads: usize, m: &mut Manifest) -> Result<()> {
    let (model, model_id) = load_model(m, &args.model)?;
    let (data, dataset_id) = load_data(m, &args.data, Split::Test)?;
    if args.classes.is_empty() {
        return Err(invalid("--classes is empty"));
    }
    for &c in &args.classes {
        check_class(c, &data)?;
    }
    if args.k_max == 0 || args.k_max > data.dim() {
        return Err(invalid(format!("--k-max must be in 1..={}", data.dim())));
    }
    let mut table = PairwiseTable {
        model_id: model_id[..16].to_string(),
        dataset_id: dataset_id[..16].to_string(),
        entries: Vec::new(),
    };
    for &c in &args.classes {
        let field = gradient_field_threaded(&model, &data, c, threads)?;
        let maps = psa(&kernel_from_gradients(&field)?)?;
        let entries = pairwise_entries(&field, &data, &maps, args.k_max)?;
        m.lap(&format!("class {c}"));

        let rows: Vec<Vec<f64>> = (0..data.num_classes())
            .filter(|&cp| cp != c)
            .map(|cp| {
                entries
                    .iter()
                    .filter(|e| e.c_prime == cp)
                    .map(|e| e.value)
                    .collect()
            })
            .collect();
        save_image(
            m,
            &format!("pairwise_class{c}"),
            &render_table(&rows, args.cell)?,
            false,
        )?;
        table.entries.extend(entries);
    }
    m.write_text("pairwise.csv", &table.to_csv())?;
    m.note("model_id", table.model_id.clone());
    m.note("dataset_id", table.dataset_id.clone());
    m.lap("write");
    Ok(())
}

pub fn render(args: &RenderArgs, m: &mut Manifest) -> Result<()> {
    let shape = parse_shape(&args.shape)?;
    m.input(&args.input)?;
    let mut magic = [0u8; 4];
    File::open(&args.input)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map_err(|e| PsaError::Io {
            path: args.input.clone(),
            source: e,
        })?;
    let stem = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "maps".into());
    let scale = args.scale.max(1);
    match &magic {
        b"PSAE" => {
            let maps = PsaDecomposition::load(&args.input)?;
            let k = args.top_k.min(maps.len());
            let tiles = (0..k)
                .map(|i| Ok(render_map(maps.psm(i).as_slice(), shape)?.upscaled(scale)))
                .collect::<Result<Vec<_>>>()?;
            for (i, t) in tiles.iter().enumerate() {
                save_image(m, &format!("{stem}_psm{}", i + 1), t, args.png)?;
            }
            if !tiles.is_empty() {
                save_image(
                    m,
                    &format!("{stem}_psms"),
                    &montage(&tiles, (1, tiles.len()))?,
                    args.png,
                )?;
            }
        }
        b"PSAS" => {
            let fit = SparsePsaModel::load(&args.input)?;
            write_sparse_maps(m, &fit, &stem, shape, args.png)?;
        }
        b"PSAK" => {
            let kernel = SensitivityKernel::load(&args.input)?;
            let image = render_unsigned(standard_map(&kernel).as_slice(), shape)?.upscaled(scale);
            save_image(m, &format!("{stem}_standard"), &image, args.png)?;
        }
        other => {
            return Err(PsaError::Format(format!(
                "{}: magic {:?} is not a decomposition, sparse model or kernel",
                args.input.display(),
                String::from_utf8_lossy(other)
            )))
        }
    }
    m.lap("render");
    Ok(())
}
