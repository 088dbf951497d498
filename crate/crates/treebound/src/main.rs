//! Command-line front end: every subcommand is a thin wrapper over one
//! library operation, reading the textual file formats and printing
//! line-delimited records.
//!
//! Exit codes: 0 success (and BOUNDED verdicts), 10 NOT_BOUNDED_BY,
//! 1 verification failure, 2 malformed input or internal error,
//! 64 usage error, 69 resource cap exceeded.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::exit;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treebound::annotation::{
    annotate, canonical_tiling, check_consistency, check_global_annotated,
    check_local_annotated, check_proposal, jumps, parse_annotated, print_annotated, ranks,
    ConsistencyMode,
};
use treebound::automaton::print_automaton;
use treebound::compile::compile;
use treebound::fixpoint::{
    boundedness_search, evaluate_stages, seed_distance_formula, BoundednessStatus,
};
use treebound::formula::{parse_formula, Formula};
use treebound::interp::{
    apply_scheme, encode_twk, exact_decomposition, fcns_encode, fcns_scheme, identity_scheme,
    parse_scheme, print_scheme, transfer_boundedness, translate_formula, Applied,
};
use treebound::structure::{isomorphic, parse_structure, print_structure, Structure};
use treebound::tree::{enumerate_trees, parse_tree, path_tree, print_tree, vertex_subsets};
use treebound::types::{
    build_basis, compose_add, compose_plus, compute_type, parse_basis, print_basis,
    PositiveType, TypeBasis,
};
use treebound::weighted::{
    build_path_weight_automaton, cost, input_root, limitedness_probe, parse_wta, print_wta,
    verify_log_bounds, ProbeVerdict,
};
use treebound::{Error, Result};

#[derive(Parser)]
#[command(name = "treebound", version, about = "Boundedness of monadic fixpoints over finite ternary trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a formula to a deterministic bottom-up tree automaton.
    Compile {
        #[arg(long)]
        formula: PathBuf,
        /// Comma-separated unary vocabulary; derived from the formula when absent.
        #[arg(long)]
        vocab: Option<String>,
        /// Automaton dump (.ta); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide boundedness of a formula over finite ternary trees.
    Bdd {
        #[arg(long)]
        formula: PathBuf,
        /// Largest stage bound to try.
        #[arg(long)]
        budget: usize,
        /// Class of structures; only the finite ternary trees are supported.
        #[arg(long, default_value = "ternary-finite")]
        class: String,
    },
    /// Print the fixpoint stages of a formula on a tree.
    Stages {
        #[arg(long)]
        formula: PathBuf,
        #[arg(long)]
        tree: PathBuf,
    },
    /// Type bases and X-positive type computation.
    #[command(subcommand)]
    Types(TypesCommand),
    /// Build the annotated tree A_beta for a formula over a tree.
    Annotate {
        #[arg(long)]
        formula: PathBuf,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        beta: usize,
        #[arg(long)]
        basis: PathBuf,
        /// Annotation dump (.ann); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print jump indices and ranks of an annotated tree.
    Rank {
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        basis: PathBuf,
    },
    /// Check whether an annotated tree is a proposal at a vertex.
    Proposal {
        #[arg(long)]
        formula: PathBuf,
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        vertex: usize,
        #[arg(long)]
        basis: PathBuf,
    },
    /// Weighted tree automata: costs and limitedness probing.
    #[command(subcommand)]
    Wta(WtaCommand),
    /// Definition schemes: apply, translate, encode.
    #[command(subcommand)]
    Interp(InterpCommand),
    /// Re-run a verification suite and report per-lemma pass counts.
    #[command(subcommand)]
    Verify(VerifyCommand),
}

#[derive(Subcommand)]
enum TypesCommand {
    /// Build the shared basis of X-positive formulas for a rank.
    Basis {
        #[arg(long)]
        rank: usize,
        /// Comma-separated unary predicates (may be empty).
        #[arg(long, default_value = "")]
        vocab: String,
        /// Basis dump (.tb); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The X-positive type of a tree against a basis.
    Of {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        basis: PathBuf,
    },
    /// Compose the types of two trees.
    Compose {
        /// plus joins at two named constants; add hangs the right tree under x.
        #[arg(long, value_parser = ["plus", "add"])]
        op: String,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long, default_value = "c1")]
        left_const: String,
        #[arg(long, default_value = "c2")]
        right_const: String,
    },
}

#[derive(Subcommand)]
enum WtaCommand {
    /// The cost of a weighted automaton on a tree.
    Cost {
        #[arg(long)]
        automaton: PathBuf,
        #[arg(long)]
        tree: PathBuf,
    },
    /// Tabulate worst-case costs per input size up to a cap.
    Probe {
        #[arg(long)]
        automaton: PathBuf,
        #[arg(long)]
        cap: usize,
    },
    /// Dump the built-in path-charging automaton.
    PathCharger {
        /// Automaton dump (.wta); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum InterpCommand {
    /// Apply a definition scheme to a structure.
    Apply {
        #[arg(long)]
        scheme: PathBuf,
        /// Host structure (.struct).
        #[arg(long, conflicts_with = "tree", required_unless_present = "tree")]
        structure: Option<PathBuf>,
        /// Host ternary tree (.tree), viewed as a relational structure.
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Image structure (.struct); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pull a formula over the target vocabulary back to the host.
    Translate {
        #[arg(long)]
        scheme: PathBuf,
        #[arg(long)]
        formula: PathBuf,
        /// Translated formula (.msof); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide boundedness of a formula over the image class of a scheme.
    Transfer {
        #[arg(long)]
        scheme: PathBuf,
        #[arg(long)]
        formula: PathBuf,
        #[arg(long)]
        budget: usize,
    },
    /// Encode a structure of tree-width at most k as a labelled ternary tree.
    EncodeTwk {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        width: usize,
        /// Encoded tree (.tree); stdout when absent.
        #[arg(long)]
        out_tree: Option<PathBuf>,
        /// Decoding scheme (.msoi); stdout when absent.
        #[arg(long)]
        out_scheme: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Suites: tiling, annotation, rank, wta, interp.
    Lemmas {
        #[arg(long, value_parser = ["tiling", "annotation", "rank", "wta", "interp"])]
        suite: String,
        /// Tree size cap for enumerated corpora.
        #[arg(long, default_value_t = 4)]
        cap: usize,
        /// Type rank of the basis.
        #[arg(long, default_value_t = 1)]
        rank: usize,
        /// Annotation stage bound.
        #[arg(long, default_value_t = 4)]
        beta: usize,
        /// Seed for randomized corpora; recorded in the report.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                exit(0);
            }
            eprint!("{e}");
            exit(64);
        }
    };
    match run(cli.command) {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            exit(match e {
                Error::Resource(_) => 69,
                _ => 2,
            });
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{}", text.trim_end());
            Ok(())
        }
    }
}

fn load_formula(path: &Path) -> Result<Formula> {
    parse_formula(&read(path)?)
}

fn default_vocab(f: &Formula) -> Vec<String> {
    let mut vocab = f.free_unary_names();
    vocab.extend(f.free_fo_names());
    vocab.insert("x".into());
    vocab.into_iter().collect()
}

fn split_names(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn type_record(t: &PositiveType) -> String {
    match t {
        PositiveType::Empty => "type empty".into(),
        PositiveType::Bits(bits) => format!(
            "type bits={}",
            bits.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",")
        ),
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Compile { formula, vocab, out } => {
            let phi = load_formula(&formula)?;
            let vocab = match vocab {
                Some(list) => split_names(&list),
                None => default_vocab(&phi),
            };
            let a = compile(&phi, &vocab)?;
            emit(out.as_ref(), &print_automaton(&a))?;
            Ok(0)
        }
        Command::Bdd { formula, budget, class } => {
            if class != "ternary-finite" {
                return Err(Error::Invalid(format!(
                    "unsupported structure class '{class}'"
                )));
            }
            let phi = load_formula(&formula)?;
            let verdict = boundedness_search(&phi, budget)?;
            for (t, v, alpha) in &verdict.witnesses {
                println!("witness alpha={alpha} vertex={v} tree={}", print_tree(t));
            }
            match verdict.status {
                BoundednessStatus::Bounded(alpha) => {
                    println!("status BOUNDED alpha={alpha}");
                    Ok(0)
                }
                BoundednessStatus::NotBoundedBy(budget) => {
                    println!("status NOT_BOUNDED_BY budget={budget}");
                    Ok(10)
                }
            }
        }
        Command::Stages { formula, tree } => {
            let phi = load_formula(&formula)?;
            let t = parse_tree(&read(&tree)?)?;
            let trace = evaluate_stages(&phi, &t)?;
            for (alpha, stage) in trace.stages.iter().enumerate() {
                let members: Vec<String> = stage.iter().map(usize::to_string).collect();
                println!("stage alpha={alpha} members={}", members.join(","));
            }
            println!("closure-ordinal {}", trace.closure_ordinal());
            for v in t.vertices() {
                match trace.stage_of(v) {
                    Some(alpha) => println!("vertex {v} stage={alpha}"),
                    None => println!("vertex {v} stage=none"),
                }
            }
            Ok(0)
        }
        Command::Types(cmd) => run_types(cmd),
        Command::Annotate { formula, tree, beta, basis, out } => {
            let phi = load_formula(&formula)?;
            let t = parse_tree(&read(&tree)?)?;
            let basis = parse_basis(&read(&basis)?)?;
            let a = annotate(&phi, &t, beta, &basis)?;
            emit(out.as_ref(), &print_annotated(&a))?;
            Ok(0)
        }
        Command::Rank { ann, basis } => {
            let a = parse_annotated(&read(&ann)?)?;
            let basis = parse_basis(&read(&basis)?)?;
            let jump_map = jumps(&a, &basis)?;
            for (v, i) in &jump_map {
                println!("jump vertex={v} index={i}");
            }
            let rank_map = ranks(&a, &basis)?;
            for v in a.tree.vertices() {
                match rank_map.get(&v) {
                    Some(r) => println!("vertex {v} rank={r}"),
                    None if jump_map.contains_key(&v) => println!("vertex {v} rank=infinite"),
                    None => println!("vertex {v} rank=none"),
                }
            }
            Ok(0)
        }
        Command::Proposal { formula, ann, vertex, basis } => {
            let phi = load_formula(&formula)?;
            let a = parse_annotated(&read(&ann)?)?;
            let basis = parse_basis(&read(&basis)?)?;
            let report = check_proposal(&phi, &a, vertex, &basis)?;
            println!("well-formed {}", report.well_formed);
            println!("locally-consistent {}", report.locally_consistent);
            println!("globally-consistent {}", report.globally_consistent);
            println!("jump-consistent {}", report.jump_consistent);
            println!("vertex-in-fixpoint {}", report.vertex_in_fixpoint);
            match report.rank {
                Some(r) => println!("rank {r}"),
                None => println!("rank none"),
            }
            for d in &report.diagnostics {
                println!("diagnostic {d}");
            }
            if report.is_proposal() {
                println!("proposal true");
                Ok(0)
            } else {
                println!("proposal false");
                Ok(1)
            }
        }
        Command::Wta(cmd) => run_wta(cmd),
        Command::Interp(cmd) => run_interp(cmd),
        Command::Verify(VerifyCommand::Lemmas { suite, cap, rank, beta, seed }) => {
            run_verify(&suite, cap, rank, beta, seed)
        }
    }
}

fn run_types(cmd: TypesCommand) -> Result<i32> {
    match cmd {
        TypesCommand::Basis { rank, vocab, out } => {
            let names = split_names(&vocab);
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let basis = build_basis(rank, &refs)?;
            emit(out.as_ref(), &print_basis(&basis))?;
            Ok(0)
        }
        TypesCommand::Of { tree, basis } => {
            let t = parse_tree(&read(&tree)?)?;
            let basis = parse_basis(&read(&basis)?)?;
            let ty = compute_type(&t, &basis)?;
            println!("{}", type_record(&ty));
            if let PositiveType::Bits(bits) = &ty {
                for &i in bits {
                    println!("holds {}", basis.formulas[i]);
                }
            }
            Ok(0)
        }
        TypesCommand::Compose { op, basis, left, right, left_const, right_const } => {
            let basis = parse_basis(&read(&basis)?)?;
            let s = compute_type(&parse_tree(&read(&left)?)?, &basis)?;
            let t = compute_type(&parse_tree(&read(&right)?)?, &basis)?;
            let composed = match op.as_str() {
                "plus" => compose_plus(&s, &left_const, &t, &right_const, &basis)?,
                _ => compose_add(&s, &t, &basis)?,
            };
            println!("{}", type_record(&composed));
            Ok(0)
        }
    }
}

fn run_wta(cmd: WtaCommand) -> Result<i32> {
    match cmd {
        WtaCommand::Cost { automaton, tree } => {
            let a = parse_wta(&read(&automaton)?)?;
            let t = parse_tree(&read(&tree)?)?;
            println!("root {}", input_root(&t));
            match cost(&a, &t)? {
                Some(c) => println!("cost {c}"),
                None => println!("cost reject"),
            }
            Ok(0)
        }
        WtaCommand::Probe { automaton, cap } => {
            let a = parse_wta(&read(&automaton)?)?;
            let report = limitedness_probe(&a, cap)?;
            for (size, worst) in &report.table {
                match worst {
                    Some(c) => println!("size {size} worst-cost={c}"),
                    None => println!("size {size} worst-cost=reject"),
                }
            }
            println!("accepted {}", report.accepted);
            match report.verdict {
                ProbeVerdict::LimitedUpTo(size, bound) => {
                    println!("verdict limited-up-to size={size} bound={bound}")
                }
                ProbeVerdict::GrowthSuspected(why) => {
                    println!("verdict growth-suspected {why}")
                }
            }
            Ok(0)
        }
        WtaCommand::PathCharger { out } => {
            emit(out.as_ref(), &print_wta(&build_path_weight_automaton()))?;
            Ok(0)
        }
    }
}

fn run_interp(cmd: InterpCommand) -> Result<i32> {
    match cmd {
        InterpCommand::Apply { scheme, structure, tree, out } => {
            let i = parse_scheme(&read(&scheme)?)?;
            let a = match (&structure, &tree) {
                (Some(path), _) => parse_structure(&read(path)?)?,
                (None, Some(path)) => parse_tree(&read(path)?)?.to_structure(),
                (None, None) => unreachable!("clap enforces one input"),
            };
            match apply_scheme(&i, &a)? {
                Applied::Defined(b) => {
                    println!("defined true");
                    emit(out.as_ref(), &print_structure(&b))?;
                    Ok(0)
                }
                Applied::Undefined { clause, witness } => {
                    println!("defined false");
                    println!("clause {clause}");
                    println!("witness {witness}");
                    Ok(1)
                }
            }
        }
        InterpCommand::Translate { scheme, formula, out } => {
            let i = parse_scheme(&read(&scheme)?)?;
            let psi = load_formula(&formula)?;
            let pulled = translate_formula(&i, &psi)?;
            emit(out.as_ref(), &pulled.to_string())?;
            Ok(0)
        }
        InterpCommand::Transfer { scheme, formula, budget } => {
            let i = parse_scheme(&read(&scheme)?)?;
            let psi = load_formula(&formula)?;
            let (_, verdict) = transfer_boundedness(&i, &psi, budget)?;
            match verdict.status {
                BoundednessStatus::Bounded(alpha) => {
                    println!("status BOUNDED alpha={alpha}");
                    Ok(0)
                }
                BoundednessStatus::NotBoundedBy(budget) => {
                    println!("status NOT_BOUNDED_BY budget={budget}");
                    Ok(10)
                }
            }
        }
        InterpCommand::EncodeTwk { structure, width, out_tree, out_scheme } => {
            let a = parse_structure(&read(&structure)?)?;
            let Some(d) = exact_decomposition(&a, width)? else {
                return Err(Error::Invalid(format!(
                    "no tree decomposition of width at most {width} exists"
                )));
            };
            println!("decomposition width={} bags={}", d.width(), d.bags.len());
            let enc = encode_twk(&a, &d, width)?;
            emit(out_tree.as_ref(), &print_tree(&enc.tree))?;
            emit(out_scheme.as_ref(), &print_scheme(&enc.scheme))?;
            Ok(0)
        }
    }
}

struct Tally {
    pass: usize,
    fail: usize,
}

impl Tally {
    fn new() -> Self {
        Tally { pass: 0, fail: 0 }
    }

    fn record(&mut self, ok: bool) {
        if ok {
            self.pass += 1;
        } else {
            self.fail += 1;
        }
    }
}

fn report_lemma(name: &str, t: &Tally) -> usize {
    println!("lemma {name} pass={} fail={}", t.pass, t.fail);
    t.fail
}

fn verify_basis(rank: usize) -> Result<TypeBasis> {
    build_basis(rank, &["P0"])
}

fn run_verify(suite: &str, cap: usize, rank: usize, beta: usize, seed: u64) -> Result<i32> {
    if cap > 6 {
        return Err(Error::Resource(format!(
            "verification corpora are capped at 6 vertices, got {cap}"
        )));
    }
    println!("suite {suite} cap={cap} rank={rank} beta={beta} seed={seed}");
    let failures = match suite {
        "tiling" => verify_tiling(cap, rank)?,
        "annotation" => verify_annotation(cap, rank, beta)?,
        "rank" => verify_rank(cap, rank, beta)?,
        "wta" => verify_wta(cap, rank, beta)?,
        _ => verify_interp(cap, seed)?,
    };
    Ok(if failures == 0 { 0 } else { 1 })
}

fn verify_tiling(cap: usize, rank: usize) -> Result<usize> {
    let basis = verify_basis(rank)?;
    let trees = enumerate_trees(cap, &basis.predicates, cap)?;
    let mut equations = Tally::new();
    let mut global_implies_local = Tally::new();
    for t in &trees {
        for x in vertex_subsets(t.len()) {
            let marked = t.clone().with_x_set(x);
            let tiling = canonical_tiling(&marked, &basis)?;
            equations.record(
                tiling
                    .values()
                    .map(|tile| tile.check_equations(&basis))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .all(|ok| ok),
            );
            for v in marked.vertices() {
                let global =
                    check_consistency(&tiling, &marked, v, ConsistencyMode::Global, &basis)?;
                let local =
                    check_consistency(&tiling, &marked, v, ConsistencyMode::Local, &basis)?;
                global_implies_local.record(global.is_some() || local.is_none());
            }
        }
    }
    Ok(report_lemma("canonical-tiling-equations", &equations)
        + report_lemma("global-implies-local", &global_implies_local))
}

fn verify_annotation(cap: usize, rank: usize, beta: usize) -> Result<usize> {
    let basis = verify_basis(rank)?;
    let phi = seed_distance_formula();
    let trees = enumerate_trees(cap, &basis.predicates, cap)?;
    let mut local = Tally::new();
    let mut global = Tally::new();
    for t in &trees {
        let a = annotate(&phi, t, beta, &basis)?;
        local.record(check_local_annotated(&a)?.is_none());
        global.record(check_global_annotated(&a, &basis)?.is_none());
    }
    Ok(report_lemma("annotation-locally-consistent", &local)
        + report_lemma("annotation-globally-consistent", &global))
}

fn verify_rank(cap: usize, rank: usize, beta: usize) -> Result<usize> {
    let basis = verify_basis(rank)?;
    let phi = seed_distance_formula();
    let report =
        treebound::annotation::boundedness_rank_correspondence(&phi, cap, beta, &basis)?;
    println!("trees-checked {}", report.trees_checked);
    println!("proposals-checked {}", report.proposals_checked);
    let mut sandwich = Tally::new();
    sandwich.pass = report.proposals_checked - report.violations.len();
    sandwich.fail = report.violations.len();
    for v in &report.violations {
        println!("violation {v}");
    }
    Ok(report_lemma("rank-stage-correspondence", &sandwich))
}

fn verify_wta(cap: usize, rank: usize, beta: usize) -> Result<usize> {
    let basis = verify_basis(rank)?;
    let phi = seed_distance_formula();
    let mut bounds = Tally::new();
    for n in 1..=cap {
        let mut t = path_tree(n);
        t.labels_mut(0).insert("P0".into());
        let a = annotate(&phi, &t, beta.max(n + 1), &basis)?;
        for check in verify_log_bounds(&a, &basis)? {
            bounds.record(check.ok);
        }
    }
    Ok(report_lemma("rank-cost-sandwich", &bounds))
}

fn verify_interp(cap: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut identity = Tally::new();
    let mut fcns = Tally::new();
    for _ in 0..40 {
        let n = rng.gen_range(1..=cap.max(1));
        let mut a = Structure::new(n);
        for v in 0..n {
            if rng.gen_bool(0.5) {
                a.add_unary("P0", v);
            }
            if v > 0 {
                a.add_tuple("child", vec![rng.gen_range(0..v), v]);
            }
        }
        let image = apply_scheme(&identity_scheme(&a), &a)?;
        identity.record(matches!(&image, Applied::Defined(b) if isomorphic(&a, b)));
        let enc = fcns_encode(&a)?;
        match apply_scheme(&fcns_scheme(&["P0"]), &enc.to_structure())? {
            Applied::Defined(b) => {
                let mut b = b.clone();
                b.unary.remove("R");
                fcns.record(isomorphic(&a, &b));
            }
            Applied::Undefined { .. } => fcns.record(false),
        }
    }
    Ok(report_lemma("identity-scheme-round-trip", &identity)
        + report_lemma("first-child-next-sibling-round-trip", &fcns))
}
