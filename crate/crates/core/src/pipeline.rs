//! End-to-end experiment orchestration: configuration, template splits,
//! the sample / mine / pretrain / adapt / generate / train-nlu / eval
//! stages, and run manifests. The command-line tool is a thin wrapper over
//! this module.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    read_pairs, read_parallel, read_utterances, write_generation_log, write_pairs,
    write_utterances, GenerationRecord, Origin,
};
use crate::decode::{
    beam_search, detokenize, filter_candidates, sample_hypotheses, AcceptedParaphrase,
    BeamParams, FilterOptions, Hypothesis, RejectionStats,
};
use crate::error::{Error, Result};
use crate::grammar::{
    parse_grammar, sample_utterances, AnnotatedUtterance, SkillGrammar, SlotSpan,
};
use crate::metrics::{
    bigram_coverage, icer, relative_change, semer, ser, unique_patterns, word_coverage,
    EvalPair, EvalReport, ReportRow,
};
use crate::mining::mine_pairs;
use crate::nlu::{spans_to_bio, tag, train_ic, train_ner, NluConfig};
use crate::seq2seq::{
    load_checkpoint, pretrain_multi, save_checkpoint, train, ModelDims, PretrainCorpus, Scheme,
    Seq2SeqModel, TrainConfig,
};
use crate::slotcopy::{
    abstract_input, abstract_pair, build_surrogates, slot_token_extras, SurrogateMap,
};
use crate::textcore::{
    default_stop_words, fnv_hash, load_stop_words, splitmix64, EmbeddingTable, Token, Vocabulary,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workdir: PathBuf,
    pub paths: PathsConfig,
    pub model: ModelSettings,
    pub pretrain: StageSettings,
    pub adapt: StageSettings,
    pub decode: DecodeSettings,
    pub nlu: NluSettings,
    pub sampling: SamplingSettings,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub grammar: PathBuf,
    pub parallel: Vec<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stop_words: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub max_sequence_length: usize,
    pub min_count: usize,
    /// Start the stage-two decoder from fresh random weights instead of the
    /// pretrained ones.
    pub reinit_decoder_on_adapt: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            embedding_dim: 16,
            hidden_dim: 32,
            max_sequence_length: 20,
            min_count: 1,
            reinit_decoder_on_adapt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
}

impl Default for StageSettings {
    fn default() -> Self {
        StageSettings {
            learning_rate: 0.4,
            epochs: 80,
            batch_size: 8,
            grad_clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeSettings {
    pub beam_width: usize,
    pub n_best: usize,
    pub max_len: usize,
    pub drop_identity: bool,
    pub length_normalize: bool,
    /// Sample hypotheses from the posterior instead of beam search.
    pub posterior_sampling: bool,
    /// Samples per input when posterior sampling is on.
    pub samples: usize,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings {
            beam_width: 8,
            n_best: 4,
            max_len: 20,
            drop_identity: true,
            length_normalize: false,
            posterior_sampling: false,
            samples: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NluSettings {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for NluSettings {
    fn default() -> Self {
        NluSettings {
            l2: 0.1,
            learning_rate: 0.5,
            epochs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingSettings {
    pub per_template: usize,
    pub test_per_template: usize,
    /// Fraction of each intent's templates that goes to the training side.
    pub train_template_fraction: f64,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        SamplingSettings {
            per_template: 10,
            test_per_template: 10,
            train_template_fraction: 0.4,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            workdir: PathBuf::from("work"),
            paths: PathsConfig::default(),
            model: ModelSettings::default(),
            pretrain: StageSettings::default(),
            adapt: StageSettings::default(),
            decode: DecodeSettings::default(),
            nlu: NluSettings::default(),
            sampling: SamplingSettings::default(),
        }
    }
}

impl PipelineConfig {
    /// Read a JSON config. Relative paths resolve against the config file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
            origin: path.display().to_string(),
            source: e,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut config.workdir);
        resolve(&mut config.paths.grammar);
        for p in &mut config.paths.parallel {
            resolve(p);
        }
        if let Some(p) = &mut config.paths.embeddings {
            resolve(p);
        }
        if let Some(p) = &mut config.paths.stop_words {
            resolve(p);
        }
        Ok(config)
    }

    /// Check that every referenced input exists and the numbers are sane.
    pub fn validate(&self) -> Result<()> {
        if !(self.sampling.train_template_fraction > 0.0
            && self.sampling.train_template_fraction < 1.0)
        {
            return Err(Error::Config(
                "train_template_fraction must be strictly between 0 and 1".into(),
            ));
        }
        if self.sampling.per_template == 0 || self.sampling.test_per_template == 0 {
            return Err(Error::Config("per_template must be >= 1".into()));
        }
        if self.decode.n_best > self.decode.beam_width {
            return Err(Error::Config("n_best must not exceed beam_width".into()));
        }
        let mut required: Vec<&PathBuf> = vec![&self.paths.grammar];
        required.extend(self.paths.parallel.iter());
        if let Some(p) = &self.paths.embeddings {
            required.push(p);
        }
        if let Some(p) = &self.paths.stop_words {
            required.push(p);
        }
        for p in required {
            if !p.exists() {
                return Err(Error::Config(format!("input path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn train_config(&self, stage: &StageSettings, scheme: Scheme, seed_tag: &str) -> TrainConfig {
        TrainConfig {
            scheme,
            learning_rate: stage.learning_rate,
            epochs: stage.epochs,
            batch_size: stage.batch_size,
            grad_clip_norm: stage.grad_clip_norm,
            seed: subseed(self.seed, seed_tag),
            max_sequence_length: self.model.max_sequence_length,
        }
    }

    fn nlu_config(&self) -> NluConfig {
        NluConfig {
            l2: self.nlu.l2,
            learning_rate: self.nlu.learning_rate,
            epochs: self.nlu.epochs,
            seed: subseed(self.seed, "nlu"),
        }
    }

    // Workdir artifact paths.

    pub fn train_data_path(&self) -> PathBuf {
        self.workdir.join("train_utterances.jsonl")
    }

    pub fn test_data_path(&self) -> PathBuf {
        self.workdir.join("test_utterances.jsonl")
    }

    pub fn pairs_path(&self) -> PathBuf {
        self.workdir.join("pairs.jsonl")
    }

    pub fn surrogates_path(&self) -> PathBuf {
        self.workdir.join("surrogates.json")
    }

    pub fn stage1_checkpoint_path(&self) -> PathBuf {
        self.workdir.join("stage1.ckpt")
    }

    pub fn adapted_checkpoint_path(&self, scheme: Scheme) -> PathBuf {
        self.workdir.join(format!("adapted_{scheme}.ckpt"))
    }

    pub fn augmented_data_path(&self, scheme: Scheme) -> PathBuf {
        self.workdir.join(format!("augmented_{scheme}.jsonl"))
    }

    pub fn generation_log_path(&self, scheme: Scheme) -> PathBuf {
        self.workdir.join(format!("generation_{scheme}.jsonl"))
    }

    pub fn report_json_path(&self) -> PathBuf {
        self.workdir.join("report.json")
    }

    pub fn report_text_path(&self) -> PathBuf {
        self.workdir.join("report.txt")
    }
}

/// Derive a per-component seed from the run seed and a component tag.
pub fn subseed(seed: u64, tag: &str) -> u64 {
    splitmix64(seed ^ fnv_hash(tag.as_bytes()))
}

fn ensure_workdir(config: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(&config.workdir).map_err(|e| Error::io(&config.workdir, e))
}

fn stop_words(config: &PipelineConfig) -> Result<std::collections::BTreeSet<Token>> {
    match &config.paths.stop_words {
        Some(path) => load_stop_words(path),
        None => Ok(default_stop_words()),
    }
}

/// Deterministically split each intent's templates into a training part and
/// a held-out part. Every intent keeps at least one template on each side
/// when it has two or more.
pub fn split_templates(
    grammar: &SkillGrammar,
    train_fraction: f64,
    seed: u64,
) -> (SkillGrammar, SkillGrammar) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut train = grammar.clone();
    let mut test = grammar.clone();
    train.intents.clear();
    test.intents.clear();
    for (label, templates) in &grammar.intents {
        let n = templates.len();
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng);
        let want = (train_fraction * n as f64).round() as usize;
        let n_train = if n >= 2 { want.clamp(1, n - 1) } else { 1.min(n) };
        let mut chosen: Vec<usize> = indices[..n_train].to_vec();
        chosen.sort_unstable();
        let mut rest: Vec<usize> = indices[n_train..].to_vec();
        rest.sort_unstable();
        train.intents.push((
            label.clone(),
            chosen.iter().map(|&i| templates[i].clone()).collect(),
        ));
        if !rest.is_empty() {
            test.intents.push((
                label.clone(),
                rest.iter().map(|&i| templates[i].clone()).collect(),
            ));
        }
    }
    (train, test)
}

/// Hashes of the input files a command consumed, for the run manifest.
fn input_hashes(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::io(*path, e))?;
        out.insert(
            path.display().to_string(),
            format!("{:016x}", fnv_hash(&bytes)),
        );
    }
    Ok(out)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    command: &'a str,
    config: &'a PipelineConfig,
    input_hashes: BTreeMap<String, String>,
}

fn write_manifest(config: &PipelineConfig, command: &str, inputs: &[&Path]) -> Result<()> {
    let manifest = Manifest {
        tool_version: VERSION,
        command,
        config,
        input_hashes: input_hashes(inputs)?,
    };
    let path = config.workdir.join(format!("manifest_{command}.json"));
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleOutcome {
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Sample the training and held-out datasets from the grammar's template
/// split and write them to the workdir.
pub fn run_sample(config: &PipelineConfig) -> Result<SampleOutcome> {
    config.validate()?;
    let grammar = parse_grammar(&config.paths.grammar)?;
    let (train_g, test_g) = split_templates(
        &grammar,
        config.sampling.train_template_fraction,
        subseed(config.seed, "split"),
    );
    let train = sample_utterances(
        &train_g,
        config.sampling.per_template,
        subseed(config.seed, "sample-train"),
    );
    let test = sample_utterances(
        &test_g,
        config.sampling.test_per_template,
        subseed(config.seed, "sample-test"),
    );
    ensure_workdir(config)?;
    let rows = |data: Vec<AnnotatedUtterance>| -> Vec<(AnnotatedUtterance, Origin)> {
        data.into_iter().map(|u| (u, Origin::Grammar)).collect()
    };
    let train = rows(train);
    let test = rows(test);
    write_utterances(&config.train_data_path(), &train)?;
    write_utterances(&config.test_data_path(), &test)?;
    write_manifest(config, "sample", &[&config.paths.grammar])?;
    Ok(SampleOutcome {
        train_rows: train.len(),
        test_rows: test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MineOutcome {
    pub utterances: usize,
    pub groups: usize,
    pub pairs: usize,
}

/// Mine paraphrase pairs and build the surrogate map from a dataset
/// (default: the sampled training data).
pub fn run_mine(config: &PipelineConfig, input: Option<&Path>) -> Result<MineOutcome> {
    config.validate()?;
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| config.train_data_path());
    let data: Vec<AnnotatedUtterance> = read_utterances(&input)?
        .into_iter()
        .map(|(u, _)| u)
        .collect();
    let (groups, pairs) = mine_pairs(&data);
    let surrogates = build_surrogates(&data, &stop_words(config)?);
    ensure_workdir(config)?;
    write_pairs(&config.pairs_path(), &pairs)?;
    let mut json = serde_json::to_string_pretty(&surrogates).expect("surrogates serialize");
    json.push('\n');
    std::fs::write(config.surrogates_path(), json)
        .map_err(|e| Error::io(config.surrogates_path(), e))?;
    write_manifest(config, "mine", &[&input])?;
    Ok(MineOutcome {
        utterances: data.len(),
        groups: groups.len(),
        pairs: pairs.len(),
    })
}

/// The in-domain lexicon and slot tokens the output vocabulary must cover,
/// derived from the training split of the grammar. The output vocabulary is
/// shared across both training stages so the stage-two decoder can continue
/// from the pretrained weights.
fn in_domain_vocab_parts(config: &PipelineConfig) -> Result<(Vec<Vec<Token>>, Vec<Token>)> {
    let grammar = parse_grammar(&config.paths.grammar)?;
    let (train_g, _) = split_templates(
        &grammar,
        config.sampling.train_template_fraction,
        subseed(config.seed, "split"),
    );
    let sentences = train_g.lexicon_sentences();
    let max_slots = train_g.max_slots_per_template();
    let types: Vec<_> = train_g.catalogs.keys().cloned().collect();
    Ok((sentences, slot_token_extras(&types, max_slots)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub corpora: usize,
    pub pairs: usize,
    pub skipped_long: usize,
    pub trainable_parameters: usize,
    pub final_loss: f64,
}

/// Stage one: translation pretraining over the configured parallel corpora
/// with a shared encoder. Writes the checkpoint and a loss-history CSV.
pub fn run_pretrain(config: &PipelineConfig) -> Result<PretrainOutcome> {
    config.validate()?;
    if config.paths.parallel.is_empty() {
        return Err(Error::Config("pretraining needs at least one parallel corpus".into()));
    }
    let (in_domain, slot_tokens) = in_domain_vocab_parts(config)?;
    let mut raw_corpora = Vec::new();
    for path in &config.paths.parallel {
        let pairs = read_parallel(path)?;
        if pairs.is_empty() {
            return Err(Error::Config(format!("parallel corpus {} is empty", path.display())));
        }
        raw_corpora.push(pairs);
    }

    // Input vocabulary: every source side plus the in-domain lexicon.
    let mut input_sentences: Vec<Vec<Token>> = Vec::new();
    for corpus in &raw_corpora {
        input_sentences.extend(corpus.iter().map(|(s, _)| s.clone()));
    }
    input_sentences.extend(in_domain.iter().cloned());
    let input_vocab = Vocabulary::build(&input_sentences, config.model.min_count, &[]);

    // Output vocabulary of the primary decoder: first corpus targets plus
    // the in-domain lexicon and the slot tokens.
    let mut primary_out: Vec<Vec<Token>> =
        raw_corpora[0].iter().map(|(_, t)| t.clone()).collect();
    primary_out.extend(in_domain.iter().cloned());
    let primary_vocab = Vocabulary::build(&primary_out, config.model.min_count, &slot_tokens);

    let max_len = config.model.max_sequence_length;
    let mut skipped_long = 0usize;
    let mut corpora = Vec::new();
    for (i, raw) in raw_corpora.iter().enumerate() {
        let vocab = if i == 0 {
            primary_vocab.clone()
        } else {
            let targets: Vec<Vec<Token>> = raw.iter().map(|(_, t)| t.clone()).collect();
            Vocabulary::build(&targets, config.model.min_count, &[])
        };
        let mut pairs = Vec::new();
        for (s, t) in raw {
            if s.len() > max_len || t.len() + 1 > max_len {
                skipped_long += 1;
                continue;
            }
            pairs.push((input_vocab.encode(s), vocab.encode(t)));
        }
        if pairs.is_empty() {
            return Err(Error::Config(
                "a parallel corpus has no pairs within max_sequence_length".into(),
            ));
        }
        corpora.push(PretrainCorpus {
            pairs,
            output_vocab: vocab,
        });
    }

    let embeddings = match &config.paths.embeddings {
        Some(path) => EmbeddingTable::load(path, config.model.embedding_dim)?,
        None => EmbeddingTable::synthetic(
            input_vocab.tokens().iter(),
            config.model.embedding_dim,
            subseed(config.seed, "embeddings"),
        ),
    };

    let dims = ModelDims {
        embedding_dim: config.model.embedding_dim,
        hidden_dim: config.model.hidden_dim,
    };
    let train_config = config.train_config(&config.pretrain, Scheme::MtPretrain, "pretrain");
    let outcome = pretrain_multi(dims, input_vocab, &embeddings, &corpora, &train_config)?;

    ensure_workdir(config)?;
    let ckpt = config.stage1_checkpoint_path();
    save_checkpoint(&outcome.model, &ckpt)?;
    write_loss_csv(&config.workdir.join("stage1_loss.csv"), &outcome.histories)?;
    let mut inputs: Vec<&Path> = vec![config.paths.grammar.as_path()];
    inputs.extend(config.paths.parallel.iter().map(PathBuf::as_path));
    write_manifest(config, "pretrain", &inputs)?;

    let (trainable, _) = outcome.model.parameter_count();
    Ok(PretrainOutcome {
        checkpoint: ckpt,
        corpora: corpora.len(),
        pairs: corpora.iter().map(|c| c.pairs.len()).sum(),
        skipped_long,
        trainable_parameters: trainable,
        final_loss: outcome.histories[0].last().copied().unwrap_or(f64::NAN),
    })
}

fn write_loss_csv(path: &Path, histories: &[Vec<f64>]) -> Result<()> {
    let mut out = String::from("epoch,corpus,mean_loss\n");
    for (corpus, history) in histories.iter().enumerate() {
        for (epoch, loss) in history.iter().enumerate() {
            out.push_str(&format!("{epoch},{corpus},{loss}\n"));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_surrogates(config: &PipelineConfig) -> Result<SurrogateMap> {
    let path = config.surrogates_path();
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        origin: path.display().to_string(),
        source: e,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOutcome {
    pub checkpoint: PathBuf,
    pub pairs_used: usize,
    pub skipped_long: usize,
    /// Slot tokens in the encoded training corpus; zero under no_slot_copy.
    pub slot_token_count: usize,
    pub final_loss: f64,
}

/// Stage two: retrain the decoder (and optionally the encoder) on mined
/// in-domain pairs under the given scheme.
pub fn run_adapt(
    config: &PipelineConfig,
    scheme: Scheme,
    checkpoint: Option<&Path>,
    pairs_path: Option<&Path>,
) -> Result<AdaptOutcome> {
    config.validate()?;
    if scheme == Scheme::MtPretrain {
        return Err(Error::Config(
            "adapt takes an in-domain scheme: no_slot_copy, fixed_encoder or fine_tune".into(),
        ));
    }
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.stage1_checkpoint_path());
    let mut model = load_checkpoint(&ckpt_path)?;
    if model.scheme != Some(Scheme::MtPretrain) {
        return Err(Error::Checkpoint {
            path: ckpt_path.display().to_string(),
            message: format!(
                "adapt needs a stage-one (mt_pretrain) checkpoint, found {:?}",
                model.scheme.map(|s| s.to_string())
            ),
        });
    }
    let pairs_path = pairs_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.pairs_path());
    let pairs = read_pairs(&pairs_path)?;
    if pairs.is_empty() {
        return Err(Error::invalid("no mined pairs to adapt on"));
    }

    let mut corpus: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut skipped_long = 0usize;
    let max_len = config.model.max_sequence_length;
    if scheme.uses_slot_copying() {
        let surrogates = read_surrogates(config)?;
        for pair in &pairs {
            let abstracted = abstract_pair(pair, &surrogates);
            if abstracted.source_tokens.len() > max_len
                || abstracted.target_tokens.len() + 1 > max_len
            {
                skipped_long += 1;
                continue;
            }
            corpus.push((
                model.input_vocab.encode(&abstracted.source_tokens),
                model.output_vocab.encode(&abstracted.target_tokens),
            ));
        }
    } else {
        for pair in &pairs {
            if pair.source.tokens.len() > max_len || pair.target.tokens.len() + 1 > max_len {
                skipped_long += 1;
                continue;
            }
            corpus.push((
                model.input_vocab.encode(&pair.source.tokens),
                model.output_vocab.encode(&pair.target.tokens),
            ));
        }
    }
    if corpus.is_empty() {
        return Err(Error::invalid("every pair exceeded max_sequence_length"));
    }
    let slot_token_count = corpus
        .iter()
        .flat_map(|(s, t)| s.iter().chain(t))
        .filter(|&&id| model.output_vocab.is_slot_id(id))
        .count();

    if config.model.reinit_decoder_on_adapt {
        let fresh = crate::seq2seq::init_model(
            model.dims(),
            model.input_vocab.clone(),
            model.output_vocab.clone(),
            subseed(config.seed, "adapt-reinit"),
        );
        model.decoder = fresh.decoder;
    }

    let train_config = config.train_config(&config.adapt, scheme, &format!("adapt-{scheme}"));
    let history = train(&mut model, &corpus, &train_config)?;

    ensure_workdir(config)?;
    let out_path = config.adapted_checkpoint_path(scheme);
    save_checkpoint(&model, &out_path)?;
    let final_loss = history.last().copied().unwrap_or(f64::NAN);
    write_loss_csv(
        &config.workdir.join(format!("adapt_{scheme}_loss.csv")),
        &[history],
    )?;
    write_manifest(config, &format!("adapt_{scheme}"), &[&ckpt_path, &pairs_path])?;
    Ok(AdaptOutcome {
        checkpoint: out_path,
        pairs_used: corpus.len(),
        skipped_long,
        slot_token_count,
        final_loss,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GenerateOutcome {
    pub inputs: usize,
    pub generated: usize,
    pub all_rejected_inputs: usize,
    pub skipped_slotless: usize,
    pub stats: RejectionStats,
}

fn decode_hypotheses(
    config: &PipelineConfig,
    model: &Seq2SeqModel,
    source_ids: &[usize],
    input_index: usize,
) -> Result<Vec<Hypothesis>> {
    if config.decode.posterior_sampling {
        sample_hypotheses(
            model,
            source_ids,
            config.decode.samples,
            config.decode.max_len,
            subseed(config.seed, &format!("sample-hypotheses-{input_index}")),
        )
    } else {
        beam_search(
            model,
            source_ids,
            &BeamParams {
                beam_width: config.decode.beam_width,
                n_best: config.decode.n_best,
                max_len: config.decode.max_len,
                length_normalize: config.decode.length_normalize,
            },
        )
    }
}

/// Annotate a no-slot-copy output by locating every input slot value in it,
/// leftmost first, non-overlapping and in input-slot order.
fn annotate_by_values(tokens: &[Token], input_slots: &[SlotSpan]) -> Option<Vec<SlotSpan>> {
    let mut taken = vec![false; tokens.len()];
    let mut spans = Vec::new();
    for slot in input_slots {
        let w = slot.value.len();
        let mut found = None;
        if w <= tokens.len() {
            for start in 0..=tokens.len() - w {
                if taken[start..start + w].iter().any(|&t| t) {
                    continue;
                }
                if tokens[start..start + w] == slot.value[..] {
                    found = Some(start);
                    break;
                }
            }
        }
        let start = found?;
        for t in &mut taken[start..start + slot.value.len()] {
            *t = true;
        }
        spans.push(SlotSpan::new(
            slot.slot_type.clone(),
            start,
            start + slot.value.len(),
            slot.value.clone(),
        ));
    }
    spans.sort_by_key(|s| s.start);
    Some(spans)
}

/// Generate paraphrases for every input utterance, keep the accepted ones,
/// and write the augmented dataset (originals plus paraphrases) and the
/// generation log.
pub fn run_generate(
    config: &PipelineConfig,
    checkpoint: &Path,
    input: Option<&Path>,
    output: Option<&Path>,
) -> Result<GenerateOutcome> {
    config.validate()?;
    let model = load_checkpoint(checkpoint)?;
    let scheme = match model.scheme {
        Some(Scheme::MtPretrain) | None => {
            return Err(Error::Checkpoint {
                path: checkpoint.display().to_string(),
                message: "generation needs a stage-two checkpoint".into(),
            })
        }
        Some(s) => s,
    };
    let input_path = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.train_data_path());
    let rows = read_utterances(&input_path)?;
    let surrogates = if scheme.uses_slot_copying() {
        Some(read_surrogates(config)?)
    } else {
        None
    };

    let mut outcome = GenerateOutcome {
        inputs: rows.len(),
        ..GenerateOutcome::default()
    };
    let mut log = Vec::new();
    let mut augmented: Vec<(AnnotatedUtterance, Origin)> = Vec::new();
    let filter_options = FilterOptions {
        drop_identity: config.decode.drop_identity,
    };

    for (index, (utterance, _)) in rows.iter().enumerate() {
        augmented.push((utterance.clone(), Origin::Grammar));
        let accepted: Vec<AcceptedParaphrase> = match &surrogates {
            Some(surrogates) => {
                let (source_tokens, bindings) = match abstract_input(utterance, surrogates) {
                    Ok(x) => x,
                    Err(Error::SlotlessUtterance) => {
                        outcome.skipped_slotless += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let source_ids = model.input_vocab.encode(&source_tokens);
                let hypotheses = decode_hypotheses(config, &model, &source_ids, index)?;
                let (accepted, stats) = filter_candidates(
                    &hypotheses,
                    &bindings,
                    &utterance.tokens,
                    &model.output_vocab,
                    &filter_options,
                );
                outcome.stats.add(&stats);
                accepted
            }
            None => {
                let source_ids = model.input_vocab.encode(&utterance.tokens);
                let hypotheses = decode_hypotheses(config, &model, &source_ids, index)?;
                let mut stats = RejectionStats::default();
                let mut accepted = Vec::new();
                let mut seen = std::collections::HashMap::new();
                for hyp in &hypotheses {
                    stats.hypotheses += 1;
                    let tokens = detokenize(hyp, &model.output_vocab);
                    match annotate_by_values(&tokens, &utterance.slots) {
                        None => stats.missing_slot += 1,
                        Some(spans) => {
                            if filter_options.drop_identity && tokens == utterance.tokens {
                                stats.identity_dropped += 1;
                                continue;
                            }
                            match seen.get(&tokens) {
                                Some(&i) => {
                                    stats.deduplicated += 1;
                                    let slot: &mut AcceptedParaphrase = &mut accepted[i];
                                    if hyp.score > slot.score {
                                        slot.score = hyp.score;
                                    }
                                }
                                None => {
                                    seen.insert(tokens.clone(), accepted.len());
                                    accepted.push(AcceptedParaphrase {
                                        tokens,
                                        slots: spans,
                                        score: hyp.score,
                                    });
                                }
                            }
                        }
                    }
                }
                stats.accepted = accepted.len();
                outcome.stats.add(&stats);
                accepted
            }
        };

        if accepted.is_empty() {
            outcome.all_rejected_inputs += 1;
        }
        for p in accepted {
            let generated = AnnotatedUtterance::new(
                utterance.skill_id.clone(),
                utterance.intent.clone(),
                p.tokens.clone(),
                p.slots.clone(),
            )?;
            log.push(GenerationRecord::Paraphrase {
                source: utterance.tokens.clone(),
                output: p.tokens.clone(),
                score: p.score,
                scheme: scheme.to_string(),
            });
            augmented.push((generated, Origin::Paraphrase));
            outcome.generated += 1;
        }
    }

    log.push(GenerationRecord::Summary {
        inputs: outcome.inputs,
        all_rejected_inputs: outcome.all_rejected_inputs,
        skipped_slotless: outcome.skipped_slotless,
        stats: outcome.stats,
    });

    ensure_workdir(config)?;
    let output_path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.augmented_data_path(scheme));
    write_utterances(&output_path, &augmented)?;
    write_generation_log(&config.generation_log_path(scheme), &log)?;
    write_manifest(
        config,
        &format!("generate_{scheme}"),
        &[checkpoint, &input_path],
    )?;
    Ok(outcome)
}

/// Train the intent classifier and slot tagger on a dataset and persist
/// both as JSON.
pub fn run_train_nlu(
    config: &PipelineConfig,
    data_path: &Path,
    out_dir: Option<&Path>,
) -> Result<(PathBuf, PathBuf)> {
    config.validate()?;
    let rows = read_utterances(data_path)?;
    let (ic, ner) = train_nlu_models(config, &rows)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.workdir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ic_path = dir.join("ic_model.json");
    let ner_path = dir.join("ner_model.json");
    std::fs::write(&ic_path, ic.to_json()).map_err(|e| Error::io(&ic_path, e))?;
    std::fs::write(&ner_path, ner.to_json()).map_err(|e| Error::io(&ner_path, e))?;
    write_manifest(config, "train_nlu", &[data_path])?;
    Ok((ic_path, ner_path))
}

fn train_nlu_models(
    config: &PipelineConfig,
    rows: &[(AnnotatedUtterance, Origin)],
) -> Result<(crate::nlu::MaxEntModel, crate::nlu::CrfModel)> {
    let ic_data: Vec<(Vec<Token>, String)> = rows
        .iter()
        .map(|(u, _)| (u.tokens.clone(), u.intent.clone()))
        .collect();
    let ner_data: Vec<(Vec<Token>, Vec<crate::nlu::Tag>)> = rows
        .iter()
        .map(|(u, _)| (u.tokens.clone(), spans_to_bio(u)))
        .collect();
    let nlu_config = config.nlu_config();
    let ic = train_ic(&ic_data, &nlu_config)?;
    let ner = train_ner(&ner_data, &nlu_config)?;
    Ok((ic, ner))
}

/// Train baselines on each dataset, evaluate on the held-out set, and
/// produce the report with relative changes against the first dataset.
pub fn run_eval(
    config: &PipelineConfig,
    baseline: &Path,
    augmented: &[(String, PathBuf)],
    test: &Path,
) -> Result<EvalReport> {
    config.validate()?;
    let test_rows = read_utterances(test)?;
    if test_rows.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let test_data: Vec<AnnotatedUtterance> = test_rows.into_iter().map(|(u, _)| u).collect();

    let mut datasets: Vec<(String, PathBuf)> = vec![("baseline".to_string(), baseline.to_path_buf())];
    datasets.extend(augmented.iter().cloned());

    let mut rows: Vec<ReportRow> = Vec::new();
    for (name, path) in &datasets {
        let data = read_utterances(path)?;
        if data.is_empty() {
            return Err(Error::invalid(format!("dataset {name} is empty")));
        }
        let (ic, ner) = train_nlu_models(config, &data)?;
        let pairs: Vec<EvalPair> = test_data
            .iter()
            .map(|u| {
                let (intent, _) = ic.classify(&u.tokens);
                let spans = tag(&ner, &u.tokens);
                EvalPair::new(u, &intent, &spans)
            })
            .collect();
        let train_data: Vec<AnnotatedUtterance> = data.iter().map(|(u, _)| u.clone()).collect();
        let input_size = data.iter().filter(|(_, o)| *o == Origin::Grammar).count();
        let output_size = data.iter().filter(|(_, o)| *o == Origin::Paraphrase).count();
        rows.push(ReportRow {
            model: name.clone(),
            bigram_coverage: bigram_coverage(&train_data, &test_data)?,
            word_coverage: word_coverage(
                train_data.iter().flat_map(|u| u.tokens.iter()),
                test_data.iter().flat_map(|u| u.tokens.iter()),
            )?,
            input_size,
            output_size,
            icer: icer(&pairs)?,
            ser: ser(&pairs)?,
            semer: semer(&pairs)?,
            rel_icer: None,
            rel_ser: None,
            rel_semer: None,
        });
    }

    let base = rows[0].clone();
    for (i, row) in rows.iter_mut().enumerate() {
        if i == 0 {
            row.rel_icer = Some(0.0);
            row.rel_ser = Some(0.0);
            row.rel_semer = Some(0.0);
        } else {
            row.rel_icer = relative_change(base.icer, row.icer);
            row.rel_ser = relative_change(base.ser, row.ser);
            row.rel_semer = relative_change(base.semer, row.semer);
        }
    }

    let report = EvalReport {
        skill_id: test_data[0].skill_id.clone(),
        test_size: test_data.len(),
        test_unique_patterns: unique_patterns(&test_data),
        rows,
    };
    ensure_workdir(config)?;
    std::fs::write(config.report_text_path(), report.render_text())
        .map_err(|e| Error::io(config.report_text_path(), e))?;
    std::fs::write(config.report_json_path(), report.to_json())
        .map_err(|e| Error::io(config.report_json_path(), e))?;
    let mut inputs: Vec<&Path> = vec![baseline, test];
    for (_, p) in augmented {
        inputs.push(p);
    }
    write_manifest(config, "eval", &inputs)?;
    Ok(report)
}

/// Re-render a saved JSON report as its plain-text table.
pub fn render_report_file(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(EvalReport::from_json(&text)?.render_text())
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub sample: SampleOutcome,
    pub mine: MineOutcome,
    pub pretrain: PretrainOutcome,
    pub adapt: AdaptOutcome,
    pub generate: GenerateOutcome,
    pub report: EvalReport,
}

/// The whole desk experiment end to end under one scheme: sample, mine,
/// pretrain, adapt, generate, evaluate.
pub fn run_full_experiment(config: &PipelineConfig, scheme: Scheme) -> Result<ExperimentOutcome> {
    let sample = run_sample(config)?;
    let mine = run_mine(config, None)?;
    let pretrain = run_pretrain(config)?;
    let adapt = run_adapt(config, scheme, None, None)?;
    let generate = run_generate(config, &adapt.checkpoint, None, None)?;
    let report = run_eval(
        config,
        &config.train_data_path(),
        &[(
            scheme.to_string(),
            config.augmented_data_path(scheme),
        )],
        &config.test_data_path(),
    )?;
    Ok(ExperimentOutcome {
        sample,
        mine,
        pretrain,
        adapt,
        generate,
        report,
    })
}
