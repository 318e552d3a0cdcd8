// embed2text command-line front end.
//
// Commands: build-dataset, train, invert, evaluate, defend, analyze.
// Every command resolves its configuration from (defaults < config file <
// flags), rejects unknown config keys, and writes a manifest.json with the
// fully resolved configuration into the run directory.
//
// Exit codes: 0 success, 2 configuration error, 1 runtime error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "embed2text/common.hpp"
#include "embed2text/corpus.hpp"
#include "embed2text/decode.hpp"
#include "embed2text/defense.hpp"
#include "embed2text/embedder.hpp"
#include "embed2text/embedding_cache.hpp"
#include "embed2text/hash.hpp"
#include "embed2text/inversion.hpp"
#include "embed2text/metrics.hpp"
#include "embed2text/remote_embedder.hpp"
#include "embed2text/svg_plot.hpp"
#include "embed2text/trainer.hpp"

#ifndef EMBED2TEXT_VERSION_STRING
#define EMBED2TEXT_VERSION_STRING "unknown"
#endif

namespace {

using namespace embed2text;
using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// configuration plumbing
// ---------------------------------------------------------------------------

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

void reject_unknown_keys(const json& config, const std::set<std::string>& known,
                         const std::string& command) {
  for (const auto& [key, value] : config.items()) {
    if (!known.count(key)) {
      throw ConfigError("unknown config key '" + key + "' for command '" + command + "'");
    }
  }
}

template <typename T>
T get_or(const json& config, const std::string& key, T fallback) {
  if (config.contains(key)) return config.at(key).get<T>();
  return fallback;
}

std::string require_string(const json& config, const std::string& key,
                           const std::string& command) {
  if (!config.contains(key) || !config.at(key).is_string() ||
      config.at(key).get<std::string>().empty()) {
    throw ConfigError("command '" + command + "' requires config key '" + key + "'");
  }
  return config.at(key).get<std::string>();
}

void write_manifest(const std::string& out_dir, const std::string& command, const json& resolved) {
  fs::create_directories(out_dir);
  json manifest;
  manifest["command"] = command;
  manifest["version"] = EMBED2TEXT_VERSION_STRING;
  manifest["config"] = resolved;
  std::ofstream out(out_dir + "/manifest.json", std::ios::trunc);
  if (!out) throw ConfigError("cannot write manifest to '" + out_dir + "'");
  out << manifest.dump(2) << "\n";
}

// Embedder specs:
//   "synthetic-bytes-d32-seed7" / "synthetic-words-d32-seed7"
//   "local:<weights-path>"
//   "remote:<model_name>:<dimension>[:unit]"  (endpoint from EMBED_API_* env)
std::shared_ptr<Embedder> resolve_embedder(const std::string& spec,
                                           std::shared_ptr<EmbeddingCache>* remote_cache_slot,
                                           const std::string& cache_path) {
  if (spec.rfind("synthetic-", 0) == 0) return make_embedder_from_id(spec);
  if (spec.rfind("local:", 0) == 0) return load_local_encoder(spec.substr(6));
  if (spec.rfind("remote:", 0) == 0) {
    const std::string rest = spec.substr(7);
    const auto colon = rest.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("remote embedder spec must be remote:<model_name>:<dim>[:unit]");
    }
    EmbedderDescriptor desc;
    desc.kind = EmbedderKind::kRemoteApi;
    const std::string model_name = rest.substr(0, colon);
    std::string dim_part = rest.substr(colon + 1);
    desc.unit_norm = dim_part.size() > 5 && dim_part.substr(dim_part.size() - 5) == ":unit";
    if (desc.unit_norm) dim_part = dim_part.substr(0, dim_part.size() - 5);
    desc.dimension = std::stoi(dim_part);
    desc.model_id = "remote-" + model_name + "-d" + std::to_string(desc.dimension);
    desc.max_input_tokens = 8191;
    std::shared_ptr<EmbeddingCache> cache;
    if (!cache_path.empty()) {
      cache = std::make_shared<EmbeddingCache>(cache_path, desc);
      if (remote_cache_slot) *remote_cache_slot = cache;
    }
    return std::make_shared<RemoteEmbedder>(remote_endpoint_from_env(model_name), desc, cache);
  }
  throw ConfigError("unrecognized embedder spec '" + spec +
                    "' (expected synthetic-*, local:<path> or remote:<name>:<dim>)");
}

struct EmbedderBundle {
  std::shared_ptr<Embedder> embedder;
  std::unique_ptr<EmbeddingCache> cache;  // null for remote (cache lives inside the client)

  EmbeddingCache* cache_ptr() const { return cache.get(); }
};

EmbedderBundle open_embedder(const json& config, const std::string& command) {
  EmbedderBundle bundle;
  const std::string spec = require_string(config, "embedder", command);
  const std::string cache_path = get_or<std::string>(config, "cache", "");
  std::shared_ptr<EmbeddingCache> remote_cache;
  bundle.embedder = resolve_embedder(spec, &remote_cache, cache_path);
  if (!cache_path.empty() && !remote_cache) {
    bundle.cache =
        std::make_unique<EmbeddingCache>(cache_path, bundle.embedder->descriptor());
  }
  return bundle;
}

InverterConfig model_config_from_json(const json& config, const Tokenizer& tokenizer,
                                      const EmbedderDescriptor& embedder) {
  const json m = config.value("model", json::object());
  reject_unknown_keys(m,
                      {"d_enc", "enc_layers", "dec_layers", "heads", "d_ffn", "proj_len",
                       "max_tokens", "seed"},
                      "train.model");
  InverterConfig cfg;
  cfg.tokenizer_id = tokenizer.id();
  cfg.vocab = tokenizer.vocab_size();
  cfg.d_embedding = embedder.dimension;
  cfg.d_enc = get_or<int>(m, "d_enc", 64);
  cfg.enc_layers = get_or<int>(m, "enc_layers", 1);
  cfg.dec_layers = get_or<int>(m, "dec_layers", 2);
  cfg.heads = get_or<int>(m, "heads", 4);
  cfg.d_ffn = get_or<int>(m, "d_ffn", 128);
  cfg.proj_len = get_or<int>(m, "proj_len", 16);
  cfg.max_tokens = get_or<int>(m, "max_tokens", 32);
  cfg.seed = get_or<uint64_t>(m, "seed", 1);
  cfg.embedder_model_id = embedder.model_id;
  cfg.validate();
  return cfg;
}

TrainHyper hyper_from_json(const json& config) {
  const json t = config.value("train", json::object());
  reject_unknown_keys(
      t, {"lr", "epochs", "batch", "warmup_frac", "clip_norm", "seed", "log_every"}, "train.train");
  TrainHyper hp;
  hp.lr = get_or<double>(t, "lr", 2e-4);
  hp.epochs = get_or<int>(t, "epochs", 100);
  hp.batch_size = get_or<int>(t, "batch", 128);
  hp.warmup_frac = get_or<double>(t, "warmup_frac", 0.05);
  hp.clip_norm = get_or<double>(t, "clip_norm", 1.0);
  hp.seed = get_or<uint64_t>(t, "seed", 0);
  hp.log_every = get_or<int>(t, "log_every", 25);
  return hp;
}

struct LoadedStack {
  InverterStack stack;
  std::shared_ptr<InversionModel> base;
  std::shared_ptr<InversionModel> corrector;
};

LoadedStack load_stack(const json& config, Embedder& embedder, const std::string& command,
                       bool corrector_required) {
  LoadedStack out;
  out.stack.tokenizer = make_tokenizer("bytes");
  out.stack.phi_empty = embed_empty_marker(embedder);
  const std::string base_path = get_or<std::string>(config, "base_ckpt", "");
  const std::string corr_path = get_or<std::string>(config, "corrector_ckpt", "");
  if (!base_path.empty()) {
    auto loaded = load_checkpoint(base_path);
    out.base = std::make_shared<InversionModel>(loaded.state.config, std::move(loaded.state.params));
    out.stack.base = out.base;
  }
  if (!corr_path.empty()) {
    auto loaded = load_checkpoint(corr_path);
    out.corrector =
        std::make_shared<InversionModel>(loaded.state.config, std::move(loaded.state.params));
    out.stack.corrector = out.corrector;
  }
  if (corrector_required && !out.corrector) {
    throw ConfigError("command '" + command + "' requires 'corrector_ckpt'");
  }
  return out;
}

BeamConfig beam_config_from_json(const json& config) {
  BeamConfig bc;
  bc.max_rounds = get_or<int>(config, "steps", 20);
  bc.width = get_or<int>(config, "beam_width", 1);
  bc.feedback_enabled = get_or<bool>(config, "feedback", true);
  bc.seed = get_or<uint64_t>(config, "seed", 0);
  const std::string init = get_or<std::string>(config, "init", "base");
  if (init == "base") {
    bc.initializer = InitializerKind::kBaseModel;
  } else if (init == "random") {
    bc.initializer = InitializerKind::kRandomTokens;
  } else if (init == "fixed") {
    // shipped preset: an arbitrary unrelated sentence
    bc.initializer = InitializerKind::kFixedText;
    bc.fixed_text =
        "there's no reverse on a motorcycle, as my friend found out quite dramatically the "
        "other day";
  } else if (init == "the32") {
    bc.initializer = InitializerKind::kFixedText;
    for (int i = 0; i < 32; ++i) bc.fixed_text += "the ";
  } else if (init.rfind("fixed:", 0) == 0) {
    bc.initializer = InitializerKind::kFixedText;
    bc.fixed_text = init.substr(6);
  } else {
    throw ConfigError("init must be one of base, random, fixed, the32, fixed:<text>");
  }
  bc.validate();
  return bc;
}

std::vector<InversionExample> load_dataset_for(const json& config, EmbedderBundle& bundle,
                                               const std::string& command) {
  const std::string path = require_string(config, "dataset", command);
  auto dataset = load_dataset_manifest(path, *bundle.embedder, bundle.cache_ptr());
  const long limit = get_or<long>(config, "limit", 0);
  if (limit > 0 && long(dataset.size()) > limit) dataset.resize(size_t(limit));
  if (dataset.empty()) throw ConfigError("dataset '" + path + "' is empty");
  return dataset;
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_build_dataset(const json& config) {
  reject_unknown_keys(config,
                      {"corpus", "synthetic_docs", "synthetic_min_len", "synthetic_max_len",
                       "synthetic_vocab", "synthetic_seed", "tokenizer", "max_tokens", "embedder",
                       "cache", "out", "eval_fraction", "split_seed", "seed"},
                      "build-dataset");
  const std::string out_dir = require_string(config, "out", "build-dataset");
  const std::string tokenizer_id = get_or<std::string>(config, "tokenizer", "bytes");
  const int max_tokens = get_or<int>(config, "max_tokens", 32);

  std::string corpus_path = get_or<std::string>(config, "corpus", "");
  const int synthetic_docs = get_or<int>(config, "synthetic_docs", 0);
  fs::create_directories(out_dir);
  if (corpus_path.empty()) {
    if (synthetic_docs <= 0) {
      throw ConfigError("build-dataset requires 'corpus' or 'synthetic_docs'");
    }
    const auto docs = generate_synthetic_documents(
        synthetic_docs, get_or<int>(config, "synthetic_min_len", 3),
        get_or<int>(config, "synthetic_max_len", 8), get_or<int>(config, "synthetic_vocab", 256),
        get_or<uint64_t>(config, "synthetic_seed", get_or<uint64_t>(config, "seed", 1)));
    corpus_path = out_dir + "/corpus.jsonl";
    write_corpus_jsonl(corpus_path, docs);
  }

  EmbedderBundle bundle = open_embedder(config, "build-dataset");
  IngestStats stats;
  const auto ingested = ingest_corpus(corpus_path, tokenizer_id, max_tokens, &stats);
  if (ingested.empty()) throw ConfigError("corpus '" + corpus_path + "' produced no documents");
  GetOrEmbedStats embed_stats;
  const auto dataset = build_inversion_dataset(ingested, *bundle.embedder, bundle.cache_ptr(),
                                               &embed_stats);
  write_dataset_manifest(out_dir + "/dataset.jsonl", dataset, tokenizer_id);

  const double eval_fraction = get_or<double>(config, "eval_fraction", 0.0);
  if (eval_fraction > 0.0) {
    const auto [train, eval] =
        split_train_eval(dataset, eval_fraction,
                         get_or<uint64_t>(config, "split_seed", get_or<uint64_t>(config, "seed", 1)));
    write_dataset_manifest(out_dir + "/train.jsonl", train, tokenizer_id);
    write_dataset_manifest(out_dir + "/eval.jsonl", eval, tokenizer_id);
  }

  json resolved = config;
  resolved["corpus"] = corpus_path;
  resolved["stats"] = {{"documents", dataset.size()},
                       {"malformed_skipped", stats.malformed_skipped},
                       {"empty_dropped", stats.empty_dropped},
                       {"truncated", stats.truncated},
                       {"embedded", embed_stats.embedded},
                       {"cache_hits", embed_stats.hits}};
  write_manifest(out_dir, "build-dataset", resolved);
  std::cout << "dataset: " << dataset.size() << " examples -> " << out_dir << "/dataset.jsonl\n";
  return 0;
}

int cmd_train(const json& config_in) {
  json config = config_in;
  reject_unknown_keys(config,
                      {"role", "dataset", "embedder", "cache", "out", "model", "train",
                       "base_ckpt", "augment_copies", "augment_seed", "resume", "workers", "seed",
                       "include_base_case"},
                      "train");
  const std::string role = require_string(config, "role", "train");
  if (role != "base" && role != "corrector") {
    throw ConfigError("train role must be 'base' or 'corrector'");
  }
  const std::string out_dir = require_string(config, "out", "train");
  EmbedderBundle bundle = open_embedder(config, "train");
  auto tokenizer = make_tokenizer("bytes");
  const auto dataset = load_dataset_for(config, bundle, "train");

  InverterConfig model_cfg =
      model_config_from_json(config, *tokenizer, bundle.embedder->descriptor());
  TrainHyper hp = hyper_from_json(config);
  hp.workers = get_or<int>(config, "workers", 1);
  fs::create_directories(out_dir);
  hp.metrics_path = out_dir + "/metrics.jsonl";

  std::vector<ConditionedExample> examples;
  if (role == "base") {
    examples = make_base_examples(dataset, embed_empty_marker(*bundle.embedder));
  } else {
    const std::string base_path = require_string(config, "base_ckpt", "train --role corrector");
    auto loaded = load_checkpoint(base_path);
    const InversionModel base(loaded.state.config, std::move(loaded.state.params));
    const EmbeddingVector phi_empty = embed_empty_marker(*bundle.embedder);
    const Vec empty_vec =
        Eigen::Map<const Vec>(phi_empty.values.data(), Eigen::Index(phi_empty.values.size()));
    auto records = generate_hypothesis_dataset(
        [&](const InversionExample& ex) {
          const Vec e = Eigen::Map<const Vec>(ex.target_embedding.values.data(),
                                              Eigen::Index(ex.target_embedding.values.size()));
          auto decoded = base.decode_beam(base.encode(e, empty_vec, {}), 1, 1);
          return tokenizer->from_ids(std::move(decoded.at(0).ids));
        },
        dataset, *bundle.embedder, bundle.cache_ptr());
    double closeness_sum = 0.0;
    for (const auto& rec : records) {
      closeness_sum += cosine_similarity(rec.hypothesis_embedding, rec.example.target_embedding);
    }
    const double mean_closeness = closeness_sum / double(records.size());
    std::cout << "hypothesis closeness: mean cos " << mean_closeness << " over "
              << records.size() << " records\n";
    config["hypothesis_closeness_mean"] = mean_closeness;

    HypothesisAugmentOptions aug;
    aug.copies_per_example = get_or<int>(config, "augment_copies", 4);
    aug.seed = get_or<uint64_t>(config, "augment_seed", 7);
    if (aug.copies_per_example > 0) {
      records = augment_hypothesis_records(records, *tokenizer, *bundle.embedder,
                                           bundle.cache_ptr(), aug);
    }
    examples = make_corrector_examples(records);
    if (get_or<bool>(config, "include_base_case", false)) {
      // one network can serve both roles: the base case is an empty hypothesis
      const auto base_examples = make_base_examples(dataset, phi_empty);
      examples.insert(examples.end(), base_examples.begin(), base_examples.end());
    }
  }

  std::optional<TrainState> resume;
  if (get_or<bool>(config, "resume", false)) {
    resume = load_checkpoint(out_dir).state;
  }
  const TrainState state = train_model(model_cfg, examples, hp, resume);
  save_checkpoint(out_dir, state, role);
  config["examples"] = examples.size();
  write_manifest(out_dir, "train", config);
  std::cout << "trained " << role << ": step " << state.opt.step << ", train NLL "
            << state.best_eval_nll << " -> " << out_dir << "\n";
  return 0;
}

struct InversionRun {
  std::vector<CorrectionTrace> traces;
  ReconstructionReport report;
};

InversionRun run_inversion(const json& config, EmbedderBundle& bundle,
                           const std::vector<InversionExample>& dataset,
                           const LoadedStack& stack, const BeamConfig& beam,
                           const std::string& method_id) {
  auto tokenizer = make_tokenizer("bytes");
  InversionRun run;
  run.traces.resize(dataset.size());

  EvalOptions opts;
  opts.dataset_id = get_or<std::string>(config, "dataset", "dataset");
  opts.method_id = method_id;
  opts.workers = get_or<int>(config, "workers", 1);
  std::mutex trace_mu;
  std::unordered_map<std::string, size_t> index_by_doc;
  for (size_t i = 0; i < dataset.size(); ++i) index_by_doc[dataset[i].doc_id] = i;

  const InvertFn invert = [&](const InversionExample& ex) {
    QueryLedger ledger(bundle.embedder);
    CorrectionTrace trace = beam.width == 1
                                ? invert_iterative(stack.stack, ledger, ex.target_embedding, beam)
                                : invert_sbeam(stack.stack, ledger, ex.target_embedding, beam);
    TokenSequence out = trace.final_member.seq;
    {
      std::lock_guard lock(trace_mu);
      run.traces[index_by_doc.at(ex.doc_id)] = std::move(trace);
    }
    return out;
  };
  run.report =
      evaluate_dataset(invert, dataset, *tokenizer, *bundle.embedder, bundle.cache_ptr(), opts);
  return run;
}

int cmd_invert(const json& config, const std::string& command) {
  reject_unknown_keys(config,
                      {"dataset", "embedder", "cache", "out", "base_ckpt", "corrector_ckpt",
                       "steps", "beam_width", "feedback", "init", "seed", "limit", "workers",
                       "per_example", "set_f1"},
                      command);
  const std::string out_dir = require_string(config, "out", command);
  EmbedderBundle bundle = open_embedder(config, command);
  const auto dataset = load_dataset_for(config, bundle, command);
  const BeamConfig beam = beam_config_from_json(config);
  const bool needs_corrector = beam.max_rounds > 0;
  LoadedStack stack = load_stack(config, *bundle.embedder, command, needs_corrector);
  if (beam.initializer == InitializerKind::kBaseModel && !stack.base) {
    throw ConfigError("init 'base' requires 'base_ckpt'");
  }

  char method[128];
  std::snprintf(method, sizeof(method), "%s b=%d r=%d%s init=%s",
                beam.width > 1 ? "sbeam" : "greedy", beam.width, beam.max_rounds,
                beam.feedback_enabled ? "" : " no-feedback",
                to_string(beam.initializer).c_str());
  InversionRun run = run_inversion(config, bundle, dataset, stack, beam, method);

  fs::create_directories(out_dir);
  {
    std::ofstream traces(out_dir + "/traces.jsonl", std::ios::trunc);
    for (const auto& trace : run.traces) traces << trace_to_jsonl(trace);
  }
  write_report_json(out_dir + "/report.json", run.report);
  write_text_file(out_dir + "/report.txt", render_report_table(run.report));

  if (command == "evaluate") {
    // name recovery over references that carry name spans
    bool any_spans = false;
    for (const auto& ex : dataset) any_spans |= !ex.name_spans.empty();
    if (any_spans) {
      std::vector<std::string> preds;
      for (const auto& rec : run.report.per_example) preds.push_back(rec.pred_text);
      NameRecoveryReport names = name_recovery(preds, dataset);
      names.reconstruction = run.report;
      json j{{"first", names.first},
             {"last", names.last},
             {"full", names.full},
             {"names_total", names.names_total},
             {"refs_skipped", names.refs_skipped}};
      write_text_file(out_dir + "/name_recovery.json", j.dump(2) + "\n");
    }
    // cosine-vs-bleu scatter data and plot
    std::vector<double> xs, ys;
    for (const auto& rec : run.report.per_example) {
      xs.push_back(rec.cos);
      ys.push_back(rec.bleu);
    }
    write_text_file(out_dir + "/cos_vs_bleu.svg",
                    svg_scatter(xs, ys, "cosine vs BLEU", "cosine", "BLEU"));
  }

  write_manifest(out_dir, command, config);
  std::cout << render_report_table(run.report, false);
  std::cout << "traces: " << run.traces.size() << " -> " << out_dir << "/traces.jsonl\n";
  return 0;
}

int cmd_defend(const json& config) {
  reject_unknown_keys(config,
                      {"dataset", "embedder", "cache", "out", "base_ckpt", "corrector_ckpt",
                       "steps", "lambdas", "noise_seed", "limit", "workers", "seed"},
                      "defend");
  const std::string out_dir = require_string(config, "out", "defend");
  EmbedderBundle bundle = open_embedder(config, "defend");
  const auto dataset = load_dataset_for(config, bundle, "defend");
  LoadedStack stack = load_stack(config, *bundle.embedder, "defend", true);
  if (!stack.base) throw ConfigError("defend requires 'base_ckpt'");

  NoiseSweepOptions opts;
  opts.lambdas = get_or<std::vector<double>>(config, "lambdas", default_noise_grid());
  opts.noise_seed = get_or<uint64_t>(config, "noise_seed", 13);
  opts.eval.dataset_id = get_or<std::string>(config, "dataset", "dataset");
  opts.eval.method_id = "defend";
  opts.eval.workers = get_or<int>(config, "workers", 1);

  const int steps = get_or<int>(config, "steps", 10);  // greedy corrective budget
  const AttackFactory make_attack = [&](std::shared_ptr<Embedder> noisy) {
    return InvertFn([&, noisy](const InversionExample& ex) {
      QueryLedger ledger(noisy);
      BeamConfig bc;
      bc.width = 1;
      bc.max_rounds = steps;
      return invert_iterative(stack.stack, ledger, ex.target_embedding, bc).final_member.seq;
    });
  };

  const RetrievalTask task = make_self_retrieval_task(dataset);
  auto tokenizer = make_tokenizer("bytes");
  const auto points = noise_sweep(bundle.embedder, dataset, task, make_attack, *tokenizer,
                                  bundle.cache_ptr(), opts);

  fs::create_directories(out_dir);
  write_tradeoff_csv(out_dir + "/tradeoff.csv", points);
  std::vector<SvgSeries> series(2);
  series[0].label = "ndcg@10";
  series[1].label = "cos";
  for (const auto& p : points) {
    series[0].x.push_back(p.lambda);
    series[0].y.push_back(p.ndcg_at_10);
    series[1].x.push_back(p.lambda);
    series[1].y.push_back(p.reconstruction.cos);
  }
  write_text_file(out_dir + "/tradeoff.svg",
                  svg_line_chart(series, "retrieval vs reconstruction under noise", "lambda",
                                 "score", /*log_x=*/true));
  write_manifest(out_dir, "defend", config);
  for (const auto& p : points) {
    std::cout << "lambda " << p.lambda << ": ndcg " << p.ndcg_at_10 << ", bleu "
              << p.reconstruction.bleu << ", cos " << p.reconstruction.cos << "\n";
  }
  return 0;
}

int cmd_analyze(const json& config) {
  reject_unknown_keys(config,
                      {"mode", "out", "dataset", "embedder", "cache", "base_ckpt", "report",
                       "train_corpus", "tokenizer", "max_tokens", "workers", "seed"},
                      "analyze");
  const std::string mode = require_string(config, "mode", "analyze");
  const std::string out_dir = require_string(config, "out", "analyze");
  fs::create_directories(out_dir);

  if (mode == "closeness") {
    EmbedderBundle bundle = open_embedder(config, "analyze");
    const auto dataset = load_dataset_for(config, bundle, "analyze");
    LoadedStack stack = load_stack(config, *bundle.embedder, "analyze", false);
    if (!stack.base) throw ConfigError("analyze closeness requires 'base_ckpt'");
    auto tokenizer = make_tokenizer("bytes");
    const auto phi_empty = embed_empty_marker(*bundle.embedder);
    const Vec empty_vec =
        Eigen::Map<const Vec>(phi_empty.values.data(), Eigen::Index(phi_empty.values.size()));
    const auto records = generate_hypothesis_dataset(
        [&](const InversionExample& ex) {
          const Vec e = Eigen::Map<const Vec>(ex.target_embedding.values.data(),
                                              Eigen::Index(ex.target_embedding.values.size()));
          auto decoded = stack.base->decode_beam(stack.base->encode(e, empty_vec, {}), 1, 1);
          return tokenizer->from_ids(std::move(decoded.at(0).ids));
        },
        dataset, *bundle.embedder, bundle.cache_ptr());
    const auto hist = analyze_hypothesis_closeness(records);
    json j;
    j["mean"] = hist.mean;
    j["count"] = hist.count;
    j["lo"] = hist.lo;
    j["hi"] = hist.hi;
    j["bins"] = hist.bins;
    j["full_scale_reference_mean"] = full_scale_hypothesis_closeness_mean();
    write_text_file(out_dir + "/closeness.json", j.dump(2) + "\n");
    write_text_file(out_dir + "/closeness.svg",
                    svg_histogram(hist.bins, hist.lo, hist.hi, "hypothesis closeness",
                                  "cos(e, phi(hypothesis))"));
    std::cout << "closeness mean " << hist.mean << " over " << hist.count << " hypotheses\n";
  } else if (mode == "freq-buckets") {
    const std::string report_path = require_string(config, "report", "analyze freq-buckets");
    const std::string corpus_path = require_string(config, "train_corpus", "analyze freq-buckets");
    std::ifstream in(report_path);
    if (!in) throw ConfigError("cannot open report '" + report_path + "'");
    const json report = json::parse(in);
    if (!report.contains("per_example")) {
      throw ConfigError("report '" + report_path + "' lacks per_example records");
    }
    EmbedderBundle bundle = open_embedder(config, "analyze");
    const auto dataset = load_dataset_for(config, bundle, "analyze");
    std::unordered_map<std::string, const InversionExample*> by_id;
    for (const auto& ex : dataset) by_id[ex.doc_id] = &ex;

    std::vector<std::string> preds, refs;
    for (const auto& rec : report.at("per_example")) {
      const std::string doc_id = rec.at("doc_id").get<std::string>();
      auto it = by_id.find(doc_id);
      if (it == by_id.end()) continue;
      preds.push_back(rec.at("pred").get<std::string>());
      refs.push_back(it->second->tokens.text);
    }
    const auto ingested =
        ingest_corpus(corpus_path, get_or<std::string>(config, "tokenizer", "bytes"),
                      get_or<int>(config, "max_tokens", 32), nullptr);
    const auto buckets = frequency_bucketed_accuracy(preds, refs, count_words(ingested));
    json j = json::array();
    std::vector<std::string> labels;
    std::vector<long> correct, incorrect;
    for (const auto& b : buckets.buckets) {
      j.push_back({{"bucket", b.index}, {"correct", b.correct}, {"incorrect", b.incorrect}});
      labels.push_back(b.index == 0 ? "unseen" : "10^" + std::to_string(b.index - 1));
      correct.push_back(b.correct);
      incorrect.push_back(b.incorrect);
    }
    write_text_file(out_dir + "/freq_buckets.json", j.dump(2) + "\n");
    write_text_file(out_dir + "/freq_buckets.svg",
                    svg_grouped_bars(labels, correct, incorrect, "correct", "incorrect",
                                     "word accuracy by training frequency"));
    std::cout << "buckets: " << buckets.buckets.size() << " -> " << out_dir << "\n";
  } else if (mode == "scatter") {
    const std::string report_path = require_string(config, "report", "analyze scatter");
    std::ifstream in(report_path);
    if (!in) throw ConfigError("cannot open report '" + report_path + "'");
    const json report = json::parse(in);
    if (!report.contains("per_example")) {
      throw ConfigError("report '" + report_path + "' lacks per_example records");
    }
    std::vector<double> xs, ys;
    std::string csv = "cos,bleu\n";
    for (const auto& rec : report.at("per_example")) {
      xs.push_back(rec.at("cos").get<double>());
      ys.push_back(rec.at("bleu").get<double>());
      csv += std::to_string(xs.back()) + "," + std::to_string(ys.back()) + "\n";
    }
    write_text_file(out_dir + "/cos_vs_bleu.csv", csv);
    write_text_file(out_dir + "/cos_vs_bleu.svg",
                    svg_scatter(xs, ys, "cosine vs BLEU", "cosine", "BLEU"));
    std::cout << "scatter: " << xs.size() << " points -> " << out_dir << "\n";
  } else {
    throw ConfigError("analyze mode must be closeness, freq-buckets or scatter");
  }
  write_manifest(out_dir, "analyze", config);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"embed2text: reconstruct text from dense embeddings"};
  app.require_subcommand(1);
  app.set_version_flag("--version", EMBED2TEXT_VERSION_STRING);

  std::string config_path;
  // flag overrides shared across commands; only set flags override the file
  std::string out, dataset, embedder, cache, role, init, corpus, report_path, mode, train_corpus;
  std::string base_ckpt, corrector_ckpt;
  int steps = -1, beam_width = -1, workers = -1, limit = -1, max_tokens = -1, synthetic_docs = -1;
  int epochs = -1, batch = -1, augment_copies = -1;
  double lr = -1.0, eval_fraction = -1.0;
  uint64_t seed = 0;
  bool no_feedback = false, resume = false, seed_set = false;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--out", out, "run output directory");
    cmd->add_option("--embedder", embedder, "embedder spec");
    cmd->add_option("--cache", cache, "embedding cache path");
    cmd->add_option("--workers", workers, "worker threads");
    cmd->add_option("--seed", seed, "seed")->each([&](const std::string&) { seed_set = true; });
  };

  auto* build = app.add_subcommand("build-dataset", "ingest or generate a corpus and embed it");
  add_common(build);
  build->add_option("--corpus", corpus, "corpus JSONL path");
  build->add_option("--max-tokens", max_tokens, "token budget");
  build->add_option("--synthetic-docs", synthetic_docs, "generate N synthetic documents");
  build->add_option("--eval-fraction", eval_fraction, "train/eval split fraction");

  auto* train = app.add_subcommand("train", "train the base inverter or the corrector");
  add_common(train);
  train->add_option("--role", role, "base | corrector");
  train->add_option("--dataset", dataset, "dataset manifest");
  train->add_option("--base-ckpt", base_ckpt, "base checkpoint (for corrector hypothesis data)");
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--batch", batch, "batch size");
  train->add_option("--lr", lr, "peak learning rate");
  train->add_option("--augment-copies", augment_copies, "hypothesis augmentation copies");
  train->add_flag("--resume", resume, "resume from checkpoint in --out");

  auto* invert = app.add_subcommand("invert", "invert embeddings into text with traces");
  auto* evaluate = app.add_subcommand("evaluate", "invert and report reconstruction metrics");
  for (auto* cmd : {invert, evaluate}) {
    add_common(cmd);
    cmd->add_option("--dataset", dataset, "dataset manifest");
    cmd->add_option("--base-ckpt", base_ckpt, "base model checkpoint");
    cmd->add_option("--corrector-ckpt", corrector_ckpt, "corrector checkpoint");
    cmd->add_option("--steps", steps, "correction rounds");
    cmd->add_option("--beam-width", beam_width, "sequence beam width");
    cmd->add_flag("--no-feedback", no_feedback, "disable embedding feedback");
    cmd->add_option("--init", init, "base | random | fixed:<text>");
    cmd->add_option("--limit", limit, "use only the first N examples");
  }

  auto* defend = app.add_subcommand("defend", "noise-defense sweep: retrieval vs reconstruction");
  add_common(defend);
  defend->add_option("--dataset", dataset, "dataset manifest");
  defend->add_option("--base-ckpt", base_ckpt, "base model checkpoint");
  defend->add_option("--corrector-ckpt", corrector_ckpt, "corrector checkpoint");
  defend->add_option("--steps", steps, "correction rounds per lambda");
  defend->add_option("--limit", limit, "use only the first N examples");

  auto* analyze = app.add_subcommand("analyze", "closeness, frequency buckets, scatter");
  add_common(analyze);
  analyze->add_option("--mode", mode, "closeness | freq-buckets | scatter");
  analyze->add_option("--dataset", dataset, "dataset manifest");
  analyze->add_option("--base-ckpt", base_ckpt, "base model checkpoint");
  analyze->add_option("--report", report_path, "report.json with per-example records");
  analyze->add_option("--train-corpus", train_corpus, "corpus for word frequencies");
  analyze->add_option("--max-tokens", max_tokens, "token budget for the frequency corpus");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    json config = load_config_file(config_path);
    // precedence: flags > file > defaults
    const auto override_str = [&](const char* key, const std::string& value) {
      if (!value.empty()) config[key] = value;
    };
    const auto override_int = [&](const char* key, int value) {
      if (value >= 0) config[key] = value;
    };
    override_str("out", out);
    override_str("embedder", embedder);
    override_str("cache", cache);
    override_str("dataset", dataset);
    override_int("workers", workers);
    if (seed_set) config["seed"] = seed;

    if (app.got_subcommand(build)) {
      override_str("corpus", corpus);
      override_int("max_tokens", max_tokens);
      override_int("synthetic_docs", synthetic_docs);
      if (eval_fraction >= 0.0) config["eval_fraction"] = eval_fraction;
      return cmd_build_dataset(config);
    }
    if (app.got_subcommand(train)) {
      override_str("role", role);
      override_str("base_ckpt", base_ckpt);
      override_int("augment_copies", augment_copies);
      if (resume) config["resume"] = true;
      json t = config.value("train", json::object());
      if (epochs >= 0) t["epochs"] = epochs;
      if (batch >= 0) t["batch"] = batch;
      if (lr >= 0.0) t["lr"] = lr;
      if (!t.empty()) config["train"] = t;
      return cmd_train(config);
    }
    if (app.got_subcommand(invert) || app.got_subcommand(evaluate)) {
      override_str("base_ckpt", base_ckpt);
      override_str("corrector_ckpt", corrector_ckpt);
      override_int("steps", steps);
      override_int("beam_width", beam_width);
      override_str("init", init);
      override_int("limit", limit);
      if (no_feedback) config["feedback"] = false;
      return cmd_invert(config, app.got_subcommand(invert) ? "invert" : "evaluate");
    }
    if (app.got_subcommand(defend)) {
      override_str("base_ckpt", base_ckpt);
      override_str("corrector_ckpt", corrector_ckpt);
      override_int("steps", steps);
      override_int("limit", limit);
      return cmd_defend(config);
    }
    if (app.got_subcommand(analyze)) {
      override_str("mode", mode);
      override_str("base_ckpt", base_ckpt);
      override_str("report", report_path);
      override_str("train_corpus", train_corpus);
      override_int("max_tokens", max_tokens);
      return cmd_analyze(config);
    }
    throw ConfigError("no command selected");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
