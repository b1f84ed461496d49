// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line entry point: train, eval, label, sweep, serve, chat.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "nassist/evaluator.hpp"
#include "nassist/http.hpp"
#include "nassist/service.hpp"
#include "nassist/trainer.hpp"

namespace fs = std::filesystem;
using namespace nassist;

namespace {

constexpr int kUsageError = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flag overrides for TrainConfig, keyed by JSON path ("model.d_model").
struct Overrides {
  struct Entry {
    std::string key;
    bool numeric;
    std::string value;
    CLI::Option* option = nullptr;
  };
  std::vector<std::unique_ptr<Entry>> entries;

  void add(CLI::App& app, const std::string& flag, const std::string& key, bool numeric, const std::string& help) {
    auto e = std::make_unique<Entry>(Entry{key, numeric, {}});
    e->option = app.add_option(flag, e->value, help);
    entries.push_back(std::move(e));
  }

  void apply(nlohmann::json& j) const {
    for (const auto& e : entries) {
      if (!e->option->count()) continue;
      nlohmann::json v = e->value;
      if (e->numeric) {
        v = nlohmann::json::parse(e->value, nullptr, false);
        if (!v.is_number()) throw UsageError(e->option->get_name() + ": expected a number, got '" + e->value + "'");
      }
      const auto dot = e->key.find('.');
      if (dot == std::string::npos) {
        j[e->key] = v;
      } else {
        j[e->key.substr(0, dot)][e->key.substr(dot + 1)] = v;
      }
    }
  }
};

struct DataFlags {
  std::string data, kb;
};

struct DecodeFlags {
  std::size_t beam = 1;
  std::size_t max_length = 64;
  double length_penalty = 0.6;

  void add(CLI::App& app) {
    app.add_option("--beam", beam, "Beam width; 1 decodes greedily")->check(CLI::PositiveNumber);
    app.add_option("--max-length", max_length, "Maximum generated tokens")->check(CLI::PositiveNumber);
    app.add_option("--length-penalty", length_penalty, "Beam length-normalization exponent");
  }

  DecodeSettings settings() const {
    DecodeSettings s;
    s.strategy = beam > 1 ? DecodeSettings::Strategy::Beam : DecodeSettings::Strategy::Greedy;
    s.beam_width = beam;
    s.max_length = max_length;
    s.length_penalty = length_penalty;
    return s;
  }
};

std::string checkpoint_path(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("NASSIST_CHECKPOINT"); env && *env) return env;
  throw UsageError("no checkpoint given: pass --checkpoint or set NASSIST_CHECKPOINT");
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0) throw UsageError("--kb-sizes: '" + item + "' is not a positive integer");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError("--kb-sizes: no sizes given");
  return out;
}

// ---- train -----------------------------------------------------------------

struct TrainCommand {
  std::string config_path;
  bool resume = false;
  std::size_t dev_limit = 200;
  Overrides overrides;

  void setup(CLI::App& app) {
    app.add_option("--config", config_path, "Training config file (JSON)");
    app.add_flag("--resume", resume, "Continue from <out>/checkpoint.bin when it exists");
    app.add_option("--dev-limit", dev_limit, "Dev turns scored per periodic evaluation (0 = all)");
    overrides.add(app, "--train", "train_path", false, "Training dialogs (JSONL or JSON array)");
    overrides.add(app, "--dev", "dev_path", false, "Dev dialogs for periodic evaluation");
    overrides.add(app, "--kb", "kb_path", false, "Knowledge base triples (TSV or JSONL)");
    overrides.add(app, "--out", "out_dir", false, "Output directory");
    overrides.add(app, "--steps", "steps", true, "Optimizer steps");
    overrides.add(app, "--batch-size", "batch_size", true, "Examples per step (0 = token budget only)");
    overrides.add(app, "--max-batch-tokens", "max_batch_tokens", true, "Token budget per step");
    overrides.add(app, "--lr", "learning_rate", true, "Base learning rate");
    overrides.add(app, "--warmup", "warmup", true, "Warmup steps");
    overrides.add(app, "--clip-norm", "clip_norm", true, "Global gradient-norm clip (0 = off)");
    overrides.add(app, "--alpha", "alpha", true, "Generation-loss weight");
    overrides.add(app, "--kb-mode", "kb_mode", false, "none | oracle | weak-positive | sampled | full");
    overrides.add(app, "--kb-size", "kb_size", true, "Sampled slice size S");
    overrides.add(app, "--seed", "seed", true, "Random seed");
    overrides.add(app, "--checkpoint-every", "checkpoint_every", true, "Checkpoint interval in steps");
    overrides.add(app, "--eval-every", "eval_every", true, "Dev evaluation interval in steps");
    overrides.add(app, "--log-every", "log_every", true, "Console log interval in steps");
    overrides.add(app, "--max-history", "max_history", true, "History token budget");
    overrides.add(app, "--min-count", "min_count", true, "Vocabulary frequency cutoff");
    overrides.add(app, "--d-model", "model.d_model", true, "Model width");
    overrides.add(app, "--layers", "model.layers", true, "Encoder and decoder layers");
    overrides.add(app, "--heads", "model.heads", true, "Attention heads");
    overrides.add(app, "--ff-width", "model.ff_width", true, "Feed-forward width");
    overrides.add(app, "--max-positions", "model.max_positions", true, "Longest sequence");
    overrides.add(app, "--dropout", "model.dropout", true, "Dropout rate");
  }

  int run() {
    nlohmann::json j = config_path.empty() ? nlohmann::json(TrainConfig{}) : nlohmann::json(load_train_config(config_path));
    overrides.apply(j);
    TrainConfig c;
    try {
      c = j.get<TrainConfig>();
      c.validate();
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    if (c.train_path.empty()) throw UsageError("no training data: pass --train or set train_path");
    if (c.kb_path.empty() && c.kb_mode != "none") throw UsageError("no KB: pass --kb or use --kb-mode none");
    if (c.out_dir.empty()) throw UsageError("no output directory: pass --out or set out_dir");

    const auto train = load_dialogs(c.train_path);
    const KnowledgeBase kb = c.kb_path.empty() ? KnowledgeBase{} : load_triples(c.kb_path);
    fs::create_directories(c.out_dir);
    const auto ckpt = (fs::path(c.out_dir) / "checkpoint.bin").string();
    const bool resuming = resume && fs::exists(ckpt);
    std::optional<Checkpoint> previous;
    if (resuming) previous = load_checkpoint(ckpt);
    Vocabulary vocab = previous ? checkpoint_vocabulary(*previous) : build_vocab(train, kb, c.min_count);
    auto examples = make_examples(train, kb, vocab, slice_mode_from_string(c.kb_mode), c.kb_size, c.seed, c.max_history);
    std::ofstream(fs::path(c.out_dir) / "config.json") << nlohmann::json(c).dump(2) << '\n';
    vocab.save((fs::path(c.out_dir) / "vocab.txt").string());

    Trainer<float> trainer(c, vocab, kb, std::move(examples));
    if (previous) trainer.resume(*previous);
    MetricsLog log((fs::path(c.out_dir) / "metrics.csv").string(), resuming);
    trainer.set_metrics_log(&log);
    trainer.set_dump_path((fs::path(c.out_dir) / "nonfinite_batch.json").string());
    std::cerr << "training " << trainer.examples().size() << " examples, vocabulary " << vocab.size() << ", from step "
              << trainer.current_step() << " to " << c.steps << '\n';

    std::vector<Dialog> dev;
    if (!c.dev_path.empty()) dev = load_dialogs(c.dev_path);
    const auto on_step = [&](Trainer<float>&, const StepMetrics& m) {
      if (c.log_every && m.step % c.log_every == 0) {
        std::cerr << "step " << m.step << " loss " << m.loss_total << " gen " << m.loss_gen << " distant " << m.loss_distant
                  << " acc " << m.token_accuracy() << " lr " << m.learning_rate << '\n';
      }
    };
    const auto on_eval = [&](Trainer<float>& t) {
      if (dev.empty()) return;
      ServingConfig sc;
      sc.seed = c.seed;
      const Assistant<float> a(t.model(), t.vocab(), kb, sc);
      EvalSettings es;
      es.kb_mode = slice_mode_from_string(c.kb_mode);
      es.kb_size = c.kb_size;
      es.seed = c.seed;
      es.max_history = c.max_history;
      es.limit = dev_limit;
      std::cerr << "dev step " << t.current_step() << '\t' << evaluate(a, dev, es).summary_row() << '\n';
    };
    try {
      trainer.run(ckpt, on_step, on_eval);
    } catch (const TrainingAborted& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    }
    std::cout << ckpt << '\n';
    return 0;
  }
};

// ---- eval / sweep ----------------------------------------------------------

struct EvalCommon {
  std::string checkpoint;
  DataFlags data;
  std::string vocab_path;
  std::uint64_t seed = 1;
  std::size_t limit = 0;
  std::size_t max_history = kDefaultMaxHistory;
  DecodeFlags decode;

  void setup(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "Checkpoint file (default: $NASSIST_CHECKPOINT)");
    app.add_option("--data", data.data, "Test dialogs")->required();
    app.add_option("--kb", data.kb, "Knowledge base triples")->required();
    app.add_option("--vocab", vocab_path, "Vocabulary file that must match the checkpoint");
    app.add_option("--seed", seed, "Slice sampling seed");
    app.add_option("--limit", limit, "Score at most this many turns (0 = all)");
    app.add_option("--max-history", max_history, "History token budget");
    decode.add(app);
  }

  EvalSettings settings(SliceMode mode, std::size_t size) const {
    EvalSettings s;
    s.kb_mode = mode;
    s.kb_size = size;
    s.decode = decode.settings();
    s.seed = seed;
    s.limit = limit;
    s.max_history = max_history;
    return s;
  }

  std::optional<Vocabulary> vocab() const {
    if (vocab_path.empty()) return std::nullopt;
    return Vocabulary::load(vocab_path);
  }
};

struct EvalCommand {
  EvalCommon common;
  std::string kb_mode = "sampled";
  std::size_t kb_size = 100;
  std::string report;

  void setup(CLI::App& app) {
    common.setup(app);
    app.add_option("--kb-mode", kb_mode, "none | oracle | weak-positive | sampled | full");
    app.add_option("--kb-size", kb_size, "Sampled slice size S")->check(CLI::PositiveNumber);
    app.add_option("--report", report, "Write the full JSON report here");
  }

  int run() {
    const auto path = checkpoint_path(common.checkpoint);
    SliceMode mode;
    try {
      mode = slice_mode_from_string(kb_mode);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    const auto ckpt = load_checkpoint(path);
    const auto kb = load_triples(common.data.kb);
    const auto dialogs = load_dialogs(common.data.data);
    const auto vocab = common.vocab();
    const auto rep = evaluate<float>(ckpt, kb, dialogs, common.settings(mode, kb_size), vocab ? &*vocab : nullptr);
    if (!report.empty()) rep.save(report);
    std::cout << EvalReport::summary_header() << '\n' << rep.summary_row() << '\n';
    return 0;
  }
};

struct SweepCommand {
  EvalCommon common;
  std::string sizes = "100,2000,5000";
  std::string report_dir;

  void setup(CLI::App& app) {
    common.setup(app);
    app.add_option("--kb-sizes", sizes, "Comma-separated slice sizes");
    app.add_option("--report-dir", report_dir, "Write one JSON report per size here");
  }

  int run() {
    const auto path = checkpoint_path(common.checkpoint);
    const auto list = parse_sizes(sizes);
    const auto ckpt = load_checkpoint(path);
    const auto kb = load_triples(common.data.kb);
    const auto dialogs = load_dialogs(common.data.data);
    const auto vocab = common.vocab();
    if (!report_dir.empty()) fs::create_directories(report_dir);
    std::cout << EvalReport::summary_header() << '\n';
    for (std::size_t s : list) {
      const auto rep = evaluate<float>(ckpt, kb, dialogs, common.settings(SliceMode::Sampled, s), vocab ? &*vocab : nullptr);
      if (!report_dir.empty()) rep.save((fs::path(report_dir) / ("report_S" + std::to_string(s) + ".json")).string());
      std::cout << rep.summary_row() << std::endl;
    }
    return 0;
  }
};

// ---- label -----------------------------------------------------------------

struct LabelCommand {
  DataFlags data;
  bool positives_only = false;

  void setup(CLI::App& app) {
    app.add_option("--data", data.data, "Dialogs")->required();
    app.add_option("--kb", data.kb, "Knowledge base triples")->required();
    app.add_flag("--positives-only", positives_only, "Print only triples labelled 1");
  }

  int run() {
    const auto dialogs = load_dialogs(data.data);
    const auto kb = load_triples(data.kb);
    std::cout << "dialog\tturn\ttriple\tlabel\n";
    for (const auto& d : dialogs) {
      for (std::size_t i = 0; i < d.turns.size(); ++i) {
        const auto& t = d.turns[i];
        if (t.speaker != Speaker::Assistant) continue;
        const auto target = target_tokens(t.action, t.text);
        for (std::size_t k = 0; k < kb.size(); ++k) {
          const bool label = weak_label(kb[k], target);
          if (positives_only && !label) continue;
          std::cout << d.id << '\t' << i << '\t' << '(' << kb[k].subject << ", " << kb[k].relation << ", " << kb[k].object << ')' << '\t' << (label ? 1 : 0) << '\n';
        }
      }
    }
    return 0;
  }
};

// ---- serve / chat ----------------------------------------------------------

struct ServingFlags {
  std::string checkpoint;
  std::string kb;
  std::string kb_mode = "sampled";
  std::size_t kb_size = 100;
  std::uint64_t seed = 1;
  DecodeFlags decode;

  void setup(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "Checkpoint file (default: $NASSIST_CHECKPOINT)");
    app.add_option("--kb", kb, "Knowledge base triples")->required();
    app.add_option("--kb-mode", kb_mode, "none | oracle | weak-positive | sampled | full");
    app.add_option("--kb-size", kb_size, "Sampled slice size S")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "Slice sampling seed");
    decode.add(app);
  }

  ServingConfig config() const {
    ServingConfig c;
    try {
      c.kb_mode = slice_mode_from_string(kb_mode);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    c.kb_size = kb_size;
    c.decode = decode.settings();
    c.seed = seed;
    return c;
  }
};

std::atomic<httplib::Server*> g_server{nullptr};

void stop_server(int) {
  if (auto* s = g_server.load()) s->stop();
}

struct ServeCommand {
  ServingFlags flags;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t ttl = 3600;
  std::string transcript_log;

  void setup(CLI::App& app) {
    flags.setup(app);
    app.add_option("--host", host, "Bind address");
    app.add_option("--port", port, "Port (0 picks a free one)");
    app.add_option("--session-ttl", ttl, "Idle seconds before a session is reclaimed");
    app.add_option("--transcript-log", transcript_log, "Append transcripts to this JSONL file");
  }

  int run() {
    const auto path = checkpoint_path(flags.checkpoint);
    const auto config = flags.config();
    const auto kb = load_triples(flags.kb);
    const auto assistant = Assistant<float>::from_checkpoint(load_checkpoint(path), kb, config);
    ServiceConfig sc;
    sc.session_ttl = std::chrono::seconds(ttl);
    sc.transcript_path = transcript_log;
    ChatService<float> service(assistant, sc);
    httplib::Server server;
    mount(server, service);
    const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
      std::cerr << "error: cannot bind " << host << ':' << port << '\n';
      return 1;
    }
    g_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    std::atomic<bool> running{true};
    std::thread reaper([&] {
      while (running) {
        for (int i = 0; i < 50 && running; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        service.reclaim_expired();
      }
    });
    std::cout << "listening on http://" << host << ':' << bound << std::endl;
    server.listen_after_bind();
    running = false;
    reaper.join();
    g_server = nullptr;
    return 0;
  }
};

struct ChatCommand {
  ServingFlags flags;

  void setup(CLI::App& app) { flags.setup(app); }

  int run() {
    const auto path = checkpoint_path(flags.checkpoint);
    const auto kb = load_triples(flags.kb);
    const auto assistant = Assistant<float>::from_checkpoint(load_checkpoint(path), kb, flags.config());
    auto session = assistant.new_session("terminal");
    std::string line;
    while (std::cout << "you> " << std::flush, std::getline(std::cin, line)) {
      if (line == "/quit" || line == "/exit") break;
      if (tokenize(line).empty()) continue;
      const auto reply = assistant.respond(session, line);
      if (reply.parsed.action) std::cout << "[action] " << reply.parsed.action->to_string() << '\n';
      if (reply.parsed.action_malformed) std::cout << "[malformed action] " << reply.parsed.action_raw << '\n';
      std::cout << "assistant> " << reply.response << '\n';
      for (const auto& w : reply.warnings) std::cerr << "warning: " << w << '\n';
    }
    std::cout << '\n';
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural Assistant: knowledge-grounded dialog model"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  TrainCommand train;
  EvalCommand eval;
  SweepCommand sweep;
  LabelCommand label;
  ServeCommand serve;
  ChatCommand chat;
  train.setup(*app.add_subcommand("train", "Train a model"));
  eval.setup(*app.add_subcommand("eval", "Evaluate a checkpoint on test dialogs"));
  label.setup(*app.add_subcommand("label", "Print weak labels of every triple for every assistant turn"));
  sweep.setup(*app.add_subcommand("sweep", "Evaluate across sampled KB sizes"));
  serve.setup(*app.add_subcommand("serve", "Run the HTTP chat service"));
  chat.setup(*app.add_subcommand("chat", "Chat with a checkpoint in the terminal"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }
  try {
    if (app.got_subcommand("train")) return train.run();
    if (app.got_subcommand("eval")) return eval.run();
    if (app.got_subcommand("label")) return label.run();
    if (app.got_subcommand("sweep")) return sweep.run();
    if (app.got_subcommand("serve")) return serve.run();
    if (app.got_subcommand("chat")) return chat.run();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n' << "run with --help for usage\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsageError;
}
