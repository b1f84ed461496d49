// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nassist/checkpoint.hpp"
#include "nassist/dialog.hpp"
#include "nassist/kb.hpp"
#include "nassist/model.hpp"
#include "nassist/optimizer.hpp"
#include "nassist/serialize.hpp"

namespace nassist {

struct TrainConfig {
  std::uint64_t steps = 50000;
  /// Examples per step; 0 packs by max_batch_tokens alone.
  std::size_t batch_size = 0;
  std::size_t max_batch_tokens = 4096;
  double learning_rate = 2e-3;
  std::uint64_t warmup = 4000;
  double clip_norm = 0.0;
  double alpha = 0.5;
  std::string kb_mode = "sampled";
  std::size_t kb_size = 100;
  std::uint64_t seed = 1;
  std::uint64_t checkpoint_every = 0;
  std::uint64_t eval_every = 0;
  std::uint64_t log_every = 100;
  std::size_t max_history = kDefaultMaxHistory;
  std::size_t min_count = 1;
  std::string train_path, dev_path, kb_path, out_dir;
  ModelConfig model;

  void validate() const {
    if (steps == 0) throw std::invalid_argument("train config: steps must be positive");
    if (warmup > steps) {
      throw std::invalid_argument("train config: warmup (" + std::to_string(warmup) + ") exceeds steps (" +
                                  std::to_string(steps) + ")");
    }
    if (max_batch_tokens == 0) throw std::invalid_argument("train config: max_batch_tokens must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("train config: alpha must lie in [0,1]");
    const auto mode = slice_mode_from_string(kb_mode);
    if (mode == SliceMode::Sampled && kb_size == 0) throw std::invalid_argument("train config: sampled KB mode needs kb_size > 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps},
       {"batch_size", c.batch_size},
       {"max_batch_tokens", c.max_batch_tokens},
       {"learning_rate", c.learning_rate},
       {"warmup", c.warmup},
       {"clip_norm", c.clip_norm},
       {"alpha", c.alpha},
       {"kb_mode", c.kb_mode},
       {"kb_size", c.kb_size},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"eval_every", c.eval_every},
       {"log_every", c.log_every},
       {"max_history", c.max_history},
       {"min_count", c.min_count},
       {"train_path", c.train_path},
       {"dev_path", c.dev_path},
       {"kb_path", c.kb_path},
       {"out_dir", c.out_dir},
       {"model", c.model}};
}

/// Unknown keys are rejected so typos in config files surface.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known = {"steps", "batch_size", "max_batch_tokens", "learning_rate", "warmup",
                                              "clip_norm", "alpha", "kb_mode", "kb_size", "seed", "checkpoint_every",
                                              "eval_every", "log_every", "max_history", "min_count", "train_path",
                                              "dev_path", "kb_path", "out_dir", "model"};
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument("train config: unknown key '" + k + "'");
  const TrainConfig d;
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_batch_tokens = j.value("max_batch_tokens", d.max_batch_tokens);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.warmup = j.value("warmup", d.warmup);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.alpha = j.value("alpha", d.alpha);
  c.kb_mode = j.value("kb_mode", d.kb_mode);
  c.kb_size = j.value("kb_size", d.kb_size);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.log_every = j.value("log_every", d.log_every);
  c.max_history = j.value("max_history", d.max_history);
  c.min_count = j.value("min_count", d.min_count);
  c.train_path = j.value("train_path", d.train_path);
  c.dev_path = j.value("dev_path", d.dev_path);
  c.kb_path = j.value("kb_path", d.kb_path);
  c.out_dir = j.value("out_dir", d.out_dir);
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  try {
    return nlohmann::json::parse(in).get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config file " + path + ": " + e.what());
  }
}

/// One assistant turn with its ground-truth history.
struct TrainingExample {
  std::string dialog_id;
  /// Index of the assistant turn within the dialog's turn list.
  std::size_t turn_index = 0;
  std::vector<TokenId> history;
  /// Provenance of every prior turn the history was built from.
  std::vector<Provenance> history_provenance;
  std::vector<TokenId> target;
  /// Tokens of the action string and response; drives the weak labels.
  std::vector<std::string> target_tokens;
  std::optional<ActionCall> action;
  std::string response;
  std::optional<std::vector<std::size_t>> gold;
  KBSlice slice;

  std::size_t tokens() const { return history.size() + target.size(); }
};

inline std::vector<std::string> target_tokens(const std::optional<ActionCall>& action, std::string_view response) {
  std::vector<std::string> out;
  if (action) out = tokenize(action->to_string());
  for (auto& t : tokenize(response)) out.push_back(std::move(t));
  return out;
}

/// Seed of the sampled slice for example `index` during `epoch`.
inline std::uint64_t slice_seed(std::uint64_t seed, std::uint64_t epoch, std::size_t index) {
  return mix_seed(mix_seed(seed, epoch), index);
}

/// One example per assistant turn, each conditioned on the ground-truth
/// prefix of its dialog. Histories may only contain ground-truth turns.
inline std::vector<TrainingExample> make_examples(std::span<const Dialog> dialogs, const KnowledgeBase& kb,
                                                  const Vocabulary& vocab, SliceMode mode, std::size_t kb_size,
                                                  std::uint64_t seed, std::size_t max_history = kDefaultMaxHistory) {
  std::vector<TrainingExample> out;
  for (const auto& d : dialogs) {
    d.validate();
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
      const Turn& turn = d.turns[i];
      if (turn.speaker != Speaker::Assistant) continue;
      const std::span<const Turn> prefix(d.turns.data(), i);
      TrainingExample ex;
      ex.dialog_id = d.id;
      ex.turn_index = i;
      for (const auto& t : prefix) {
        if (t.provenance != Provenance::GroundTruth) {
          throw DataError("dialog '" + d.id + "': turn " + std::to_string(&t - d.turns.data()) +
                          " is not ground truth and cannot enter a training history");
        }
        ex.history_provenance.push_back(t.provenance);
      }
      ex.history = encode_history(prefix, vocab, max_history);
      ex.action = turn.action;
      ex.response = normalize_text(turn.text);
      ex.target = serialize_target(turn.action, turn.text, vocab);
      ex.target_tokens = target_tokens(turn.action, turn.text);
      ex.gold = turn.relevant_triples;
      ex.slice = build_slice(kb, ex.target_tokens, ex.gold, mode, kb_size, slice_seed(seed, 0, out.size()));
      out.push_back(std::move(ex));
    }
  }
  return out;
}

struct StepMetrics {
  std::uint64_t step = 0;
  double loss_total = 0.0;
  double loss_gen = 0.0;
  double loss_distant = 0.0;
  double tokens_per_sec = 0.0;
  double learning_rate = 0.0;
  std::size_t examples = 0;
  std::size_t tokens = 0;
  std::size_t correct = 0;
  std::size_t predicted = 0;

  double token_accuracy() const { return predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0; }
};

/// Raised when a forward or backward value turns non-finite. The offending
/// batch is written to `dump_path` (when set) before the error propagates.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::string dump) : std::runtime_error(what), dump_path(std::move(dump)) {}
  std::string dump_path;
};

/// Append-only CSV of per-step losses.
class MetricsLog {
 public:
  static constexpr const char* kHeader = "step,loss_total,loss_gen,loss_distant,tokens_per_sec";

  MetricsLog() = default;
  MetricsLog(const std::string& path, bool append) : path_(path) {
    const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out_) throw std::runtime_error("cannot open metrics log " + path);
    if (fresh) out_ << kHeader << '\n';
  }

  void write(const StepMetrics& m) {
    if (!out_.is_open()) return;
    out_ << m.step << ',' << std::setprecision(9) << m.loss_total << ',' << m.loss_gen << ',' << m.loss_distant << ','
         << std::setprecision(6) << m.tokens_per_sec << '\n';
    out_.flush();
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

/// Teacher-forced optimizer loop over turn-level examples. Single owner of
/// the model while training; deterministic given its seed.
template <typename T = float>
class Trainer {
 public:
  Trainer(TrainConfig config, Vocabulary vocab, const KnowledgeBase& kb, std::vector<TrainingExample> examples)
      : config_(std::move(config)),
        vocab_(std::move(vocab)),
        kb_(kb),
        encoded_kb_(encode_triples(kb, vocab_)),
        examples_(std::move(examples)),
        model_(prepare(config_, vocab_), config_.seed),
        optimizer_(AdamConfig{0.9, 0.98, 1e-9, config_.clip_norm}, LearningRateSchedule{config_.learning_rate, config_.warmup}),
        mode_(slice_mode_from_string(config_.kb_mode)) {
    if (examples_.empty()) throw std::invalid_argument("trainer: no training examples");
    reshuffle();
  }

  /// Continues from a checkpoint written by save(). Parameters, optimizer
  /// moments, step and data cursor are restored; the config must match.
  void resume(const Checkpoint& c) {
    if (c.vocab_hash != vocab_.hash()) throw CheckpointError("resume: vocabulary differs from the checkpoint's");
    model_ = model_from_checkpoint<T>(c);
    restore_optimizer(optimizer_, c);
    step_ = c.step;
    const auto& st = c.state.at("trainer");
    epoch_ = st.at("epoch").get<std::uint64_t>();
    cursor_ = st.at("cursor").get<std::size_t>();
    if (st.at("seed").get<std::uint64_t>() != config_.seed) throw CheckpointError("resume: seed differs from the checkpoint's");
    reshuffle();
  }

  Checkpoint checkpoint() const {
    nlohmann::json state;
    state["trainer"] = {{"epoch", epoch_}, {"cursor", cursor_}, {"seed", config_.seed}};
    state["train_config"] = config_;
    return make_checkpoint(model_, vocab_, step_, &optimizer_, state);
  }

  void save(const std::string& path) const { save_checkpoint(path, checkpoint()); }

  void set_metrics_log(MetricsLog* log) { log_ = log; }
  void set_dump_path(std::string path) { dump_path_ = std::move(path); }

  /// Runs one optimizer step over the next batch.
  StepMetrics step() {
    const auto batch = next_batch();
    const auto start = std::chrono::steady_clock::now();
    StepMetrics m;
    m.step = step_ + 1;
    m.examples = batch.size();
    std::mt19937_64 dropout_rng(mix_seed(config_.seed ^ 0xd1ce5eedull, m.step));
    const ForwardOptions opt{true, &dropout_rng};
    const T share = T(1) / static_cast<T>(batch.size());
    model_.params().zero_grad();
    try {
      for (const auto& [index, slice] : batch) {
        const auto& ex = examples_[index];
        std::vector<std::vector<TokenId>> kb_tokens;
        kb_tokens.reserve(slice.size());
        for (auto id : slice.triple_ids) kb_tokens.push_back(encoded_kb_[id]);
        Graph<T> g;
        const auto loss = example_loss(model_, g, {ex.history, kb_tokens, ex.target, slice.labels}, config_.alpha, opt);
        g.backward(loss.total, share);
        m.loss_total += static_cast<double>(loss.total.value().item());
        m.loss_gen += static_cast<double>(loss.gen.value().item());
        if (loss.distant) m.loss_distant += static_cast<double>(loss.distant->value().item());
        const auto [hits, rows] = argmax_matches(loss.decoder.logits.value(), ex.target);
        m.correct += hits;
        m.predicted += rows;
        m.tokens += ex.tokens();
      }
      m.learning_rate = optimizer_.update(model_.params());
    } catch (const NonFiniteError& e) {
      throw TrainingAborted("non-finite value at step " + std::to_string(m.step) + ": " + e.what() +
                                (dump_path_.empty() ? "" : " (batch written to " + dump_path_ + ")"),
                            dump_batch(batch, m.step));
    }
    const double n = static_cast<double>(batch.size());
    m.loss_total /= n;
    m.loss_gen /= n;
    m.loss_distant /= n;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    m.tokens_per_sec = secs > 0 ? static_cast<double>(m.tokens) / secs : 0.0;
    ++step_;
    if (log_) log_->write(m);
    return m;
  }

  /// Trains until config.steps, calling `on_eval` every eval_every steps and
  /// saving to `checkpoint_path` every checkpoint_every steps and at the end.
  StepMetrics run(const std::string& checkpoint_path = {},
                  const std::function<void(Trainer&, const StepMetrics&)>& on_step = {},
                  const std::function<void(Trainer&)>& on_eval = {}) {
    StepMetrics last;
    while (step_ < config_.steps) {
      last = step();
      if (on_step) on_step(*this, last);
      if (on_eval && config_.eval_every && step_ % config_.eval_every == 0) on_eval(*this);
      if (!checkpoint_path.empty() && config_.checkpoint_every && step_ % config_.checkpoint_every == 0) save(checkpoint_path);
    }
    if (!checkpoint_path.empty()) save(checkpoint_path);
    return last;
  }

  std::uint64_t current_step() const { return step_; }
  std::uint64_t epoch() const { return epoch_; }
  const TrainConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  NeuralAssistant<T>& model() { return model_; }
  const NeuralAssistant<T>& model() const { return model_; }
  const std::vector<TrainingExample>& examples() const { return examples_; }
  const EncodedKB& encoded_kb() const { return encoded_kb_; }

 private:
  static ModelConfig prepare(TrainConfig& c, const Vocabulary& v) {
    c.validate();
    c.model.vocab_size = v.size();
    c.model.alpha = c.alpha;
    return c.model;
  }

  void reshuffle() {
    order_.resize(examples_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(config_.seed, epoch_));
    std::shuffle(order_.begin(), order_.end(), rng);
  }

  /// Greedy packing in shuffled order; a batch never spans two epochs and
  /// always holds at least one example.
  std::vector<std::pair<std::size_t, KBSlice>> next_batch() {
    if (cursor_ >= order_.size()) {
      ++epoch_;
      cursor_ = 0;
      reshuffle();
    }
    std::vector<std::pair<std::size_t, KBSlice>> batch;
    std::size_t tokens = 0;
    while (cursor_ < order_.size()) {
      const std::size_t index = order_[cursor_];
      const auto& ex = examples_[index];
      if (!batch.empty() && (tokens + ex.tokens() > config_.max_batch_tokens ||
                             (config_.batch_size && batch.size() >= config_.batch_size))) {
        break;
      }
      tokens += ex.tokens();
      ++cursor_;
      KBSlice slice = ex.slice;
      if (mode_ == SliceMode::Sampled && epoch_ > 0) {
        slice = build_slice(kb_, ex.target_tokens, ex.gold, mode_, config_.kb_size, slice_seed(config_.seed, epoch_, index));
      }
      batch.emplace_back(index, std::move(slice));
    }
    return batch;
  }

  std::string dump_batch(const std::vector<std::pair<std::size_t, KBSlice>>& batch, std::uint64_t step) const {
    if (dump_path_.empty()) return {};
    nlohmann::json j;
    j["step"] = step;
    j["epoch"] = epoch_;
    for (const auto& [index, slice] : batch) {
      const auto& ex = examples_[index];
      j["examples"].push_back({{"dialog_id", ex.dialog_id},
                               {"turn_index", ex.turn_index},
                               {"history", detokenize(vocab_.decode(ex.history))},
                               {"target", detokenize(vocab_.decode(ex.target))},
                               {"kb_triples", slice.triple_ids},
                               {"labels", slice.labels}});
    }
    std::ofstream(dump_path_) << j.dump(2) << '\n';
    return dump_path_;
  }

  TrainConfig config_;
  Vocabulary vocab_;
  const KnowledgeBase& kb_;
  EncodedKB encoded_kb_;
  std::vector<TrainingExample> examples_;
  NeuralAssistant<T> model_;
  Adam<T> optimizer_;
  SliceMode mode_;
  std::vector<std::size_t> order_;
  std::uint64_t step_ = 0;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  MetricsLog* log_ = nullptr;
  std::string dump_path_;
};

}  // namespace nassist
