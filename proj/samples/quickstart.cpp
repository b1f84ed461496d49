// Copyright 2026 The Neural Assistant Authors
// SPDX-License-Identifier: Apache-2.0

// Trains a small model on the booking corpus, scores it, and runs a short
// conversation against it.

#include <iostream>

#include "nassist/evaluator.hpp"
#include "nassist/synthetic.hpp"

using namespace nassist;

int main(int argc, char** argv) {
  const std::uint64_t steps = argc > 1 ? std::stoull(argv[1]) : 300;
  const auto task = synthetic::booking_task();
  const auto vocab = build_vocab(task.train, task.kb, 1);

  TrainConfig c;
  c.steps = steps;
  c.batch_size = 32;
  c.learning_rate = 3e-3;
  c.warmup = std::min<std::uint64_t>(100, steps);
  c.kb_mode = "weak-positive";
  c.model.d_model = 32;
  c.model.layers = 2;
  c.model.heads = 4;
  c.model.ff_width = 64;
  c.model.dropout = 0.0;

  Trainer<float> trainer(c, vocab, task.kb, make_examples(task.train, task.kb, vocab, SliceMode::WeakPositive, 0, c.seed));
  trainer.run({}, [](Trainer<float>&, const StepMetrics& m) {
    if (m.step % 50 == 0) std::cout << "step " << m.step << " loss " << m.loss_total << " accuracy " << m.token_accuracy() << '\n';
  });

  ServingConfig sc;
  sc.kb_mode = SliceMode::WeakPositive;
  const Assistant<float> assistant(trainer.model(), vocab, task.kb, sc);
  EvalSettings es;
  es.kb_mode = SliceMode::WeakPositive;
  const auto report = evaluate(assistant, task.test, es);
  std::cout << EvalReport::summary_header() << '\n' << report.summary_row() << '\n';

  auto session = assistant.new_session("demo");
  for (const char* text : {"can you book la mimosa for 2 people on monday at 17:00 ?", "great , what food do they serve ?"}) {
    const auto reply = assistant.respond(session, text);
    std::cout << "user: " << text << '\n';
    if (reply.parsed.action) std::cout << "action: " << reply.parsed.action->to_string() << '\n';
    std::cout << "assistant: " << reply.response << '\n';
  }
}
