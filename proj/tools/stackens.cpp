// Copyright 2026 The stackens Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// stackens command-line driver.
//
//   stackens run --config exp.conf [--out DIR] [--seed 1,2,3] [--dataset data.csv]
//
// Subcommands prep, train, stack and evaluate run the pipeline up to that
// stage for every seed; report aggregates per-seed results into tables.
// Every stage reuses artifacts already present in the output directory.

#include "CLI11.hpp"
#include "stackens/runner.hpp"

#include <iostream>

namespace {

using namespace stackens;

struct Flags {
  std::string config, out, seeds, dataset;
};

runner::ExperimentConfig load(const Flags& f) {
  runner::Overrides ov;
  if (!f.out.empty()) ov.out = f.out;
  if (!f.seeds.empty()) ov.seeds = f.seeds;
  if (!f.dataset.empty()) ov.dataset = f.dataset;
  return runner::validate_config(f.config, ov);
}

int report(const runner::ExperimentConfig& cfg) {
  const auto b = runner::collect(cfg);
  runner::emit_report(b, cfg.output_dir);
  std::cerr << "[stackens] report written to " << cfg.output_dir.string() << (b.complete ? "" : " (incomplete)") << '\n';
  return b.complete ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stackens: stacking ensembles of classical and transformer text classifiers"};
  app.require_subcommand(1);
  Flags flags;
  const auto add = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", flags.out, "output directory (overrides output.dir)");
    sub->add_option("--seed", flags.seeds, "comma-separated seeds (overrides seeds)");
    sub->add_option("--dataset", flags.dataset, "dataset CSV (overrides dataset.path)");
    return sub;
  };
  auto* prep = add("prep", "split, fit TF-IDF and tokenizers");
  auto* train = add("train", "train baselines and transformers");
  auto* stack = add("stack", "build the stacked ensemble");
  auto* evaluate = add("evaluate", "score every model on the test split");
  auto* rep = add("report", "aggregate results into tables and curves");
  auto* run = add("run", "full pipeline and report");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = load(flags);
    runner::Options opt{&std::cerr};
    runner::Experiment ex(cfg, opt);
    if (prep->parsed()) ex.run_all(runner::Experiment::Stage::prep);
    if (train->parsed()) ex.run_all(runner::Experiment::Stage::train);
    if (stack->parsed()) ex.run_all(runner::Experiment::Stage::stack);
    if (evaluate->parsed() || run->parsed()) ex.run_all(runner::Experiment::Stage::evaluate);
    if (rep->parsed() || run->parsed()) return report(cfg);
    return 0;
  } catch (const Error& e) {
    std::cerr << "stackens: error in " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "stackens: error " << e.what() << '\n';
    return 1;
  }
}
