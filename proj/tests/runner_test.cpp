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

#include "stackens/runner.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace stackens;
using namespace stackens::runner;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("stackens_runner_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Two-class reviews where one word list marks each class.
fs::path write_reviews(const fs::path& dir, int n = 80) {
  const std::vector<std::string> good{"great", "clean", "friendly", "quiet", "lovely"}, bad{"dirty", "rude", "noisy", "broken", "awful"},
      filler{"the", "room", "hotel", "staff", "night", "breakfast", "location", "bed", "stay", "view"};
  Rng rng = make_rng(11);
  std::ofstream f(dir / "reviews.csv");
  f << "review,polarity\n";
  for (int i = 0; i < n; ++i) {
    const bool pos = i % 2 == 0;
    std::string text;
    for (int w = 0; w < 8; ++w) text += filler[uniform_index(rng, filler.size())] + " ";
    text += (pos ? good : bad)[uniform_index(rng, 5)] + " and " + (pos ? good : bad)[uniform_index(rng, 5)];
    f << '"' << text << "!\"," << (pos ? "positive" : "negative") << "\n";
  }
  return dir / "reviews.csv";
}

std::string small_config(const fs::path& data, const fs::path& out) {
  return "dataset.path = " + data.string() + "\n" + "output.dir = " + out.string() + "\n" +
         "dataset.text_column = review\n"
         "dataset.label_column = polarity\n"
         "seeds = 1\n"
         "classical.tree_count = 10\n"
         "classical.epochs = 20\n"
         "tokenizer.vocab_size = 280\n"
         "tokenizer.max_len = 16\n"
         "transformers = bert, roberta\n"
         "transformer.epochs = 2\n"
         "pretrain.epochs = 1\n"
         "stack.folds = 2\n"
         "meta.kind = logistic\n"
         "meta.epochs = 4\n";
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) { return corpus::parse_csv(corpus::read_file(p, "test")); }

}  // namespace

TEST(Config, MinimalIsFullyDefaulted) {
  const auto dir = scratch("minimal");
  const auto data = write_reviews(dir);
  const auto c = parse_config("dataset.path = " + data.string() + "\nbaselines = LR\n");
  EXPECT_EQ(c.dataset_name, "reviews");
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(c.baselines, (std::vector<classical::Kind>{classical::Kind::lr}));
  EXPECT_EQ(c.transformers.size(), 4u);
  EXPECT_EQ(c.stack_bases, (std::vector<std::string>{"bert", "electra", "distil", "roberta"}));
  EXPECT_EQ(c.folds, 5);
  EXPECT_EQ(c.vocab_size, 2000u);
  EXPECT_EQ(c.max_len, 64);
  EXPECT_EQ(c.meta.kind, ensemble::MetaKind::transformer_head);
  EXPECT_DOUBLE_EQ(c.split.train, 0.8);
  EXPECT_TRUE(c.pretrain);
  EXPECT_FALSE(c.leaky);
  // one line per known key
  EXPECT_EQ(static_cast<std::size_t>(std::count(c.normalized.begin(), c.normalized.end(), '\n')), config_keys().size());
}

TEST(Config, UnknownKeySuggestsNearest) {
  const auto data = write_reviews(scratch("unknown"));
  try {
    parse_config("dataset.path = " + data.string() + "\nlearnig_rate = 0.1\n");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_EQ(e.stage(), "config");
    EXPECT_NE(msg.find("'learnig_rate'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("learning_rate'?"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  }
  EXPECT_EQ(nearest_key("transformer.epoch"), "transformer.epochs");
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
  EXPECT_EQ(levenshtein("", "abc"), 3u);
}

TEST(Config, HashIsStableAndNormalised) {
  const auto data = write_reviews(scratch("hash"));
  const std::string base = "dataset.path = " + data.string() + "\n";
  const auto a = parse_config(base + "split.train = 0.8\nbaselines = LR,PAC\n");
  const auto b = parse_config(base + "# comment\nbaselines =  LR , PAC  \nsplit.train=0.80\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash(), parse_config(base + "split.train = 0.8\nbaselines = LR,PAC\n").hash());
  EXPECT_NE(a.hash(), parse_config(base + "baselines = LR\n").hash());
  EXPECT_EQ(a.hash().size(), 16u);
  // seeds and output directory do not change what artifacts contain
  const auto c = parse_config(base + "split.train = 0.8\nbaselines = LR,PAC\nseeds = 7\noutput.dir = elsewhere\n");
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.artifact_hash(), c.artifact_hash());
}

TEST(Config, ErrorsNameTheKey) {
  const auto data = write_reviews(scratch("errors"));
  const std::string base = "dataset.path = " + data.string() + "\n";
  const auto message = [&](const std::string& text) {
    try {
      parse_config(base + text);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("baselines = LR, SVM\n").find("baselines"), std::string::npos);
  EXPECT_NE(message("transformers = gpt\n").find("transformers"), std::string::npos);
  EXPECT_NE(message("meta.kind = forest\n").find("meta.kind"), std::string::npos);
  EXPECT_NE(message("tfidf.norm = l1\n").find("tfidf.norm"), std::string::npos);
  EXPECT_NE(message("transformer.epochs = two\n").find("transformer.epochs"), std::string::npos);
  EXPECT_NE(message("stack.folds = 1\n").find("stack.folds"), std::string::npos);
  EXPECT_NE(message("split.test = 0.3\n").find("split"), std::string::npos);
  EXPECT_NE(message("seeds = 1,x\n").find("seeds"), std::string::npos);
  EXPECT_NE(message("stack.bases = bert, LR\nbaselines = PAC\n").find("stack.bases"), std::string::npos);
  EXPECT_NE(message("transformers = bert\n").find("at least 2 bases"), std::string::npos);
  EXPECT_NE(message("baselines =\ntransformers =\n").find("at least one model"), std::string::npos);
  EXPECT_NE(message("seeds = 1\nseeds = 2\n").find("duplicate key"), std::string::npos);
  EXPECT_NE(message("just words\n").find("key = value"), std::string::npos);
  EXPECT_EQ(message("transformers = bert\nstack.enabled = false\n"), "no error");
  EXPECT_EQ(message("stack.bases = bert-like, LR\nbaselines = LR\n"), "no error");
  EXPECT_THROW(parse_config("dataset.path = /no/such/file.csv\n"), Error);
  EXPECT_THROW(validate_config("/no/such/config.conf"), Error);
}

TEST(Config, FileRelativeDatasetAndOverrides) {
  const auto dir = scratch("relative");
  write_reviews(dir);
  std::ofstream(dir / "exp.conf") << "dataset.path = reviews.csv\nbaselines = LR\n";
  const auto c = validate_config(dir / "exp.conf");
  EXPECT_EQ(c.dataset_path, dir / "reviews.csv");
  Overrides ov;
  ov.seeds = "3,4";
  ov.out = dir / "out";
  const auto o = validate_config(dir / "exp.conf", ov);
  EXPECT_EQ(o.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(o.output_dir, dir / "out");
  ov.dataset = dir / "missing.csv";
  EXPECT_THROW(validate_config(dir / "exp.conf", ov), Error);
}

TEST(Run, TablesCurvesAndDeterminism) {
  const auto dir = scratch("run");
  const auto data = write_reviews(dir);
  const auto cfg = parse_config(small_config(data, dir / "a"));
  const auto bundle = run_experiment(cfg);

  ASSERT_EQ(bundle.baselines.size(), 6u);
  const std::vector<std::string> kinds{"LSVM", "LR", "RF", "GB", "LGBM", "PAC"};
  for (std::size_t i = 0; i < kinds.size(); ++i) EXPECT_EQ(bundle.baselines[i].display, kinds[i]);
  ASSERT_EQ(bundle.transformers.size(), 3u);
  EXPECT_EQ(bundle.transformers[0].display, "BERT");
  EXPECT_EQ(bundle.transformers[1].display, "RoBERTa");
  EXPECT_EQ(bundle.transformers[2].display, "Our method");
  EXPECT_TRUE(bundle.complete);
  // the cue words separate the classes, so TF-IDF baselines should be strong
  for (const auto& r : bundle.baselines) EXPECT_GE(r.accuracy, 0.75) << r.display;

  const auto base = read_csv(dir / "a" / "baselines.csv");
  EXPECT_EQ(base[0], (std::vector<std::string>{"Dataset", "Model", "Accuracy", "Precision", "Recall", "F1-Score"}));
  const auto tr = read_csv(dir / "a" / "transformers.csv");
  EXPECT_EQ(tr[0].back(), "Loss");
  ASSERT_EQ(tr.size(), 4u);
  EXPECT_EQ(tr[3][1], "Our method");
  for (std::size_t i = 0; i < bundle.transformers.size(); ++i) {
    const auto& r = bundle.transformers[i];
    EXPECT_EQ(tr[i + 1][0], "reviews");
    EXPECT_EQ(std::stod(tr[i + 1][2]), r.accuracy);
    EXPECT_EQ(std::stod(tr[i + 1][3]), r.precision);
    EXPECT_EQ(std::stod(tr[i + 1][4]), r.recall);
    EXPECT_EQ(std::stod(tr[i + 1][5]), r.loss);
  }
  for (std::size_t i = 0; i < bundle.baselines.size(); ++i) EXPECT_EQ(std::stod(base[i + 1][5]), bundle.baselines[i].f1);
  EXPECT_NE(corpus::read_file(dir / "a" / "baselines.md", "test").find("# Baselines on reviews"), std::string::npos);

  for (const auto& [id, epochs] : std::vector<std::pair<std::string, int>>{{"bert", 2}, {"roberta", 2}, {"meta", 4}}) {
    const auto curve = neural::LossCurve::from_csv(corpus::read_file(dir / "a" / ("loss_curve_" + id + ".csv"), "test"));
    ASSERT_EQ(curve.size(), static_cast<std::size_t>(epochs)) << id;
    for (const auto& p : curve.points) EXPECT_TRUE(std::isfinite(p.train_loss) && std::isfinite(p.val_loss));
  }
  const auto report = nlohmann::json::parse(corpus::read_file(dir / "a" / "report.json", "test"));
  EXPECT_EQ(report.at("dataset"), "reviews");
  EXPECT_EQ(report.at("config_hash"), cfg.hash());
  EXPECT_TRUE(report.contains("generated_at"));

  const auto again = parse_config(small_config(data, dir / "b"));
  run_experiment(again);
  for (const char* f : {"baselines.csv", "transformers.csv", "baselines.md", "transformers.md", "loss_curve_bert.csv",
                        "loss_curve_roberta.csv", "loss_curve_meta.csv"})
    EXPECT_EQ(corpus::read_file(dir / "a" / f, "test"), corpus::read_file(dir / "b" / f, "test")) << f;
}

TEST(Run, StagesResumeAndFailuresStayIsolated) {
  const auto dir = scratch("isolation");
  const auto data = write_reviews(dir);
  const std::string text = "dataset.path = " + data.string() + "\noutput.dir = " + (dir / "out").string() +
         "\ndataset.text_column = review\ndataset.label_column = polarity\nseeds = 1\nbaselines = LR, PAC\ntransformers = bert\ntransformer.epochs = 1\npretrain.enabled = false\n"
         "tokenizer.vocab_size = 120\ntokenizer.max_len = 16\nstack.bases = LR, bert\nstack.folds = 2\nmeta.kind = logistic\n";
  const auto cfg = parse_config(text);
  Experiment ex(cfg);
  ex.run_all(Experiment::Stage::prep);
  EXPECT_TRUE(fs::exists(dir / "out" / "seed_1" / "prep" / "split.json"));
  EXPECT_FALSE(fs::exists(dir / "out" / "seed_1" / "models"));
  ex.run_all(Experiment::Stage::train);
  // corrupt one model's checkpoint: only that model and the stack that needs it fail
  std::ofstream(dir / "out" / "seed_1" / "models" / "LR.ckpt") << "garbage";
  Experiment resumed(cfg);
  resumed.run_all(Experiment::Stage::evaluate);
  const auto b = collect(cfg);
  EXPECT_FALSE(b.complete);
  ASSERT_EQ(b.baselines.size(), 2u);
  EXPECT_FALSE(b.baselines[0].ok);
  EXPECT_TRUE(b.baselines[1].ok);
  ASSERT_EQ(b.transformers.size(), 2u);
  EXPECT_TRUE(b.transformers[0].ok);
  EXPECT_FALSE(b.transformers[1].ok);
  EXPECT_NE(b.transformers[1].errors[0].find("LR"), std::string::npos);
  emit_report(b, cfg.output_dir);
  EXPECT_NE(corpus::read_file(dir / "out" / "baselines.md", "test").find("| LR | failed |"), std::string::npos);

  // a different config may not reuse this output directory
  const auto other = parse_config(text + "tfidf.bigrams = true\n");
  EXPECT_THROW(Experiment(other).run_all(Experiment::Stage::prep), Error);
}

TEST(Report, MissingResultsIsStageTagged) {
  const auto dir = scratch("missing");
  const auto data = write_reviews(dir);
  const auto cfg = parse_config("dataset.path = " + data.string() + "\noutput.dir = " + (dir / "out").string() + "\nbaselines = LR\n");
  try {
    collect(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.stage(), "report");
  }
}
