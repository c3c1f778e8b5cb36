#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rankdistill/errors.hpp"
#include "rankdistill/labelgen.hpp"
#include "rankdistill/metrics.hpp"
#include "rankdistill/random.hpp"
#include "rankdistill/rra_bert.hpp"
#include "rankdistill/rra_gpt.hpp"
#include "rankdistill/text.hpp"
#include "rankdistill/training.hpp"

using namespace rankdistill;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  Corpus corpus;
  std::vector<RankingLabel> labels;
};

Fixture make_fixture(std::uint64_t seed, int queries, int docs, int vocab) {
  Fixture f;
  f.corpus = generate_synthetic_corpus(seed, queries, docs, vocab);
  SyntheticOracleLabeler oracle(0.5, 0.3, seed);
  f.labels = build_dataset(f.corpus, oracle, seed).labels;
  return f;
}

ModelConfig tiny_config(const Corpus& corpus, int max_seq) {
  ModelConfig cfg;
  cfg.vocab_size = corpus.vocab.size();
  cfg.d_hidden = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_seq_len = max_seq;
  cfg.ffn_multiplier = 2;
  return cfg;
}

std::set<std::string> ids_of(const std::vector<RankingLabel>& labels) {
  std::set<std::string> out;
  for (const auto& l : labels) out.insert(l.query_id);
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("rankdistill_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("training configuration rejects out-of-range fields") {
  TrainConfig good;
  good.validate();  // defaults are legal

  auto expect_bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  expect_bad([](TrainConfig& c) { c.learning_rate = 0; });
  expect_bad([](TrainConfig& c) { c.weight_decay = -0.1; });
  expect_bad([](TrainConfig& c) { c.validate_every = 0; });
  expect_bad([](TrainConfig& c) { c.patience = 0; });
  expect_bad([](TrainConfig& c) { c.split_ratio = 0; });
  expect_bad([](TrainConfig& c) { c.split_ratio = 1; });
  expect_bad([](TrainConfig& c) { c.max_steps = 0; });
}

TEST_CASE("query split partitions without leakage") {
  Fixture f = make_fixture(31, 20, 10, 500);
  REQUIRE(f.labels.size() == 20);

  auto [train, valid] = split_dataset(f.labels, 0.9, 7);
  CHECK(train.size() == 18);
  CHECK(valid.size() == 2);
  std::set<std::string> train_ids = ids_of(train), valid_ids = ids_of(valid);
  CHECK(train_ids.size() == 18);
  for (const auto& id : valid_ids) CHECK(train_ids.count(id) == 0);
  std::set<std::string> all = train_ids;
  all.insert(valid_ids.begin(), valid_ids.end());
  CHECK(all == ids_of(f.labels));

  // same seed reproduces the exact order, another seed moves queries
  auto [t2, v2] = split_dataset(f.labels, 0.9, 7);
  REQUIRE(t2.size() == train.size());
  for (std::size_t i = 0; i < t2.size(); ++i) CHECK(t2[i].query_id == train[i].query_id);
  auto [t3, v3] = split_dataset(f.labels, 0.9, 8);
  bool moved = false;
  for (std::size_t i = 0; i < t3.size(); ++i) moved = moved || t3[i].query_id != train[i].query_id;
  CHECK(moved);

  SUBCASE("ratio floors and clamps") {
    std::vector<RankingLabel> fifteen(f.labels.begin(), f.labels.begin() + 15);
    auto [a, b] = split_dataset(fifteen, 0.9, 1);
    CHECK(a.size() == 13);  // floor(13.5)
    CHECK(b.size() == 2);
    std::vector<RankingLabel> ten(f.labels.begin(), f.labels.begin() + 10);
    auto [c, d] = split_dataset(ten, 0.999, 1);
    CHECK(d.size() == 1);  // validation never empties
    auto [e, g] = split_dataset(ten, 0.01, 1);
    CHECK(e.size() == 1);  // training never empties
  }
  SUBCASE("bad inputs") {
    std::vector<RankingLabel> nine(f.labels.begin(), f.labels.begin() + 9);
    CHECK_THROWS_AS(split_dataset(nine, 0.9, 1), InputError);
    CHECK_THROWS_AS(split_dataset(f.labels, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split_dataset(f.labels, 1.0, 1), ConfigError);
  }
}

TEST_CASE("split partition property holds across random shapes") {
  Fixture f = make_fixture(32, 40, 6, 400);
  RandomSource rng(601);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n =
        static_cast<std::size_t>(rng.uniform_range(10, static_cast<long>(f.labels.size())));
    std::vector<RankingLabel> subset(f.labels.begin(), f.labels.begin() + static_cast<long>(n));
    const double ratio = rng.uniform(0.1, 0.9);
    auto [train, valid] = split_dataset(subset, ratio, rng.next_u64());
    CHECK(train.size() + valid.size() == n);
    CHECK(train.size() >= 1);
    CHECK(valid.size() >= 1);
    std::set<std::string> seen;
    for (const auto& l : train) CHECK(seen.insert(l.query_id).second);
    for (const auto& l : valid) CHECK(seen.insert(l.query_id).second);
    const auto want = static_cast<std::size_t>(
        std::clamp<double>(std::floor(ratio * static_cast<double>(n) + 1e-9), 1.0,
                           static_cast<double>(n - 1)));
    CHECK(train.size() == want);
  }
}

TEST_CASE("resolved items bin ranked docs into gain halves") {
  Fixture f = make_fixture(33, 12, 8, 400);
  const RankingLabel* five = nullptr;
  const RankingLabel* with_excluded = nullptr;
  for (const auto& l : f.labels) {
    if (l.ranked.size() == 5 && !five) five = &l;
    if (!l.excluded.empty() && !with_excluded) with_excluded = &l;
  }

  SUBCASE("upper half gains 3, lower half 2, the rest 0") {
    auto items = resolve_items({f.labels[0]}, f.corpus, true);
    REQUIRE(items.size() == 1);
    const QueryTrainItem& item = items[0];
    const std::size_t r = f.labels[0].ranked.size();
    const std::size_t half = (r + 1) / 2;
    REQUIRE(item.docs.size() ==
            r + f.labels[0].excluded.size() + f.labels[0].negatives.size());
    for (std::size_t i = 0; i < item.docs.size(); ++i) {
      if (i < half) {
        CHECK(item.gain[i] == 3);
      } else if (i < r) {
        CHECK(item.gain[i] == 2);
      } else {
        CHECK(item.gain[i] == 0);
      }
    }
    // order is ranked, excluded, negatives with aligned targets
    for (std::size_t i = 0; i < r; ++i) {
      CHECK(item.docs[i].id == f.labels[0].ranked[i]);
      CHECK(item.binary[i] == 1);
      CHECK(item.graded[i] == f.labels[0].graded_scores.at(item.docs[i].id));
      CHECK_FALSE(item.reasoning[i].empty());
    }
    for (std::size_t i = 0; i < f.labels[0].negatives.size(); ++i) {
      const std::size_t at = item.docs.size() - f.labels[0].negatives.size() + i;
      CHECK(item.docs[at].id == f.labels[0].negatives[i]);
      CHECK(item.graded[at] == 0.0);
      CHECK(item.gain[at] == 0);
    }
  }
  SUBCASE("an odd ranked list puts the middle doc in the upper half") {
    if (five) {
      auto items = resolve_items({*five}, f.corpus, true);
      const auto& gain = items[0].gain;
      CHECK(gain[0] == 3);
      CHECK(gain[1] == 3);
      CHECK(gain[2] == 3);
      CHECK(gain[3] == 2);
      CHECK(gain[4] == 2);
    }
  }
  SUBCASE("dropping excluded docs shrinks the pool but keeps negatives") {
    REQUIRE(with_excluded != nullptr);
    auto kept = resolve_items({*with_excluded}, f.corpus, true);
    auto dropped = resolve_items({*with_excluded}, f.corpus, false);
    CHECK(kept[0].docs.size() ==
          dropped[0].docs.size() + with_excluded->excluded.size());
    std::set<std::string> drop_ids;
    for (const auto& d : dropped[0].docs) drop_ids.insert(d.id);
    for (const auto& id : with_excluded->excluded) CHECK(drop_ids.count(id) == 0);
    for (const auto& id : with_excluded->negatives) CHECK(drop_ids.count(id) == 1);
  }
  SUBCASE("labels must resolve against the corpus") {
    RankingLabel ghost = f.labels[0];
    ghost.query_id = "no_such_query";
    CHECK_THROWS_AS(resolve_items({ghost}, f.corpus, true), InputError);

    RankingLabel bad_doc = f.labels[0];
    bad_doc.ranked.push_back("no_such_doc");
    CHECK_THROWS_AS(resolve_items({bad_doc}, f.corpus, true), InputError);

    RankingLabel missing_target = f.labels[0];
    missing_target.graded_scores.erase(missing_target.ranked[0]);
    CHECK_THROWS_AS(resolve_items({missing_target}, f.corpus, true), InputError);
  }
}

TEST_CASE("validation metric equals a hand-rolled mean over queries") {
  Fixture f = make_fixture(34, 12, 8, 400);
  RraBert model(tiny_config(f.corpus, 32), BertSettings{}, f.corpus.vocab, 3);
  auto items = resolve_items(f.labels, f.corpus, true);
  REQUIRE_FALSE(items.empty());

  for (bool use_tcl : {false, true}) {
    double sum = 0;
    for (const auto& item : items) {
      auto ranking = model.rank(item.query, item.docs, use_tcl);
      std::map<std::string, int> gain_of;
      for (std::size_t i = 0; i < item.docs.size(); ++i) gain_of[item.docs[i].id] = item.gain[i];
      std::vector<double> rels;
      for (const auto& [id, score] : ranking) rels.push_back(gain_of.at(id));
      sum += ndcg_at_k(rels, 5);
    }
    CHECK(validation_ndcg(model, items, use_tcl) == sum / static_cast<double>(items.size()));
  }

  // the single-argument form follows the deployment switch
  model.set_use_tcl_at_inference(false);
  CHECK(validation_ndcg(model, items) == validation_ndcg(model, items, false));
  model.set_use_tcl_at_inference(true);
  CHECK(validation_ndcg(model, items) == validation_ndcg(model, items, true));

  std::vector<QueryTrainItem> none;
  CHECK_THROWS_AS(validation_ndcg(model, none), InputError);
}

TEST_CASE("encoder training is reproducible and restores its best state") {
  Fixture f = make_fixture(35, 12, 8, 400);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.validate_every = 10;
  cfg.patience = 3;
  cfg.max_steps = 60;
  cfg.seed = 5;

  auto run = [&](const fs::path& out) {
    RraBert model(tiny_config(f.corpus, 32), BertSettings{}, f.corpus.vocab, 9);
    TrainConfig c = cfg;
    c.out_dir = out;
    TrainReport r = train_bert(model, f.labels, f.corpus, c);
    return std::make_pair(std::move(model), r);
  };

  TempDir tmp("train_bert");
  auto [m1, r1] = run(tmp.path / "a");
  auto [m2, r2] = run(tmp.path / "b");

  REQUIRE_FALSE(r1.curve.empty());
  CHECK(r1.curve == r2.curve);
  CHECK(r1.best_metric == r2.best_metric);
  CHECK(r1.steps_to_best == r2.steps_to_best);
  CHECK(r1.stopped_early == r2.stopped_early);
  CHECK(m1.params().at("embed.word") == m2.params().at("embed.word"));
  CHECK(m1.params().at("clf.w") == m2.params().at("clf.w"));
  CHECK(read_file(tmp.path / "a" / "metrics.jsonl") == read_file(tmp.path / "b" / "metrics.jsonl"));

  // the curve's maximum is the reported best, found at its first peak
  double best = -1;
  long first_peak = -1;
  for (const auto& [step, metric] : r1.curve) {
    CHECK(step % cfg.validate_every == 0);
    if (metric > best) {
      best = metric;
      first_peak = step;
    }
  }
  CHECK(r1.best_metric == best);
  CHECK(r1.steps_to_best == first_peak);
  CHECK(r1.steps_to_best <= r1.curve.back().first);

  // restored parameters reproduce the best validation exactly
  auto [train_labels, valid_labels] = split_dataset(f.labels, cfg.split_ratio, cfg.seed);
  auto valid_items = resolve_items(valid_labels, f.corpus, true);
  CHECK(validation_ndcg(m1, valid_items) == r1.best_metric);

  // the saved checkpoint carries those same parameters
  REQUIRE_FALSE(r1.checkpoint.empty());
  RraBert loaded = RraBert::load(r1.checkpoint);
  CHECK(validation_ndcg(loaded, valid_items) == r1.best_metric);
}

TEST_CASE("validation pools keep excluded docs even when training drops them") {
  Fixture f = make_fixture(36, 12, 8, 400);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.validate_every = 1;
  cfg.patience = 1;
  cfg.max_steps = 1;
  cfg.seed = 2;
  cfg.use_excluded = false;

  RraBert model(tiny_config(f.corpus, 32), BertSettings{}, f.corpus.vocab, 4);
  TrainReport r = train_bert(model, f.labels, f.corpus, cfg);
  REQUIRE(r.curve.size() == 1);

  auto [train_labels, valid_labels] = split_dataset(f.labels, cfg.split_ratio, cfg.seed);
  bool any_excluded = false;
  for (const auto& l : valid_labels) any_excluded = any_excluded || !l.excluded.empty();
  REQUIRE(any_excluded);  // otherwise this fixture proves nothing
  auto with = resolve_items(valid_labels, f.corpus, true);
  auto without = resolve_items(valid_labels, f.corpus, false);
  CHECK(validation_ndcg(model, with) == r.best_metric);
  CHECK(validation_ndcg(model, without) != r.best_metric);
}

TEST_CASE("a step budget below the first validation still yields a curve point") {
  Fixture f = make_fixture(37, 12, 8, 400);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.validate_every = 50;
  cfg.max_steps = 3;
  cfg.seed = 3;
  RraBert model(tiny_config(f.corpus, 32), BertSettings{}, f.corpus.vocab, 4);
  TrainReport r = train_bert(model, f.labels, f.corpus, cfg);
  REQUIRE(r.curve.size() == 1);
  CHECK(r.curve[0].first == 3);
  CHECK(r.steps_to_best == 3);
  CHECK(r.best_metric == r.curve[0].second);
  CHECK_FALSE(r.stopped_early);
  CHECK(r.checkpoint.empty());
}

TEST_CASE("runaway learning rates abort with a divergence error") {
  Fixture f = make_fixture(38, 12, 8, 400);
  TrainConfig cfg;
  cfg.learning_rate = 1e120;
  cfg.validate_every = 1000;
  cfg.max_steps = 50;
  cfg.seed = 1;
  RraBert model(tiny_config(f.corpus, 32), BertSettings{}, f.corpus.vocab, 4);
  CHECK_THROWS_AS(train_bert(model, f.labels, f.corpus, cfg), TrainingDiverged);
}

TEST_CASE("decoder training is reproducible and needs its control tokens") {
  Fixture f = make_fixture(39, 12, 6, 300);
  ModelConfig mc = tiny_config(f.corpus, 64);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.validate_every = 10;
  cfg.patience = 2;
  cfg.max_steps = 30;
  cfg.seed = 6;

  RraGpt unregistered(mc, GptSettings{}, f.corpus.vocab, 8);
  CHECK_THROWS_AS(train_gpt(unregistered, f.labels, f.corpus, cfg), ConfigError);

  auto run = [&](const fs::path& out) {
    RraGpt model(mc, GptSettings{}, f.corpus.vocab, 8);
    model.register_special_tokens();
    TrainConfig c = cfg;
    c.out_dir = out;
    TrainReport r = train_gpt(model, f.labels, f.corpus, c);
    return std::make_pair(std::move(model), r);
  };
  TempDir tmp("train_gpt");
  auto [m1, r1] = run(tmp.path / "a");
  auto [m2, r2] = run(tmp.path / "b");

  REQUIRE_FALSE(r1.curve.empty());
  CHECK(r1.curve == r2.curve);
  CHECK(r1.best_metric == r2.best_metric);
  CHECK(m1.params().at("embed.word") == m2.params().at("embed.word"));
  CHECK(read_file(tmp.path / "a" / "metrics.jsonl") == read_file(tmp.path / "b" / "metrics.jsonl"));

  auto [train_labels, valid_labels] = split_dataset(f.labels, cfg.split_ratio, cfg.seed);
  auto valid_items = resolve_items(valid_labels, f.corpus, true);
  CHECK(validation_ndcg(m1, valid_items) == r1.best_metric);

  REQUIRE_FALSE(r1.checkpoint.empty());
  RraGpt loaded = RraGpt::load(r1.checkpoint);
  CHECK(validation_ndcg(loaded, valid_items) == r1.best_metric);

  // ranking during validation and after restore never generated
  CHECK(m1.generation_steps() == 0);
}
