#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rankdistill/errors.hpp"
#include "rankdistill/random.hpp"
#include "rankdistill/text.hpp"

using namespace rankdistill;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
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

// Kendall tau over one candidate set, tied pairs skipped.
double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      double dx = x[i] - x[j];
      double dy = y[i] - y[j];
      if (dx == 0 || dy == 0) continue;
      if (dx * dy > 0)
        ++concordant;
      else
        ++discordant;
    }
  }
  long total = concordant + discordant;
  if (total == 0) return 0;
  return static_cast<double>(concordant - discordant) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("split_words lowercases and splits on punctuation and whitespace") {
  CHECK(split_words("Dog sleeps.") == std::vector<std::string>{"dog", "sleeps"});
  CHECK(split_words("a,b;;c") == std::vector<std::string>{"a", "b", "c"});
  CHECK(split_words("  MiXeD42 CASE ") == std::vector<std::string>{"mixed42", "case"});
  CHECK(split_words("") == std::vector<std::string>{});
  CHECK(split_words("!!! ???") == std::vector<std::string>{});
  // non-ASCII bytes are word characters and pass through untouched
  CHECK(split_words("caf\xc3\xa9 dog") == std::vector<std::string>{"caf\xc3\xa9", "dog"});
}

TEST_CASE("tokenize maps words through the vocabulary with <unk> fallback") {
  Vocabulary vocab;
  int dog = vocab.add_token("dog");
  int sleeps = vocab.add_token("sleeps");

  CHECK(tokenize("Dog sleeps.", vocab) == std::vector<int>{dog, sleeps});
  CHECK(tokenize("", vocab) == std::vector<int>{});
  CHECK(tokenize("   \t\n", vocab) == std::vector<int>{});
  CHECK(tokenize("zzqx dog", vocab) == std::vector<int>{vocab.unk_id(), dog});
  // nonblank text with no extractable words still yields one token
  CHECK(tokenize("!!!", vocab) == std::vector<int>{vocab.unk_id()});
}

TEST_CASE("vocabulary reserves the four fixed specials and appends after them") {
  Vocabulary vocab;
  CHECK(vocab.size() == 4);
  CHECK(vocab.pad_id() == 0);
  CHECK(vocab.cls_id() == 1);
  CHECK(vocab.sep_id() == 2);
  CHECK(vocab.unk_id() == 3);
  CHECK(vocab.token(0) == Vocabulary::kPad);
  CHECK(vocab.token(1) == Vocabulary::kCls);
  CHECK(vocab.token(2) == Vocabulary::kSep);
  CHECK(vocab.token(3) == Vocabulary::kUnk);

  int a = vocab.add_token("alpha");
  CHECK(a == 4);
  CHECK(vocab.has("alpha"));
  CHECK(vocab.id_of("alpha") == 4);
  CHECK_FALSE(vocab.id_of("beta").has_value());
  CHECK_THROWS_AS(vocab.add_token("alpha"), InputError);
  CHECK_THROWS_AS(vocab.token(99), InputError);
  CHECK_THROWS_AS(vocab.token(-1), InputError);
}

TEST_CASE("vocabulary id and token maps stay exact inverses") {
  RandomSource rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> texts;
    int n_words = static_cast<int>(rng.uniform_range(1, 40));
    std::string text;
    for (int w = 0; w < n_words; ++w) {
      text += "w" + std::to_string(rng.uniform_int(60)) + " ";
    }
    texts.push_back(text);
    Vocabulary vocab = build_vocabulary(texts, 200);
    for (int id = 0; id < vocab.size(); ++id) {
      auto round = vocab.id_of(vocab.token(id));
      REQUIRE(round.has_value());
      CHECK(*round == id);
    }
  }
}

TEST_CASE("build_vocabulary keeps most frequent words, lexicographic ties") {
  SUBCASE("frequency order") {
    Vocabulary vocab = build_vocabulary({"a a b"}, Vocabulary::base_special_count() + 2);
    CHECK(vocab.has("a"));
    CHECK(vocab.has("b"));
    CHECK(*vocab.id_of("a") < *vocab.id_of("b"));
  }
  SUBCASE("tie breaks toward the smaller token") {
    Vocabulary vocab = build_vocabulary({"c b"}, Vocabulary::base_special_count() + 1);
    CHECK(vocab.has("b"));
    CHECK_FALSE(vocab.has("c"));
  }
  SUBCASE("max_size below the minimum is rejected") {
    CHECK_THROWS_AS(build_vocabulary({"a"}, Vocabulary::base_special_count()), ConfigError);
  }
}

TEST_CASE("build_vocabulary cap matches a brute-force frequency count") {
  // Skewed corpus with well over 1000 distinct words.
  RandomSource rng(7);
  std::vector<std::string> texts;
  for (int line = 0; line < 500; ++line) {
    std::string text;
    for (int w = 0; w < 20; ++w) {
      auto z = static_cast<std::uint64_t>(rng.uniform(0.0, 1.0) * rng.uniform(0.0, 1.0) * 2500);
      text += "word" + std::to_string(z) + " ";
    }
    texts.push_back(text);
  }

  const int cap = 1000;
  Vocabulary vocab = build_vocabulary(texts, cap);
  CHECK(vocab.size() == cap);

  std::map<std::string, long> freq;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) ++freq[w];
  }
  REQUIRE(freq.size() > static_cast<std::size_t>(cap));
  std::vector<std::pair<std::string, long>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  for (int i = 0; i < cap - Vocabulary::base_special_count(); ++i) {
    CHECK(vocab.token(Vocabulary::base_special_count() + i) ==
          entries[static_cast<std::size_t>(i)].first);
  }
}

TEST_CASE("detokenize then tokenize is the identity on word-token ids") {
  std::vector<std::string> texts = {"red green blue cyan magenta yellow umber teal pink"};
  Vocabulary vocab = build_vocabulary(texts, 64);
  RandomSource rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> ids;
    int len = static_cast<int>(rng.uniform_range(1, 12));
    for (int i = 0; i < len; ++i) {
      ids.push_back(Vocabulary::base_special_count() +
                    static_cast<int>(rng.uniform_int(
                        static_cast<std::uint64_t>(vocab.size() - Vocabulary::base_special_count()))));
    }
    std::string text = detokenize(ids, vocab);
    CHECK(tokenize(text, vocab) == ids);
    CHECK(detokenize(tokenize(text, vocab), vocab) == text);
  }
}

TEST_CASE("synthetic corpus is deterministic and well shaped") {
  Corpus a = generate_synthetic_corpus(1, 2, 6, 300);
  Corpus b = generate_synthetic_corpus(1, 2, 6, 300);
  Corpus c = generate_synthetic_corpus(2, 2, 6, 300);

  REQUIRE(a.sets.size() == 2);
  for (const auto& set : a.sets) {
    CHECK(set.documents.size() == 6);
    CHECK(set.query.token_ids.size() >= 1);
    CHECK(set.query.token_ids == tokenize(set.query.text, a.vocab));
    std::vector<std::string> ids;
    for (const auto& doc : set.documents) {
      CHECK_FALSE(doc.token_ids.empty());
      CHECK(doc.token_ids == tokenize(doc.text, a.vocab));
      REQUIRE(doc.hidden_relevance.has_value());
      CHECK(*doc.hidden_relevance >= 0.0);
      CHECK(*doc.hidden_relevance <= 1.0);
      ids.push_back(doc.id);
    }
    std::sort(ids.begin(), ids.end());
    CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
  }
  std::vector<std::string> qids;
  for (const auto& set : a.sets) qids.push_back(set.query.id);
  std::sort(qids.begin(), qids.end());
  CHECK(std::adjacent_find(qids.begin(), qids.end()) == qids.end());

  TempDir tmp("text_determinism");
  save_corpus(a, tmp.path / "a.jsonl");
  save_corpus(b, tmp.path / "b.jsonl");
  save_corpus(c, tmp.path / "c.jsonl");
  CHECK(read_file(tmp.path / "a.jsonl") == read_file(tmp.path / "b.jsonl"));
  CHECK(read_file(tmp.path / "a.jsonl") != read_file(tmp.path / "c.jsonl"));
}

TEST_CASE("synthetic relevance spans the graded range in every set") {
  Corpus corpus = generate_synthetic_corpus(3, 100, 5, 400);
  REQUIRE(corpus.sets.size() == 100);
  for (const auto& set : corpus.sets) {
    double lo = 1.0, hi = 0.0;
    for (const auto& doc : set.documents) {
      lo = std::min(lo, *doc.hidden_relevance);
      hi = std::max(hi, *doc.hidden_relevance);
    }
    CHECK(lo <= 0.05 + 1e-12);
    CHECK(hi >= 0.95 - 1e-12);
  }
}

TEST_CASE("term overlap correlates positively with hidden relevance") {
  Corpus corpus = generate_synthetic_corpus(1, 60, 20, 600);
  double tau_sum = 0;
  for (const auto& set : corpus.sets) {
    std::vector<double> overlap, rel;
    std::vector<int> q = set.query.token_ids;
    std::sort(q.begin(), q.end());
    for (const auto& doc : set.documents) {
      int hits = 0;
      for (int id : doc.token_ids) {
        if (std::binary_search(q.begin(), q.end(), id)) ++hits;
      }
      overlap.push_back(hits);
      rel.push_back(*doc.hidden_relevance);
    }
    tau_sum += kendall_tau(overlap, rel);
  }
  CHECK(tau_sum / static_cast<double>(corpus.sets.size()) > 0.0);
}

TEST_CASE("corpus jsonl round trip preserves content") {
  Corpus orig = generate_synthetic_corpus(9, 4, 5, 300);
  TempDir tmp("text_roundtrip");
  const fs::path first = tmp.path / "corpus.jsonl";
  save_corpus(orig, first);

  // one JSON object per line with the documented fields
  std::ifstream in(first);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    auto obj = nlohmann::json::parse(line);
    CHECK(obj.at("query").contains("id"));
    CHECK(obj.at("query").contains("text"));
    CHECK(obj.at("documents").is_array());
    ++lines;
  }
  CHECK(lines == 4);

  Corpus loaded = load_corpus(first);
  REQUIRE(loaded.sets.size() == orig.sets.size());
  for (std::size_t i = 0; i < orig.sets.size(); ++i) {
    CHECK(loaded.sets[i].query.id == orig.sets[i].query.id);
    CHECK(loaded.sets[i].query.text == orig.sets[i].query.text);
    REQUIRE(loaded.sets[i].documents.size() == orig.sets[i].documents.size());
    for (std::size_t j = 0; j < orig.sets[i].documents.size(); ++j) {
      const Document& got = loaded.sets[i].documents[j];
      const Document& want = orig.sets[i].documents[j];
      CHECK(got.id == want.id);
      CHECK(got.text == want.text);
      REQUIRE(got.hidden_relevance.has_value());
      CHECK(*got.hidden_relevance == *want.hidden_relevance);
      CHECK(got.token_ids == tokenize(got.text, loaded.vocab));
    }
  }

  // save of the loaded corpus reproduces the file byte for byte
  const fs::path second = tmp.path / "again.jsonl";
  save_corpus(loaded, second);
  CHECK(read_file(first) == read_file(second));
}

TEST_CASE("corpus lookup index finds present ids and rejects absent ones") {
  Corpus corpus = generate_synthetic_corpus(4, 3, 4, 300);
  const CandidateSet* set = corpus.find_set(corpus.sets[1].query.id);
  REQUIRE(set != nullptr);
  CHECK(set->query.id == corpus.sets[1].query.id);
  const Document* doc = corpus.find_document(corpus.sets[2].documents[3].id);
  REQUIRE(doc != nullptr);
  CHECK(doc->id == corpus.sets[2].documents[3].id);
  CHECK(corpus.find_set("nope") == nullptr);
  CHECK(corpus.find_document("nope") == nullptr);
}
