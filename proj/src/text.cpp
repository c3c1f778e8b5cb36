#include "rankdistill/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rankdistill/errors.hpp"
#include "rankdistill/random.hpp"

namespace rankdistill {

using nlohmann::json;

Vocabulary::Vocabulary() {
  add_token(kPad);
  add_token(kCls);
  add_token(kSep);
  add_token(kUnk);
}

int Vocabulary::add_token(const std::string& token) {
  if (token_to_id_.count(token)) {
    throw InputError("vocabulary already contains token: " + token);
  }
  int id = static_cast<int>(id_to_token_.size());
  id_to_token_.push_back(token);
  token_to_id_.emplace(token, id);
  return id;
}

bool Vocabulary::has(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

std::optional<int> Vocabulary::id_of(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw InputError("token id out of range: " + std::to_string(id));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    bool word_char = std::isalnum(c) || c >= 0x80;
    if (word_char) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<std::string> words = split_words(text);
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) {
    auto id = vocab.id_of(w);
    ids.push_back(id ? *id : vocab.unk_id());
  }
  if (ids.empty()) {
    bool blank = std::all_of(text.begin(), text.end(),
                             [](unsigned char c) { return std::isspace(c); });
    if (!blank && !text.empty()) ids.push_back(vocab.unk_id());
  }
  return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(ids[i]);
  }
  return out;
}

Vocabulary build_vocabulary(const std::vector<std::string>& texts, int max_size) {
  if (max_size < Vocabulary::base_special_count() + 1) {
    throw ConfigError("vocabulary max_size must leave room for at least one word token");
  }
  std::map<std::string, long> freq;  // ordered: lexicographic tie-break falls out of stable sort
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) ++freq[w];
  }
  std::vector<std::pair<std::string, long>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  int budget = max_size - vocab.size();
  for (const auto& [word, count] : entries) {
    if (budget == 0) break;
    (void)count;
    vocab.add_token(word);
    --budget;
  }
  return vocab;
}

const Document* Corpus::find_document(std::string_view doc_id) const {
  auto it = doc_index_.find(std::string(doc_id));
  if (it == doc_index_.end()) return nullptr;
  return &sets[it->second.first].documents[it->second.second];
}

const CandidateSet* Corpus::find_set(std::string_view query_id) const {
  auto it = set_index_.find(std::string(query_id));
  if (it == set_index_.end()) return nullptr;
  return &sets[it->second];
}

void Corpus::rebuild_index() {
  doc_index_.clear();
  set_index_.clear();
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (!set_index_.emplace(sets[s].query.id, s).second) {
      throw InputError("duplicate query id in corpus: " + sets[s].query.id);
    }
    for (std::size_t d = 0; d < sets[s].documents.size(); ++d) {
      if (!doc_index_.emplace(sets[s].documents[d].id, std::make_pair(s, d)).second) {
        throw InputError("duplicate document id in corpus: " + sets[s].documents[d].id);
      }
    }
  }
}

namespace {

// Pronounceable pseudo-words, unique per index.
std::string synth_word(int index) {
  static const char* kSyllables[] = {"ba", "de", "fi", "go", "hu", "ka", "le", "mi", "no", "pu",
                                     "ra", "se", "ti", "vo", "wu", "za", "che", "dor", "gan", "lus"};
  constexpr int kBase = 20;
  std::string w;
  int x = index;
  for (int s = 0; s < 3; ++s) {
    w += kSyllables[x % kBase];
    x /= kBase;
  }
  if (x > 0) w += kSyllables[x % kBase];
  return w;
}

// Filler words every corpus carries so prompt scaffolds, label words and the
// mock reasoning templates stay in-vocabulary.
const std::vector<std::string>& marker_words() {
  static const std::vector<std::string> kWords = {
      "query", "document", "relevant", "irrelevant", "response", "reason",
      "shares", "terms", "no", "shared", "only", "insufficient"};
  return kWords;
}

}  // namespace

Corpus generate_synthetic_corpus(std::uint64_t seed, int n_queries, int docs_per_query,
                                 int vocab_size) {
  if (n_queries <= 0 || docs_per_query <= 0) {
    throw InputError("synthetic corpus requires positive query and document counts");
  }
  if (vocab_size < 80) {
    throw InputError("synthetic corpus requires vocab_size >= 80");
  }

  const int n_topics = std::clamp(vocab_size / 40, 4, 50);
  const int topic_words = std::min(30, (vocab_size * 3 / 4) / n_topics);

  std::vector<std::vector<std::string>> topics(static_cast<std::size_t>(n_topics));
  int next_word = 0;
  for (auto& slice : topics) {
    for (int w = 0; w < topic_words; ++w) slice.push_back(synth_word(next_word++));
  }
  std::vector<std::string> common = marker_words();
  while (next_word < vocab_size) common.push_back(synth_word(next_word++));

  RandomSource rng(derive_seed(seed, "synth-corpus"));
  Corpus corpus;
  corpus.sets.reserve(static_cast<std::size_t>(n_queries));

  std::vector<std::string> all_texts;
  for (int qi = 0; qi < n_queries; ++qi) {
    CandidateSet set;
    const int topic = qi % n_topics;
    const auto& slice = topics[static_cast<std::size_t>(topic)];

    char qid[16];
    std::snprintf(qid, sizeof(qid), "q%04d", qi);
    set.query.id = qid;

    const int q_len = static_cast<int>(rng.uniform_range(4, 7));
    std::vector<std::string> q_words;
    for (auto i : rng.sample_without_replacement(slice.size(), static_cast<std::size_t>(q_len))) {
      q_words.push_back(slice[i]);
    }
    std::string q_text;
    for (std::size_t i = 0; i < q_words.size(); ++i) {
      if (i) q_text.push_back(' ');
      q_text += q_words[i];
    }
    set.query.text = q_text;
    all_texts.push_back(q_text);

    // Stratified topic distance; relevance = 1 - distance + noise with the
    // endpoints pinned so each set spans at least [0.05, 0.95].
    std::vector<double> rel(static_cast<std::size_t>(docs_per_query));
    for (int j = 0; j < docs_per_query; ++j) {
      double dist = docs_per_query == 1
                        ? 0.5
                        : 0.03 + 0.94 * static_cast<double>(j) / (docs_per_query - 1);
      double noise = rng.uniform(-0.02, 0.02);
      if (j == 0) noise = rng.uniform(-0.02, 0.0);
      if (j == docs_per_query - 1) noise = rng.uniform(0.0, 0.02);
      rel[static_cast<std::size_t>(j)] = std::clamp(1.0 - dist + noise, 0.01, 0.99);
    }
    rng.shuffle(rel);

    for (int j = 0; j < docs_per_query; ++j) {
      Document doc;
      char did[24];
      std::snprintf(did, sizeof(did), "q%04dd%02d", qi, j);
      doc.id = did;
      const double r = rel[static_cast<std::size_t>(j)];
      doc.hidden_relevance = r;

      const int doc_len = static_cast<int>(rng.uniform_range(12, 24));
      std::vector<std::string> words;

      // Some relevant documents paraphrase (query-topic words but never the
      // query's own words) and some irrelevant ones stuff literal query
      // words, so lexical overlap alone misranks both groups.
      const bool paraphrase = r > 0.6 && rng.bernoulli(0.3);
      const bool stuffed = r < 0.45 && rng.bernoulli(0.25);
      if (stuffed) {
        auto n_stuff = static_cast<std::size_t>(rng.uniform_range(2, 3));
        for (auto i : rng.sample_without_replacement(q_words.size(),
                                                     std::min(n_stuff, q_words.size()))) {
          words.push_back(q_words[i]);
        }
      } else if (!paraphrase) {
        // Honest literal overlap, mildly increasing with relevance.
        auto n_lit = static_cast<std::size_t>(r * rng.uniform(0.2, 1.0) + 0.5);
        for (auto i : rng.sample_without_replacement(q_words.size(),
                                                     std::min(n_lit, q_words.size()))) {
          words.push_back(q_words[i]);
        }
      }

      // On-topic mass shrinks with topic distance: the semantic signal.
      int n_topic_words = static_cast<int>(r * 0.7 * doc_len + 0.5);
      for (int t = 0; t < n_topic_words && static_cast<int>(words.size()) < doc_len; ++t) {
        std::string word = slice[static_cast<std::size_t>(rng.uniform_int(slice.size()))];
        if (paraphrase) {
          for (int redraw = 0;
               redraw < 8 && std::find(q_words.begin(), q_words.end(), word) != q_words.end();
               ++redraw) {
            word = slice[static_cast<std::size_t>(rng.uniform_int(slice.size()))];
          }
          if (std::find(q_words.begin(), q_words.end(), word) != q_words.end()) continue;
        }
        words.push_back(std::move(word));
      }
      // Filler: a foil topic plus common words.
      const auto& foil = topics[static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(n_topics)))];
      while (static_cast<int>(words.size()) < doc_len) {
        if (rng.bernoulli(0.5)) {
          words.push_back(foil[static_cast<std::size_t>(rng.uniform_int(foil.size()))]);
        } else {
          words.push_back(common[static_cast<std::size_t>(rng.uniform_int(common.size()))]);
        }
      }
      rng.shuffle(words);

      std::string text;
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) text.push_back(' ');
        text += words[i];
      }
      doc.text = text;
      all_texts.push_back(text);
      set.documents.push_back(std::move(doc));
    }
    corpus.sets.push_back(std::move(set));
  }

  corpus.vocab = build_vocabulary(all_texts, vocab_size + 64);
  for (auto& set : corpus.sets) {
    set.query.token_ids = tokenize(set.query.text, corpus.vocab);
    for (auto& doc : set.documents) doc.token_ids = tokenize(doc.text, corpus.vocab);
  }
  corpus.rebuild_index();
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open corpus file for writing: " + path.string());
  for (const auto& set : corpus.sets) {
    json docs = json::array();
    for (const auto& d : set.documents) {
      json jd = {{"id", d.id}, {"text", d.text}};
      if (d.hidden_relevance) jd["hidden_relevance"] = *d.hidden_relevance;
      docs.push_back(std::move(jd));
    }
    json line = {{"query", {{"id", set.query.id}, {"text", set.query.text}}},
                 {"documents", std::move(docs)}};
    out << line.dump() << "\n";
  }
}

Corpus load_corpus(const std::filesystem::path& path, int vocab_max_size) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path.string());
  Corpus corpus;
  std::vector<std::string> all_texts;
  std::string line;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("query") || !j.contains("documents")) {
      throw InputError("corpus line " + std::to_string(lineno) + ": missing query or documents");
    }
    CandidateSet set;
    set.query.id = j["query"].at("id").get<std::string>();
    set.query.text = j["query"].at("text").get<std::string>();
    all_texts.push_back(set.query.text);
    for (const auto& jd : j["documents"]) {
      Document d;
      d.id = jd.at("id").get<std::string>();
      d.text = jd.at("text").get<std::string>();
      if (jd.contains("hidden_relevance")) d.hidden_relevance = jd["hidden_relevance"].get<double>();
      all_texts.push_back(d.text);
      set.documents.push_back(std::move(d));
    }
    corpus.sets.push_back(std::move(set));
  }
  corpus.vocab = build_vocabulary(all_texts, vocab_max_size);
  for (auto& set : corpus.sets) {
    set.query.token_ids = tokenize(set.query.text, corpus.vocab);
    for (auto& doc : set.documents) doc.token_ids = tokenize(doc.text, corpus.vocab);
  }
  corpus.rebuild_index();
  return corpus;
}

}  // namespace rankdistill
