#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rankdistill/labelgen.hpp"
#include "rankdistill/metrics.hpp"
#include "rankdistill/text.hpp"

namespace fs = std::filesystem;
namespace rd = rankdistill;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("rankdistill_cli_test_" + std::to_string(++counter));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  REQUIRE(out.good());
  out << body;
}

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Shells out to the built binary; stdout/stderr land in scratch files so the
// test can assert on both streams and the exit code at once.
CliResult run_cli(const std::string& args, const fs::path& scratch) {
  fs::path out_path = scratch / "_stdout";
  fs::path err_path = scratch / "_stderr";
  std::string cmd = std::string(RANKDISTILL_CLI_PATH) + " " + args + " >" + out_path.string() +
                    " 2>" + err_path.string();
  int raw = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_file(out_path);
  r.err = read_file(err_path);
  return r;
}

long count_lines(const std::string& body) {
  long n = 0;
  for (char c : body) {
    if (c == '\n') ++n;
  }
  return n;
}

// One small corpus plus labels shared by the training subcommand tests.
struct Pipeline {
  TempDir dir;
  fs::path corpus = dir.path / "corpus.jsonl";
  fs::path labels = dir.path / "labels.jsonl";
  fs::path qrels = dir.path / "qrels.txt";

  explicit Pipeline(int queries = 12, int docs = 8, int vocab = 150) {
    std::ostringstream synth;
    synth << "synth-corpus --seed 5 --queries " << queries << " --docs " << docs << " --vocab "
          << vocab << " --out " << corpus.string();
    REQUIRE(run_cli(synth.str(), dir.path).exit_code == 0);
    std::string gen = "gen-labels --corpus " + corpus.string() + " --out " + labels.string() +
                      " --qrels " + qrels.string() + " --seed 5";
    REQUIRE(run_cli(gen, dir.path).exit_code == 0);
  }
};

}  // namespace

TEST_CASE("help exits clean and parse failures exit 1") {
  TempDir dir;

  CliResult help = run_cli("--help", dir.path);
  CHECK(help.exit_code == 0);
  CHECK(help.out.find("synth-corpus") != std::string::npos);
  CHECK(help.out.find("train-bert") != std::string::npos);
  CHECK(help.out.find("evaluate") != std::string::npos);

  CHECK(run_cli("", dir.path).exit_code == 1);             // subcommand required
  CHECK(run_cli("frobnicate", dir.path).exit_code == 1);   // unknown subcommand
  CHECK(run_cli("synth-corpus", dir.path).exit_code == 1); // --out required
  CHECK(run_cli("rank --model x.ckpt", dir.path).exit_code == 1);

  CliResult sub_help = run_cli("gen-labels --help", dir.path);
  CHECK(sub_help.exit_code == 0);
  CHECK(sub_help.out.find("--sliding-window") != std::string::npos);
}

TEST_CASE("synth-corpus output is deterministic and loadable") {
  TempDir dir;
  fs::path a = dir.path / "a.jsonl";
  fs::path b = dir.path / "b.jsonl";
  fs::path c = dir.path / "c.jsonl";

  std::string base = "synth-corpus --seed 9 --queries 6 --docs 5 --vocab 120 --out ";
  CliResult first = run_cli(base + a.string(), dir.path);
  CHECK(first.exit_code == 0);
  CHECK(first.err.find("wrote 6 candidate sets") != std::string::npos);
  CHECK(run_cli(base + b.string(), dir.path).exit_code == 0);
  CHECK(read_file(a) == read_file(b));

  CHECK(run_cli("synth-corpus --seed 10 --queries 6 --docs 5 --vocab 120 --out " + c.string(),
                dir.path)
            .exit_code == 0);
  CHECK(read_file(a) != read_file(c));

  rd::Corpus corpus = rd::load_corpus(a);
  REQUIRE(corpus.sets.size() == 6);
  for (const rd::CandidateSet& set : corpus.sets) {
    CHECK(set.documents.size() == 5);
    for (const rd::Document& d : set.documents) CHECK(d.hidden_relevance.has_value());
  }
}

TEST_CASE("gen-labels builds a dataset with qrels and a skip report") {
  TempDir dir;
  fs::path corpus = dir.path / "corpus.jsonl";
  REQUIRE(run_cli("synth-corpus --seed 3 --queries 15 --docs 8 --vocab 150 --out " +
                      corpus.string(),
                  dir.path)
              .exit_code == 0);
  std::string corpus_bytes = read_file(corpus);

  fs::path labels = dir.path / "labels.jsonl";
  fs::path qrels = dir.path / "qrels.txt";
  fs::path skips = dir.path / "skips.jsonl";
  std::string cmd = "gen-labels --corpus " + corpus.string() + " --out " + labels.string() +
                    " --qrels " + qrels.string() + " --skip-report " + skips.string() +
                    " --seed 7";
  CliResult r = run_cli(cmd, dir.path);
  CHECK(r.exit_code == 0);
  CHECK(r.err.find("labeled") != std::string::npos);

  // the corpus is input only
  CHECK(read_file(corpus) == corpus_bytes);

  std::vector<rd::RankingLabel> loaded = rd::load_dataset(labels);
  CHECK(loaded.size() + count_lines(read_file(skips)) == 15);
  rd::Corpus parsed = rd::load_corpus(corpus);
  std::map<std::string, const rd::CandidateSet*> by_id;
  for (const rd::CandidateSet& set : parsed.sets) by_id[set.query.id] = &set;
  for (const rd::RankingLabel& label : loaded) {
    REQUIRE(by_id.count(label.query_id) == 1);
    CHECK(!label.ranked.empty());
    CHECK(label.negatives.size() == 3);
  }
  std::istringstream skip_lines(read_file(skips));
  std::string skip_line;
  while (std::getline(skip_lines, skip_line)) {
    json j = json::parse(skip_line);
    CHECK(j.contains("query_id"));
    CHECK(!j.at("reason").get<std::string>().empty());
  }

  rd::Qrels judged = rd::load_qrels(qrels);
  CHECK(judged.size() == loaded.size());

  // same seed, same bytes
  fs::path labels2 = dir.path / "labels2.jsonl";
  fs::path qrels2 = dir.path / "qrels2.txt";
  CHECK(run_cli("gen-labels --corpus " + corpus.string() + " --out " + labels2.string() +
                    " --qrels " + qrels2.string() + " --seed 7",
                dir.path)
            .exit_code == 0);
  CHECK(read_file(labels) == read_file(labels2));
  CHECK(read_file(qrels) == read_file(qrels2));

  // sliding-window mode also labels every kept query end to end
  fs::path labels3 = dir.path / "labels3.jsonl";
  CHECK(run_cli("gen-labels --corpus " + corpus.string() + " --out " + labels3.string() +
                    " --sliding-window --seed 7",
                dir.path)
            .exit_code == 0);
  for (const rd::RankingLabel& label : rd::load_dataset(labels3)) {
    CHECK(label.excluded.empty());
    CHECK(label.graded_scores.size() == label.ranked.size() + label.negatives.size());
  }
}

TEST_CASE("train-bert then rank then evaluate round trip") {
  Pipeline p;
  fs::path cfg = p.dir.path / "bert.cfg";
  write_file(cfg,
             "d_hidden = 16\nn_layers = 1\nn_heads = 2\nmax_seq_len = 32\n"
             "learning_rate = 0.002\nvalidate_every = 4\npatience = 2\nmax_steps = 12\n");
  fs::path out = p.dir.path / "bert_run";

  std::string train = "train-bert --dataset " + p.labels.string() + " --corpus " +
                      p.corpus.string() + " --config " + cfg.string() + " --out " + out.string() +
                      " --seed 5";
  CliResult r = run_cli(train, p.dir.path);
  REQUIRE(r.exit_code == 0);
  json report = json::parse(r.out);
  CHECK(report.at("steps_to_best").get<long>() >= 1);
  CHECK(report.at("best_ndcg5").get<double>() >= 0.0);
  CHECK(report.at("validations").get<long>() >= 1);
  fs::path ckpt = report.at("checkpoint").get<std::string>();
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(out / "metrics.jsonl"));

  // identical invocation reproduces the report and the checkpoint bytes
  fs::path out2 = p.dir.path / "bert_run2";
  CliResult r2 = run_cli("train-bert --dataset " + p.labels.string() + " --corpus " +
                             p.corpus.string() + " --config " + cfg.string() + " --out " +
                             out2.string() + " --seed 5",
                         p.dir.path);
  REQUIRE(r2.exit_code == 0);
  CHECK(json::parse(r2.out).at("best_ndcg5") == report.at("best_ndcg5"));
  CHECK(read_file(out / "metrics.jsonl") == read_file(out2 / "metrics.jsonl"));
  CHECK(read_file(ckpt) == read_file(out2 / "model.ckpt"));

  // rank with the checkpoint over a handmade document list
  rd::Corpus parsed = rd::load_corpus(p.corpus);
  const rd::CandidateSet& sample = parsed.sets.front();
  fs::path docs = p.dir.path / "docs.jsonl";
  {
    std::ofstream dout(docs);
    for (const rd::Document& d : sample.documents) {
      dout << json{{"id", d.id}, {"text", d.text}}.dump() << "\n";
    }
  }
  std::string quoted_query = "\"" + sample.query.text + "\"";
  CliResult ranked = run_cli("rank --model " + ckpt.string() + " --query " + quoted_query +
                                 " --query-id " + sample.query.id + " --docs " + docs.string(),
                             p.dir.path);
  REQUIRE(ranked.exit_code == 0);
  std::istringstream lines(ranked.out);
  std::string line;
  int expect_rank = 1;
  double prev_score = std::numeric_limits<double>::infinity();
  while (std::getline(lines, line)) {
    std::istringstream ss(line);
    std::string qid, q0, did, tag;
    int rank;
    double score;
    REQUIRE((ss >> qid >> q0 >> did >> rank >> score >> tag));
    CHECK(qid == sample.query.id);
    CHECK(q0 == "Q0");
    CHECK(rank == expect_rank++);
    CHECK(score <= prev_score);
    prev_score = score;
    CHECK(tag == "rankdistill");
  }
  CHECK(expect_rank == static_cast<int>(sample.documents.size()) + 1);

  // evaluate agrees with the library computation on the same run and qrels
  fs::path run_file = p.dir.path / "run.txt";
  write_file(run_file, ranked.out);
  CliResult eval = run_cli("evaluate --run " + run_file.string() + " --qrels " +
                               p.qrels.string() + " --k 5",
                           p.dir.path);
  REQUIRE(eval.exit_code == 0);
  json ej = json::parse(eval.out);
  rd::EvalResult expect = rd::evaluate_run(rd::load_run(run_file), rd::load_qrels(p.qrels), {5});
  CHECK(ej.at("mean").at("ndcg@5").get<double>() ==
        doctest::Approx(expect.mean.at(5)).epsilon(1e-12));
  CHECK(ej.at("evaluated_queries").get<long>() == expect.evaluated_queries);

  // an empty document list is rejected as user error
  fs::path empty_docs = p.dir.path / "empty.jsonl";
  write_file(empty_docs, "");
  CliResult bad = run_cli("rank --model " + ckpt.string() + " --query " + quoted_query +
                              " --docs " + empty_docs.string(),
                          p.dir.path);
  CHECK(bad.exit_code == 1);
  CHECK(bad.err.find("error:") != std::string::npos);
}

TEST_CASE("train-gpt report and its checkpoint drives rank") {
  Pipeline p(10, 6, 120);
  fs::path cfg = p.dir.path / "gpt.cfg";
  write_file(cfg,
             "d_hidden = 16\nn_layers = 1\nn_heads = 2\nmax_seq_len = 48\n"
             "tasks = gen+clf+rank\nreasoning = true\nranking_input = response\n"
             "learning_rate = 0.002\nvalidate_every = 4\npatience = 1\nmax_steps = 8\n");
  fs::path out = p.dir.path / "gpt_run";

  CliResult r = run_cli("train-gpt --dataset " + p.labels.string() + " --corpus " +
                            p.corpus.string() + " --config " + cfg.string() + " --out " +
                            out.string() + " --seed 5",
                        p.dir.path);
  REQUIRE(r.exit_code == 0);
  json report = json::parse(r.out);
  fs::path ckpt = report.at("checkpoint").get<std::string>();
  CHECK(fs::exists(ckpt));

  fs::path docs = p.dir.path / "docs.jsonl";
  rd::Corpus parsed = rd::load_corpus(p.corpus);
  {
    std::ofstream dout(docs);
    for (const rd::Document& d : parsed.sets.front().documents) {
      dout << json{{"id", d.id}, {"text", d.text}}.dump() << "\n";
    }
  }
  CliResult ranked = run_cli("rank --model " + ckpt.string() + " --query \"" +
                                 parsed.sets.front().query.text + "\" --docs " + docs.string(),
                             p.dir.path);
  REQUIRE(ranked.exit_code == 0);
  CHECK(count_lines(ranked.out) == static_cast<long>(parsed.sets.front().documents.size()));
  CHECK(ranked.out.find(" Q0 ") != std::string::npos);
  CHECK(ranked.out.substr(0, 3) == "q0 ");  // default --query-id
}

TEST_CASE("evaluate reports known values and skips unjudged queries") {
  TempDir dir;
  fs::path run = dir.path / "run.txt";
  fs::path qrels = dir.path / "qrels.txt";
  // q1 ranked in ideal order, q2 judged in reverse, q3 unjudged
  write_file(run,
             "q1 Q0 d1 1 0.9 t\nq1 Q0 d2 2 0.5 t\nq1 Q0 d3 3 0.1 t\n"
             "q2 Q0 a 1 0.9 t\nq2 Q0 b 2 0.8 t\n"
             "q3 Q0 z 1 1.0 t\n");
  write_file(qrels,
             "q1 0 d1 3\nq1 0 d2 2\nq1 0 d3 0\n"
             "q2 0 a 0\nq2 0 b 2\n");

  CliResult r = run_cli("evaluate --run " + run.string() + " --qrels " + qrels.string() +
                            " --k 5 --per-query",
                        dir.path);
  REQUIRE(r.exit_code == 0);
  json j = json::parse(r.out);
  CHECK(j.at("evaluated_queries").get<int>() == 2);
  REQUIRE(j.at("skipped_queries").size() == 1);
  CHECK(j.at("skipped_queries")[0].get<std::string>() == "q3");
  CHECK(j.at("per_query").at("q1").at("ndcg@5").get<double>() == doctest::Approx(1.0));
  double q2 = rd::ndcg_at_k({0.0, 2.0}, 5);
  CHECK(j.at("per_query").at("q2").at("ndcg@5").get<double>() == doctest::Approx(q2));
  CHECK(j.at("mean").at("ndcg@5").get<double>() == doctest::Approx((1.0 + q2) / 2.0));

  // default cutoffs are 5 and 10
  CliResult dflt = run_cli("evaluate --run " + run.string() + " --qrels " + qrels.string(),
                           dir.path);
  REQUIRE(dflt.exit_code == 0);
  json dj = json::parse(dflt.out);
  CHECK(dj.at("mean").contains("ndcg@5"));
  CHECK(dj.at("mean").contains("ndcg@10"));
}

TEST_CASE("config files reject unknown keys duplicates and malformed lines") {
  Pipeline p(12, 6, 120);
  std::string train = "train-bert --dataset " + p.labels.string() + " --corpus " +
                      p.corpus.string() + " --out " + (p.dir.path / "o").string() + " --config ";

  fs::path unknown = p.dir.path / "unknown.cfg";
  write_file(unknown, "max_steps = 4\nlearnig_rate = 0.01\n");
  CliResult r1 = run_cli(train + unknown.string(), p.dir.path);
  CHECK(r1.exit_code == 1);
  CHECK(r1.err.find("unknown config key 'learnig_rate'") != std::string::npos);

  fs::path dup = p.dir.path / "dup.cfg";
  write_file(dup, "max_steps = 4\nmax_steps = 5\n");
  CliResult r2 = run_cli(train + dup.string(), p.dir.path);
  CHECK(r2.exit_code == 1);
  CHECK(r2.err.find("duplicate key") != std::string::npos);

  fs::path noval = p.dir.path / "noval.cfg";
  write_file(noval, "just a line\n");
  CliResult r3 = run_cli(train + noval.string(), p.dir.path);
  CHECK(r3.exit_code == 1);
  CHECK(r3.err.find("expected key = value") != std::string::npos);

  fs::path badnum = p.dir.path / "badnum.cfg";
  write_file(badnum, "max_steps = soon\n");
  CliResult r4 = run_cli(train + badnum.string(), p.dir.path);
  CHECK(r4.exit_code == 1);
  CHECK(r4.err.find("malformed number") != std::string::npos);

  // comments and the decoder task grammar parse cleanly
  fs::path good = p.dir.path / "good.cfg";
  write_file(good,
             "# decoder smoke\nd_hidden = 16\nn_layers = 1\nn_heads = 2\nmax_seq_len = 48\n"
             "tasks = gen\nuse_ranking_layer = false\nmax_steps = 3\nvalidate_every = 3\n"
             "patience = 1\n");
  CliResult r5 = run_cli("train-gpt --dataset " + p.labels.string() + " --corpus " +
                             p.corpus.string() + " --out " + (p.dir.path / "g").string() +
                             " --config " + good.string(),
                         p.dir.path);
  CHECK(r5.exit_code == 0);

  fs::path badtask = p.dir.path / "badtask.cfg";
  write_file(badtask, "tasks = gen+juggle\n");
  CliResult r6 = run_cli("train-gpt --dataset " + p.labels.string() + " --corpus " +
                             p.corpus.string() + " --out " + (p.dir.path / "g2").string() +
                             " --config " + badtask.string(),
                         p.dir.path);
  CHECK(r6.exit_code == 1);
  CHECK(r6.err.find("unknown task 'juggle'") != std::string::npos);
}

TEST_CASE("bad inputs exit with the documented codes") {
  TempDir dir;

  // user errors exit 1
  fs::path corpus = dir.path / "corpus.jsonl";
  REQUIRE(run_cli("synth-corpus --seed 2 --queries 4 --docs 5 --vocab 100 --out " +
                      corpus.string(),
                  dir.path)
              .exit_code == 0);
  CliResult labeler2 = run_cli("gen-labels --corpus " + corpus.string() + " --out " +
                                   (dir.path / "y").string() + " --labeler tarot",
                               dir.path);
  CHECK(labeler2.exit_code == 1);
  CHECK(labeler2.err.find("--labeler must be oracle or http") != std::string::npos);

  CliResult endpoint = run_cli("gen-labels --corpus " + corpus.string() + " --out " +
                                   (dir.path / "y2").string() + " --labeler http",
                               dir.path);
  CHECK(endpoint.exit_code == 1);
  CHECK(endpoint.err.find("needs --endpoint") != std::string::npos);

  fs::path half = dir.path / "half.jsonl";
  write_file(half, "{\"documents\": []}\n");
  CliResult missing_query = run_cli("gen-labels --corpus " + half.string() + " --out " +
                                        (dir.path / "y3").string(),
                                    dir.path);
  CHECK(missing_query.exit_code == 1);
  CHECK(missing_query.err.find("missing query or documents") != std::string::npos);

  // broken files exit 2
  CliResult gone = run_cli("gen-labels --corpus " + (dir.path / "absent.jsonl").string() +
                               " --out " + (dir.path / "y4").string(),
                           dir.path);
  CHECK(gone.exit_code == 2);
  CHECK(gone.err.find("cannot open corpus file") != std::string::npos);

  fs::path broken = dir.path / "broken.jsonl";
  write_file(broken, "{not json\n");
  CliResult corrupt = run_cli("gen-labels --corpus " + broken.string() + " --out " +
                                  (dir.path / "y5").string(),
                              dir.path);
  CHECK(corrupt.exit_code == 2);

  // a corpus file is not a checkpoint
  CliResult notckpt = run_cli("rank --model " + corpus.string() + " --query q --docs " +
                                  corpus.string(),
                              dir.path);
  CHECK(notckpt.exit_code == 2);
  CHECK(notckpt.err.find("checkpoint") != std::string::npos);
}

TEST_CASE("ablate writes a comparison table over the standard variants") {
  Pipeline p(12, 6, 120);
  fs::path cfg = p.dir.path / "ablate.cfg";
  write_file(cfg,
             "d_hidden = 16\nn_layers = 1\nn_heads = 2\nmax_seq_len = 32\n"
             "max_steps = 4\nvalidate_every = 2\npatience = 1\n");
  fs::path csv = p.dir.path / "table.csv";
  fs::path jsn = p.dir.path / "table.json";

  CliResult r = run_cli("ablate --suite bert --corpus " + p.corpus.string() + " --dataset " +
                            p.labels.string() + " --config " + cfg.string() +
                            " --seeds 7 --out-csv " + csv.string() + " --out-json " +
                            jsn.string(),
                        p.dir.path);
  REQUIRE(r.exit_code == 0);
  for (const char* name : {"bm25", "naive cosine", "w/ ts+tcl", "w/o missing", "w/o ts+tcl",
                           "infer w/o tcl"}) {
    CHECK(r.out.find(name) != std::string::npos);
  }

  std::string csv_body = read_file(csv);
  CHECK(csv_body.rfind("variant,mean_ndcg5,stddev_ndcg5,mean_steps_to_best,seed_7", 0) == 0);
  CHECK(count_lines(csv_body) == 7);  // header plus six rows

  json table = json::parse(read_file(jsn));
  CHECK(table.at("suite") == "bert");
  CHECK(table.at("metric") == "ndcg@5");
  REQUIRE(table.at("rows").size() == 6);
  for (const json& row : table.at("rows")) {
    CHECK(row.at("per_seed").size() == 1);
    CHECK(row.at("mean").is_number());
  }
  // trained rows carry step counts, baselines do not
  CHECK(!table.at("rows")[0].contains("steps_per_seed"));
  CHECK(table.at("rows")[5].contains("steps_per_seed"));

  CliResult bad = run_cli("ablate --suite mlp --corpus " + p.corpus.string() + " --dataset " +
                              p.labels.string(),
                          p.dir.path);
  CHECK(bad.exit_code == 1);
  CHECK(bad.err.find("--suite must be bert or gpt") != std::string::npos);
}
