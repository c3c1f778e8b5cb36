#ifdef RANKDISTILL_WITH_TLS
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <cstdlib>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rankdistill/errors.hpp"
#include "rankdistill/labelgen.hpp"

namespace rankdistill {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port], what httplib::Client takes
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("labeler endpoint must be an http(s) URL: " + url);
  }
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ConfigError("unsupported labeler endpoint scheme: " + scheme);
  }
#ifndef RANKDISTILL_WITH_TLS
  if (scheme == "https") {
    throw ConfigError("this build lacks TLS support; use an http endpoint");
  }
#endif
  auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  if (path_start == std::string::npos) {
    out.origin = url;
    out.path = "/";
  } else {
    out.origin = url.substr(0, path_start);
    out.path = url.substr(path_start);
  }
  return out;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string HttpChatLabeler::build_prompt(const Query& query, const std::vector<Document>& docs) {
  std::ostringstream p;
  p << "Rank the following documents by relevance to the query. Reply with document ids only, "
       "most relevant first, separated by ' > '. Leave out documents that are not relevant.\n";
  p << "Query: " << query.text << "\n";
  p << "Documents:\n";
  for (const auto& d : docs) p << "[" << d.id << "] " << d.text << "\n";
  return p.str();
}

std::vector<std::string> HttpChatLabeler::parse_ranking(const std::string& content,
                                                        const std::vector<Document>& docs) {
  std::set<std::string> known;
  for (const auto& d : docs) known.insert(d.id);

  std::vector<std::string> ids;
  std::set<std::string> seen;
  std::size_t start = 0;
  const std::string body = trim(content);
  if (body.empty()) throw LabelerContractError("labeler reply is empty");
  while (start <= body.size()) {
    auto sep = body.find('>', start);
    std::string piece = trim(sep == std::string::npos ? body.substr(start)
                                                      : body.substr(start, sep - start));
    if (piece.empty() || piece.find_first_of(" \t") != std::string::npos) {
      throw LabelerContractError("labeler reply is not an 'id > id' chain: " + body);
    }
    if (!known.count(piece)) {
      throw LabelerContractError("labeler reply names unknown id: " + piece);
    }
    if (!seen.insert(piece).second) {
      throw LabelerContractError("labeler reply repeats id: " + piece);
    }
    ids.push_back(piece);
    if (sep == std::string::npos) break;
    start = sep + 1;
  }
  return ids;
}

std::vector<std::string> HttpChatLabeler::rank(const Query& query,
                                               const std::vector<Document>& docs) {
  const SplitUrl url = split_url(config_.endpoint);
  httplib::Client client(url.origin);
  client.set_connection_timeout(config_.timeout_seconds);
  client.set_read_timeout(config_.timeout_seconds);

  httplib::Headers headers;
  if (const char* token = std::getenv(config_.token_env.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  json body = {{"messages", json::array({json{{"role", "user"},
                                              {"content", build_prompt(query, docs)}}})}};
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    auto res = client.Post(url.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "server error " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw InputError("labeler endpoint rejected the request with status " +
                       std::to_string(res->status));
    }
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::exception& e) {
      throw LabelerContractError(std::string("labeler reply is not JSON: ") + e.what());
    }
    std::string content;
    try {
      content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw LabelerContractError("labeler reply lacks choices[0].message.content");
    }
    return parse_ranking(content, docs);
  }
  throw IoError("labeler endpoint unreachable after " + std::to_string(config_.max_retries + 1) +
                " attempts: " + last_error);
}

}  // namespace rankdistill
