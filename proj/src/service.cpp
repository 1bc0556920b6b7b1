// SPDX-License-Identifier: Apache-2.0
#include "duet/service.hpp"

#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "duet/error.hpp"
#include "duet/gen/checkpoint.hpp"

namespace duet {
namespace {

using Json = nlohmann::ordered_json;

HttpReply error_reply(int status, std::string_view error, std::string_view detail) {
  Json j;
  j["error"] = error;
  j["detail"] = detail;
  return {status, j.dump()};
}

std::optional<std::size_t> positive_int(const Json& j, std::string_view key, std::size_t max) {
  if (!j.contains(key)) return std::nullopt;
  const auto& v = j.at(std::string(key));
  if (!v.is_number_integer() || v.get<std::int64_t>() < 1 || v.get<std::uint64_t>() > max) {
    throw Error(std::string(key) + " must be an integer in 1.." + std::to_string(max));
  }
  return v.get<std::size_t>();
}

}  // namespace

struct ChatService::Server {
  httplib::Server http;
  std::atomic<bool> listening{false};
};

std::string response_to_json(const ChatResponse& response, const std::map<std::string, std::string>& versions) {
  Json j;
  j["reply"] = detokenize(response.reply);
  j["provenance"] = std::string(to_string(response.provenance));
  auto candidates = Json::array();
  for (const auto& c : response.candidates) {
    Json cj;
    cj["text"] = detokenize(c.reply);
    cj["provenance"] = std::string(to_string(c.provenance));
    cj["score"] = c.score ? Json(*c.score) : Json(nullptr);
    if (c.source_pair_id) cj["source_pair_id"] = *c.source_pair_id;
    cj["selected"] = c.provenance == response.provenance;
    candidates.push_back(std::move(cj));
  }
  j["candidates"] = std::move(candidates);
  j["timings_ms"] = {{"retrieve", response.timings.retrieve_ms},
                     {"generate", response.timings.generate_ms},
                     {"rerank", response.timings.rerank_ms},
                     {"total", response.timings.total_ms}};
  j["model_versions"] = versions;
  return j.dump();
}

ChatService::ChatService(std::shared_ptr<const Ensemble> ensemble, AppConfig config)
    : ensemble_(std::move(ensemble)),
      config_(std::move(config)),
      started_(std::chrono::steady_clock::now()),
      server_(std::make_shared<Server>()) {
  if (!ensemble_) throw Error("ChatService: ensemble is required");
  versions_["feature_version"] = std::to_string(kFeatureVersion);
  versions_["checkpoint_version"] = std::to_string(gen::kCheckpointVersion);
  if (const auto* g = ensemble_->generator()) versions_["generator_arch"] = std::string(gen::to_string(g->params.arch));
  for (const auto& [name, sum] : checksums()) versions_[name] = sum.substr(0, 12);
}

std::map<std::string, std::string> ChatService::checksums() const {
  std::map<std::string, std::string> out;
  const auto& a = config_.artifacts;
  if (!a.database.empty()) out["database"] = sha256_file(a.database);
  if (!a.index.empty()) out["index"] = sha256_file(a.index);
  if (!a.matcher.empty()) out["matcher"] = sha256_file(a.matcher);
  if (!a.generator.empty()) out["generator"] = sha256_file(a.generator);
  return out;
}

HttpReply ChatService::chat(std::string_view body) const {
  const Json request = Json::parse(body, nullptr, false);
  if (request.is_discarded() || !request.is_object()) return error_reply(400, "bad_request", "body must be a JSON object");
  if (!request.contains("query") || !request["query"].is_string()) {
    return error_reply(400, "bad_request", "'query' must be a string");
  }
  const auto query = tokenize(request["query"].get<std::string>(), ensemble_->options().tokenizer);
  if (query.empty()) return error_reply(400, "empty_query", "query has no tokens");

  RequestOptions options;
  try {
    if (request.contains("mode") && !request["mode"].is_null()) {
      if (!request["mode"].is_string()) throw Error("'mode' must be a string");
      options.mode = parse_mode(request["mode"].get<std::string>());
    }
    if (request.contains("decode") && !request["decode"].is_null()) {
      const auto& d = request["decode"];
      if (!d.is_object()) throw Error("'decode' must be an object");
      options.max_len = positive_int(d, "max_len", kMaxDecodeLen);
      options.beam_width = positive_int(d, "beam_width", kMaxBeamWidth);
    }
  } catch (const Error& e) {
    return error_reply(422, "invalid_option", e.what());
  }
  if (options.mode.value_or(ensemble_->options().mode) != Mode::kRetrievalOnly && !ensemble_->generator()) {
    return error_reply(422, "mode_unavailable", "no generator is loaded; only retrieval_only is available");
  }

  try {
    return {200, response_to_json(ensemble_->respond_tokens(query, options), versions_)};
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

HttpReply ChatService::health() const {
  const double uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  Json j;
  j["status"] = "ok";
  j["uptime_s"] = uptime;
  return {200, j.dump()};
}

HttpReply ChatService::config() const {
  Json j;
  j["config"] = Json::parse(config_to_json(config_));
  try {
    j["checksums"] = checksums();
  } catch (const std::exception& e) {
    return error_reply(500, "checksum_failed", e.what());
  }
  j["model_versions"] = versions_;
  return {200, j.dump()};
}

bool ChatService::run(const std::string& host, int port, std::function<void(int)> on_ready) {
  auto& http = server_->http;
  const std::size_t threads = std::max<std::size_t>(1, config_.service.threads);
  http.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  // no SO_REUSEPORT: a second instance on a busy port must fail to bind
  http.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });
  if (config_.service.cors) {
    http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  }
  const std::string type(kJsonContentType);
  auto send = [type](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body, type);
  };
  http.Post("/chat", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, chat(req.body)); });
  http.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  http.Get("/config", [this, send](const httplib::Request&, httplib::Response& res) { send(res, config()); });
  http.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  http.set_error_handler([send](const httplib::Request&, httplib::Response& res) {
    // Only fill in bodies for statuses the routes did not produce.
    if (!res.body.empty()) return;
    send(res, error_reply(res.status, res.status == 404 ? "not_found" : "http_error", httplib::status_message(res.status)));
  });
  http.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, "internal", what));
  });

  int bound = port;
  if (port == 0) {
    bound = http.bind_to_any_port(host);
    if (bound <= 0) return false;
  } else if (!http.bind_to_port(host, port)) {
    return false;
  }
  server_->listening = true;
  if (on_ready) on_ready(bound);
  const bool ok = http.listen_after_bind();
  server_->listening = false;
  return ok;
}

void ChatService::stop() {
  // the accept loop may not have started yet; httplib ignores stop() until it has
  while (server_->listening && !server_->http.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  server_->http.stop();
}

}  // namespace duet
