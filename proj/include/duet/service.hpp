// SPDX-License-Identifier: Apache-2.0
//
// HTTP/JSON front end for the ensemble.
//
//   POST /chat    {query, mode?, decode?: {max_len?, beam_width?}}
//                 -> 200 {reply, provenance, candidates, timings_ms, model_versions}
//                    400 malformed body or empty query
//                    422 unknown mode, bad decode override, mode unavailable
//   GET  /health  -> {status: "ok", uptime_s}
//   GET  /config  -> {config, checksums}
//
// Every error body is {error, detail}.
#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>

#include "duet/config.hpp"
#include "duet/ensemble.hpp"

namespace duet {

inline constexpr std::string_view kJsonContentType = "application/json; charset=utf-8";
inline constexpr std::size_t kMaxDecodeLen = 200;
inline constexpr std::size_t kMaxBeamWidth = 32;

struct HttpReply {
  int status = 200;
  std::string body;
};

/// Wire form of a ChatResponse.
std::string response_to_json(const ChatResponse& response, const std::map<std::string, std::string>& versions);

class ChatService {
 public:
  ChatService(std::shared_ptr<const Ensemble> ensemble, AppConfig config);

  HttpReply chat(std::string_view body) const;
  HttpReply health() const;
  HttpReply config() const;

  /// Checksums of the configured artifacts, hashed now.
  std::map<std::string, std::string> checksums() const;
  const std::map<std::string, std::string>& model_versions() const noexcept { return versions_; }

  /// Serves on host:port until stop(). Port 0 picks a free port; `on_ready`
  /// receives the bound port once the socket is listening. Returns false if
  /// binding fails.
  bool run(const std::string& host, int port, std::function<void(int)> on_ready = {});
  void stop();

 private:
  std::shared_ptr<const Ensemble> ensemble_;
  AppConfig config_;
  std::map<std::string, std::string> versions_;
  std::chrono::steady_clock::time_point started_;
  struct Server;
  std::shared_ptr<Server> server_;
};

}  // namespace duet
