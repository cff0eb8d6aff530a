#pragma once

// JSON-over-HTTP service for the studio UI:
//   POST /api/caption  {image: base64 PNG, guide_word?: string}
//   POST /api/darken   {image: base64 PNG, factor: number} -> {image}
//   GET  /api/health   -> {status, model_id}
//   GET  /api/vocab    -> {words}
// Malformed input answers 400 with {code, message}.

#include <memory>
#include <string>
#include <string_view>

#include "json.hpp"
#include "nightcap/model.hpp"

namespace nightcap {

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// Request handling without the transport; safe to call concurrently.
class CaptionService {
 public:
  explicit CaptionService(CaptionModel model);

  ApiResponse caption(std::string_view request_body) const;
  ApiResponse darken(std::string_view request_body) const;
  ApiResponse health() const;
  ApiResponse vocab() const;

  const std::string& model_id() const { return model_id_; }

 private:
  CaptionModel model_;
  std::string model_id_;
};

class HttpServer {
 public:
  explicit HttpServer(CaptionModel model);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port; port 0 picks a free port. Returns the bound port.
  /// Throws Error when binding fails.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Requires a prior bind().
  void serve();
  void stop();
  /// Blocks until serve() is accepting connections.
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace nightcap
