#include "nightcap/server.hpp"

#include <spdlog/spdlog.h>

#include <httplib.h>

#include "nightcap/checkpoint.hpp"
#include "nightcap/dataset.hpp"
#include "nightcap/error.hpp"
#include "nightcap/image.hpp"
#include "nightcap/inference.hpp"

namespace nightcap {

namespace {

using nlohmann::json;

ApiResponse bad_request(std::string code, std::string message) {
  return {400, {{"code", std::move(code)}, {"message", std::move(message)}}};
}

// Parses the body as a JSON object, or fills `error`.
std::optional<json> parse_object(std::string_view body, ApiResponse& error) {
  json parsed = json::parse(body, nullptr, false);
  if (parsed.is_discarded()) {
    error = bad_request("invalid_json", "request body is not valid JSON");
    return std::nullopt;
  }
  if (!parsed.is_object()) {
    error = bad_request("invalid_request", "request body must be a JSON object");
    return std::nullopt;
  }
  return parsed;
}

// Accepts plain base64 or a data URL.
std::optional<RgbImage> decode_image_field(const json& request, ApiResponse& error) {
  if (!request.contains("image") || !request["image"].is_string()) {
    error = bad_request("invalid_request", "field 'image' must be a base64 PNG string");
    return std::nullopt;
  }
  std::string_view text = request["image"].get_ref<const std::string&>();
  if (text.starts_with("data:")) {
    const auto comma = text.find(',');
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
  }
  try {
    return decode_png(base64_decode(text));
  } catch (const DataError& e) {
    error = bad_request("invalid_image", e.what());
    return std::nullopt;
  }
}

}  // namespace

CaptionService::CaptionService(CaptionModel model) : model_(std::move(model)), model_id_(nightcap::model_id(model_)) {}

ApiResponse CaptionService::caption(std::string_view request_body) const {
  ApiResponse error;
  auto request = parse_object(request_body, error);
  if (!request) return error;
  auto image = decode_image_field(*request, error);
  if (!image) return error;

  std::optional<std::string> guide;
  if (request->contains("guide_word") && !(*request)["guide_word"].is_null()) {
    if (!(*request)["guide_word"].is_string()) {
      return bad_request("invalid_request", "field 'guide_word' must be a string or null");
    }
    guide = (*request)["guide_word"].get<std::string>();
    if (guide->empty()) return bad_request("invalid_guide", "guide word must not be empty");
  }

  Tensor pixels = image_to_tensor(*image);
  const std::size_t size = model_.config.image_size;
  if (image->width != size || image->height != size) pixels = resize_bilinear(pixels, size, size);

  const CaptionResult result = guide ? caption_interactive(model_, pixels, *guide) : caption_auto(model_, pixels);
  json body;
  body["caption"] = result.caption;
  body["tokens"] = result.trace.tokens;
  body["grids"] = trace_to_json(result.trace)["grids"];
  body["guide_used"] = guide ? json(*guide) : json(nullptr);
  body["degraded_guide"] = result.degraded_guide;
  body["model_id"] = model_id_;
  return {200, std::move(body)};
}

ApiResponse CaptionService::darken(std::string_view request_body) const {
  ApiResponse error;
  auto request = parse_object(request_body, error);
  if (!request) return error;
  auto image = decode_image_field(*request, error);
  if (!image) return error;
  if (!request->contains("factor") || !(*request)["factor"].is_number()) {
    return bad_request("invalid_request", "field 'factor' must be a number");
  }
  const double factor = (*request)["factor"].get<double>();
  if (!(factor > 0.0 && factor <= 1.0)) {
    return bad_request("invalid_factor", "factor must lie in (0, 1], got " + std::to_string(factor));
  }
  const RgbImage dark = tensor_to_image(degrade_pixels(image_to_tensor(*image), factor));
  return {200, {{"image", base64_encode(encode_png(dark))}}};
}

ApiResponse CaptionService::health() const { return {200, {{"status", "ok"}, {"model_id", model_id_}}}; }

ApiResponse CaptionService::vocab() const { return {200, {{"words", model_.vocab.corpus_words()}}}; }

struct HttpServer::Impl {
  explicit Impl(CaptionModel model) : service(std::move(model)) {}

  CaptionService service;
  httplib::Server http;
  bool bound = false;
};

HttpServer::HttpServer(CaptionModel model) : impl_(std::make_unique<Impl>(std::move(model))) {
  auto& http = impl_->http;
  const CaptionService& service = impl_->service;
  http.set_payload_max_length(32 * 1024 * 1024);
  http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                            {"Access-Control-Allow-Headers", "Content-Type"},
                            {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});

  auto reply = [](httplib::Response& res, const ApiResponse& api) {
    res.status = api.status;
    res.set_content(api.body.dump(), "application/json");
  };
  http.Post("/api/caption", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.caption(req.body));
  });
  http.Post("/api/darken", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.darken(req.body));
  });
  http.Get("/api/health", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.health());
  });
  http.Get("/api/vocab", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.vocab());
  });
  http.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  http.set_exception_handler([reply](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    spdlog::error("request failed: {}", message);
    reply(res, {500, {{"code", "internal"}, {"message", message}}});
  });
  http.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound = -1;
  if (port == 0) {
    bound = impl_->http.bind_to_any_port(host);
  } else if (impl_->http.bind_to_port(host, port)) {
    bound = port;
  }
  if (bound <= 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->bound = true;
  return bound;
}

void HttpServer::serve() {
  if (!impl_->bound) throw ContractError("HttpServer::serve called before bind");
  impl_->http.listen_after_bind();
}

void HttpServer::stop() {
  if (impl_->http.is_running()) impl_->http.stop();
}

void HttpServer::wait_until_ready() const { impl_->http.wait_until_ready(); }

}  // namespace nightcap
