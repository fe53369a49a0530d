#include "leaffine/service.hpp"

#include <algorithm>

#include <httplib.h>

#include "leaffine/error.hpp"

namespace leaffine {

namespace {

bool supported_type(std::string_view content_type) {
  const auto semi = content_type.find(';');
  std::string t(content_type.substr(0, semi));
  t.erase(t.find_last_not_of(" \t") + 1);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return t == "image/png" || t == "image/x-portable-pixmap" || t == "image/x-portable-anymap" ||
         t == "application/octet-stream";
}

HttpReply error_reply(int status, const std::string& code, const std::string& detail) {
  return {status, nlohmann::json{{"error", code}, {"detail", detail}}.dump()};
}

}  // namespace

HttpReply handle_predict(const Predictor& predictor, std::string_view body, std::string_view content_type,
                         std::size_t top_k, std::size_t max_body) {
  if (!supported_type(content_type)) {
    return error_reply(415, "unsupported_media_type", "expected image/png or image/x-portable-pixmap");
  }
  if (body.size() > max_body) {
    return error_reply(413, "too_large", "body exceeds " + std::to_string(max_body) + " bytes");
  }
  std::vector<ClassScore> scores;
  try {
    scores = predictor.predict_bytes(
        std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
  } catch (const DecodeError& e) {
    return error_reply(400, "decode", e.what());
  } catch (const DimensionError& e) {
    return error_reply(400, "decode", e.what());
  }
  return {200, prediction_json(scores, top_k).dump()};
}

struct PredictionServer::Impl {
  Impl(const Predictor& p, ServiceOptions o) : predictor(p), options(std::move(o)) {}

  const Predictor& predictor;
  ServiceOptions options;
  httplib::Server server;
  bool bound = false;
};

PredictionServer::PredictionServer(const Predictor& predictor, ServiceOptions options)
    : impl_(std::make_unique<Impl>(predictor, std::move(options))) {
  if (impl_->options.top_k == 0) throw ConfigError("top_k must be positive");
  if (impl_->options.threads == 0) throw ConfigError("service needs at least one thread");
  auto& svr = impl_->server;
  const std::size_t threads = impl_->options.threads;
  svr.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  // One byte over the limit still reaches the handler, which answers 413 with a JSON body.
  svr.set_payload_max_length(impl_->options.max_body + 1);
  svr.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });
  svr.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
    std::size_t top_k = impl_->options.top_k;
    if (req.has_param("top")) {
      const std::string raw = req.get_param_value("top");
      if (raw.empty() || raw.find_first_not_of("0123456789") != std::string::npos || std::stoull(raw) == 0) {
        const HttpReply r = error_reply(400, "bad_request", "top must be a positive integer");
        res.status = r.status;
        res.set_content(r.body, r.content_type);
        return;
      }
      top_k = std::stoull(raw);
    }
    const HttpReply r = handle_predict(impl_->predictor, req.body, req.get_header_value("Content-Type"), top_k,
                                       impl_->options.max_body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  });
}

PredictionServer::~PredictionServer() { stop(); }

int PredictionServer::bind() {
  auto& o = impl_->options;
  if (o.port == 0) {
    o.port = impl_->server.bind_to_any_port(o.host);
    if (o.port < 0) throw IoError("cannot bind " + o.host);
  } else if (!impl_->server.bind_to_port(o.host, o.port)) {
    throw IoError("cannot bind " + o.host + ":" + std::to_string(o.port));
  }
  impl_->bound = true;
  return o.port;
}

void PredictionServer::run() {
  if (!impl_->bound) bind();
  impl_->server.listen_after_bind();
}

void PredictionServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void PredictionServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace leaffine
