#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <string_view>

#include "leaffine/predict.hpp"

namespace leaffine {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  /// 0 binds any free port.
  int port = 8080;
  std::size_t max_body = 8u << 20;
  std::size_t top_k = 5;
  /// Worker threads; 1 serves requests one at a time.
  std::size_t threads = 1;
};

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// The POST /predict logic without the transport. 415 for a content type other
/// than PNG, PPM or octet-stream, 413 above `max_body` bytes, 400 with
/// {"error": "decode"} when the bytes are not a readable image.
HttpReply handle_predict(const Predictor& predictor, std::string_view body, std::string_view content_type,
                         std::size_t top_k, std::size_t max_body);

/// GET /healthz and POST /predict (optional ?top=N) over a read-only predictor.
class PredictionServer {
 public:
  PredictionServer(const Predictor& predictor, ServiceOptions options);
  ~PredictionServer();
  PredictionServer(const PredictionServer&) = delete;
  PredictionServer& operator=(const PredictionServer&) = delete;

  /// Binds the socket and returns the port. Throws IoError when it cannot bind.
  int bind();
  /// Serves until stop(); binds first if needed.
  void run();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace leaffine
