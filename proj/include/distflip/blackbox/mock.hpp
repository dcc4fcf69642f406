#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "distflip/corpus/sentence.hpp"
#include "distflip/source/model.hpp"

namespace distflip::blackbox {

using Scorer = std::function<double(const std::string&)>;

/// Text reaches the model as sent: NFC only, no whitespace folding or
/// cropping, so an attacked sentence is scored character for character.
inline corpus::TextOptions served_text_options() { return {false, false, 0}; }

/// Scores raw text with a local model. The model is shared read-only, so the
/// result may be called concurrently.
template <class T>
Scorer model_scorer(std::shared_ptr<const source::SourceModel<T>> model) {
  return [model](const std::string& text) {
    BudgetMeter scratch;
    return source::score(*model, corpus::make_sentence("q", text, 0, model->vocab, served_text_options()), scratch);
  };
}

/// HTTP stand-in for a toxicity API: POST /score {"text"} -> {"toxicity"}.
class MockServer {
 public:
  explicit MockServer(Scorer scorer) : scorer_(std::move(scorer)) {
    server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty())
        res.set_content(nlohmann::json{{"error", "HTTP " + std::to_string(res.status)}}.dump(), "application/json");
    });
  }

  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;
  ~MockServer() { stop(); }

  /// Binds (port 0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    host_ = host;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Binds and serves on the calling thread until stopped.
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw std::runtime_error("cannot serve on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string endpoint() const { return "http://" + host_ + ":" + std::to_string(port_) + "/score"; }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) const {
    auto fail = [&](const std::string& msg) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", msg}}.dump(), "application/json");
    };
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const std::exception&) {
      return fail("body is not JSON");
    }
    if (!body.is_object() || !body.contains("text") || !body["text"].is_string())
      return fail("expected {\"text\": string}");
    double v = 0;
    try {
      v = scorer_(body["text"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      return fail(e.what());
    }
    res.set_content(nlohmann::json{{"toxicity", v}}.dump(), "application/json");
  }

  Scorer scorer_;
  httplib::Server server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = -1;
};

}  // namespace distflip::blackbox
