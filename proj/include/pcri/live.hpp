#pragma once

// Chat-completion client for remote vision-language models.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <regex>
#include <string>
#include <string_view>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "pcri/adapters.hpp"
#include "pcri/image.hpp"

namespace pcri {

struct RetryPolicy {
  int max_attempts = 3;
  double backoff_base_s = 1.0;  // delay before attempt k+1 is base * 2^(k-1)
};

struct ModelEndpointConfig {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model_name;
  std::string auth_token_env_var_name = "OPENAI_API_KEY";
  int max_parallel_requests = 4;
  double timeout_s = 60.0;
  RetryPolicy retry;
  std::string prompt_template = "{query}";
};

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < data.size(); i += 3) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (const std::size_t rest = data.size() - i; rest > 0) {
    const std::uint32_t v = (data[i] << 16) | (rest == 2 ? data[i + 1] << 8 : 0);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

/// Request body: one user message with the prompt text and, when given, the
/// view as a lossless PNG data URL.
inline nlohmann::json build_chat_request(const std::string& model, const std::string& prompt, const Image* view) {
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", prompt}});
  if (view != nullptr) {
    const auto png = image::encode_png(*view);
    content.push_back(
        {{"type", "image_url"}, {"image_url", {{"url", "data:image/png;base64," + base64_encode(png)}}}});
  }
  return {{"model", model},
          {"temperature", 0},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
}

/// First choice's message text; nullopt if the body does not have that shape.
inline std::optional<std::string> parse_chat_response(std::string_view body) {
  auto doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
  auto choices = doc.find("choices");
  if (choices == doc.end() || !choices->is_array() || choices->empty()) return std::nullopt;
  const auto& first = (*choices)[0];
  if (!first.contains("message") || !first["message"].is_object()) return std::nullopt;
  const auto& content = first["message"]["content"];
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string text;
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text" && part.contains("text") && part["text"].is_string()) {
        text += part["text"].get<std::string>();
      }
    }
    return text;
  }
  return std::nullopt;
}

class LiveAdapter final : public Adapter {
 public:
  using Sleeper = std::function<void(std::chrono::duration<double>)>;

  explicit LiveAdapter(ModelEndpointConfig cfg,
                       Sleeper sleeper = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); })
      : cfg_(std::move(cfg)), sleep_(std::move(sleeper)) {
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(cfg_.base_url, m, kUrl)) {
      throw Error(ErrorCode::Config, "endpoint URL must look like http(s)://host[:port][/path]: " + cfg_.base_url);
    }
    origin_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : std::string();
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/chat/completions";
    if (cfg_.max_parallel_requests < 1) throw Error(ErrorCode::Config, "max_parallel_requests must be >= 1");
    if (cfg_.retry.max_attempts < 1) throw Error(ErrorCode::Config, "retry max_attempts must be >= 1");
  }

  std::string model_id() const override { return cfg_.model_name; }
  int max_parallel() const override { return cfg_.max_parallel_requests; }
  const ModelEndpointConfig& config() const { return cfg_; }

  InferenceOutcome infer(const InferenceRequest& req) override {
    return send(build_chat_request(cfg_.model_name, req.prompt, &req.view_image));
  }

  /// One text-only request used to fail fast before bulk inference.
  InferenceOutcome probe() { return send(build_chat_request(cfg_.model_name, "ping", nullptr)); }

 private:
  InferenceOutcome send(const nlohmann::json& body) {
    const std::string payload = body.dump();
    InferenceOutcome out;
    for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
      out.attempts = attempt;
      httplib::Client client(origin_);
      const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
          std::chrono::duration<double>(cfg_.timeout_s));
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      if (const char* token = std::getenv(cfg_.auth_token_env_var_name.c_str()); token != nullptr && *token) {
        client.set_bearer_token_auth(token);
      }
      auto res = client.Post(path_, payload, "application/json");

      bool retryable = false;
      if (!res) {
        const auto err = res.error();
        const bool timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                               err == httplib::Error::Write;
        out.error = timed_out ? InferenceError::Timeout : InferenceError::Transport;
        out.detail = httplib::to_string(err);
        retryable = true;
      } else if (res->status == 200) {
        if (auto text = parse_chat_response(res->body)) {
          out.raw_response = std::move(*text);
          out.error = InferenceError::None;
          out.detail.clear();
        } else {
          out.error = InferenceError::MalformedResponse;
          out.detail = "response has no choices[0].message.content";
        }
        return out;
      } else if (res->status == 401 || res->status == 403) {
        out.error = InferenceError::AuthError;
        out.detail = "HTTP " + std::to_string(res->status);
        return out;
      } else if (res->status == 429) {
        out.error = InferenceError::RateLimited;
        out.detail = "HTTP 429";
        retryable = true;
      } else if (res->status >= 500) {
        out.error = InferenceError::ServerError;
        out.detail = "HTTP " + std::to_string(res->status);
        retryable = true;
      } else {
        out.error = InferenceError::MalformedResponse;
        out.detail = "HTTP " + std::to_string(res->status);
        return out;
      }
      if (!retryable || attempt == cfg_.retry.max_attempts) break;
      sleep_(std::chrono::duration<double>(std::ldexp(cfg_.retry.backoff_base_s, attempt - 1)));
    }
    return out;
  }

  ModelEndpointConfig cfg_;
  Sleeper sleep_;
  std::string origin_;
  std::string path_;
};

}  // namespace pcri
