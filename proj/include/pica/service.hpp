#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "pica/reward_model.hpp"
#include "pica/trainer.hpp"
#include "pica/trajectory_io.hpp"
#include "pica/world.hpp"

namespace pica {

struct HttpReply {
  int status = 200;
  std::string body;
};

inline HttpReply error_reply(int status, const std::string& msg) { return {status, Json{{"error", msg}}.dump()}; }

struct RewardServiceConfig {
  std::size_t max_batch = 1024;
  RewardScaling scaling;
};

// Stateless request handlers over an immutable checkpoint.
class RewardService {
 public:
  RewardService(RewardModelParams params, RewardServiceConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    params_.check();
    version_ = model_version(params_);
  }

  const std::string& version() const { return version_; }
  const RewardModelParams& params() const { return params_; }

  HttpReply healthz() const { return {200, Json{{"status", "ok"}, {"model_version", version_}}.dump()}; }

  HttpReply get_reward(const std::string& body) const {
    Json req;
    try {
      req = Json::parse(body);
    } catch (const Json::parse_error& e) {
      return error_reply(400, std::string("body: invalid JSON: ") + e.what());
    }
    if (!req.is_object()) return error_reply(400, "field 'body': expected an object");
    auto it = req.find("trajectories");
    if (it == req.end()) return error_reply(400, "field 'trajectories': missing");
    if (!it->is_array()) return error_reply(400, "field 'trajectories': expected an array");
    if (it->size() > cfg_.max_batch)
      return error_reply(413, "batch of " + std::to_string(it->size()) + " trajectories exceeds limit " +
                                  std::to_string(cfg_.max_batch));

    std::vector<Trajectory> trajs;
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto path = "trajectories[" + std::to_string(i) + "]";
      const auto& rec = (*it)[i];
      try {
        trajs.push_back(trajectory_from_json(rec, false, path));
      } catch (const FormatError& e) {
        return error_reply(400, e.what());
      }
      const bool labeled = rec.contains("label") && rec.contains("pivot_labels");
      auto v = validate_trajectory(trajs.back(), {params_.max_turns, labeled});
      if (!v.empty()) return error_reply(400, path + ": " + v.front().message);
    }

    Json rewards = Json::array();
    for (const auto& t : trajs) {
      Json per = Json::array();
      const auto rs = step_rewards(params_, t, cfg_.scaling);
      for (std::size_t k = 0; k < rs.size(); ++k)
        per.push_back({{"turn", k + 1}, {"raw", rs[k].raw}, {"normalized", rs[k].normalized}, {"deployed", rs[k].deployed}});
      rewards.push_back(std::move(per));
    }
    return {200, Json{{"rewards", std::move(rewards)}, {"model_version", version_}}.dump()};
  }

  void mount(httplib::Server& srv) const {
    srv.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) { send(res, healthz()); });
    srv.Post("/get_reward",
             [this](const httplib::Request& req, httplib::Response& res) { send(res, get_reward(req.body)); });
  }

  static void send(httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  }

 private:
  RewardModelParams params_;
  RewardServiceConfig cfg_;
  std::string version_;
};

// Optional retrieval endpoint: {"queries": [[e, r], ...], "topk"?: k}
// -> {"results": [[{"s", "r", "o"}, ...], ...]}. Noise is seeded by the request
// body, so identical requests get identical answers.
class RetrievalService {
 public:
  RetrievalService(KnowledgeWorld world, RetrievalConfig cfg = {}, std::uint64_t seed = 0)
      : world_(std::move(world)), cfg_(cfg), seed_(seed) {}

  HttpReply retrieve(const std::string& body) const {
    Json req;
    try {
      req = Json::parse(body);
    } catch (const Json::parse_error& e) {
      return error_reply(400, std::string("body: invalid JSON: ") + e.what());
    }
    if (!req.is_object() || !req.contains("queries")) return error_reply(400, "field 'queries': missing");
    const auto& qs = req["queries"];
    if (!qs.is_array()) return error_reply(400, "field 'queries': expected an array");
    auto cfg = cfg_;
    if (auto it = req.find("topk"); it != req.end()) {
      if (!it->is_number_integer() || it->get<int>() < 0) return error_reply(400, "field 'topk': expected a non-negative integer");
      cfg.topk = it->get<int>();
    }
    auto rng = make_rng(seed_, {fnv1a(body)});
    Json results = Json::array();
    for (std::size_t i = 0; i < qs.size(); ++i) {
      const auto& q = qs[i];
      if (!q.is_array() || q.size() != 2 || !q[0].is_string() || !q[1].is_string())
        return error_reply(400, "field 'queries[" + std::to_string(i) + "]': expected [entity, relation]");
      Json docs = Json::array();
      for (const auto& f : pica::retrieve(world_, {q[0].get<std::string>(), q[1].get<std::string>()}, rng, cfg).docs)
        docs.push_back(Json{{"s", f.subject}, {"r", f.relation}, {"o", f.object}});
      results.push_back(std::move(docs));
    }
    return {200, Json{{"results", std::move(results)}}.dump()};
  }

  void mount(httplib::Server& srv) const {
    srv.Post("/retrieve", [this](const httplib::Request& req, httplib::Response& res) {
      RewardService::send(res, retrieve(req.body));
    });
  }

 private:
  KnowledgeWorld world_;
  RetrievalConfig cfg_;
  std::uint64_t seed_;
};

struct Endpoint {
  std::string host = "localhost";
  int port = 5000;
  std::string path = "/get_reward";
};

// Accepts "host:port/path" with an optional "http://" prefix.
inline Endpoint parse_endpoint(std::string url) {
  if (url.rfind("http://", 0) == 0) url = url.substr(7);
  Endpoint ep;
  auto slash = url.find('/');
  std::string hostport = url.substr(0, slash);
  if (slash != std::string::npos) ep.path = url.substr(slash);
  auto colon = hostport.rfind(':');
  if (colon == std::string::npos) {
    ep.host = hostport;
  } else {
    ep.host = hostport.substr(0, colon);
    try {
      std::size_t used = 0;
      ep.port = std::stoi(hostport.substr(colon + 1), &used);
      if (used != hostport.size() - colon - 1) throw std::invalid_argument("port");
    } catch (const std::exception&) {
      throw ConfigError("reward_model.url: bad port in '" + url + "'");
    }
  }
  if (ep.host.empty()) throw ConfigError("reward_model.url: missing host in '" + url + "'");
  return ep;
}

// Runs a server on a background thread until destroyed.
class BackgroundServer {
 public:
  BackgroundServer() : srv_(std::make_unique<httplib::Server>()) {}
  ~BackgroundServer() { stop(); }
  BackgroundServer(const BackgroundServer&) = delete;
  BackgroundServer& operator=(const BackgroundServer&) = delete;

  httplib::Server& server() { return *srv_; }

  // port 0 picks a free port; returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? srv_->bind_to_any_port(host) : (srv_->bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw TransportError("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { srv_->listen_after_bind(); });
    srv_->wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      srv_->stop();
      thread_.join();
    }
  }

  int port() const { return port_; }

 private:
  std::unique_ptr<httplib::Server> srv_;
  std::thread thread_;
  int port_ = -1;
};

struct ClientConfig {
  int max_attempts = 3;
  std::chrono::milliseconds backoff{100};
  std::chrono::seconds timeout{30};
};

class RewardClient {
 public:
  explicit RewardClient(Endpoint ep, ClientConfig cfg = {}) : ep_(std::move(ep)), cfg_(cfg) {}
  explicit RewardClient(const std::string& url, ClientConfig cfg = {}) : RewardClient(parse_endpoint(url), cfg) {}

  const std::string& last_model_version() const { return version_; }

  std::vector<std::vector<StepReward>> rewards(std::span<const Trajectory> trajs) {
    Json arr = Json::array();
    for (const auto& t : trajs) arr.push_back(to_json(t));
    const auto reply = post(ep_.path, Json{{"trajectories", std::move(arr)}}.dump());
    std::vector<std::vector<StepReward>> out;
    try {
      auto j = Json::parse(reply);
      version_ = j.at("model_version").get<std::string>();
      for (const auto& per : j.at("rewards")) {
        auto& v = out.emplace_back();
        for (const auto& r : per)
          v.push_back({r.at("raw").get<double>(), r.at("normalized").get<double>(), r.at("deployed").get<double>()});
      }
    } catch (const Json::exception& e) {
      throw TransportError(std::string("malformed reward response: ") + e.what());
    }
    if (out.size() != trajs.size()) throw TransportError("reward response has the wrong number of trajectories");
    return out;
  }

  Json healthz() {
    httplib::Client cli(ep_.host, ep_.port);
    cli.set_connection_timeout(cfg_.timeout);
    auto res = cli.Get("/healthz");
    if (!res) throw TransportError("healthz: " + httplib::to_string(res.error()));
    return Json::parse(res->body);
  }

  // Retries connection failures and 5xx; 4xx surfaces immediately.
  std::string post(const std::string& path, const std::string& body) {
    std::string last;
    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
      httplib::Client cli(ep_.host, ep_.port);
      cli.set_connection_timeout(cfg_.timeout);
      cli.set_read_timeout(cfg_.timeout);
      auto res = cli.Post(path, body, "application/json");
      if (res) {
        if (res->status == 200) return res->body;
        std::string msg = res->body;
        try {
          msg = Json::parse(res->body).at("error").get<std::string>();
        } catch (const Json::exception&) {
        }
        if (res->status >= 400 && res->status < 500) throw ValidationError(res->status, msg);
        last = "HTTP " + std::to_string(res->status) + ": " + msg;
      } else {
        last = httplib::to_string(res.error());
      }
      ++attempts_;
      if (attempt < cfg_.max_attempts) std::this_thread::sleep_for(cfg_.backoff * attempt);
    }
    throw TransportError("reward endpoint " + ep_.host + ":" + std::to_string(ep_.port) + ep_.path + " failed after " +
                         std::to_string(cfg_.max_attempts) + " attempts: " + last);
  }

  int failed_attempts() const { return attempts_; }

 private:
  Endpoint ep_;
  ClientConfig cfg_;
  std::string version_;
  int attempts_ = 0;
};

// Trainer-side reward source backed by a remote service.
class HttpRewards : public StepRewardSource {
 public:
  explicit HttpRewards(RewardClient client) : client_(std::move(client)) {}
  std::vector<std::vector<StepReward>> rewards(std::span<const Trajectory> trajs) override {
    return client_.rewards(trajs);
  }

 private:
  RewardClient client_;
};

}  // namespace pica
