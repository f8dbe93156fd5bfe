#include <gtest/gtest.h>

#include <thread>

#include "fixtures.hpp"

using namespace pica;

namespace {

const RewardModelParams& trained_model() {
  static const RewardModelParams p = [] {
    Dataset d;
    d.trajectories = fixtures::behavior_corpus(70, 60);
    RmTrainConfig cfg;
    cfg.epochs = 5;
    return train_reward_model(d, cfg).params;
  }();
  return p;
}

std::string unlabeled_body(const std::vector<Trajectory>& trajs) {
  Json arr = Json::array();
  for (const auto& t : trajs) {
    auto j = to_json(t);
    j.erase("label");
    j.erase("pivot_labels");
    arr.push_back(std::move(j));
  }
  return Json{{"trajectories", std::move(arr)}}.dump();
}

class LiveService : public ::testing::Test {
 protected:
  void SetUp() override {
    RewardServiceConfig cfg;
    cfg.max_batch = 8;
    service_ = std::make_unique<RewardService>(trained_model(), cfg);
    retrieval_ = std::make_unique<RetrievalService>(fixtures::perry_world(), RetrievalConfig{2, 1.0}, 3);
    service_->mount(server_.server());
    retrieval_->mount(server_.server());
    port_ = server_.start();
  }
  std::string url(const std::string& path = "/get_reward") const {
    return "127.0.0.1:" + std::to_string(port_) + path;
  }

  std::unique_ptr<RewardService> service_;
  std::unique_ptr<RetrievalService> retrieval_;
  BackgroundServer server_;
  int port_ = 0;
};

}  // namespace

TEST(RewardServiceHandler, MatchesInProcessRewards) {
  const RewardService svc(trained_model());
  const auto corpus = fixtures::behavior_corpus(71, 20);
  const auto reply = svc.get_reward(unlabeled_body(corpus));
  ASSERT_EQ(reply.status, 200) << reply.body;
  const auto j = Json::parse(reply.body);
  EXPECT_EQ(j["model_version"], model_version(trained_model()));
  ASSERT_EQ(j["rewards"].size(), corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto want = step_rewards(trained_model(), corpus[i]);
    const auto& got = j["rewards"][i];
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < want.size(); ++k) {
      EXPECT_EQ(got[k]["turn"].get<int>(), static_cast<int>(k) + 1);
      EXPECT_NEAR(got[k]["raw"].get<double>(), want[k].raw, 1e-12);
      EXPECT_NEAR(got[k]["normalized"].get<double>(), want[k].normalized, 1e-12);
      EXPECT_NEAR(got[k]["deployed"].get<double>(), want[k].deployed, 1e-12);
    }
  }
}

TEST(RewardServiceHandler, EmptyBatch) {
  const RewardService svc(trained_model());
  const auto reply = svc.get_reward(R"({"trajectories": []})");
  ASSERT_EQ(reply.status, 200);
  const auto j = Json::parse(reply.body);
  EXPECT_EQ(j["rewards"], Json::array());
}

TEST(RewardServiceHandler, FieldErrorsAre400) {
  const RewardService svc(trained_model());
  auto expect_400 = [&](const std::string& body, const std::string& needle) {
    const auto r = svc.get_reward(body);
    EXPECT_EQ(r.status, 400) << body;
    const auto msg = Json::parse(r.body).at("error").get<std::string>();
    EXPECT_NE(msg.find(needle), std::string::npos) << msg;
  };
  expect_400("{oops", "invalid JSON");
  expect_400("[]", "expected an object");
  expect_400("{}", "'trajectories': missing");
  expect_400(R"({"trajectories": 3})", "expected an array");
  expect_400(R"({"trajectories": [{"turns": []}]})", "trajectories[0].question");
  const auto w = fixtures::perry_world();
  auto rec = to_json(fixtures::golden_trajectory(w, fixtures::perry_task(w)));
  rec["turns"][0]["search"] = Json::array({"William C. Perry"});
  expect_400(Json{{"trajectories", Json::array({rec})}}.dump(), "trajectories[0].turns[0].search");
}

TEST(RewardServiceHandler, ConstraintViolationsAre400) {
  const RewardService svc(trained_model());
  const auto w = fixtures::perry_world();
  auto t = fixtures::golden_trajectory(w, fixtures::perry_task3(w));
  t.turns.insert(t.turns.begin(), 2, t.turns[0]);
  const auto r = svc.get_reward(unlabeled_body({t}));
  EXPECT_EQ(r.status, 400);
  EXPECT_NE(r.body.find("turn budget exceeded"), std::string::npos) << r.body;

  auto labeled = fixtures::golden_trajectory(w, fixtures::perry_task3(w));
  labeled.pivot_labels.pop_back();
  const auto r2 = svc.get_reward(Json{{"trajectories", Json::array({Json(), to_json(labeled)})}}.dump());
  EXPECT_EQ(r2.status, 400);
  const auto r3 = svc.get_reward(Json{{"trajectories", Json::array({to_json(labeled)})}}.dump());
  EXPECT_EQ(r3.status, 400);
  EXPECT_NE(r3.body.find("trajectories[0]: label-count mismatch"), std::string::npos) << r3.body;
}

TEST(RewardServiceHandler, OversizedBatchIs413) {
  RewardServiceConfig cfg;
  cfg.max_batch = 3;
  const RewardService svc(trained_model(), cfg);
  const auto r = svc.get_reward(unlabeled_body(fixtures::behavior_corpus(72, 2)));
  EXPECT_EQ(r.status, 413);
  EXPECT_NE(r.body.find("exceeds limit 3"), std::string::npos);
}

TEST(RewardServiceHandler, RejectsBadCheckpoint) {
  RewardModelParams p;
  p.step_weights.pop_back();
  EXPECT_THROW(RewardService{p}, FormatError);
}

TEST(Endpoint, Parse) {
  const auto a = parse_endpoint("localhost:5000/get_reward");
  EXPECT_EQ(a.host, "localhost");
  EXPECT_EQ(a.port, 5000);
  EXPECT_EQ(a.path, "/get_reward");
  const auto b = parse_endpoint("http://10.0.0.2:8080/x/y");
  EXPECT_EQ(b.host, "10.0.0.2");
  EXPECT_EQ(b.port, 8080);
  EXPECT_EQ(b.path, "/x/y");
  EXPECT_THROW(parse_endpoint("host:abc/get_reward"), ConfigError);
  EXPECT_THROW(parse_endpoint(":80/x"), ConfigError);
}

TEST_F(LiveService, LoopbackMatchesInProcess) {
  RewardClient client(url());
  const auto corpus = fixtures::behavior_corpus(73, 4);
  const auto got = client.rewards(corpus);
  EXPECT_EQ(client.last_model_version(), model_version(trained_model()));
  ASSERT_EQ(got.size(), corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto want = step_rewards(trained_model(), corpus[i]);
    ASSERT_EQ(got[i].size(), want.size());
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(got[i][k].deployed, want[k].deployed, 1e-6);
  }
}

TEST_F(LiveService, Healthz) {
  RewardClient client(url());
  const auto h = client.healthz();
  EXPECT_EQ(h["status"], "ok");
  EXPECT_EQ(h["model_version"], model_version(trained_model()));
}

TEST_F(LiveService, RepeatRequestsAreByteIdentical) {
  RewardClient client(url());
  const auto body = unlabeled_body(fixtures::behavior_corpus(74, 3));
  EXPECT_EQ(client.post("/get_reward", body), client.post("/get_reward", body));
}

TEST_F(LiveService, ConcurrentRequests) {
  const auto body = unlabeled_body(fixtures::behavior_corpus(75, 3));
  const auto expected = service_->get_reward(body).body;
  std::vector<std::string> replies(8);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < replies.size(); ++i)
    threads.emplace_back([&, i] { replies[i] = RewardClient(url()).post("/get_reward", body); });
  for (auto& t : threads) t.join();
  for (const auto& r : replies) EXPECT_EQ(r, expected);
}

TEST_F(LiveService, ClientErrorsCarryServiceMessage) {
  RewardClient client(url());
  try {
    client.post("/get_reward", "{}");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.status, 400);
    EXPECT_EQ(std::string(e.what()), "field 'trajectories': missing");
  }
  EXPECT_EQ(client.failed_attempts(), 0);
  const auto big = fixtures::behavior_corpus(76, 5);
  try {
    client.rewards(big);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.status, 413);
  }
}

TEST_F(LiveService, Retrieve) {
  RewardClient client(url("/retrieve"));
  const auto reply = Json::parse(client.post(
      "/retrieve", R"({"queries": [["William C. Perry", "alma mater"], ["Nobody", "alma mater"]]})"));
  ASSERT_EQ(reply["results"].size(), 2u);
  const auto& first = reply["results"][0];
  EXPECT_EQ(first.size(), 2u);
  bool hit = false;
  for (const auto& d : first) hit = hit || (d["s"] == "William C. Perry" && d["o"] == "University of Kansas");
  EXPECT_TRUE(hit);
  for (const auto& d : reply["results"][1]) EXPECT_EQ(d["r"], "alma mater");
  EXPECT_THROW(client.post("/retrieve", R"({"queries": [["x"]]})"), ValidationError);
}

TEST(RewardClientTransport, DeadPortFailsAfterRetries) {
  int port = 0;
  {
    BackgroundServer probe;
    port = probe.start();
  }
  ClientConfig cfg;
  cfg.backoff = std::chrono::milliseconds(1);
  cfg.timeout = std::chrono::seconds(2);
  RewardClient client("127.0.0.1:" + std::to_string(port) + "/get_reward", cfg);
  try {
    client.post("/get_reward", "{}");
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_NE(std::string(e.what()).find("failed after 3 attempts"), std::string::npos) << e.what();
  }
  EXPECT_EQ(client.failed_attempts(), 3);
}

TEST(RewardClientTransport, ServerErrorsAreRetried) {
  BackgroundServer srv;
  int calls = 0;
  srv.server().Post("/get_reward", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 503;
    res.set_content(R"({"error": "busy"})", "application/json");
  });
  const int port = srv.start();
  ClientConfig cfg;
  cfg.backoff = std::chrono::milliseconds(1);
  RewardClient client("127.0.0.1:" + std::to_string(port) + "/get_reward", cfg);
  EXPECT_THROW(client.post("/get_reward", "{}"), TransportError);
  EXPECT_EQ(calls, 3);
}

TEST(RewardClientTransport, HttpRewardsSource) {
  BackgroundServer srv;
  const RewardService svc(trained_model());
  svc.mount(srv.server());
  const int port = srv.start();
  HttpRewards remote(RewardClient("127.0.0.1:" + std::to_string(port) + "/get_reward"));
  InProcessRewards local(trained_model());
  const auto corpus = fixtures::behavior_corpus(77, 3);
  const auto a = remote.rewards(corpus), b = local.rewards(corpus);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].size(); ++k) EXPECT_NEAR(a[i][k].deployed, b[i][k].deployed, 1e-6);
}
