#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <spdlog/spdlog.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <thread>

#include "foamfed/federation.hpp"
#include "foamfed/wire.hpp"
#include "testutil.hpp"

using namespace foamfed;
using testutil::TempDir;

namespace {

ModelParams random_manifest(Rng& rng, size_t n_tensors) {
  ModelParams p;
  for (size_t t = 0; t < n_tensors; ++t) {
    std::vector<uint32_t> shape{1 + rng.bounded(6)};
    if (rng.chance(0.5)) shape.push_back(1 + rng.bounded(4));
    NamedTensor nt("tensor_" + std::to_string(t), shape);
    for (auto& v : nt.data) v = static_cast<float>(rng.normal(0.0, 1.5));
    p.tensors.push_back(std::move(nt));
  }
  return p;
}

ModelParams reroll_values(const ModelParams& manifest, Rng& rng) {
  ModelParams p = manifest;
  for (auto& t : p.tensors)
    for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, 1.5));
  return p;
}

bool params_bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].name != b.tensors[i].name) return false;
    if (a.tensors[i].shape != b.tensors[i].shape) return false;
    if (!a.tensors[i].data.empty() &&
        std::memcmp(a.tensors[i].data.data(), b.tensors[i].data.data(),
                    a.tensors[i].data.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

size_t count_lines(const std::string& path) {
  std::ifstream in(path);
  size_t n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("aggregate_fit equals the brute-force weighted mean") {
  Rng rng(8080);
  for (int trial = 0; trial < 60; ++trial) {
    ModelParams manifest = random_manifest(rng, 1 + rng.bounded(3));
    size_t n_clients = 1 + rng.bounded(8);
    std::vector<ClientUpdate> updates;
    uint64_t total = 0;
    for (size_t k = 0; k < n_clients; ++k) {
      ClientUpdate u;
      u.params = reroll_values(manifest, rng);
      u.n_samples = 1 + rng.bounded(1000);
      u.metrics = RoundMetrics{rng.next_double(), rng.next_double(), rng.next_double(),
                               rng.next_double()};
      total += u.n_samples;
      updates.push_back(std::move(u));
    }

    auto result = aggregate_fit(trial, updates);
    REQUIRE(result.has_value());
    const ModelParams& got = result->first;

    for (size_t ti = 0; ti < manifest.tensors.size(); ++ti)
      for (size_t i = 0; i < manifest.tensors[ti].data.size(); ++i) {
        double want = 0.0;
        for (const auto& u : updates)
          want += static_cast<double>(u.n_samples) / static_cast<double>(total) *
                  static_cast<double>(u.params.tensors[ti].data[i]);
        INFO("trial ", trial, " tensor ", ti, " elem ", i);
        CHECK(std::fabs(static_cast<double>(got.tensors[ti].data[i]) - want) < 1e-6);
      }

    double want_loss = 0.0;
    for (const auto& u : updates)
      want_loss += static_cast<double>(u.n_samples) / static_cast<double>(total) * u.metrics.loss;
    CHECK(result->second.loss == doctest::Approx(want_loss).epsilon(1e-12));
  }
}

TEST_CASE("single-client aggregation is bit-identical to the input") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    ClientUpdate u;
    u.params = random_manifest(rng, 2);
    u.n_samples = 1 + rng.bounded(500);
    auto result = aggregate_fit(0, {u});
    REQUIRE(result.has_value());
    CHECK(params_bitwise_equal(result->first, u.params));
  }
}

TEST_CASE("aggregate_fit rejects bad updates and warns on none") {
  Rng rng(21);
  ModelParams manifest = random_manifest(rng, 2);

  CHECK(!aggregate_fit(0, {}).has_value());

  ClientUpdate zero;
  zero.params = manifest;
  zero.n_samples = 0;
  CHECK_THROWS_AS(aggregate_fit(0, {zero}), std::invalid_argument);

  ClientUpdate a, b;
  a.params = manifest;
  a.n_samples = 5;
  b.params = random_manifest(rng, 3);  // different manifest
  b.n_samples = 5;
  CHECK_THROWS_AS(aggregate_fit(0, std::vector<ClientUpdate>{a, b}), std::invalid_argument);
}

TEST_CASE("weighted_metrics averages by sample count") {
  RoundMetrics m1{1.0, 0.2, 0.4, 0.6};
  RoundMetrics m2{3.0, 0.8, 0.9, 1.0};
  RoundMetrics got = weighted_metrics({{m1, 10}, {m2, 30}});
  CHECK(got.loss == doctest::Approx(0.25 * 1.0 + 0.75 * 3.0));
  CHECK(got.iou == doctest::Approx(0.25 * 0.2 + 0.75 * 0.8));
  CHECK(got.pixel_accuracy == doctest::Approx(0.25 * 0.4 + 0.75 * 0.9));
  CHECK(got.dice == doctest::Approx(0.25 * 0.6 + 0.75 * 1.0));
  RoundMetrics empty = weighted_metrics({});
  CHECK(empty.loss == 0.0);
}

TEST_CASE("save_aggregated_model filters by manifest and names by round") {
  TempDir tmp("saveagg");
  ModelParams manifest = make_model_params();
  ModelParams agg = manifest;
  agg.at("w").data[0] = 0.5f;
  agg.tensors.push_back(NamedTensor("stowaway", {2}, {9.0f, 9.0f}));

  std::string path = save_aggregated_model(tmp.path(), 3, agg, manifest);
  CHECK(path.find("federated_round_3.fp") != std::string::npos);
  REQUIRE(std::filesystem::exists(path));

  ModelParams loaded = load_checkpoint(path);
  CHECK(loaded.tensors.size() == manifest.tensors.size());
  CHECK(loaded.find("stowaway") == nullptr);
  CHECK(loaded.at("w").data[0] == 0.5f);

  // A mis-shaped tensor is excluded rather than written.
  ModelParams bad = manifest;
  bad.at("b").shape = {2};
  bad.at("b").data = {1.0f, 2.0f};
  std::string path2 = save_aggregated_model(tmp.path(), 4, bad, manifest);
  ModelParams loaded2 = load_checkpoint(path2);
  CHECK(loaded2.find("b") == nullptr);
  CHECK(loaded2.find("w") != nullptr);
}

TEST_CASE("two clients federate over loopback for two rounds") {
  TempDir tmp("fedrun");
  auto data = synth_generate(8, 48, 48, 314);
  std::vector<SamplePair> half_a(data.begin(), data.begin() + 4);
  std::vector<SamplePair> half_b(data.begin() + 4, data.end());

  ServerConfig scfg;
  scfg.rounds = 2;
  scfg.min_available = 2;
  scfg.min_fit = 2;
  scfg.min_eval = 2;
  scfg.save_dir = tmp.sub("server");
  scfg.listen_address = "127.0.0.1:0";
  scfg.eval_samples = 2;
  scfg.fit_config.epochs = 1;
  scfg.fit_config.steps_per_epoch = 2;
  scfg.fit_config.batch_size = 2;
  scfg.fit_config.lr = 0.05;

  std::promise<int> port_promise;
  auto port_future = port_promise.get_future();
  scfg.on_listening = [&](int port) { port_promise.set_value(port); };

  TrainingLog log;
  std::exception_ptr server_error;
  std::thread server([&] {
    try {
      log = server_run(scfg);
    } catch (...) {
      server_error = std::current_exception();
    }
  });

  int port = port_future.get();
  REQUIRE(port > 0);

  auto run_client = [&](const std::vector<SamplePair>& d, const std::string& out) {
    ClientConfig ccfg;
    ccfg.server_address = "127.0.0.1:" + std::to_string(port);
    ccfg.train = scfg.fit_config;
    ccfg.model_out = out;
    return client_run(ccfg, d);
  };
  std::string out_a = tmp.sub("client_a.fp");
  int rc_a = 0, rc_b = 0;
  std::thread ca([&] { rc_a = run_client(half_a, out_a); });
  std::thread cb([&] { rc_b = run_client(half_b, ""); });
  ca.join();
  cb.join();
  server.join();

  if (server_error) std::rethrow_exception(server_error);
  CHECK(rc_a == 0);
  CHECK(rc_b == 0);

  REQUIRE(log.fit_rounds.size() == 2);
  CHECK(log.eval_rounds.size() == 2);
  REQUIRE(log.checkpoint_paths.size() == 2);
  for (const auto& p : log.checkpoint_paths) CHECK(std::filesystem::exists(p));
  CHECK(log.bound_port == port);

  // Header plus one row per round in both CSVs.
  CHECK(count_lines(tmp.sub("server") + "/metrics.csv") == 3);
  CHECK(count_lines(tmp.sub("server") + "/eval_metrics.csv") == 3);

  // The final broadcast model is what the client saved and what the last
  // checkpoint holds.
  REQUIRE(std::filesystem::exists(out_a));
  ModelParams client_model = load_checkpoint(out_a);
  CHECK(params_bitwise_equal(client_model, log.final_params));
  ModelParams last_ckpt = load_checkpoint(log.checkpoint_paths.back());
  CHECK(params_bitwise_equal(last_ckpt, log.final_params));

  for (const auto& m : log.fit_rounds) {
    CHECK(std::isfinite(m.loss));
    CHECK(m.dice >= 0.0);
    CHECK(m.dice <= 1.0);
  }
}

TEST_CASE("a client dropping mid-round is excluded and the round completes") {
  TempDir tmp("feddrop");
  auto data = synth_generate(6, 48, 48, 2718);
  std::vector<SamplePair> half_a(data.begin(), data.begin() + 3);
  std::vector<SamplePair> half_b(data.begin() + 3, data.end());

  ServerConfig scfg;
  scfg.rounds = 2;
  scfg.min_available = 3;
  scfg.min_fit = 2;
  scfg.min_eval = 2;
  scfg.save_dir = tmp.sub("server");
  scfg.listen_address = "127.0.0.1:0";
  scfg.eval_samples = 2;
  scfg.round_timeout_s = 30.0;
  scfg.fit_config.epochs = 1;
  scfg.fit_config.steps_per_epoch = 1;
  scfg.fit_config.batch_size = 2;
  scfg.fit_config.lr = 0.05;

  std::promise<int> port_promise;
  auto port_future = port_promise.get_future();
  scfg.on_listening = [&](int port) { port_promise.set_value(port); };

  TrainingLog log;
  std::exception_ptr server_error;
  std::thread server([&] {
    try {
      log = server_run(scfg);
    } catch (...) {
      server_error = std::current_exception();
    }
  });
  int port = port_future.get();
  std::string address = "127.0.0.1:" + std::to_string(port);

  // A misbehaving participant: joins, then hangs up the moment work arrives.
  std::thread dropper([&] {
    auto stream = tcp_connect(address);
    write_frame(*stream, Frame{MsgType::kJoinRequest, {}});
    Frame ack = read_frame(*stream);
    CHECK(ack.type == MsgType::kJoinAck);
    read_frame(*stream);  // the fit instruction
    // Stream destructor closes the socket mid-round.
  });

  int rc_a = 0, rc_b = 0;
  std::thread ca([&] {
    ClientConfig c;
    c.server_address = address;
    c.train = scfg.fit_config;
    rc_a = client_run(c, half_a);
  });
  std::thread cb([&] {
    ClientConfig c;
    c.server_address = address;
    c.train = scfg.fit_config;
    rc_b = client_run(c, half_b);
  });

  dropper.join();
  ca.join();
  cb.join();
  server.join();

  if (server_error) std::rethrow_exception(server_error);
  CHECK(rc_a == 0);
  CHECK(rc_b == 0);
  REQUIRE(log.fit_rounds.size() == 2);
  CHECK(log.checkpoint_paths.size() == 2);
}

TEST_CASE("client_run fails cleanly without data or server") {
  ClientConfig cfg;
  cfg.server_address = "127.0.0.1:1";  // nothing listens here
  cfg.connect_attempts = 1;
  cfg.backoff_base_s = 0.01;
  CHECK(client_run(cfg, {}) == 1);
  auto data = synth_generate(1, 32, 32, 0);
  CHECK(client_run(cfg, data) == 1);
}

TEST_CASE("server_run validates its configuration") {
  ServerConfig cfg;
  cfg.save_dir = "";
  CHECK_THROWS_AS(server_run(cfg), std::invalid_argument);
  cfg.save_dir = "somewhere";
  cfg.rounds = 0;
  CHECK_THROWS_AS(server_run(cfg), std::invalid_argument);
  cfg.rounds = 1;
  cfg.fraction_fit = 0.0;
  CHECK_THROWS_AS(server_run(cfg), std::invalid_argument);
  cfg.fraction_fit = 1.0;
  cfg.min_fit = 0;
  CHECK_THROWS_AS(server_run(cfg), std::invalid_argument);
}
