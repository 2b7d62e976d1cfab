#include "foamfed/simulate.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <cstdio>
#include <exception>
#include <future>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "foamfed/rng.hpp"

namespace foamfed {

namespace {

SynthConfig source_config(const SimulationConfig& cfg, int source_index) {
  SynthConfig sc;
  sc.width = cfg.width;
  sc.height = cfg.height;
  if (cfg.partition == PartitionMode::kIid) {
    sc.noise = cfg.noise;
    return sc;
  }
  int n_sources = cfg.clients;
  sc.noise = n_sources == 1 ? cfg.noise
                            : cfg.noise_lo + (cfg.noise_hi - cfg.noise_lo) * source_index /
                                                 (n_sources - 1);
  char name[32];
  std::snprintf(name, sizeof(name), "source-%02d", source_index);
  sc.source_id = name;
  return sc;
}

}  // namespace

SimulationResult run_simulation(const SimulationConfig& cfg) {
  if (cfg.clients < 1) throw std::invalid_argument("clients must be >= 1");
  if (cfg.rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (cfg.samples < cfg.clients)
    throw std::invalid_argument("need at least one sample per client");
  if (cfg.holdout < 0) throw std::invalid_argument("holdout must be >= 0");

  spdlog::info("simulate: {} clients, {} rounds, {} samples at {}x{}", cfg.clients, cfg.rounds,
               cfg.samples, cfg.width, cfg.height);

  std::vector<SamplePair> samples;
  std::vector<std::string> sources;
  samples.reserve(static_cast<size_t>(cfg.samples));
  for (int i = 0; i < cfg.samples; ++i) {
    int source_index = cfg.partition == PartitionMode::kIid ? 0 : i % cfg.clients;
    samples.push_back(synth_sample(source_config(cfg, source_index), mix_seed(cfg.seed, i)));
    sources.push_back(samples.back().source_id);
  }

  Partition part = partition(samples.size(), sources, cfg.partition, cfg.clients, cfg.seed);
  std::vector<std::vector<SamplePair>> client_data(cfg.clients);
  for (int k = 0; k < cfg.clients; ++k) {
    client_data[k].reserve(part.assignments[k].size());
    for (size_t idx : part.assignments[k]) client_data[k].push_back(samples[idx]);
    if (client_data[k].empty())
      throw std::runtime_error("partition left client " + std::to_string(k) + " empty");
    spdlog::info("client {}: {} samples (source {})", k, client_data[k].size(),
                 client_data[k].front().source_id);
  }

  ServerConfig scfg;
  scfg.rounds = cfg.rounds;
  scfg.min_fit = scfg.min_eval = scfg.min_available = cfg.clients;
  scfg.save_dir = cfg.save_dir;
  scfg.listen_address = "127.0.0.1:0";
  scfg.fit_config = cfg.train;
  scfg.eval_samples = cfg.eval_samples;
  scfg.round_timeout_s = cfg.round_timeout_s;
  std::promise<int> port_promise;
  auto port_future = port_promise.get_future();
  std::atomic<bool> port_set{false};
  scfg.on_listening = [&](int port) {
    port_set.store(true);
    port_promise.set_value(port);
  };

  SimulationResult result;
  result.client_rc.assign(cfg.clients, -1);

  std::exception_ptr server_error;
  std::thread server_thread([&] {
    try {
      result.log = server_run(scfg);
    } catch (...) {
      server_error = std::current_exception();
      if (!port_set.exchange(true)) port_promise.set_value(-1);  // bind failed
    }
  });

  int port = port_future.get();
  std::vector<std::thread> client_threads;
  if (port > 0) {
    for (int k = 0; k < cfg.clients; ++k) {
      auto joined = std::make_shared<std::promise<void>>();
      auto once = std::make_shared<std::once_flag>();
      auto joined_future = joined->get_future();
      ClientConfig ccfg;
      ccfg.server_address = "127.0.0.1:" + std::to_string(port);
      ccfg.train = cfg.train;
      ccfg.on_joined = [joined, once] {
        std::call_once(*once, [&] { joined->set_value(); });
      };
      client_threads.emplace_back(
          [&result, k, ccfg = std::move(ccfg), data = &client_data[k]] {
            try {
              result.client_rc[k] = client_run(ccfg, *data);
            } catch (const std::exception& ex) {
              spdlog::error("client {} crashed: {}", k, ex.what());
              result.client_rc[k] = 1;
            }
          });
      // Strict join order keeps the client-id to partition mapping stable.
      joined_future.wait();
    }
  }

  for (auto& t : client_threads) t.join();
  server_thread.join();
  if (server_error) std::rethrow_exception(server_error);
  for (int k = 0; k < cfg.clients; ++k)
    if (result.client_rc[k] != 0)
      throw std::runtime_error("client " + std::to_string(k) + " exited with code " +
                               std::to_string(result.client_rc[k]));

  if (cfg.holdout > 0) {
    std::vector<SamplePair> holdout;
    holdout.reserve(static_cast<size_t>(cfg.holdout));
    uint64_t holdout_seed = mix_seed(cfg.seed, 0x484F4C444F5554ull);
    for (int i = 0; i < cfg.holdout; ++i) {
      int source_index = cfg.partition == PartitionMode::kIid ? 0 : i % cfg.clients;
      holdout.push_back(
          synth_sample(source_config(cfg, source_index), mix_seed(holdout_seed, i)));
    }
    result.holdout =
        evaluate(result.log.final_params, holdout, static_cast<int>(holdout.size()),
                 cfg.train.loss);
    spdlog::info("holdout ({} samples): loss={:.6f} iou={:.4f} dice={:.4f}", holdout.size(),
                 result.holdout.loss, result.holdout.iou, result.holdout.dice);
  }

  return result;
}

}  // namespace foamfed
